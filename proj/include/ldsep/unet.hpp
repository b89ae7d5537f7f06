#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "core/autograd.hpp"
#include "core/errors.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"
#include "core/serialize.hpp"
#include "diffusion.hpp"

namespace ldsep {

struct UNetConfig {
  int depth = 4;
  int base_channels = 16;
  int channel_doubling_period = 2;  // levels between channel doublings
  int in_channels = 8;              // latent feature channels F
  std::vector<bool> downsample_mask = {false, false, true, true};
  std::vector<bool> attention_mask = {false, false, false, true};
  std::vector<bool> conditioning_mask = {false, true, true, true};
  int time_embed_channels = 64;
  int groups = 8;
  std::uint64_t fourier_seed = 7;

  int channels_at(int level) const {
    return base_channels << (level / channel_doubling_period);
  }

  int num_halvings() const {
    int n = 0;
    for (bool b : downsample_mask) n += b ? 1 : 0;
    return n;
  }

  void validate() const {
    if (depth < 1 || base_channels < 1 || channel_doubling_period < 1 ||
        in_channels < 1 || time_embed_channels < 2 || groups < 1)
      throw std::invalid_argument("UNetConfig: positive sizes required");
    if (int(downsample_mask.size()) != depth || int(attention_mask.size()) != depth ||
        int(conditioning_mask.size()) != depth)
      throw std::invalid_argument("UNetConfig: mask lengths must equal depth");
  }

  // Full-scale configuration from the published system; recorded for
  // reference, not runnable at desk scale.
  static UNetConfig paper_preset() {
    UNetConfig c;
    c.depth = 7;
    c.base_channels = 128;
    c.channel_doubling_period = 2;
    c.in_channels = 128;
    c.downsample_mask = {false, true, true, true, true, true, true};
    c.attention_mask = {false, false, false, false, false, true, true};
    c.conditioning_mask = {false, false, false, true, true, true, true};
    c.time_embed_channels = 1024;
    c.groups = 8;
    return c;
  }
};

namespace unet_detail {

inline std::size_t effective_groups(int groups, std::size_t channels) {
  std::size_t g = std::min<std::size_t>(std::size_t(groups), channels);
  while (g > 1 && channels % g != 0) --g;
  return g;
}

}  // namespace unet_detail

// Conditional 1D U-Net estimating diffusion velocity: residual blocks with
// group norm + SiLU, FiLM step injection, optional time-wise self-attention,
// mixture conditioning by channel concat + 1x1 merge.
class GeneratorModel {
 public:
  explicit GeneratorModel(UNetConfig cfg, std::uint64_t init_seed = 1) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::derive(init_seed, {0x756e6574});

    // Random Fourier frequencies, log-uniform in [1, 1000]; frozen buffer.
    std::size_t nfreq = std::size_t(cfg_.time_embed_channels) / 2;
    fourier_freqs_ = Tensor({nfreq});
    Rng frng = Rng::derive(cfg_.fourier_seed, {0x666f7572});
    for (std::size_t i = 0; i < nfreq; ++i)
      fourier_freqs_[i] = std::exp(frng.uniform(std::log(1.0), std::log(1000.0)));

    const std::size_t E = std::size_t(cfg_.time_embed_channels);
    for (int l = 0; l < 3; ++l) {
      add_(mlp_name(l, "w"), init_weight(rng, {E, E}, E));
      add_(mlp_name(l, "b"), Tensor({E}));
    }

    std::size_t F = std::size_t(cfg_.in_channels);
    std::size_t c0 = std::size_t(cfg_.channels_at(0));
    add_("stem.w", init_weight(rng, {c0, F, 3}, F * 3));
    add_("stem.b", Tensor({c0}));
    for (int i = 0; i < cfg_.depth; ++i) {
      std::size_t ci = std::size_t(cfg_.channels_at(i));
      if (i > 0) {
        std::size_t cp = std::size_t(cfg_.channels_at(i - 1));
        add_(tname("enc_trans", i, "w"), init_weight(rng, {ci, cp, 1}, cp));
        add_(tname("enc_trans", i, "b"), Tensor({ci}));
      }
      add_block_("enc", i, ci, rng);
      if (cfg_.conditioning_mask[std::size_t(i)]) add_cond_("enc", i, ci, F, rng);
      if (cfg_.attention_mask[std::size_t(i)]) add_attn_("enc", i, ci, rng);
    }
    for (int i = cfg_.depth - 2; i >= 0; --i) {
      std::size_t ci = std::size_t(cfg_.channels_at(i));
      std::size_t cn = std::size_t(cfg_.channels_at(i + 1));
      if (cfg_.downsample_mask[std::size_t(i + 1)]) {
        add_(tname("dec_trans", i, "w"), init_weight(rng, {cn, ci, 2}, cn * 2));
        add_(tname("dec_trans", i, "b"), Tensor({ci}));
      } else {
        add_(tname("dec_trans", i, "w"), init_weight(rng, {ci, cn, 1}, cn));
        add_(tname("dec_trans", i, "b"), Tensor({ci}));
      }
      add_block_("dec", i, ci, rng);
      if (cfg_.conditioning_mask[std::size_t(i)]) add_cond_("dec", i, ci, F, rng);
      if (cfg_.attention_mask[std::size_t(i)]) add_attn_("dec", i, ci, rng);
    }
    if (cfg_.downsample_mask[0]) {
      add_("final_up.w", init_weight(rng, {c0, c0, 2}, c0 * 2));
      add_("final_up.b", Tensor({c0}));
    }
    add_("out.w", init_weight(rng, {F, c0, 3}, c0 * 3));
    add_("out.b", Tensor({F}));
  }

  const UNetConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const Tensor& fourier_freqs() const { return fourier_freqs_; }
  void set_fourier_freqs(Tensor t) { fourier_freqs_ = std::move(t); }

  std::size_t count_parameters() const { return params_.num_scalars(); }

  // Raw [sin, cos] random Fourier features of sigma, before the MLP.
  Tensor fourier_features(double sigma) const {
    std::size_t nfreq = fourier_freqs_.size();
    Tensor feat({2 * nfreq});
    for (std::size_t i = 0; i < nfreq; ++i) {
      double a = 2.0 * kPi * fourier_freqs_[i] * sigma;
      feat[i] = std::sin(a);
      feat[nfreq + i] = std::cos(a);
    }
    return feat;
  }

  ad::VarId embed_time_on(ad::Tape& tape, const std::vector<ad::VarId>& bound,
                          double sigma) const {
    if (sigma < 0.0 || sigma > 1.0)
      throw std::invalid_argument("embed_time: sigma must be in [0, 1]");
    ad::VarId h = tape.leaf(fourier_features(sigma));
    for (int l = 0; l < 3; ++l) {
      h = tape.linear(h, bv_(tape, bound, mlp_name(l, "w")),
                      bv_(tape, bound, mlp_name(l, "b")));
      if (l < 2) h = tape.gelu(h);
    }
    return h;
  }

  Tensor embed_time(double sigma) const {
    ad::Tape tape;
    auto bound = params_.bind(tape);
    return tape.val(embed_time_on(tape, bound, sigma));
  }

  // Full differentiable forward pass. x and cond are (F, D) feature maps
  // already on the tape; returns the predicted velocity (F, D).
  ad::VarId forward_on(ad::Tape& tape, const std::vector<ad::VarId>& bound,
                       ad::VarId x, double sigma, ad::VarId cond) const {
    const Tensor& xv = tape.val(x);
    if (xv.rank() != 2 || xv.dim(0) != std::size_t(cfg_.in_channels))
      throw std::invalid_argument("unet: input must be (F, D)");
    check_same_shape(xv, tape.val(cond), "unet forward");
    std::size_t D = xv.dim(1);
    std::size_t div = std::size_t(1) << cfg_.num_halvings();
    if (D % div != 0 || D / div < 1)
      throw std::invalid_argument("unet: time length not divisible down to bottleneck");

    ad::VarId temb = embed_time_on(tape, bound, sigma);

    ad::VarId h = tape.conv1d(x, bv_(tape, bound, "stem.w"), bv_(tape, bound, "stem.b"),
                              cfg_.downsample_mask[0] ? 2 : 1, 1);
    std::vector<ad::VarId> skips;
    for (int i = 0; i < cfg_.depth; ++i) {
      if (i > 0)
        h = tape.conv1d(h, bv_(tape, bound, tname("enc_trans", i, "w")),
                        bv_(tape, bound, tname("enc_trans", i, "b")),
                        cfg_.downsample_mask[std::size_t(i)] ? 2 : 1, 0);
      if (cfg_.conditioning_mask[std::size_t(i)]) h = inject_on_(tape, bound, "enc", i, h, cond);
      h = block_on_(tape, bound, "enc", i, h, temb);
      if (cfg_.attention_mask[std::size_t(i)]) h = attn_on_(tape, bound, "enc", i, h);
      if (i < cfg_.depth - 1) skips.push_back(h);
    }
    for (int i = cfg_.depth - 2; i >= 0; --i) {
      if (cfg_.downsample_mask[std::size_t(i + 1)])
        h = tape.conv_transpose1d(h, bv_(tape, bound, tname("dec_trans", i, "w")),
                                  bv_(tape, bound, tname("dec_trans", i, "b")), 2, 0);
      else
        h = tape.conv1d(h, bv_(tape, bound, tname("dec_trans", i, "w")),
                        bv_(tape, bound, tname("dec_trans", i, "b")), 1, 0);
      h = tape.add(h, skips[std::size_t(i)]);
      if (cfg_.conditioning_mask[std::size_t(i)]) h = inject_on_(tape, bound, "dec", i, h, cond);
      h = block_on_(tape, bound, "dec", i, h, temb);
      if (cfg_.attention_mask[std::size_t(i)]) h = attn_on_(tape, bound, "dec", i, h);
    }
    if (cfg_.downsample_mask[0])
      h = tape.conv_transpose1d(h, bv_(tape, bound, "final_up.w"),
                                bv_(tape, bound, "final_up.b"), 2, 0);
    return tape.conv1d(h, bv_(tape, bound, "out.w"), bv_(tape, bound, "out.b"), 1, 1);
  }

  // Test hooks exercising one block in isolation.
  Tensor residual_block(const char* side, int level, const Tensor& features,
                        const Tensor& temb) const {
    ad::Tape tape;
    auto bound = params_.bind(tape);
    return tape.val(block_on_(tape, bound, side, level, tape.leaf(features),
                              tape.leaf(temb)));
  }

  Tensor inject_conditioning(const char* side, int level, const Tensor& features,
                             const Tensor& cond) const {
    if (!cfg_.conditioning_mask.at(std::size_t(level)))
      throw UnsupportedOperation("inject_conditioning: level has conditioning disabled");
    ad::Tape tape;
    auto bound = params_.bind(tape);
    return tape.val(
        inject_on_(tape, bound, side, level, tape.leaf(features), tape.leaf(cond)));
  }

  static std::string mlp_name(int l, const char* what) {
    return "temb.l" + std::to_string(l) + "." + what;
  }
  static std::string tname(const char* kind, int i, const char* what) {
    return std::string(kind) + std::to_string(i) + "." + what;
  }
  static std::string bname(const char* side, int i, const char* what) {
    return std::string(side) + std::to_string(i) + "." + what;
  }

 private:
  void add_(const std::string& name, Tensor t) { params_.add(name, std::move(t)); }

  void add_block_(const char* side, int i, std::size_t C, Rng& rng) {
    const std::size_t E = std::size_t(cfg_.time_embed_channels);
    Tensor ones({C});
    ones.fill(1.0);
    add_(bname(side, i, "gn1.g"), ones);
    add_(bname(side, i, "gn1.b"), Tensor({C}));
    add_(bname(side, i, "conv1.w"), init_weight(rng, {C, C, 3}, C * 3));
    add_(bname(side, i, "conv1.b"), Tensor({C}));
    add_(bname(side, i, "gn2.g"), ones);
    add_(bname(side, i, "gn2.b"), Tensor({C}));
    add_(bname(side, i, "conv2.w"), init_weight(rng, {C, C, 3}, C * 3));
    add_(bname(side, i, "conv2.b"), Tensor({C}));
    // FiLM starts near identity: tiny projection, scale applied as 1+s.
    add_(bname(side, i, "film.w"), rng.normal_tensor({2 * C, E}, 1e-2));
    add_(bname(side, i, "film.b"), Tensor({2 * C}));
  }

  void add_cond_(const char* side, int i, std::size_t C, std::size_t F, Rng& rng) {
    add_(bname(side, i, "cond.w"), init_weight(rng, {C, C + F, 1}, C + F));
    add_(bname(side, i, "cond.b"), Tensor({C}));
  }

  void add_attn_(const char* side, int i, std::size_t C, Rng& rng) {
    add_(bname(side, i, "attn.wq"), init_weight(rng, {C, C}, C));
    add_(bname(side, i, "attn.wk"), init_weight(rng, {C, C}, C));
    add_(bname(side, i, "attn.wv"), init_weight(rng, {C, C}, C));
    // tiny output projection: attention starts close to identity residual
    add_(bname(side, i, "attn.wo"), rng.normal_tensor({C, C}, 1e-2));
  }

  ad::VarId bv_(ad::Tape&, const std::vector<ad::VarId>& bound,
                const std::string& name) const {
    return bound[params_.index_of(name)];
  }

  ad::VarId block_on_(ad::Tape& tape, const std::vector<ad::VarId>& bound,
                      const char* side, int i, ad::VarId x, ad::VarId temb) const {
    std::size_t C = tape.val(x).dim(0);
    std::size_t g = unet_detail::effective_groups(cfg_.groups, C);
    ad::VarId h = tape.group_norm(x, bv_(tape, bound, bname(side, i, "gn1.g")),
                                  bv_(tape, bound, bname(side, i, "gn1.b")), g);
    h = tape.silu(h);
    h = tape.conv1d(h, bv_(tape, bound, bname(side, i, "conv1.w")),
                    bv_(tape, bound, bname(side, i, "conv1.b")), 1, 1);
    h = tape.group_norm(h, bv_(tape, bound, bname(side, i, "gn2.g")),
                        bv_(tape, bound, bname(side, i, "gn2.b")), g);
    h = tape.silu(h);
    h = tape.conv1d(h, bv_(tape, bound, bname(side, i, "conv2.w")),
                    bv_(tape, bound, bname(side, i, "conv2.b")), 1, 1);
    h = tape.add(h, x);
    // FiLM applied after the conv stack and the residual sum
    ad::VarId mod = tape.linear(temb, bv_(tape, bound, bname(side, i, "film.w")),
                                bv_(tape, bound, bname(side, i, "film.b")));
    ad::VarId sc = tape.slice1d(mod, 0, C);
    ad::VarId sh = tape.slice1d(mod, C, C);
    return tape.film(h, sc, sh);
  }

  ad::VarId inject_on_(ad::Tape& tape, const std::vector<ad::VarId>& bound,
                       const char* side, int i, ad::VarId x, ad::VarId cond) const {
    std::size_t T = tape.val(x).dim(1);
    ad::VarId c = cond;
    if (tape.val(cond).dim(1) != T) c = tape.interp_time(cond, T);
    ad::VarId cat = tape.concat_rows(x, c);
    return tape.conv1d(cat, bv_(tape, bound, bname(side, i, "cond.w")),
                       bv_(tape, bound, bname(side, i, "cond.b")), 1, 0);
  }

  ad::VarId attn_on_(ad::Tape& tape, const std::vector<ad::VarId>& bound,
                     const char* side, int i, ad::VarId x) const {
    std::size_t C = tape.val(x).dim(0);
    ad::VarId q = tape.matmul(bv_(tape, bound, bname(side, i, "attn.wq")), x);
    ad::VarId k = tape.matmul(bv_(tape, bound, bname(side, i, "attn.wk")), x);
    ad::VarId v = tape.matmul(bv_(tape, bound, bname(side, i, "attn.wv")), x);
    ad::VarId scores = tape.scale(tape.matmul(tape.transpose(q), k),
                                  1.0 / std::sqrt(double(C)));
    ad::VarId attn = tape.softmax_rows(scores);
    ad::VarId out = tape.matmul(v, tape.transpose(attn));
    out = tape.matmul(bv_(tape, bound, bname(side, i, "attn.wo")), out);
    return tape.add(x, out);
  }

  UNetConfig cfg_;
  ParamStore params_;
  Tensor fourier_freqs_;
};

// Single-shot inference convenience wrapper.
inline VelocityTarget unet_forward(const GeneratorModel& model, const LatentTensor& x_t,
                                   double sigma, const LatentTensor& cond) {
  if (sigma < 0.0 || sigma > 1.0)
    throw std::invalid_argument("unet_forward: sigma must be in [0, 1]");
  check_same_shape(x_t.data, cond.data, "unet_forward");
  ad::Tape tape;
  auto bound = model.params().bind(tape);
  ad::VarId out = model.forward_on(tape, bound, tape.leaf(x_t.data), sigma,
                                   tape.leaf(cond.data));
  return VelocityTarget{tape.val(out)};
}

}  // namespace ldsep
