#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "codec.hpp"
#include "core/rng.hpp"
#include "diffusion.hpp"
#include "unet.hpp"

namespace ldsep {

struct SamplerConfig {
  std::size_t num_steps = 50;
  std::uint64_t seed = 0;
  std::size_t chunk_samples = 65536;  // must be a multiple of the codec cf
  double overlap_fraction = 0.2;      // in [0, 0.5)

  void validate(std::size_t cf) const {
    if (num_steps == 0) throw std::invalid_argument("SamplerConfig: num_steps >= 1");
    if (overlap_fraction < 0.0 || overlap_fraction >= 0.5)
      throw std::invalid_argument("SamplerConfig: overlap_fraction in [0, 0.5)");
    if (chunk_samples == 0 || chunk_samples % cf != 0)
      throw std::invalid_argument("SamplerConfig: chunk_samples must be a multiple of cf");
  }
};

// Velocity estimator abstraction: the trained U-Net in production, exact
// oracles in tests.
using VelocityFn =
    std::function<Tensor(const Tensor& x_t, double sigma, const Tensor& cond)>;

inline VelocityFn velocity_fn(const GeneratorModel& model) {
  return [&model](const Tensor& x_t, double sigma, const Tensor& cond) {
    return unet_forward(model, LatentTensor(x_t), sigma, LatentTensor(cond)).data;
  };
}

struct DdimStepResult {
  LatentTensor x_prev;
  LatentTensor x0_hat;
  LatentTensor eps_hat;
};

// One deterministic DDIM update from step t to t-1.
inline DdimStepResult ddim_step(const VelocityFn& model, const LatentTensor& x_t,
                                const NoiseSchedule& schedule, std::size_t t,
                                const LatentTensor& cond) {
  if (t == 0) throw std::invalid_argument("ddim_step: t must be >= 1");
  if (t > schedule.num_steps())
    throw std::invalid_argument("ddim_step: t out of range");
  auto [a, b] = schedule.alpha_beta(t);
  auto [ap, bp] = schedule.alpha_beta(t - 1);
  Tensor v = model(x_t.data, schedule.sigma(t), cond.data);
  check_same_shape(v, x_t.data, "ddim_step velocity");
  DdimStepResult r;
  r.x0_hat.data = Tensor(x_t.data.shape());
  r.eps_hat.data = Tensor(x_t.data.shape());
  r.x_prev.data = Tensor(x_t.data.shape());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double x0 = a * x_t.data[i] - b * v[i];
    double eps = b * x_t.data[i] + a * v[i];
    r.x0_hat.data[i] = x0;
    r.eps_hat.data[i] = eps;
    r.x_prev.data[i] = ap * x0 + bp * eps;
  }
  return r;
}

struct SamplerStepTrace {
  std::vector<std::size_t> t;
  std::vector<LatentTensor> x_t, x0_hat, eps_hat;
};

// Iteratively denoises a seeded Gaussian latent down to an estimate of the
// clean target; deterministic given (seed, parameters, cond).
inline LatentTensor sample(const VelocityFn& model, const LatentTensor& cond,
                           const NoiseSchedule& schedule, std::uint64_t seed,
                           SamplerStepTrace* trace = nullptr) {
  Rng rng = Rng::derive(seed, {0x73616d706c65});
  LatentTensor x(rng.normal_tensor(cond.data.shape()), cond.sample_rate_hint);
  LatentTensor x0_hat = x;
  for (std::size_t t = schedule.num_steps(); t >= 1; --t) {
    DdimStepResult r = ddim_step(model, x, schedule, t, cond);
    if (trace) {
      trace->t.push_back(t);
      trace->x_t.push_back(x);
      trace->x0_hat.push_back(r.x0_hat);
      trace->eps_hat.push_back(r.eps_hat);
    }
    x0_hat = r.x0_hat;
    x = r.x_prev;
  }
  x0_hat.sample_rate_hint = cond.sample_rate_hint;
  return x0_hat;
}

// Crossfade weight window for chunk k of n: linear ramps over the overlap
// region; interior chunks ramp on both edges so weights sum to one.
inline std::vector<double> crossfade_window(std::size_t chunk, std::size_t overlap,
                                            bool first, bool last) {
  std::vector<double> w(chunk, 1.0);
  if (overlap > chunk) throw std::invalid_argument("crossfade_window: overlap > chunk");
  if (!first)
    for (std::size_t i = 0; i < overlap; ++i) w[i] = double(i) / double(overlap);
  if (!last)
    for (std::size_t i = 0; i < overlap; ++i)
      w[chunk - overlap + i] =
          std::min(w[chunk - overlap + i], 1.0 - double(i) / double(overlap));
  return w;
}

// The full trained system: generator, conditioner encoder (initially a copy
// of the codec encoder, trainable in stage 2), and the corpus latent scale.
struct SeparationModel {
  GeneratorModel generator;
  CodecModel conditioner;
  double latent_scale = 1.0;

  SeparationModel(GeneratorModel gen, CodecModel cond, double scale)
      : generator(std::move(gen)), conditioner(std::move(cond)), latent_scale(scale) {}
};

// Full-track separation: chunk, encode mixture, sample vocals in latent
// space, decode, overlap-add with a linear crossfade.
inline Waveform separate_track(const SeparationModel& model, const CodecModel& codec,
                               const Waveform& mixture, const SamplerConfig& cfg) {
  const std::size_t cf = std::size_t(codec.config().compression_factor);
  cfg.validate(cf);
  const std::size_t S = mixture.length();
  if (S == 0) throw std::invalid_argument("separate_track: empty input");
  if (int(mixture.channels()) != codec.config().audio_channels)
    throw std::invalid_argument("separate_track: channel count mismatch");

  const std::size_t chunk = cfg.chunk_samples;
  std::size_t overlap = std::size_t(double(chunk) * cfg.overlap_fraction);
  overlap = overlap / cf * cf;
  const std::size_t hop = chunk - overlap;
  const std::size_t n_chunks = S <= chunk ? 1 : (S - chunk + hop - 1) / hop + 1;
  const std::size_t padded = (n_chunks - 1) * hop + chunk;

  NoiseSchedule schedule(cfg.num_steps);
  VelocityFn vfn = velocity_fn(model.generator);

  Waveform out(mixture.channels(), padded, mixture.sample_rate);
  std::vector<double> wsum(padded, 0.0);
  for (std::size_t k = 0; k < n_chunks; ++k) {
    const std::size_t start = k * hop;
    Waveform piece(mixture.channels(), chunk, mixture.sample_rate);
    for (std::size_t c = 0; c < mixture.channels(); ++c)
      for (std::size_t i = 0; i < chunk && start + i < S; ++i)
        piece.samples.at(c, i) = mixture.samples.at(c, start + i);

    LatentTensor cond = encode(model.conditioner, piece);
    cond = normalize_latent(cond, model.latent_scale);
    LatentTensor latent =
        sample(vfn, cond, schedule, splitmix64(cfg.seed ^ (0xc41 + k)));
    latent = denormalize_latent(latent, model.latent_scale);
    Waveform decoded = decode(codec, latent);

    auto w = crossfade_window(chunk, overlap, k == 0, k + 1 == n_chunks);
    for (std::size_t c = 0; c < mixture.channels(); ++c)
      for (std::size_t i = 0; i < chunk; ++i)
        out.samples.at(c, start + i) += w[i] * decoded.samples.at(c, i);
    for (std::size_t i = 0; i < chunk; ++i) wsum[start + i] += w[i];
  }
  for (std::size_t c = 0; c < out.channels(); ++c)
    for (std::size_t i = 0; i < padded; ++i)
      if (wsum[i] > 0.0) out.samples.at(c, i) /= wsum[i];

  Waveform trimmed(mixture.channels(), S, mixture.sample_rate);
  for (std::size_t c = 0; c < mixture.channels(); ++c)
    for (std::size_t i = 0; i < S; ++i) trimmed.samples.at(c, i) = out.samples.at(c, i);
  return trimmed;
}

inline void save_separation_model(const SeparationModel& m, const std::string& path) {
  Checkpoint ck;
  ck.kind = CheckpointKind::Generator;
  const UNetConfig& u = m.generator.config();
  std::int64_t down = 0, attn = 0, condm = 0;
  for (int i = 0; i < u.depth; ++i) {
    if (u.downsample_mask[std::size_t(i)]) down |= (1 << i);
    if (u.attention_mask[std::size_t(i)]) attn |= (1 << i);
    if (u.conditioning_mask[std::size_t(i)]) condm |= (1 << i);
  }
  const CodecConfig& c = m.conditioner.config();
  ck.config = {u.depth,   u.base_channels, u.channel_doubling_period,
               u.in_channels, down,        attn,
               condm,     u.time_embed_channels, u.groups,
               std::int64_t(u.fourier_seed),
               c.audio_channels, c.compression_factor, c.feature_channels,
               c.rvq_stages, c.codebook_size, c.sample_rate, c.hidden_channels};
  params_to_checkpoint(m.generator.params(), ck, "gen.");
  ck.tensors.emplace_back("gen.fourier_freqs", m.generator.fourier_freqs());
  params_to_checkpoint(m.conditioner.params(), ck, "cond.");
  ck.tensors.emplace_back("latent_scale", Tensor::scalar(m.latent_scale));
  ck.save(path);
}

inline SeparationModel load_separation_model(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.kind != CheckpointKind::Generator)
    throw std::runtime_error("load_separation_model: wrong checkpoint kind in " + path);
  UNetConfig u;
  u.depth = int(ck.config.at(0));
  u.base_channels = int(ck.config.at(1));
  u.channel_doubling_period = int(ck.config.at(2));
  u.in_channels = int(ck.config.at(3));
  std::int64_t down = ck.config.at(4), attn = ck.config.at(5), condm = ck.config.at(6);
  u.downsample_mask.assign(std::size_t(u.depth), false);
  u.attention_mask.assign(std::size_t(u.depth), false);
  u.conditioning_mask.assign(std::size_t(u.depth), false);
  for (int i = 0; i < u.depth; ++i) {
    u.downsample_mask[std::size_t(i)] = (down >> i) & 1;
    u.attention_mask[std::size_t(i)] = (attn >> i) & 1;
    u.conditioning_mask[std::size_t(i)] = (condm >> i) & 1;
  }
  u.time_embed_channels = int(ck.config.at(7));
  u.groups = int(ck.config.at(8));
  u.fourier_seed = std::uint64_t(ck.config.at(9));
  CodecConfig c;
  c.audio_channels = int(ck.config.at(10));
  c.compression_factor = int(ck.config.at(11));
  c.feature_channels = int(ck.config.at(12));
  c.rvq_stages = int(ck.config.at(13));
  c.codebook_size = int(ck.config.at(14));
  c.sample_rate = int(ck.config.at(15));
  c.hidden_channels = int(ck.config.at(16));

  GeneratorModel gen(u);
  params_from_checkpoint(gen.params(), ck, "gen.");
  gen.set_fourier_freqs(ck.tensor("gen.fourier_freqs"));
  CodecModel cond(c);
  params_from_checkpoint(cond.params(), ck, "cond.");
  cond.set_trained(true);
  return SeparationModel(std::move(gen), std::move(cond), ck.tensor("latent_scale")[0]);
}

}  // namespace ldsep
