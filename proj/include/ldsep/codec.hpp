#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "core/autograd.hpp"
#include "core/errors.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"
#include "core/serialize.hpp"
#include "diffusion.hpp"
#include "wav.hpp"

namespace ldsep {

struct CodecConfig {
  int audio_channels = 1;
  int compression_factor = 64;  // power of two; samples per latent frame
  int feature_channels = 8;
  int rvq_stages = 4;           // 0 disables quantization
  int codebook_size = 64;
  int sample_rate = 8000;
  int hidden_channels = 16;

  // Strided layers realizing the compression factor (4s first, then 2s).
  std::vector<int> strides() const {
    int cf = compression_factor;
    if (cf < 1 || (cf & (cf - 1)) != 0)
      throw std::invalid_argument("CodecConfig: compression_factor must be a power of two");
    std::vector<int> s;
    while (cf > 1) {
      int st = (cf % 4 == 0) ? 4 : 2;
      s.push_back(st);
      cf /= st;
    }
    return s;
  }
};

// Stage-by-frame code indices, each entry in [0, codebook_size).
struct QuantizedLatent {
  std::vector<std::vector<int>> indices;  // [stage][frame]
  std::size_t stages() const { return indices.size(); }
  std::size_t frames() const { return indices.empty() ? 0 : indices[0].size(); }
};

// Convolutional autoencoder with k-means RVQ codebooks. Encoder: strided
// conv stack; decoder mirrors it with transposed convolutions.
class CodecModel {
 public:
  explicit CodecModel(CodecConfig cfg, std::uint64_t init_seed = 1)
      : cfg_(cfg), codebooks_({std::size_t(std::max(cfg.rvq_stages, 0)),
                               std::size_t(cfg.codebook_size),
                               std::size_t(cfg.feature_channels)}) {
    Rng rng = Rng::derive(init_seed, {0x636f646563});
    auto strides = cfg_.strides();
    auto enc_ch = layer_channels_(true), dec_ch = layer_channels_(false);
    for (std::size_t i = 0; i < strides.size(); ++i) {
      std::size_t K = kernel_(strides[i]);
      std::size_t ci = enc_ch[i], co = enc_ch[i + 1];
      params_.add(lname_("enc", i, "w"), init_weight(rng, {co, ci, K}, ci * K));
      params_.add(lname_("enc", i, "b"), Tensor({co}));
    }
    for (std::size_t i = 0; i < strides.size(); ++i) {
      std::size_t st = std::size_t(strides[strides.size() - 1 - i]);
      std::size_t K = kernel_(int(st));
      std::size_t ci = dec_ch[i], co = dec_ch[i + 1];
      params_.add(lname_("dec", i, "w"), init_weight(rng, {ci, co, K}, ci * K));
      params_.add(lname_("dec", i, "b"), Tensor({co}));
    }
  }

  const CodecConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  Tensor& codebooks() { return codebooks_; }
  const Tensor& codebooks() const { return codebooks_; }
  double latent_scale() const { return latent_scale_; }
  void set_latent_scale(double s) {
    if (s <= 0.0) throw std::invalid_argument("latent scale must be positive");
    latent_scale_ = s;
  }
  bool trained() const { return trained_; }
  void set_trained(bool t) { trained_ = t; }

  // Differentiable encoder pass over an arbitrary parameter binding; the
  // trainer reuses this for the (trainable) conditioner copy.
  static ad::VarId encoder_forward(ad::Tape& tape, const CodecConfig& cfg,
                                   const ParamStore& store,
                                   const std::vector<ad::VarId>& bound, ad::VarId audio) {
    auto strides = cfg.strides();
    ad::VarId x = audio;
    for (std::size_t i = 0; i < strides.size(); ++i) {
      std::size_t st = std::size_t(strides[i]);
      ad::VarId w = bound[store.index_of(lname_("enc", i, "w"))];
      ad::VarId b = bound[store.index_of(lname_("enc", i, "b"))];
      x = tape.conv1d(x, w, b, st, st / 2 + (kernel_(int(st)) - 2 * st) / 2);
      if (i + 1 < strides.size()) x = tape.silu(x);
    }
    return x;
  }

  static ad::VarId decoder_forward(ad::Tape& tape, const CodecConfig& cfg,
                                   const ParamStore& store,
                                   const std::vector<ad::VarId>& bound, ad::VarId latent) {
    auto strides = cfg.strides();
    ad::VarId x = latent;
    for (std::size_t i = 0; i < strides.size(); ++i) {
      std::size_t st = std::size_t(strides[strides.size() - 1 - i]);
      ad::VarId w = bound[store.index_of(lname_("dec", i, "w"))];
      ad::VarId b = bound[store.index_of(lname_("dec", i, "b"))];
      x = tape.conv_transpose1d(x, w, b, st, st / 2 + (kernel_(int(st)) - 2 * st) / 2);
      if (i + 1 < strides.size()) x = tape.silu(x);
    }
    return x;
  }

  static std::size_t kernel_(int stride) { return std::size_t(2 * stride); }

  static std::string lname_(const char* part, std::size_t i, const char* what) {
    return std::string(part) + ".l" + std::to_string(i) + "." + what;
  }

 private:
  std::vector<std::size_t> layer_channels_(bool encoder) const {
    std::size_t n = cfg_.strides().size();
    std::vector<std::size_t> ch(n + 1);
    for (std::size_t i = 0; i <= n; ++i) ch[i] = std::size_t(cfg_.hidden_channels);
    if (encoder) {
      ch[0] = std::size_t(cfg_.audio_channels);
      ch[n] = std::size_t(cfg_.feature_channels);
    } else {
      ch[0] = std::size_t(cfg_.feature_channels);
      ch[n] = std::size_t(cfg_.audio_channels);
    }
    return ch;
  }

  CodecConfig cfg_;
  ParamStore params_;
  Tensor codebooks_;  // (stages, n_q, F)
  double latent_scale_ = 1.0;
  bool trained_ = false;
};

// Pad audio length up to a multiple of the compression factor (zeros).
inline Waveform pad_to_multiple(const Waveform& audio, std::size_t multiple) {
  std::size_t S = audio.length();
  std::size_t padded = (S + multiple - 1) / multiple * multiple;
  if (padded == S) return audio;
  Waveform out(audio.channels(), padded, audio.sample_rate);
  for (std::size_t c = 0; c < audio.channels(); ++c)
    for (std::size_t i = 0; i < S; ++i) out.samples.at(c, i) = audio.samples.at(c, i);
  return out;
}

inline LatentTensor encode(const CodecModel& model, const Waveform& audio) {
  if (!audio.samples.all_finite()) throw std::invalid_argument("encode: non-finite audio");
  if (int(audio.channels()) != model.config().audio_channels)
    throw std::invalid_argument("encode: channel count mismatch");
  Waveform padded = pad_to_multiple(audio, std::size_t(model.config().compression_factor));
  ad::Tape tape;
  auto bound = model.params().bind(tape);
  ad::VarId in = tape.leaf(padded.samples);
  ad::VarId out = CodecModel::encoder_forward(tape, model.config(), model.params(), bound, in);
  return LatentTensor(tape.val(out), audio.sample_rate);
}

inline Waveform decode(const CodecModel& model, const LatentTensor& latent) {
  if (int(latent.features()) != model.config().feature_channels)
    throw std::invalid_argument("decode: feature channel count mismatch");
  ad::Tape tape;
  auto bound = model.params().bind(tape);
  ad::VarId in = tape.leaf(latent.data);
  ad::VarId out = CodecModel::decoder_forward(tape, model.config(), model.params(), bound, in);
  return Waveform(tape.val(out), model.config().sample_rate);
}

// Greedy residual vector quantization: each stage snaps the running
// residual of every frame to its nearest codebook vector.
inline QuantizedLatent quantize(const CodecModel& model, const LatentTensor& latent) {
  const auto& cfg = model.config();
  if (cfg.rvq_stages < 1)
    throw UnsupportedOperation("quantize: quantization disabled (rvq_stages = 0)");
  const std::size_t F = latent.features(), D = latent.frames();
  const Tensor& cb = model.codebooks();
  QuantizedLatent q;
  q.indices.assign(std::size_t(cfg.rvq_stages), std::vector<int>(D, 0));
  std::vector<double> residual(F);
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t f = 0; f < F; ++f) residual[f] = latent.data.at(f, d);
    for (int s = 0; s < cfg.rvq_stages; ++s) {
      int best = 0;
      double best_dist = 1e300;
      for (int k = 0; k < cfg.codebook_size; ++k) {
        double dist = 0.0;
        for (std::size_t f = 0; f < F; ++f) {
          double diff = residual[f] - cb.at(std::size_t(s), std::size_t(k), f);
          dist += diff * diff;
        }
        if (dist < best_dist) {
          best_dist = dist;
          best = k;
        }
      }
      q.indices[std::size_t(s)][d] = best;
      for (std::size_t f = 0; f < F; ++f)
        residual[f] -= cb.at(std::size_t(s), std::size_t(best), f);
    }
  }
  return q;
}

inline LatentTensor dequantize(const CodecModel& model, const QuantizedLatent& q) {
  const auto& cfg = model.config();
  if (cfg.rvq_stages < 1)
    throw UnsupportedOperation("dequantize: quantization disabled (rvq_stages = 0)");
  const std::size_t F = std::size_t(cfg.feature_channels), D = q.frames();
  Tensor out({F, D});
  for (std::size_t s = 0; s < q.stages(); ++s)
    for (std::size_t d = 0; d < D; ++d) {
      int k = q.indices[s][d];
      if (k < 0 || k >= cfg.codebook_size)
        throw std::invalid_argument("dequantize: code index out of bounds");
      for (std::size_t f = 0; f < F; ++f)
        out.at(f, d) += model.codebooks().at(s, std::size_t(k), f);
    }
  return LatentTensor(out, cfg.sample_rate);
}

inline LatentTensor normalize_latent(const LatentTensor& latent, double scale) {
  if (scale <= 0.0) throw std::invalid_argument("normalize_latent: scale must be positive");
  LatentTensor out = latent;
  for (auto& v : out.data.raw()) v /= scale;
  return out;
}

inline LatentTensor denormalize_latent(const LatentTensor& latent, double scale) {
  if (scale <= 0.0) throw std::invalid_argument("denormalize_latent: scale must be positive");
  LatentTensor out = latent;
  for (auto& v : out.data.raw()) v *= scale;
  return out;
}

// Lloyd k-means over F-dimensional points; deterministic given rng state.
inline Tensor kmeans(const std::vector<std::vector<double>>& points, int k, Rng& rng,
                     int iters = 20) {
  if (points.empty()) throw std::invalid_argument("kmeans: empty input");
  const std::size_t F = points[0].size();
  Tensor centers({std::size_t(k), F});
  for (int c = 0; c < k; ++c) {
    const auto& p = points[rng.integer(points.size())];
    for (std::size_t f = 0; f < F; ++f) centers.at(std::size_t(c), f) = p[f];
  }
  std::vector<int> assign(points.size(), 0);
  for (int it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      int best = 0;
      double bd = 1e300;
      for (int c = 0; c < k; ++c) {
        double d = 0.0;
        for (std::size_t f = 0; f < F; ++f) {
          double diff = points[i][f] - centers.at(std::size_t(c), f);
          d += diff * diff;
        }
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      assign[i] = best;
    }
    std::vector<std::vector<double>> sums(std::size_t(k), std::vector<double>(F, 0.0));
    std::vector<std::size_t> counts(std::size_t(k), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      counts[std::size_t(assign[i])]++;
      for (std::size_t f = 0; f < F; ++f) sums[std::size_t(assign[i])][f] += points[i][f];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[std::size_t(c)] == 0) {
        const auto& p = points[rng.integer(points.size())];
        for (std::size_t f = 0; f < F; ++f) centers.at(std::size_t(c), f) = p[f];
      } else {
        for (std::size_t f = 0; f < F; ++f)
          centers.at(std::size_t(c), f) = sums[std::size_t(c)][f] / double(counts[std::size_t(c)]);
      }
    }
  }
  return centers;
}

struct CodecTrainResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> loss_curve;
};

struct CodecTrainConfig {
  int steps = 400;
  int batch_size = 4;
  std::size_t crop_samples = 8192;
  double lr = 2e-3;
  std::uint64_t seed = 0;
  // spectral loss scales (FFT sizes); waveform L1 always included
  std::vector<std::size_t> spec_ffts = {256, 512};
  double spec_weight = 0.5;
};

namespace codec_detail {

inline ad::VarId reconstruction_loss(ad::Tape& tape, ad::VarId out, ad::VarId target,
                                     const CodecTrainConfig& tc, std::size_t channels) {
  ad::VarId loss = tape.l1(out, target);
  for (std::size_t c = 0; c < channels; ++c) {
    ad::VarId orow = tape.row(out, c), trow = tape.row(target, c);
    for (std::size_t nf : tc.spec_ffts) {
      ad::VarId so = tape.stft_mag(orow, nf, nf / 4);
      ad::VarId st = tape.stft_mag(trow, nf, nf / 4);
      loss = tape.add(loss, tape.scale(tape.l1(so, st), tc.spec_weight));
    }
  }
  return loss;
}

}  // namespace codec_detail

// Trains encoder/decoder on random crops of the given clips, then fits RVQ
// codebooks by stage-wise k-means on encoded training latents, then sets the
// corpus latent-normalization scale.
inline CodecTrainResult train_codec(CodecModel& model, const std::vector<Waveform>& corpus,
                                    const CodecTrainConfig& tc) {
  if (corpus.empty()) throw std::invalid_argument("train_codec: empty corpus");
  const auto& cfg = model.config();
  for (const auto& w : corpus)
    if (int(w.channels()) != cfg.audio_channels)
      throw std::invalid_argument("train_codec: corpus channel count mismatch");

  Rng rng = Rng::derive(tc.seed, {0x74726169, 0x636f64});
  AdamWConfig oc;
  oc.lr = tc.lr;
  oc.weight_decay = 0.0;
  AdamW opt(oc);

  auto sample_crop = [&](Rng& r) {
    const Waveform& w = corpus[r.integer(corpus.size())];
    std::size_t span = std::min(tc.crop_samples, w.length());
    span = span / std::size_t(cfg.compression_factor) * std::size_t(cfg.compression_factor);
    if (span == 0) span = std::size_t(cfg.compression_factor);
    std::size_t start = w.length() > span ? r.integer(w.length() - span) : 0;
    Tensor crop({w.channels(), span});
    for (std::size_t c = 0; c < w.channels(); ++c)
      for (std::size_t i = 0; i < span && start + i < w.length(); ++i)
        crop.at(c, i) = w.samples.at(c, start + i);
    return crop;
  };

  auto batch_loss = [&](const std::vector<Tensor>& crops, bool want_grads) {
    double total = 0.0;
    for (const auto& crop : crops) {
      ad::Tape tape;
      auto bound = model.params().bind(tape);
      ad::VarId in = tape.leaf(crop);
      ad::VarId lat =
          CodecModel::encoder_forward(tape, cfg, model.params(), bound, in);
      ad::VarId out =
          CodecModel::decoder_forward(tape, cfg, model.params(), bound, lat);
      ad::VarId loss = codec_detail::reconstruction_loss(tape, out, in, tc, crop.dim(0));
      total += tape.val(loss)[0];
      if (want_grads) {
        tape.backward(loss);
        model.params().accumulate(tape, bound, 1.0 / double(crops.size()));
      }
    }
    return total / double(crops.size());
  };

  // Fixed probe batch measures the before/after loss on identical data.
  Rng probe_rng = Rng::derive(tc.seed, {0x70726f6265});
  std::vector<Tensor> probe;
  for (int i = 0; i < tc.batch_size; ++i) probe.push_back(sample_crop(probe_rng));

  CodecTrainResult result;
  result.initial_loss = batch_loss(probe, false);
  for (int step = 0; step < tc.steps; ++step) {
    std::vector<Tensor> crops;
    for (int i = 0; i < tc.batch_size; ++i) crops.push_back(sample_crop(rng));
    model.params().zero_grads();
    double loss = batch_loss(crops, true);
    opt.step(model.params());
    result.loss_curve.push_back(loss);
  }
  result.final_loss = batch_loss(probe, false);

  // RVQ codebooks: stage-wise k-means on encoded latent residuals.
  if (cfg.rvq_stages >= 1) {
    std::vector<std::vector<double>> residuals;
    for (const auto& w : corpus) {
      LatentTensor lat = encode(model, w);
      for (std::size_t d = 0; d < lat.frames(); ++d) {
        std::vector<double> p(lat.features());
        for (std::size_t f = 0; f < lat.features(); ++f) p[f] = lat.data.at(f, d);
        residuals.push_back(std::move(p));
      }
    }
    Rng km_rng = Rng::derive(tc.seed, {0x6b6d65616e73});
    for (int s = 0; s < cfg.rvq_stages; ++s) {
      Tensor centers = kmeans(residuals, cfg.codebook_size, km_rng);
      for (int k = 0; k < cfg.codebook_size; ++k)
        for (int f = 0; f < cfg.feature_channels; ++f)
          model.codebooks().at(std::size_t(s), std::size_t(k), std::size_t(f)) =
              centers.at(std::size_t(k), std::size_t(f));
      // subtract nearest centers to get the next stage's residuals
      for (auto& p : residuals) {
        int best = 0;
        double bd = 1e300;
        for (int k = 0; k < cfg.codebook_size; ++k) {
          double d = 0.0;
          for (std::size_t f = 0; f < p.size(); ++f) {
            double diff = p[f] - centers.at(std::size_t(k), f);
            d += diff * diff;
          }
          if (d < bd) {
            bd = d;
            best = k;
          }
        }
        for (std::size_t f = 0; f < p.size(); ++f) p[f] -= centers.at(std::size_t(best), f);
      }
    }
  }

  // Global normalization scale: std over all corpus latent entries.
  double acc = 0.0, acc2 = 0.0;
  std::size_t n = 0;
  for (const auto& w : corpus) {
    LatentTensor lat = encode(model, w);
    for (double v : lat.data.raw()) {
      acc += v;
      acc2 += v * v;
      ++n;
    }
  }
  double mean = acc / double(n);
  double stddev = std::sqrt(std::max(acc2 / double(n) - mean * mean, 1e-12));
  model.set_latent_scale(stddev);
  model.set_trained(true);
  return result;
}

inline void save_codec(const CodecModel& model, const std::string& path) {
  Checkpoint ck;
  ck.kind = CheckpointKind::Codec;
  const auto& c = model.config();
  ck.config = {c.audio_channels, c.compression_factor, c.feature_channels,
               c.rvq_stages,     c.codebook_size,      c.sample_rate,
               c.hidden_channels, model.trained() ? 1 : 0};
  params_to_checkpoint(model.params(), ck);
  ck.tensors.emplace_back("codebooks", model.codebooks());
  ck.tensors.emplace_back("latent_scale", Tensor::scalar(model.latent_scale()));
  ck.save(path);
}

inline CodecModel load_codec(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.kind != CheckpointKind::Codec)
    throw std::runtime_error("load_codec: not a codec checkpoint: " + path);
  CodecConfig c;
  c.audio_channels = int(ck.config.at(0));
  c.compression_factor = int(ck.config.at(1));
  c.feature_channels = int(ck.config.at(2));
  c.rvq_stages = int(ck.config.at(3));
  c.codebook_size = int(ck.config.at(4));
  c.sample_rate = int(ck.config.at(5));
  c.hidden_channels = int(ck.config.at(6));
  CodecModel model(c);
  params_from_checkpoint(model.params(), ck);
  model.codebooks() = ck.tensor("codebooks");
  model.set_latent_scale(ck.tensor("latent_scale")[0]);
  model.set_trained(ck.config.at(7) != 0);
  return model;
}

}  // namespace ldsep
