#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "codec.hpp"
#include "core/rng.hpp"
#include "metrics.hpp"
#include "wav.hpp"

namespace ldsep {

// Noise-injection points along the codec path.
enum class NoisePoint : std::uint64_t {
  Identity = 1,  // waveform pass-through, no codec
  NQ = 2,        // continuous latent path, no quantization
  BQ = 3,        // noise added before RVQ
  AQ = 4,        // noise added to the dequantized embedding, then re-snapped
};

struct RobustnessConfig {
  std::vector<double> stds = {0.0, 1e-6, 1e-3, 0.01, 0.1, 1.0};
  std::uint64_t seed = 0;
};

namespace robust_detail {

inline Waveform trim_like(const Waveform& w, const Waveform& ref) {
  Waveform out(ref.channels(), ref.length(), ref.sample_rate);
  for (std::size_t c = 0; c < ref.channels(); ++c)
    for (std::size_t i = 0; i < ref.length(); ++i)
      out.samples.at(c, i) = i < w.length() ? w.samples.at(c, i) : 0.0;
  return out;
}

// Deviation matching: noise scale is relative to the spread of the signal at
// the injection point, so the same nominal std means comparable corruption.
inline void add_noise(Tensor& x, double rel_std, double signal_std, Rng& rng) {
  double s = rel_std * signal_std;
  for (auto& v : x.raw()) v += s * rng.normal();
}

inline double index_std(const QuantizedLatent& q) {
  double acc = 0.0, acc2 = 0.0;
  std::size_t n = 0;
  for (const auto& stage : q.indices)
    for (int k : stage) {
      acc += k;
      acc2 += double(k) * k;
      ++n;
    }
  if (n == 0) return 0.0;
  double mean = acc / double(n);
  return std::sqrt(std::max(acc2 / double(n) - mean * mean, 0.0));
}

}  // namespace robust_detail

inline double run_identity(const Waveform& audio, double rel_std, Rng& rng) {
  Waveform noisy = audio;
  robust_detail::add_noise(noisy.samples, rel_std, audio.samples.std_dev(), rng);
  return sdr(audio, noisy);
}

inline double run_nq(const CodecModel& codec, const Waveform& audio, double rel_std,
                     Rng& rng) {
  if (!codec.trained()) throw InvalidState("run_nq: codec is untrained");
  LatentTensor lat = encode(codec, audio);
  robust_detail::add_noise(lat.data, rel_std, lat.data.std_dev(), rng);
  Waveform rec = decode(codec, lat);
  return sdr(audio, robust_detail::trim_like(rec, audio));
}

inline double run_bq(const CodecModel& codec, const Waveform& audio, double rel_std,
                     Rng& rng) {
  if (!codec.trained()) throw InvalidState("run_bq: codec is untrained");
  LatentTensor lat = encode(codec, audio);
  robust_detail::add_noise(lat.data, rel_std, lat.data.std_dev(), rng);
  LatentTensor deq = dequantize(codec, quantize(codec, lat));
  Waveform rec = decode(codec, deq);
  return sdr(audio, robust_detail::trim_like(rec, audio));
}

// Post-quantization noise lives in embedding space but its deviation tracks
// the integer code matrix; the perturbed embedding is re-snapped to the
// codebooks. At zero std the path is exactly the BQ/AQ-clean round trip.
inline double run_aq(const CodecModel& codec, const Waveform& audio, double rel_std,
                     Rng& rng) {
  if (!codec.trained()) throw InvalidState("run_aq: codec is untrained");
  LatentTensor lat = encode(codec, audio);
  QuantizedLatent q = quantize(codec, lat);
  LatentTensor emb = dequantize(codec, q);
  if (rel_std > 0.0) {
    robust_detail::add_noise(emb.data, rel_std, robust_detail::index_std(q), rng);
    emb = dequantize(codec, quantize(codec, emb));
  }
  Waveform rec = decode(codec, emb);
  return sdr(audio, robust_detail::trim_like(rec, audio));
}

struct RobustnessTable {
  std::vector<double> stds;
  // mean SDR (dB) across tracks, one column per experiment
  std::vector<double> identity, nq, bq, aq;
  int audio_channels = 1, feature_channels = 0, rvq_stages = 0;
};

inline RobustnessTable run_table(const CodecModel& codec,
                                 const std::vector<Waveform>& tracks,
                                 const RobustnessConfig& cfg) {
  if (tracks.empty()) throw std::invalid_argument("run_table: no tracks");
  for (std::size_t i = 0; i < cfg.stds.size(); ++i)
    if (cfg.stds[i] < 0.0 || (i > 0 && cfg.stds[i] < cfg.stds[i - 1]))
      throw std::invalid_argument("run_table: stds must be non-negative and ascending");
  RobustnessTable table;
  table.stds = cfg.stds;
  table.audio_channels = codec.config().audio_channels;
  table.feature_channels = codec.config().feature_channels;
  table.rvq_stages = codec.config().rvq_stages;
  auto run_column = [&](NoisePoint point, std::vector<double>& col) {
    for (std::size_t si = 0; si < cfg.stds.size(); ++si) {
      double acc = 0.0;
      for (std::size_t k = 0; k < tracks.size(); ++k) {
        Rng rng = Rng::derive(cfg.seed, {std::uint64_t(point), si, k});
        double rel = cfg.stds[si];
        switch (point) {
          case NoisePoint::Identity: acc += run_identity(tracks[k], rel, rng); break;
          case NoisePoint::NQ: acc += run_nq(codec, tracks[k], rel, rng); break;
          case NoisePoint::BQ: acc += run_bq(codec, tracks[k], rel, rng); break;
          case NoisePoint::AQ: acc += run_aq(codec, tracks[k], rel, rng); break;
        }
      }
      col.push_back(acc / double(tracks.size()));
    }
  };
  run_column(NoisePoint::Identity, table.identity);
  run_column(NoisePoint::NQ, table.nq);
  run_column(NoisePoint::BQ, table.bq);
  run_column(NoisePoint::AQ, table.aq);
  return table;
}

// Rows are noise stds, columns the four injection points, plus a footer row
// with the size of the representation each experiment perturbs.
inline void write_robustness_csv(const RobustnessTable& t, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_robustness_csv: cannot open " + path);
  os << "std,identity,nq,bq,aq\n";
  for (std::size_t i = 0; i < t.stds.size(); ++i)
    os << t.stds[i] << ',' << t.identity[i] << ',' << t.nq[i] << ',' << t.bq[i] << ','
       << t.aq[i] << '\n';
  os << "feature_size," << t.audio_channels << ',' << t.feature_channels << ','
     << t.feature_channels << ',' << t.rvq_stages << '\n';
}

}  // namespace ldsep
