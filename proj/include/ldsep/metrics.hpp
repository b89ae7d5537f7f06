#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/errors.hpp"
#include "core/fft.hpp"
#include "wav.hpp"

namespace ldsep {

struct SpectrogramConfig {
  std::size_t fft_size = 1024;
  std::size_t hop = 256;
  std::size_t mel_bands = 64;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 -> Nyquist
  double log_floor = 1e-5;

  void validate(double sample_rate) const {
    if (hop == 0 || hop > fft_size)
      throw std::invalid_argument("SpectrogramConfig: hop must be in (0, fft_size]");
    if (log_floor <= 0.0) throw std::invalid_argument("SpectrogramConfig: log_floor > 0");
    if (fmax > sample_rate / 2.0 + 1e-9)
      throw std::invalid_argument("SpectrogramConfig: fmax above Nyquist");
  }

  double effective_fmax(double sample_rate) const {
    return fmax > 0.0 ? fmax : sample_rate / 2.0;
  }
};

struct PitchConfig {
  std::size_t frame_size = 1024;
  std::size_t hop = 256;  // matches the spectrogram hop so frame grids align
  double fmin = 80.0;
  double fmax = 1000.0;
  double voicing_threshold = 0.15;
};

struct PitchTrack {
  std::vector<double> f0_hz;  // 0 where unvoiced
  std::vector<bool> voiced;
  double hop_seconds = 0.0;

  std::size_t frames() const { return f0_hz.size(); }
  std::size_t voiced_count() const {
    std::size_t n = 0;
    for (bool v : voiced) n += v ? 1 : 0;
    return n;
  }
};

struct MetricReport {
  double sdr_db = 0.0;
  double lsd = 0.0;
  double mel_mae = 0.0;
  double logf0_rmse = 0.0;
  bool logf0_defined = false;
  bool spectral_defined = false;  // false when the reference has no voiced frames
  std::size_t voiced_frames = 0;
};

inline constexpr double kSdrCapDb = 120.0;

// 10*log10(||x||^2 / ||x - x_hat||^2), capped at +120 dB.
inline double sdr(const Waveform& reference, const Waveform& estimate) {
  check_same_shape(reference.samples, estimate.samples, "sdr");
  double ref_e = reference.samples.sq_norm();
  if (ref_e <= 0.0) throw UndefinedMetric("sdr: all-zero reference");
  double res_e = 0.0;
  for (std::size_t i = 0; i < reference.samples.size(); ++i) {
    double d = reference.samples[i] - estimate.samples[i];
    res_e += d * d;
  }
  if (res_e < 1e-12 * ref_e) return kSdrCapDb;
  return 10.0 * std::log10(ref_e / res_e);
}

namespace metric_detail {

inline Tensor log10_mag(const Tensor& mag, double floor) {
  Tensor out = mag;
  for (auto& v : out.raw()) v = std::log10(std::max(v, floor));
  return out;
}

inline void check_mask(const std::vector<bool>* mask, std::size_t frames,
                       const char* where) {
  if (mask && mask->size() != frames)
    throw std::invalid_argument(std::string(where) + ": mask length mismatch");
}

}  // namespace metric_detail

// Log-spectral distance: per-frame RMS over bins of log10 magnitude
// differences, averaged over (optionally masked) frames.
inline double lsd(const Waveform& reference, const Waveform& estimate,
                  const SpectrogramConfig& cfg,
                  const std::vector<bool>* frame_mask = nullptr) {
  check_same_shape(reference.samples, estimate.samples, "lsd");
  cfg.validate(reference.sample_rate);
  Tensor mr = metric_detail::log10_mag(
      stft_magnitude(reference.mono(), cfg.fft_size, cfg.hop), cfg.log_floor);
  Tensor me = metric_detail::log10_mag(
      stft_magnitude(estimate.mono(), cfg.fft_size, cfg.hop), cfg.log_floor);
  const std::size_t bins = mr.dim(0), frames = mr.dim(1);
  metric_detail::check_mask(frame_mask, frames, "lsd");
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t f = 0; f < frames; ++f) {
    if (frame_mask && !(*frame_mask)[f]) continue;
    double frame_acc = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      double d = mr.at(k, f) - me.at(k, f);
      frame_acc += d * d;
    }
    acc += std::sqrt(frame_acc / double(bins));
    ++used;
  }
  if (used == 0) throw UndefinedMetric("lsd: no frames selected");
  return acc / double(used);
}

// Mean absolute error between log10 mel magnitudes.
inline double mel_mae(const Waveform& reference, const Waveform& estimate,
                      const SpectrogramConfig& cfg,
                      const std::vector<bool>* frame_mask = nullptr) {
  check_same_shape(reference.samples, estimate.samples, "mel_mae");
  cfg.validate(reference.sample_rate);
  Tensor fb = mel_filterbank(cfg.mel_bands, cfg.fft_size, reference.sample_rate,
                             cfg.fmin, cfg.effective_fmax(reference.sample_rate));
  auto melspec = [&](const Waveform& w) {
    Tensor mag = stft_magnitude(w.mono(), cfg.fft_size, cfg.hop);
    Tensor mel({cfg.mel_bands, mag.dim(1)});
    for (std::size_t m = 0; m < cfg.mel_bands; ++m)
      for (std::size_t f = 0; f < mag.dim(1); ++f) {
        double acc = 0.0;
        for (std::size_t k = 0; k < mag.dim(0); ++k) acc += fb.at(m, k) * mag.at(k, f);
        mel.at(m, f) = std::log10(std::max(acc, cfg.log_floor));
      }
    return mel;
  };
  Tensor mr = melspec(reference), me = melspec(estimate);
  const std::size_t frames = mr.dim(1);
  metric_detail::check_mask(frame_mask, frames, "mel_mae");
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t f = 0; f < frames; ++f) {
    if (frame_mask && !(*frame_mask)[f]) continue;
    for (std::size_t m = 0; m < cfg.mel_bands; ++m)
      acc += std::abs(mr.at(m, f) - me.at(m, f));
    ++used;
  }
  if (used == 0) throw UndefinedMetric("mel_mae: no frames selected");
  return acc / double(used * cfg.mel_bands);
}

// YIN-style monophonic pitch tracker. Voicing decision uses the global
// minimum of the cumulative-mean-normalized difference, so lowering the
// threshold can only shrink the voiced set.
inline PitchTrack track_pitch(const Waveform& audio, const PitchConfig& cfg) {
  const double rate = audio.sample_rate;
  auto x = audio.mono();
  if (x.size() < cfg.frame_size)
    throw std::invalid_argument("track_pitch: audio shorter than one frame");
  const std::size_t W = cfg.frame_size / 2;  // integration window
  const std::size_t tau_min = std::max<std::size_t>(2, std::size_t(rate / cfg.fmax));
  const std::size_t tau_max = std::min(W, std::size_t(rate / cfg.fmin));
  if (tau_max <= tau_min)
    throw std::invalid_argument("track_pitch: invalid pitch range for sample rate");

  PitchTrack track;
  track.hop_seconds = double(cfg.hop) / rate;
  const std::size_t n_frames = 1 + (x.size() - cfg.frame_size) / cfg.hop;
  std::vector<double> d(tau_max + 1, 0.0), cmndf(tau_max + 1, 1.0);
  for (std::size_t fr = 0; fr < n_frames; ++fr) {
    const double* frame = x.data() + fr * cfg.hop;
    double running = 0.0;
    for (std::size_t tau = 1; tau <= tau_max; ++tau) {
      double acc = 0.0;
      for (std::size_t j = 0; j < W; ++j) {
        double diff = frame[j] - frame[j + tau];
        acc += diff * diff;
      }
      d[tau] = acc;
      running += acc;
      cmndf[tau] = running > 0.0 ? d[tau] * double(tau) / running : 1.0;
    }
    double global_min = 1e300;
    for (std::size_t tau = tau_min; tau <= tau_max; ++tau)
      global_min = std::min(global_min, cmndf[tau]);

    double f0 = 0.0;
    bool voiced = global_min < cfg.voicing_threshold;
    if (voiced) {
      // first threshold crossing, refined to its local minimum
      std::size_t tau = tau_min;
      while (tau <= tau_max && cmndf[tau] >= cfg.voicing_threshold) ++tau;
      while (tau + 1 <= tau_max && cmndf[tau + 1] < cmndf[tau]) ++tau;
      double tau_refined = double(tau);
      if (tau > tau_min && tau < tau_max) {
        double a = cmndf[tau - 1], b = cmndf[tau], c = cmndf[tau + 1];
        double denom = a - 2.0 * b + c;
        if (std::abs(denom) > 1e-12) tau_refined += 0.5 * (a - c) / denom;
      }
      f0 = rate / tau_refined;
      if (f0 < cfg.fmin || f0 > cfg.fmax) {
        voiced = false;
        f0 = 0.0;
      }
    }
    track.f0_hz.push_back(f0);
    track.voiced.push_back(voiced);
  }
  return track;
}

// RMSE of natural-log f0 over frames voiced in both tracks.
inline double logf0_rmse(const PitchTrack& ref, const PitchTrack& est) {
  if (ref.frames() != est.frames() ||
      std::abs(ref.hop_seconds - est.hop_seconds) > 1e-12)
    throw std::invalid_argument("logf0_rmse: frame grids differ");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ref.frames(); ++i) {
    if (!ref.voiced[i] || !est.voiced[i]) continue;
    double d = std::log(ref.f0_hz[i]) - std::log(est.f0_hz[i]);
    acc += d * d;
    ++n;
  }
  if (n == 0) throw UndefinedMetric("logf0_rmse: no jointly voiced frames");
  return std::sqrt(acc / double(n));
}

struct MetricsConfig {
  SpectrogramConfig spectrogram;
  PitchConfig pitch;
};

// All four metrics for one track. Spectral metrics are restricted to the
// frames where the reference is voiced.
inline MetricReport evaluate_track(const Waveform& reference, const Waveform& estimate,
                                   const MetricsConfig& cfg = {}) {
  check_same_shape(reference.samples, estimate.samples, "evaluate_track");
  MetricReport r;
  r.sdr_db = sdr(reference, estimate);
  PitchTrack ref_pitch = track_pitch(reference, cfg.pitch);
  PitchTrack est_pitch = track_pitch(estimate, cfg.pitch);
  r.voiced_frames = ref_pitch.voiced_count();

  // Align the voiced mask to the spectrogram frame grid.
  Tensor mag = stft_magnitude(reference.mono(), cfg.spectrogram.fft_size,
                              cfg.spectrogram.hop);
  std::vector<bool> mask(mag.dim(1), false);
  for (std::size_t f = 0; f < mask.size(); ++f)
    mask[f] = f < ref_pitch.frames() && ref_pitch.voiced[f];

  if (r.voiced_frames > 0) {
    r.lsd = lsd(reference, estimate, cfg.spectrogram, &mask);
    r.mel_mae = mel_mae(reference, estimate, cfg.spectrogram, &mask);
    r.spectral_defined = true;
  }
  try {
    r.logf0_rmse = logf0_rmse(ref_pitch, est_pitch);
    r.logf0_defined = true;
  } catch (const UndefinedMetric&) {
    r.logf0_defined = false;
  }
  return r;
}

inline nlohmann::json report_to_json(const MetricReport& r) {
  nlohmann::json j;
  j["sdr_db"] = r.sdr_db;
  j["lsd"] = r.spectral_defined ? nlohmann::json(r.lsd) : nlohmann::json();
  j["mel_mae"] = r.spectral_defined ? nlohmann::json(r.mel_mae) : nlohmann::json();
  j["logf0_rmse"] = r.logf0_defined ? nlohmann::json(r.logf0_rmse) : nlohmann::json();
  j["voiced_frames"] = r.voiced_frames;
  return j;
}

inline MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.sdr_db = j.at("sdr_db").get<double>();
  r.spectral_defined = !j.at("lsd").is_null();
  if (r.spectral_defined) {
    r.lsd = j.at("lsd").get<double>();
    r.mel_mae = j.at("mel_mae").get<double>();
  }
  r.logf0_defined = !j.at("logf0_rmse").is_null();
  if (r.logf0_defined) r.logf0_rmse = j.at("logf0_rmse").get<double>();
  r.voiced_frames = j.at("voiced_frames").get<std::size_t>();
  return r;
}

// Per-track rows plus an aggregate mean row over defined values.
inline void write_report_csv(const std::vector<std::pair<std::string, MetricReport>>& rows,
                             const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_report_csv: cannot open " + path);
  os << "track,sdr_db,lsd,mel_mae,logf0_rmse,voiced_frames\n";
  double sdr_s = 0, lsd_s = 0, mel_s = 0, f0_s = 0;
  std::size_t n = 0, n_spec = 0, n_f0 = 0;
  for (const auto& [name, r] : rows) {
    os << name << ',' << r.sdr_db << ',';
    if (r.spectral_defined)
      os << r.lsd << ',' << r.mel_mae << ',';
    else
      os << ",,";
    if (r.logf0_defined)
      os << r.logf0_rmse;
    os << ',' << r.voiced_frames << '\n';
    sdr_s += r.sdr_db;
    ++n;
    if (r.spectral_defined) {
      lsd_s += r.lsd;
      mel_s += r.mel_mae;
      ++n_spec;
    }
    if (r.logf0_defined) {
      f0_s += r.logf0_rmse;
      ++n_f0;
    }
  }
  os << "aggregate," << (n ? sdr_s / double(n) : 0.0) << ',';
  if (n_spec)
    os << lsd_s / double(n_spec) << ',' << mel_s / double(n_spec) << ',';
  else
    os << ",,";
  if (n_f0) os << f0_s / double(n_f0);
  os << ",\n";
}

}  // namespace ldsep
