#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/fft.hpp"
#include "core/rng.hpp"
#include "wav.hpp"

namespace ldsep {

struct ToyNote {
  double f0_hz = 220.0;
  double start_s = 0.0;
  double length_s = 0.5;
  double vibrato_cents = 20.0;
  double vibrato_hz = 5.0;
};

// Synthetic track recipe: a vocal proxy (harmonic stack with vibrato and an
// amplitude envelope, so f0 is trackable) over a chord pad plus percussion.
struct ToyTrackSpec {
  double duration_s = 3.0;
  int sample_rate = 8000;
  bool stereo = false;
  std::vector<ToyNote> melody;
  double chord_root_hz = 110.0;
  double percussion_period_s = 0.125;
  double balance_db = 0.0;  // accompaniment gain relative to vocals
  std::uint64_t seed = 0;
};

struct StemSet {
  Waveform vocals, accompaniment, mixture;
};

namespace toy_detail {

inline void add_harmonic_tone(Waveform& w, double f0, double start_s, double len_s,
                              double vib_cents, double vib_hz, double amp,
                              int n_harmonics, double harmonic_falloff) {
  const int rate = w.sample_rate;
  const std::size_t i0 = std::size_t(start_s * rate);
  const std::size_t n = std::size_t(len_s * rate);
  const double attack = 0.03 * rate, release = 0.05 * rate;
  double phase = 0.0;
  for (std::size_t i = 0; i < n && i0 + i < w.length(); ++i) {
    const double t = double(i) / rate;
    const double cents = vib_cents * std::sin(2.0 * kPi * vib_hz * t);
    const double f = f0 * std::pow(2.0, cents / 1200.0);
    phase += 2.0 * kPi * f / rate;
    double env = 1.0;
    if (double(i) < attack) env = double(i) / attack;
    if (double(n - i) < release) env = std::min(env, double(n - i) / release);
    double s = 0.0;
    for (int h = 1; h <= n_harmonics; ++h) {
      if (h * f > rate / 2.0) break;
      s += std::sin(phase * h) / std::pow(double(h), harmonic_falloff);
    }
    for (std::size_t c = 0; c < w.channels(); ++c)
      w.samples.at(c, i0 + i) += amp * env * s;
  }
}

}  // namespace toy_detail

inline StemSet generate_track(const ToyTrackSpec& spec) {
  if (spec.duration_s <= 0.0) throw std::invalid_argument("generate_track: duration <= 0");
  const double nyq4 = spec.sample_rate / 8.0;
  for (const auto& n : spec.melody)
    if (n.f0_hz <= 0.0 || n.f0_hz > nyq4)
      throw std::invalid_argument("generate_track: note frequency outside (0, Nyquist/4]");

  const std::size_t channels = spec.stereo ? 2 : 1;
  const std::size_t len = std::size_t(spec.duration_s * spec.sample_rate);
  Waveform vocals(channels, len, spec.sample_rate);
  Waveform acc(channels, len, spec.sample_rate);
  Rng rng = Rng::derive(spec.seed, {0x746f79});

  for (const auto& n : spec.melody)
    toy_detail::add_harmonic_tone(vocals, n.f0_hz, n.start_s, n.length_s,
                                  n.vibrato_cents, n.vibrato_hz, 0.22, 6, 1.4);

  // Chord pad: three detuned tones (root, third, fifth) with rich harmonics.
  const double acc_gain = std::pow(10.0, spec.balance_db / 20.0);
  const double ratios[3] = {1.0, 1.2599210498948732, 1.4983070768766815};
  for (int k = 0; k < 3; ++k) {
    double detune = 1.0 + 0.003 * (rng.uniform() - 0.5);
    toy_detail::add_harmonic_tone(acc, spec.chord_root_hz * ratios[k] * detune, 0.0,
                                  spec.duration_s, 6.0, 0.7 + 0.2 * k,
                                  0.065 * acc_gain, 5, 1.0);
  }

  // Percussive noise bursts on a fixed grid.
  const std::size_t period = std::size_t(spec.percussion_period_s * spec.sample_rate);
  const std::size_t burst = std::size_t(0.08 * spec.sample_rate);
  for (std::size_t p = 0; p + burst < len; p += std::max<std::size_t>(period, 1)) {
    for (std::size_t i = 0; i < burst; ++i) {
      double e = std::exp(-double(i) / (0.035 * spec.sample_rate));
      double s = 0.2 * acc_gain * e * (2.0 * rng.uniform() - 1.0);
      for (std::size_t c = 0; c < channels; ++c) acc.samples.at(c, p + i) += s;
    }
  }

  // Slight channel decorrelation in stereo mode so channel flipping matters.
  if (spec.stereo)
    for (std::size_t i = 0; i < len; ++i) acc.samples.at(1, i) *= 0.8;

  StemSet out;
  out.vocals = vocals;
  out.accompaniment = acc;
  out.mixture = Waveform(channels, len, spec.sample_rate);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < len; ++i)
      out.mixture.samples.at(c, i) = vocals.samples.at(c, i) + acc.samples.at(c, i);
  return out;
}

// Deterministic random spec: pentatonic melody in [200, 500] Hz.
inline ToyTrackSpec random_track_spec(std::uint64_t seed, double duration_s = 3.0,
                                      int sample_rate = 8000, bool stereo = false) {
  ToyTrackSpec spec;
  spec.duration_s = duration_s;
  spec.sample_rate = sample_rate;
  spec.stereo = stereo;
  spec.seed = seed;
  Rng rng = Rng::derive(seed, {0x73706563});
  static const int penta[5] = {0, 2, 4, 7, 9};
  double t = 0.05;
  while (t < duration_s - 0.3) {
    ToyNote n;
    int octave = int(rng.integer(2));
    n.f0_hz = 220.0 * std::pow(2.0, (penta[rng.integer(5)] + 12 * octave) / 12.0);
    if (n.f0_hz > 500.0) n.f0_hz /= 2.0;
    n.start_s = t;
    n.length_s = 0.3 + 0.4 * rng.uniform();
    n.vibrato_cents = 15.0 + 10.0 * rng.uniform();
    n.vibrato_hz = 4.5 + rng.uniform();
    spec.melody.push_back(n);
    t += n.length_s + 0.05 * rng.uniform();
  }
  spec.chord_root_hz = 110.0 * std::pow(2.0, double(rng.integer(5)) / 12.0);
  spec.balance_db = -2.0 + 4.0 * rng.uniform();
  return spec;
}

struct ManifestEntry {
  int id = 0;
  std::uint64_t seed = 0;
  double duration_s = 0.0;
  std::string split;  // "train" or "valid"
  std::string vocals_path, accompaniment_path, mixture_path;
};

struct Manifest {
  int sample_rate = 8000;
  std::vector<ManifestEntry> tracks;

  std::vector<ManifestEntry> split(const std::string& which) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : tracks)
      if (e.split == which) out.push_back(e);
    return out;
  }
};

inline void save_manifest(const Manifest& m, const std::string& path) {
  nlohmann::json j;
  j["sample_rate"] = m.sample_rate;
  j["tracks"] = nlohmann::json::array();
  for (const auto& e : m.tracks)
    j["tracks"].push_back({{"id", e.id},
                           {"seed", e.seed},
                           {"duration", e.duration_s},
                           {"split", e.split},
                           {"vocals", e.vocals_path},
                           {"accompaniment", e.accompaniment_path},
                           {"mixture", e.mixture_path}});
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_manifest: cannot open " + path);
  os << j.dump(2) << "\n";
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_manifest: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  Manifest m;
  m.sample_rate = j.at("sample_rate").get<int>();
  for (const auto& t : j.at("tracks")) {
    ManifestEntry e;
    e.id = t.at("id").get<int>();
    e.seed = t.at("seed").get<std::uint64_t>();
    e.duration_s = t.at("duration").get<double>();
    e.split = t.at("split").get<std::string>();
    e.vocals_path = t.at("vocals").get<std::string>();
    e.accompaniment_path = t.at("accompaniment").get<std::string>();
    e.mixture_path = t.at("mixture").get<std::string>();
    m.tracks.push_back(e);
  }
  return m;
}

// Writes n tracks plus manifest.json under out_dir. 90/10 train/valid split,
// assignment fixed by the corpus seed.
inline Manifest generate_corpus(int n_tracks, std::uint64_t seed,
                                const std::string& out_dir, double duration_s = 3.0,
                                int sample_rate = 8000, bool stereo = false) {
  if (n_tracks < 1) throw std::invalid_argument("generate_corpus: n_tracks must be >= 1");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir))
    throw std::runtime_error("generate_corpus: cannot create " + out_dir);

  // Deterministic split: shuffle indices, last 10% (at least 1) become valid.
  std::vector<int> order(n_tracks);
  for (int i = 0; i < n_tracks; ++i) order[i] = i;
  Rng split_rng = Rng::derive(seed, {0x73706c6974});
  for (int i = n_tracks - 1; i > 0; --i)
    std::swap(order[i], order[split_rng.integer(std::uint64_t(i + 1))]);
  int n_valid = std::max(1, n_tracks / 10);
  std::vector<bool> is_valid(n_tracks, false);
  for (int i = 0; i < n_valid; ++i) is_valid[order[i]] = true;

  Manifest m;
  m.sample_rate = sample_rate;
  for (int i = 0; i < n_tracks; ++i) {
    std::uint64_t track_seed = splitmix64(seed ^ (0x1000 + std::uint64_t(i)));
    auto spec = random_track_spec(track_seed, duration_s, sample_rate, stereo);
    StemSet stems = generate_track(spec);
    char name[32];
    std::snprintf(name, sizeof(name), "track_%04d", i);
    fs::path dir = fs::path(out_dir) / name;
    fs::create_directories(dir);
    ManifestEntry e;
    e.id = i;
    e.seed = track_seed;
    e.duration_s = duration_s;
    e.split = is_valid[i] ? "valid" : "train";
    e.vocals_path = (dir / "vocals.wav").string();
    e.accompaniment_path = (dir / "accompaniment.wav").string();
    e.mixture_path = (dir / "mixture.wav").string();
    write_wav(e.vocals_path, stems.vocals);
    write_wav(e.accompaniment_path, stems.accompaniment);
    write_wav(e.mixture_path, stems.mixture);
    m.tracks.push_back(e);
  }
  save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
  return m;
}

}  // namespace ldsep
