#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <ldsep/dataset.hpp>
#include <ldsep/metrics.hpp>

using namespace ldsep;

namespace {

Waveform sine(double f0, double dur_s, int rate = 8000, double amp = 0.5) {
  Waveform w(1, std::size_t(dur_s * rate), rate);
  for (std::size_t i = 0; i < w.length(); ++i)
    w.samples[i] = amp * std::sin(2.0 * kPi * f0 * double(i) / double(rate));
  return w;
}

Waveform white(std::uint64_t seed, double dur_s, int rate = 8000, double amp = 0.1) {
  Rng rng(seed);
  Waveform w(1, std::size_t(dur_s * rate), rate);
  for (auto& v : w.samples.raw()) v = amp * rng.normal();
  return w;
}

Waveform scaled(const Waveform& w, double g) {
  Waveform out = w;
  for (auto& v : out.samples.raw()) v *= g;
  return out;
}

}  // namespace

TEST_CASE("sdr closed forms") {
  Waveform ref = white(1, 0.5);
  CHECK(sdr(ref, scaled(ref, 0.5)) == doctest::Approx(6.0206).epsilon(1e-4));
  CHECK(sdr(ref, scaled(ref, 2.0)) == doctest::Approx(0.0).epsilon(1e-9));
  Waveform half = scaled(ref, 0.5);
  // est = 2*ref: residual equals ref -> 0 dB; est = -ref -> -6.02 on doubled residual
  CHECK(sdr(ref, scaled(ref, -1.0)) == doctest::Approx(-6.0206).epsilon(1e-4));
  CHECK(sdr(ref, ref) == kSdrCapDb);
  Waveform zero(1, ref.length(), 8000);
  CHECK_THROWS_AS(sdr(zero, ref), UndefinedMetric);
  Waveform wrong(1, 10, 8000);
  CHECK_THROWS_AS(sdr(ref, wrong), std::invalid_argument);
}

TEST_CASE("sdr is invariant to joint scaling") {
  Waveform ref = white(2, 0.5);
  Waveform est = white(3, 0.5);
  double a = sdr(ref, est);
  double b = sdr(scaled(ref, 3.0), scaled(est, 3.0));
  CHECK(a == doctest::Approx(b).epsilon(1e-9));
}

TEST_CASE("lsd closed forms") {
  SpectrogramConfig cfg;
  Waveform ref = white(4, 0.5, 8000, 0.3);
  CHECK(lsd(ref, ref, cfg) == doctest::Approx(0.0).epsilon(1e-9));
  // 10x magnitude -> every bin differs by exactly one decade
  CHECK(lsd(ref, scaled(ref, 10.0), cfg) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(lsd(ref, scaled(ref, 2.0), cfg) ==
        doctest::Approx(std::log10(2.0)).epsilon(1e-6));
  // symmetric in its arguments
  Waveform est = white(5, 0.5, 8000, 0.3);
  CHECK(lsd(ref, est, cfg) == doctest::Approx(lsd(est, ref, cfg)).epsilon(1e-9));
  std::vector<bool> none(1 + (ref.length() - cfg.fft_size) / cfg.hop, false);
  CHECK_THROWS_AS(lsd(ref, est, cfg, &none), UndefinedMetric);
  std::vector<bool> bad(3, true);
  CHECK_THROWS_AS(lsd(ref, est, cfg, &bad), std::invalid_argument);
  cfg.hop = 0;
  CHECK_THROWS_AS(lsd(ref, est, cfg), std::invalid_argument);
}

TEST_CASE("mel mae closed forms") {
  SpectrogramConfig cfg;
  Waveform ref = white(6, 0.5, 8000, 0.3);
  CHECK(mel_mae(ref, ref, cfg) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(mel_mae(ref, scaled(ref, 10.0), cfg) == doctest::Approx(1.0).epsilon(1e-3));
  Waveform est = white(7, 0.5, 8000, 0.3);
  CHECK(mel_mae(ref, est, cfg) == doctest::Approx(mel_mae(est, ref, cfg)).epsilon(1e-9));

  // silent estimate: error is the mean distance of ref log-mel from the floor
  Waveform silent(1, ref.length(), 8000);
  double got = mel_mae(ref, silent, cfg);
  Tensor fb = mel_filterbank(cfg.mel_bands, cfg.fft_size, 8000.0, 0.0, 4000.0);
  Tensor mag = stft_magnitude(ref.mono(), cfg.fft_size, cfg.hop);
  double want = 0.0;
  for (std::size_t m = 0; m < cfg.mel_bands; ++m)
    for (std::size_t f = 0; f < mag.dim(1); ++f) {
      double acc = 0.0;
      for (std::size_t k = 0; k < mag.dim(0); ++k) acc += fb.at(m, k) * mag.at(k, f);
      want += std::abs(std::log10(std::max(acc, cfg.log_floor)) -
                       std::log10(cfg.log_floor));
    }
  want /= double(cfg.mel_bands * mag.dim(1));
  CHECK(got == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("pitch tracker on a pure tone") {
  Waveform tone = sine(440.0, 1.0);
  PitchTrack p = track_pitch(tone, {});
  REQUIRE(p.frames() > 0);
  std::size_t close = 0;
  for (std::size_t i = 0; i < p.frames(); ++i)
    if (p.voiced[i] && std::abs(p.f0_hz[i] - 440.0) <= 4.4) ++close;
  CHECK(double(p.voiced_count()) / double(p.frames()) >= 0.95);
  CHECK(close == p.voiced_count());  // every voiced frame within 1%
}

TEST_CASE("pitch tracker voicing decisions") {
  PitchConfig cfg;
  Waveform noise = white(8, 1.0, 8000, 0.3);
  PitchTrack pn = track_pitch(noise, cfg);
  CHECK(double(pn.voiced_count()) / double(pn.frames()) <= 0.2);
  Waveform silent(1, 8000, 8000);
  PitchTrack ps = track_pitch(silent, cfg);
  CHECK(ps.voiced_count() == 0);
  Waveform tiny(1, 100, 8000);
  CHECK_THROWS_AS(track_pitch(tiny, cfg), std::invalid_argument);
}

TEST_CASE("lower voicing threshold shrinks the voiced set") {
  Waveform mix = sine(220.0, 1.0);
  Rng rng(9);
  for (auto& v : mix.samples.raw()) v += 0.15 * rng.normal();
  PitchConfig hi, lo;
  hi.voicing_threshold = 0.3;
  lo.voicing_threshold = 0.05;
  PitchTrack ph = track_pitch(mix, hi), pl = track_pitch(mix, lo);
  REQUIRE(ph.frames() == pl.frames());
  for (std::size_t i = 0; i < ph.frames(); ++i)
    if (pl.voiced[i]) CHECK(ph.voiced[i]);  // voiced sets are nested
  CHECK(pl.voiced_count() <= ph.voiced_count());
}

TEST_CASE("logf0 rmse closed forms") {
  Waveform a4 = sine(440.0, 1.0);
  PitchTrack p = track_pitch(a4, {});
  CHECK(logf0_rmse(p, p) == 0.0);
  PitchTrack octave = p;
  for (auto& f : octave.f0_hz)
    if (f > 0.0) f *= 2.0;
  CHECK(logf0_rmse(p, octave) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  PitchTrack semitone = p;
  for (auto& f : semitone.f0_hz)
    if (f > 0.0) f *= std::pow(2.0, 1.0 / 12.0);
  CHECK(logf0_rmse(p, semitone) == doctest::Approx(std::log(2.0) / 12.0).epsilon(1e-12));
  // amplitude does not move the estimate
  PitchTrack loud = track_pitch(scaled(a4, 0.3), {});
  CHECK(logf0_rmse(p, loud) <= 1e-3);

  PitchTrack other = p;
  for (std::size_t i = 0; i < other.voiced.size(); ++i)
    other.voiced[i] = !p.voiced[i];
  CHECK_THROWS_AS(logf0_rmse(p, other), UndefinedMetric);
  PitchTrack shorter = p;
  shorter.f0_hz.pop_back();
  shorter.voiced.pop_back();
  CHECK_THROWS_AS(logf0_rmse(p, shorter), std::invalid_argument);
}

TEST_CASE("evaluate_track on identical and degraded input") {
  ToyTrackSpec spec = random_track_spec(21, 2.0);
  StemSet s = generate_track(spec);
  MetricReport same = evaluate_track(s.vocals, s.vocals);
  CHECK(same.sdr_db == kSdrCapDb);
  REQUIRE(same.spectral_defined);
  CHECK(same.lsd == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(same.mel_mae == doctest::Approx(0.0).epsilon(1e-9));
  REQUIRE(same.logf0_defined);
  CHECK(same.logf0_rmse == 0.0);
  CHECK(same.voiced_frames > 0);

  MetricReport mixed = evaluate_track(s.vocals, s.mixture);
  CHECK(mixed.sdr_db < same.sdr_db);
  REQUIRE(mixed.spectral_defined);
  CHECK(mixed.mel_mae > same.mel_mae);
}

TEST_CASE("report json round trip keeps undefined fields") {
  MetricReport r;
  r.sdr_db = 4.5;
  r.spectral_defined = false;
  r.logf0_defined = true;
  r.logf0_rmse = 0.25;
  r.voiced_frames = 17;
  MetricReport back = report_from_json(report_to_json(r));
  CHECK(back.sdr_db == 4.5);
  CHECK(!back.spectral_defined);
  CHECK(back.logf0_defined);
  CHECK(back.logf0_rmse == 0.25);
  CHECK(back.voiced_frames == 17);
}

TEST_CASE("csv report layout") {
  MetricReport a;
  a.sdr_db = 3.0;
  a.spectral_defined = true;
  a.lsd = 0.5;
  a.mel_mae = 0.25;
  a.logf0_defined = true;
  a.logf0_rmse = 0.1;
  a.voiced_frames = 10;
  MetricReport b;
  b.sdr_db = 1.0;
  b.spectral_defined = false;
  b.logf0_defined = false;
  b.voiced_frames = 0;
  write_report_csv({{"t0", a}, {"t1", b}}, "report_test.csv");
  std::ifstream is("report_test.csv");
  std::string line;
  std::getline(is, line);
  CHECK(line == "track,sdr_db,lsd,mel_mae,logf0_rmse,voiced_frames");
  std::getline(is, line);
  CHECK(line.substr(0, 3) == "t0,");
  std::getline(is, line);
  CHECK(line.substr(0, 3) == "t1,");
  std::getline(is, line);
  CHECK(line.substr(0, 10) == "aggregate,");
  CHECK(line.find("0.25") != std::string::npos);  // mean over defined rows only
  std::remove("report_test.csv");
}
