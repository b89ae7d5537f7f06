#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ldsep/dataset.hpp>
#include <ldsep/metrics.hpp>
#include <ldsep/wav.hpp>

using namespace ldsep;
namespace fs = std::filesystem;

TEST_CASE("wav round trip is bit exact") {
  Rng rng(1);
  Waveform w(2, 333, 8000);
  for (auto& v : w.samples.raw()) v = float(rng.uniform(-1.0, 1.0));
  write_wav("rt_test.wav", w);
  Waveform r = read_wav("rt_test.wav");
  CHECK(r.sample_rate == 8000);
  CHECK(r.channels() == 2);
  CHECK(r.length() == 333);
  for (std::size_t i = 0; i < w.samples.size(); ++i) CHECK(r.samples[i] == w.samples[i]);
  std::remove("rt_test.wav");
}

TEST_CASE("wav zero length and clipping") {
  Waveform empty(1, 0, 8000);
  write_wav("empty_test.wav", empty);
  Waveform r = read_wav("empty_test.wav");
  CHECK(r.length() == 0);
  std::remove("empty_test.wav");

  Waveform loud(1, 4, 8000);
  loud.samples.raw() = {2.0, -2.0, 0.5, 0.0};
  write_wav("clip_test.wav", loud);  // clips with warning
  Waveform c = read_wav("clip_test.wav");
  CHECK(c.samples[0] == 1.0);
  CHECK(c.samples[1] == -1.0);
  CHECK(c.samples[2] == 0.5);
  std::remove("clip_test.wav");
}

TEST_CASE("wav parse errors carry byte offsets") {
  {
    std::ofstream os("bad1_test.wav", std::ios::binary);
    os << "JUNKJUNKJUNK";
  }
  CHECK_THROWS_AS(read_wav("bad1_test.wav"), ParseError);
  std::remove("bad1_test.wav");

  Waveform w(1, 8, 8000);
  write_wav("bad2_test.wav", w);
  {
    // truncate inside the data chunk
    fs::resize_file("bad2_test.wav", 50);
  }
  CHECK_THROWS_AS(read_wav("bad2_test.wav"), ParseError);
  try {
    read_wav("bad2_test.wav");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset > 0);
  }
  std::remove("bad2_test.wav");
}

TEST_CASE("wav rejects non-float formats") {
  Waveform w(1, 8, 8000);
  write_wav("fmt_test.wav", w);
  {
    std::fstream f("fmt_test.wav", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(20);
    char pcm[2] = {1, 0};  // format tag 1 = integer PCM
    f.write(pcm, 2);
  }
  CHECK_THROWS_AS(read_wav("fmt_test.wav"), ParseError);
  std::remove("fmt_test.wav");
}

TEST_CASE("toy track mixing identity") {
  ToyTrackSpec spec = random_track_spec(7);
  StemSet s = generate_track(spec);
  CHECK(s.vocals.length() == s.mixture.length());
  bool exact = true;
  for (std::size_t i = 0; i < s.mixture.samples.size(); ++i)
    exact &= s.mixture.samples[i] == s.vocals.samples[i] + s.accompaniment.samples[i];
  CHECK(exact);
  CHECK(s.mixture.samples.max_abs() <= 1.0);  // no clipping on disk
}

TEST_CASE("toy track determinism and errors") {
  ToyTrackSpec spec = random_track_spec(9);
  StemSet a = generate_track(spec), b = generate_track(spec);
  for (std::size_t i = 0; i < a.mixture.samples.size(); ++i)
    CHECK(a.mixture.samples[i] == b.mixture.samples[i]);

  ToyTrackSpec bad = spec;
  bad.melody[0].f0_hz = 0.0;
  CHECK_THROWS_AS(generate_track(bad), std::invalid_argument);
  bad.melody[0].f0_hz = bad.sample_rate;  // far above Nyquist/4
  CHECK_THROWS_AS(generate_track(bad), std::invalid_argument);
  bad.melody[0].f0_hz = 440.0;
  bad.duration_s = 0.0;
  CHECK_THROWS_AS(generate_track(bad), std::invalid_argument);
}

TEST_CASE("empty melody leaves vocals silent") {
  ToyTrackSpec spec;
  spec.duration_s = 1.0;
  spec.seed = 3;
  StemSet s = generate_track(spec);
  CHECK(s.vocals.rms() == 0.0);
  for (std::size_t i = 0; i < s.mixture.samples.size(); ++i)
    CHECK(s.mixture.samples[i] == s.accompaniment.samples[i]);
}

TEST_CASE("single note is pitch trackable") {
  ToyTrackSpec spec;
  spec.duration_s = 1.2;
  spec.seed = 5;
  ToyNote n;
  n.f0_hz = 440.0;
  n.start_s = 0.05;
  n.length_s = 1.0;
  spec.melody.push_back(n);
  StemSet s = generate_track(spec);
  PitchTrack p = track_pitch(s.vocals, {});
  REQUIRE(p.voiced_count() > 0);
  std::vector<double> voiced;
  for (std::size_t i = 0; i < p.frames(); ++i)
    if (p.voiced[i]) voiced.push_back(p.f0_hz[i]);
  std::sort(voiced.begin(), voiced.end());
  double median = voiced[voiced.size() / 2];
  CHECK(median == doctest::Approx(440.0).epsilon(0.01));
}

TEST_CASE("corpus generation with split and manifest") {
  std::string dir = "corpus_test_dir";
  Manifest m = generate_corpus(12, 42, dir, 0.5, 8000, false);
  CHECK(m.tracks.size() == 12);
  CHECK(m.split("train").size() == 11);
  CHECK(m.split("valid").size() == 1);
  for (const auto& e : m.tracks) {
    CHECK(fs::exists(e.vocals_path));
    CHECK(fs::exists(e.mixture_path));
  }
  Manifest loaded = load_manifest((fs::path(dir) / "manifest.json").string());
  CHECK(loaded.sample_rate == m.sample_rate);
  REQUIRE(loaded.tracks.size() == m.tracks.size());
  for (std::size_t i = 0; i < m.tracks.size(); ++i) {
    CHECK(loaded.tracks[i].seed == m.tracks[i].seed);
    CHECK(loaded.tracks[i].split == m.tracks[i].split);
    CHECK(loaded.tracks[i].vocals_path == m.tracks[i].vocals_path);
  }
  // mixture on disk equals vocals + accompaniment on disk (f32 exactness)
  Waveform v = read_wav(m.tracks[0].vocals_path);
  Waveform a = read_wav(m.tracks[0].accompaniment_path);
  Waveform mix = read_wav(m.tracks[0].mixture_path);
  for (std::size_t i = 0; i < mix.samples.size(); ++i)
    CHECK(mix.samples[i] ==
          doctest::Approx(v.samples[i] + a.samples[i]).epsilon(1e-6));
  fs::remove_all(dir);
  CHECK_THROWS_AS(generate_corpus(0, 1, dir), std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("corpus regeneration is deterministic") {
  Manifest a = generate_corpus(3, 11, "corpus_det_a", 0.4);
  Manifest b = generate_corpus(3, 11, "corpus_det_b", 0.4);
  for (int i = 0; i < 3; ++i) {
    Waveform wa = read_wav(a.tracks[std::size_t(i)].mixture_path);
    Waveform wb = read_wav(b.tracks[std::size_t(i)].mixture_path);
    REQUIRE(wa.length() == wb.length());
    for (std::size_t j = 0; j < wa.samples.size(); ++j)
      CHECK(wa.samples[j] == wb.samples[j]);
  }
  fs::remove_all("corpus_det_a");
  fs::remove_all("corpus_det_b");
}
