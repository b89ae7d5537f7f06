// Acceptance suite: trains the toy system end to end and prints one
// PASS/FAIL line per criterion. Exit status is nonzero if any criterion
// fails.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <ldsep/dataset.hpp>
#include <ldsep/metrics.hpp>
#include <ldsep/robustness.hpp>
#include <ldsep/sampler.hpp>
#include <ldsep/trainer.hpp>

using namespace ldsep;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

static double now_s() {
  return std::chrono::duration<double>(Clock::now().time_since_epoch()).count();
}

static bool g_all_pass = true;

static void report(int n, bool pass, const std::string& what,
                   const std::string& detail = "") {
  std::printf("%s: %d - %s%s%s\n", pass ? "PASS" : "FAIL", n, what.c_str(),
              detail.empty() ? "" : " — ", detail.c_str());
  std::fflush(stdout);
  g_all_pass = g_all_pass && pass;
}

// ---------------------------------------------------------------------------
// Shared toy system, trained once and reused by criteria 4, 5, 7, and 9.

struct ToySystem {
  std::optional<CodecModel> codec;
  std::optional<SeparationModel> model;
  std::vector<StemPair> valid;
  std::vector<Waveform> valid_mixtures;
  Waveform first_separation;
  SamplerConfig eval_cfg;
};

static ToySystem g_sys;

static CodecConfig toy_codec_cfg() {
  CodecConfig cc;
  cc.compression_factor = 16;
  cc.feature_channels = 8;
  cc.hidden_channels = 16;
  cc.rvq_stages = 2;
  cc.codebook_size = 32;
  return cc;
}

static UNetConfig toy_unet_cfg() {
  UNetConfig uc;
  uc.in_channels = 8;
  return uc;
}

// ---------------------------------------------------------------------------

// Criterion 1: oracle velocity sampling recovers the clean target.
static void criterion1() {
  double t0 = now_s();
  bool ok = true;
  double worst = 0.0;
  Rng rng(2);
  Tensor x0 = rng.normal_tensor({8, 16});
  VelocityFn oracle = [&x0](const Tensor& x_t, double sigma, const Tensor&) {
    auto [a, b] = NoiseSchedule::alpha_beta_of_sigma(sigma);
    Tensor v(x_t.shape());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double eps = b < 1e-300 ? 0.0 : (x_t[i] - a * x0[i]) / b;
      v[i] = a * eps - b * x0[i];
    }
    return v;
  };
  LatentTensor cond(Tensor({8, 16}));
  for (std::size_t T : {std::size_t(1), std::size_t(5), std::size_t(50)})
    for (std::uint64_t seed : {std::uint64_t(0), std::uint64_t(17), std::uint64_t(9999)}) {
      LatentTensor got = sample(oracle, cond, NoiseSchedule(T), seed);
      for (std::size_t i = 0; i < x0.size(); ++i)
        worst = std::max(worst, std::abs(got.data[i] - x0[i]));
    }
  double dt = now_s() - t0;
  ok = worst <= 1e-6 && dt < 1.0;
  std::ostringstream d;
  d << "max error " << worst << ", " << dt << " s";
  report(1, ok, "oracle sampling recovers the target for T in {1,5,50}", d.str());
}

// Criterion 2: schedule identity and forward endpoints.
static void criterion2() {
  double worst = 0.0;
  for (int i = 0; i <= 10000; ++i) {
    auto [a, b] = NoiseSchedule::alpha_beta_of_sigma(double(i) / 10000.0);
    worst = std::max(worst, std::abs(a * a + b * b - 1.0));
  }
  Rng rng(3);
  NoiseSchedule s(12);
  LatentTensor x0(rng.normal_tensor({4, 6})), eps(rng.normal_tensor({4, 6}));
  LatentTensor at0 = forward_diffuse(x0, eps, s, 0);
  LatentTensor atT = forward_diffuse(x0, eps, s, 12);
  bool endpoints = true;
  for (std::size_t i = 0; i < x0.data.size(); ++i) {
    endpoints &= at0.data[i] == x0.data[i];
    endpoints &= std::abs(atT.data[i] - eps.data[i]) <= 1e-12;
  }
  std::ostringstream d;
  d << "max |a^2+b^2-1| = " << worst;
  report(2, worst <= 1e-12 && endpoints,
         "schedule identity holds and forward endpoints are exact", d.str());
}

// Criterion 3: analytic gradients match finite differences.
static void criterion3() {
  double t0 = now_s();
  GeneratorModel gen(toy_unet_cfg(), 3);
  Rng rng(4);
  Tensor x = rng.normal_tensor({8, 16});
  Tensor cond = rng.normal_tensor({8, 16});
  Tensor target = rng.normal_tensor({8, 16}, 0.1);
  const double sigma = 0.37;

  auto loss_value = [&]() {
    ad::Tape tape;
    auto bound = gen.params().bind(tape);
    ad::VarId out = gen.forward_on(tape, bound, tape.leaf(x), sigma, tape.leaf(cond));
    return tape.val(tape.mse(out, tape.leaf(target)))[0];
  };

  ad::Tape tape;
  auto bound = gen.params().bind(tape);
  ad::VarId out = gen.forward_on(tape, bound, tape.leaf(x), sigma, tape.leaf(cond));
  tape.backward(tape.mse(out, tape.leaf(target)));

  const std::vector<std::string> names = {
      "temb.l0.w", "temb.l1.w",    "temb.l2.b",    "stem.w",       "stem.b",
      "enc_trans1.w", "enc_trans3.w", "enc0.gn1.g", "enc0.conv1.w", "enc1.cond.w",
      "enc1.film.w",  "enc2.conv2.w", "enc2.gn2.b", "enc3.attn.wq", "enc3.attn.wk",
      "enc3.attn.wv", "enc3.attn.wo", "dec_trans0.w", "dec0.conv1.w", "dec1.cond.b",
      "dec2.film.b",  "dec2.conv2.b", "out.w",       "out.b"};
  const double h = 1e-5;
  int checked = 0, bad = 0;
  double worst_rel = 0.0;
  for (const auto& name : names) {
    std::size_t pi = gen.params().index_of(name);
    Tensor& val = gen.params().value(pi);
    std::size_t j = val.size() / 2;
    double orig = val[j];
    val[j] = orig + h;
    double lp = loss_value();
    val[j] = orig - h;
    double lm = loss_value();
    val[j] = orig;
    double fd = (lp - lm) / (2.0 * h);
    double ag = tape.grad(bound[pi])[j];
    double rel = std::abs(fd - ag) / std::max({std::abs(fd), std::abs(ag), 1e-8});
    worst_rel = std::max(worst_rel, rel);
    ++checked;
    if (rel > 1e-3) ++bad;
  }
  double dt = now_s() - t0;
  std::ostringstream d;
  d << checked << " params, worst rel err " << worst_rel << ", " << dt << " s";
  report(3, checked >= 20 && bad == 0 && dt < 30.0,
         "generator gradients match central finite differences", d.str());
}

// Criterion 4: toy two-stage training beats the unprocessed mixture.
static void criterion4() {
  double t0 = now_s();
  try {
    const int n_train = 200, n_valid = 20;
    std::vector<StemPair> train;
    std::vector<Waveform> codec_corpus;
    for (int i = 0; i < n_train + n_valid; ++i) {
      StemSet s = generate_track(random_track_spec(1000 + std::uint64_t(i), 2.0));
      if (i < n_train) {
        codec_corpus.push_back(s.vocals);
        codec_corpus.push_back(s.mixture);
        train.push_back({s.vocals, s.accompaniment});
      } else {
        g_sys.valid.push_back({s.vocals, s.accompaniment});
        g_sys.valid_mixtures.push_back(s.mixture);
      }
    }

    CodecModel codec(toy_codec_cfg(), 2);
    CodecTrainConfig ct;
    ct.steps = 8000;
    ct.batch_size = 4;
    ct.crop_samples = 4096;
    ct.seed = 3;
    train_codec(codec, codec_corpus, ct);

    // Near-deterministic conditional target: concentrate training at high
    // noise levels and sample in few steps, which measures best here.
    TrainConfig tc;
    tc.diffusion_steps = 1;
    tc.stage1_steps = 12000;
    tc.stage2_steps = 3000;
    tc.batch_size = 4;
    tc.crop_frames = 128;
    tc.stage1_lr = 1e-3;
    tc.stage2_lr = 2e-4;
    tc.seed = 4;
    Trainer trainer(GeneratorModel(toy_unet_cfg(), 5), codec, tc);
    trainer.set_data(train, {});
    trainer.run_two_stage();

    g_sys.codec.emplace(codec);
    g_sys.model.emplace(trainer.generator(), trainer.conditioner(),
                        codec.latent_scale());

    SamplerConfig sc;
    sc.num_steps = 1;
    sc.chunk_samples = 4096;
    sc.overlap_fraction = 0.25;
    sc.seed = 6;
    g_sys.eval_cfg = sc;

    int wins = 0;
    for (int k = 0; k < n_valid; ++k) {
      const Waveform& ref = g_sys.valid[std::size_t(k)].vocals;
      const Waveform& mix = g_sys.valid_mixtures[std::size_t(k)];
      Waveform est = separate_track(*g_sys.model, codec, mix, sc);
      if (k == 0) g_sys.first_separation = est;
      MetricReport re = evaluate_track(ref, est);
      MetricReport rm = evaluate_track(ref, mix);
      bool mel_ok =
          re.spectral_defined && rm.spectral_defined && re.mel_mae < rm.mel_mae;
      bool f0_ok =
          re.logf0_defined && (!rm.logf0_defined || re.logf0_rmse < rm.logf0_rmse);
      if (mel_ok && f0_ok) ++wins;
    }
    double dt = now_s() - t0;
    std::ostringstream d;
    d << wins << "/20 held-out wins, " << dt << " s";
    report(4, wins >= 16 && dt < 1800.0,
           "trained toy system beats the mixture on Mel-MAE and log-F0", d.str());
  } catch (const std::exception& e) {
    report(4, false, "trained toy system beats the mixture on Mel-MAE and log-F0",
           std::string("exception: ") + e.what());
  }
}

// Criterion 5: robustness trends across noise-injection points.
static void criterion5() {
  double t0 = now_s();
  try {
    if (!g_sys.codec) throw InvalidState("no trained codec from criterion 4");
    RobustnessConfig cfg;
    cfg.stds = {0.0, 1e-3, 0.01, 0.1, 1.0};
    cfg.seed = 7;
    std::vector<Waveform> tracks(g_sys.valid_mixtures.begin(),
                                 g_sys.valid_mixtures.begin() + 4);
    RobustnessTable t = run_table(*g_sys.codec, tracks, cfg);

    bool monotone = true;
    for (const auto* col : {&t.identity, &t.nq, &t.bq, &t.aq})
      for (std::size_t i = 1; i < col->size(); ++i)
        monotone = monotone && (*col)[i] <= (*col)[i - 1] + 0.3;
    bool clean_order = t.nq[0] > t.bq[0] && t.bq[0] == t.aq[0];
    bool witness = false;
    for (std::size_t i = 1; i < t.stds.size(); ++i)
      if (t.aq[0] - t.aq[i] > 1.0 && t.nq[0] - t.nq[i] < 0.5 &&
          t.bq[0] - t.bq[i] < 0.5)
        witness = true;
    double dt = now_s() - t0;
    std::ostringstream d;
    d << "NQ(0)=" << t.nq[0] << " BQ(0)=" << t.bq[0] << " dB, " << dt << " s";
    report(5, monotone && clean_order && witness && dt < 600.0,
           "robustness curves: monotone decay, clean ordering, AQ sensitivity",
           d.str());
  } catch (const std::exception& e) {
    report(5, false, "robustness curves: monotone decay, clean ordering, AQ sensitivity",
           std::string("exception: ") + e.what());
  }
}

// Criterion 6: closed-form metric values.
static void criterion6() {
  bool ok = true;
  std::ostringstream d;
  Rng rng(8);
  Waveform ref(1, 8000, 8000);
  for (auto& v : ref.samples.raw()) v = 0.2 * rng.normal();
  Waveform half = ref;
  for (auto& v : half.samples.raw()) v *= 0.5;
  double s = sdr(ref, half);
  ok &= std::abs(s - 6.0206) <= 1e-3;

  Waveform tens = ref;
  for (auto& v : tens.samples.raw()) v *= 10.0;
  double l = lsd(ref, tens, SpectrogramConfig{});
  ok &= std::abs(l - 1.0) <= 1e-6;

  Waveform tone(1, 8000, 8000);
  for (std::size_t i = 0; i < tone.length(); ++i)
    tone.samples[i] = 0.5 * std::sin(2.0 * kPi * 440.0 * double(i) / 8000.0);
  PitchTrack p = track_pitch(tone, {});
  bool pitch_ok = p.voiced_count() > 0;
  for (std::size_t i = 0; i < p.frames(); ++i)
    if (p.voiced[i]) pitch_ok = pitch_ok && std::abs(p.f0_hz[i] - 440.0) <= 4.4;
  ok &= pitch_ok;

  PitchTrack octave = p;
  for (auto& f : octave.f0_hz)
    if (f > 0.0) f *= 2.0;
  double r = logf0_rmse(p, octave);
  ok &= std::abs(r - 0.6931) <= 1e-3;

  d << "sdr " << s << " dB, lsd " << l << ", octave rmse " << r;
  report(6, ok, "closed-form metric values", d.str());
}

// Criterion 7: crossfade partition of unity and seam continuity.
static void criterion7() {
  bool partition = true;
  for (auto [chunk, overlap] : {std::pair<std::size_t, std::size_t>{64, 16},
                                {4096, 1024}, {100, 33}}) {
    auto first = crossfade_window(chunk, overlap, true, false);
    auto mid = crossfade_window(chunk, overlap, false, false);
    auto last = crossfade_window(chunk, overlap, false, true);
    for (std::size_t i = 0; i < overlap; ++i) {
      partition &= std::abs(first[chunk - overlap + i] + mid[i] - 1.0) <= 1e-9;
      partition &= std::abs(mid[chunk - overlap + i] + mid[i] - 1.0) <= 1e-9;
      partition &= std::abs(mid[chunk - overlap + i] + last[i] - 1.0) <= 1e-9;
    }
  }

  bool seams_ok = false;
  std::ostringstream d;
  if (g_sys.first_separation.length() > 0) {
    const Waveform& y = g_sys.first_separation;
    const std::size_t chunk = g_sys.eval_cfg.chunk_samples;
    const std::size_t cf = std::size_t(g_sys.codec->config().compression_factor);
    std::size_t overlap =
        std::size_t(double(chunk) * g_sys.eval_cfg.overlap_fraction) / cf * cf;
    const std::size_t hop = chunk - overlap;
    std::vector<bool> near_seam(y.length(), false);
    for (std::size_t pos = hop; pos < y.length(); pos += hop)
      for (std::size_t edge : {pos, pos + overlap})
        for (std::size_t i = edge > 8 ? edge - 8 : 0;
             i < std::min(edge + 8, y.length()); ++i)
          near_seam[i] = true;
    double seam_acc = 0.0, base_acc = 0.0;
    std::size_t seam_n = 0, base_n = 0;
    for (std::size_t i = 1; i < y.length(); ++i) {
      double diff = y.samples[i] - y.samples[i - 1];
      if (near_seam[i]) {
        seam_acc += diff * diff;
        ++seam_n;
      } else {
        base_acc += diff * diff;
        ++base_n;
      }
    }
    double seam_rms = std::sqrt(seam_acc / double(std::max<std::size_t>(seam_n, 1)));
    double base_rms = std::sqrt(base_acc / double(std::max<std::size_t>(base_n, 1)));
    seams_ok = base_rms > 0.0 && seam_rms < 3.0 * base_rms;
    d << "seam rms " << seam_rms << " vs baseline " << base_rms;
  } else {
    d << "no separation output from criterion 4";
  }
  report(7, partition && seams_ok,
         "crossfade partitions unity and chunk seams stay smooth", d.str());
}

// Criterion 8: CLI commands are bit-reproducible.
static std::uint64_t hash_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) return 0;
  std::uint64_t h = 1469598103934665603ull;
  char c;
  while (is.get(c)) {
    h ^= std::uint64_t(static_cast<unsigned char>(c));
    h *= 1099511628211ull;
  }
  return h;
}

static void criterion8() {
  const char* cli = std::getenv("LDSEP_CLI");
  if (!cli) {
    report(8, false, "CLI commands are bit-reproducible", "LDSEP_CLI not set");
    return;
  }
  std::error_code ec;
  fs::remove_all("acceptance_cli_a", ec);
  fs::remove_all("acceptance_cli_b", ec);
  fs::create_directories("acceptance_cli_a");
  fs::create_directories("acceptance_cli_b");

  const std::vector<std::string> cmds = {
      "gen-data --out data --tracks 6 --duration 1.5 --rate 8000 --seed 3",
      "train-codec --data data --out codec.bin --steps 8 --batch 2 --crop 2048 "
      "--cf 16 --features 4 --hidden 8 --rvq-stages 2 --codebook 16 --seed 4",
      "train --data data --codec codec.bin --out model.bin --stage1-steps 2 "
      "--stage2-steps 1 --batch 2 --crop-frames 64 --diffusion-steps 8 --seed 5",
      "separate --model model.bin --codec codec.bin --in data/track_0000/mixture.wav "
      "--out sep.wav --steps 4 --chunk 1024 --overlap 0.2 --seed 6",
      "evaluate --ref data/track_0000/vocals.wav --est sep.wav --csv eval.csv",
      "robustness --codec codec.bin --data data --split valid --out robust.csv "
      "--stds 0,0.1 --seed 7"};

  bool ran_ok = true;
  for (const std::string& dir : {std::string("acceptance_cli_a"),
                                 std::string("acceptance_cli_b")})
    for (const auto& c : cmds) {
      std::string full = "cd " + dir + " && " + std::string(cli) +
                         " --threads 1 " + c + " > cli_stdout.txt 2> cli_stderr.txt";
      if (std::system(full.c_str()) != 0) ran_ok = false;
    }

  const std::vector<std::string> artifacts = {
      "data/manifest.json",        "data/track_0000/mixture.wav",
      "data/track_0005/vocals.wav", "codec.bin",
      "model.bin",                 "sep.wav",
      "eval.csv",                  "robust.csv"};
  bool match = true;
  std::string mismatch;
  for (const auto& a : artifacts) {
    std::uint64_t ha = hash_file(fs::path("acceptance_cli_a") / a);
    std::uint64_t hb = hash_file(fs::path("acceptance_cli_b") / a);
    if (ha == 0 || ha != hb) {
      match = false;
      mismatch += a + " ";
    }
  }
  std::ostringstream d;
  if (!ran_ok) d << "a command exited nonzero; ";
  if (!match) d << "differing artifacts: " << mismatch;
  if (ran_ok && match) d << artifacts.size() << " artifacts hash-identical";
  report(8, ran_ok && match, "CLI commands are bit-reproducible", d.str());
  fs::remove_all("acceptance_cli_a", ec);
  fs::remove_all("acceptance_cli_b", ec);
}

// Criterion 9: separation speed and per-step cost linear in T.
static void criterion9() {
  try {
    if (!g_sys.model) throw InvalidState("no trained model from criterion 4");
    StemSet clip = generate_track(random_track_spec(4242, 12.0));
    SamplerConfig sc = g_sys.eval_cfg;
    sc.num_steps = 50;
    double t0 = now_s();
    Waveform est = separate_track(*g_sys.model, *g_sys.codec, clip.mixture, sc);
    double sep_time = now_s() - t0;
    bool speed_ok = est.length() == clip.mixture.length() && sep_time < 60.0;

    // per-step cost via single-chunk sampling at several step counts
    LatentTensor cond = encode(g_sys.model->conditioner,
                               g_sys.valid_mixtures[0]);
    cond = normalize_latent(cond, g_sys.model->latent_scale);
    // crop the conditioning to one chunk worth of frames
    std::size_t D = g_sys.eval_cfg.chunk_samples /
                    std::size_t(g_sys.codec->config().compression_factor);
    Tensor cd({cond.data.dim(0), D});
    for (std::size_t f = 0; f < cd.dim(0); ++f)
      for (std::size_t i = 0; i < D; ++i) cd.at(f, i) = cond.data.at(f, i);
    LatentTensor chunk_cond(cd);
    VelocityFn vfn = velocity_fn(g_sys.model->generator);

    std::vector<double> ts = {10, 25, 50, 100}, ys;
    for (double T : ts) {
      double best = 1e300;
      for (int rep = 0; rep < 3; ++rep) {
        double a = now_s();
        sample(vfn, chunk_cond, NoiseSchedule(std::size_t(T)), 1);
        best = std::min(best, now_s() - a);
      }
      ys.push_back(best);
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      sx += ts[i];
      sy += ys[i];
      sxx += ts[i] * ts[i];
      sxy += ts[i] * ys[i];
    }
    double n = double(ts.size());
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    double intercept = (sy - slope * sx) / n;
    double ss_res = 0, ss_tot = 0, mean_y = sy / n;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      double pred = intercept + slope * ts[i];
      ss_res += (ys[i] - pred) * (ys[i] - pred);
      ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
    }
    double r2 = 1.0 - ss_res / ss_tot;
    std::ostringstream d;
    d << "12 s clip in " << sep_time << " s, R^2 " << r2;
    report(9, speed_ok && r2 > 0.99,
           "separation under 60 s and per-step cost linear in T", d.str());
  } catch (const std::exception& e) {
    report(9, false, "separation under 60 s and per-step cost linear in T",
           std::string("exception: ") + e.what());
  }
}

int main() {
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  criterion9();
  return g_all_pass ? 0 : 1;
}
