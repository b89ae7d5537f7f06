// Command-line front end: data generation, codec and diffusion training,
// separation, evaluation, and the codec robustness table. Every subcommand
// accepts --config <file.json>; explicit flags override config-file values.
// Exit codes: 0 success, 1 invalid arguments, 2 runtime/data error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <ldsep/codec.hpp>
#include <ldsep/dataset.hpp>
#include <ldsep/metrics.hpp>
#include <ldsep/robustness.hpp>
#include <ldsep/sampler.hpp>
#include <ldsep/trainer.hpp>
#include <ldsep/unet.hpp>
#include <ldsep/wav.hpp>

namespace {

using nlohmann::json;

// Config-file fallback: flags the user did not pass take their value from
// the JSON config, if present.
struct ConfigFile {
  json j = json::object();

  void load(const std::string& path) {
    if (path.empty()) return;
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot open config file " + path);
    j = json::parse(is);
  }

  template <typename T>
  void fallback(const CLI::Option* opt, T& var, const char* key) const {
    if (opt->count() == 0 && j.contains(key)) var = j.at(key).get<T>();
  }
};

std::vector<ldsep::StemPair> load_split(const ldsep::Manifest& m, const std::string& split) {
  std::vector<ldsep::StemPair> out;
  for (const auto& e : m.split(split))
    out.push_back({ldsep::read_wav(e.vocals_path), ldsep::read_wav(e.accompaniment_path)});
  return out;
}

void emit(const json& summary) { std::cout << summary.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent-diffusion singing-voice separation toolkit"};
  app.require_subcommand(1);
  int threads = 1;  // 1 = fully deterministic; no parallel path is implemented
  app.add_option("--threads", threads, "worker threads (1 = deterministic)");

  std::string config_path;
  ConfigFile cfgfile;

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "synthesize a toy stem corpus");
  struct {
    std::string out = "data";
    int tracks = 12;
    double duration = 3.0;
    int rate = 8000;
    bool stereo = false;
    std::uint64_t seed = 0;
  } gd;
  auto* gd_cfg = gen->add_option("--config", config_path, "JSON config file");
  auto* gd_out = gen->add_option("--out", gd.out, "output directory");
  auto* gd_n = gen->add_option("--tracks", gd.tracks, "number of tracks");
  auto* gd_dur = gen->add_option("--duration", gd.duration, "track length in seconds");
  auto* gd_rate = gen->add_option("--rate", gd.rate, "sample rate");
  auto* gd_st = gen->add_flag("--stereo", gd.stereo, "two-channel tracks");
  auto* gd_seed = gen->add_option("--seed", gd.seed, "corpus seed");
  gen->callback([&] {
    cfgfile.load(config_path);
    cfgfile.fallback(gd_out, gd.out, "out");
    cfgfile.fallback(gd_n, gd.tracks, "tracks");
    cfgfile.fallback(gd_dur, gd.duration, "duration");
    cfgfile.fallback(gd_rate, gd.rate, "rate");
    cfgfile.fallback(gd_st, gd.stereo, "stereo");
    cfgfile.fallback(gd_seed, gd.seed, "seed");
    (void)gd_cfg;
    ldsep::Manifest m =
        ldsep::generate_corpus(gd.tracks, gd.seed, gd.out, gd.duration, gd.rate, gd.stereo);
    emit({{"command", "gen-data"},
          {"out", gd.out},
          {"tracks", int(m.tracks.size())},
          {"train_tracks", int(m.split("train").size())},
          {"valid_tracks", int(m.split("valid").size())},
          {"manifest", (std::filesystem::path(gd.out) / "manifest.json").string()}});
  });

  // ---- train-codec ----
  auto* tc = app.add_subcommand("train-codec", "train the latent codec");
  struct {
    std::string data = "data", out = "codec.ckpt";
    int steps = 400, batch = 4, cf = 64, features = 8, rvq = 4, codebook = 64, hidden = 16;
    std::size_t crop = 8192;
    double lr = 2e-3;
    std::uint64_t seed = 0;
  } tcv;
  auto* tc_cfg = tc->add_option("--config", config_path, "JSON config file");
  auto* tc_data = tc->add_option("--data", tcv.data, "corpus directory");
  auto* tc_out = tc->add_option("--out", tcv.out, "codec checkpoint path");
  auto* tc_steps = tc->add_option("--steps", tcv.steps, "optimizer steps");
  auto* tc_batch = tc->add_option("--batch", tcv.batch, "batch size");
  auto* tc_crop = tc->add_option("--crop", tcv.crop, "crop length in samples");
  auto* tc_lr = tc->add_option("--lr", tcv.lr, "learning rate");
  auto* tc_cf = tc->add_option("--cf", tcv.cf, "compression factor");
  auto* tc_feat = tc->add_option("--features", tcv.features, "latent feature channels");
  auto* tc_rvq = tc->add_option("--rvq-stages", tcv.rvq, "RVQ stages (0 disables)");
  auto* tc_cb = tc->add_option("--codebook", tcv.codebook, "codebook size");
  auto* tc_hid = tc->add_option("--hidden", tcv.hidden, "hidden conv channels");
  auto* tc_seed = tc->add_option("--seed", tcv.seed, "training seed");
  tc->callback([&] {
    cfgfile.load(config_path);
    cfgfile.fallback(tc_data, tcv.data, "data");
    cfgfile.fallback(tc_out, tcv.out, "out");
    cfgfile.fallback(tc_steps, tcv.steps, "steps");
    cfgfile.fallback(tc_batch, tcv.batch, "batch");
    cfgfile.fallback(tc_crop, tcv.crop, "crop");
    cfgfile.fallback(tc_lr, tcv.lr, "lr");
    cfgfile.fallback(tc_cf, tcv.cf, "cf");
    cfgfile.fallback(tc_feat, tcv.features, "features");
    cfgfile.fallback(tc_rvq, tcv.rvq, "rvq_stages");
    cfgfile.fallback(tc_cb, tcv.codebook, "codebook");
    cfgfile.fallback(tc_hid, tcv.hidden, "hidden");
    cfgfile.fallback(tc_seed, tcv.seed, "seed");
    (void)tc_cfg;
    auto manifest = ldsep::load_manifest(
        (std::filesystem::path(tcv.data) / "manifest.json").string());
    std::vector<ldsep::Waveform> corpus;
    for (const auto& e : manifest.split("train")) {
      corpus.push_back(ldsep::read_wav(e.vocals_path));
      corpus.push_back(ldsep::read_wav(e.mixture_path));
    }
    if (corpus.empty()) throw std::invalid_argument("train-codec: empty train split");
    ldsep::CodecConfig cc;
    cc.audio_channels = int(corpus[0].channels());
    cc.compression_factor = tcv.cf;
    cc.feature_channels = tcv.features;
    cc.rvq_stages = tcv.rvq;
    cc.codebook_size = tcv.codebook;
    cc.sample_rate = manifest.sample_rate;
    cc.hidden_channels = tcv.hidden;
    ldsep::CodecModel codec(cc, tcv.seed + 1);
    ldsep::CodecTrainConfig cti;
    cti.steps = tcv.steps;
    cti.batch_size = tcv.batch;
    cti.crop_samples = tcv.crop;
    cti.lr = tcv.lr;
    cti.seed = tcv.seed;
    auto result = ldsep::train_codec(codec, corpus, cti);
    ldsep::save_codec(codec, tcv.out);
    emit({{"command", "train-codec"},
          {"out", tcv.out},
          {"steps", tcv.steps},
          {"initial_loss", result.initial_loss},
          {"final_loss", result.final_loss},
          {"latent_scale", codec.latent_scale()}});
  });

  // ---- train ----
  auto* tr = app.add_subcommand("train", "two-stage diffusion training");
  struct {
    std::string data = "data", codec = "codec.ckpt", out = "model.ckpt";
    std::string resume, state_out, log, preset = "toy";
    int stage1 = 300, stage2 = 100, batch = 4, diffusion_steps = 50;
    std::size_t crop_frames = 256;
    double lr1 = 2e-4, lr2 = 5e-5, wd = 1e-3;
    std::uint64_t seed = 0;
  } trv;
  auto* tr_cfg = tr->add_option("--config", config_path, "JSON config file");
  auto* tr_data = tr->add_option("--data", trv.data, "corpus directory");
  auto* tr_codec = tr->add_option("--codec", trv.codec, "trained codec checkpoint");
  auto* tr_out = tr->add_option("--out", trv.out, "separation model output path");
  auto* tr_s1 = tr->add_option("--stage1-steps", trv.stage1, "stage 1 steps");
  auto* tr_s2 = tr->add_option("--stage2-steps", trv.stage2, "stage 2 steps");
  auto* tr_batch = tr->add_option("--batch", trv.batch, "batch size");
  auto* tr_T = tr->add_option("--diffusion-steps", trv.diffusion_steps, "schedule steps T");
  auto* tr_crop = tr->add_option("--crop-frames", trv.crop_frames, "latent frames per crop");
  auto* tr_lr1 = tr->add_option("--lr1", trv.lr1, "stage 1 learning rate");
  auto* tr_lr2 = tr->add_option("--lr2", trv.lr2, "stage 2 learning rate");
  auto* tr_wd = tr->add_option("--wd", trv.wd, "weight decay");
  auto* tr_seed = tr->add_option("--seed", trv.seed, "training seed");
  auto* tr_res = tr->add_option("--resume", trv.resume, "training-state checkpoint to resume");
  auto* tr_so = tr->add_option("--state-out", trv.state_out, "write training state here");
  auto* tr_log = tr->add_option("--log", trv.log, "CSV step log path");
  auto* tr_pre =
      tr->add_option("--preset", trv.preset, "model preset: toy | paper")
          ->check(CLI::IsMember({"toy", "paper"}));
  tr->callback([&] {
    cfgfile.load(config_path);
    cfgfile.fallback(tr_data, trv.data, "data");
    cfgfile.fallback(tr_codec, trv.codec, "codec");
    cfgfile.fallback(tr_out, trv.out, "out");
    cfgfile.fallback(tr_s1, trv.stage1, "stage1_steps");
    cfgfile.fallback(tr_s2, trv.stage2, "stage2_steps");
    cfgfile.fallback(tr_batch, trv.batch, "batch");
    cfgfile.fallback(tr_T, trv.diffusion_steps, "diffusion_steps");
    cfgfile.fallback(tr_crop, trv.crop_frames, "crop_frames");
    cfgfile.fallback(tr_lr1, trv.lr1, "lr1");
    cfgfile.fallback(tr_lr2, trv.lr2, "lr2");
    cfgfile.fallback(tr_wd, trv.wd, "wd");
    cfgfile.fallback(tr_seed, trv.seed, "seed");
    cfgfile.fallback(tr_res, trv.resume, "resume");
    cfgfile.fallback(tr_so, trv.state_out, "state_out");
    cfgfile.fallback(tr_log, trv.log, "log");
    cfgfile.fallback(tr_pre, trv.preset, "preset");
    (void)tr_cfg;

    ldsep::CodecModel codec = ldsep::load_codec(trv.codec);
    ldsep::UNetConfig uc =
        trv.preset == "paper" ? ldsep::UNetConfig::paper_preset() : ldsep::UNetConfig{};
    uc.in_channels = codec.config().feature_channels;
    ldsep::GeneratorModel generator(uc, trv.seed + 1);

    ldsep::TrainConfig tcg;
    tcg.diffusion_steps = trv.diffusion_steps;
    tcg.stage1_steps = trv.stage1;
    tcg.stage2_steps = trv.stage2;
    tcg.batch_size = trv.batch;
    tcg.crop_frames = trv.crop_frames;
    tcg.stage1_lr = trv.lr1;
    tcg.stage2_lr = trv.lr2;
    tcg.weight_decay = trv.wd;
    tcg.seed = trv.seed;
    tcg.log_path = trv.log;
    ldsep::Trainer trainer(std::move(generator), codec, tcg);

    auto manifest = ldsep::load_manifest(
        (std::filesystem::path(trv.data) / "manifest.json").string());
    trainer.set_data(load_split(manifest, "train"), load_split(manifest, "valid"));
    if (!trv.resume.empty()) trainer.load_state(trv.resume);
    auto result = trainer.run_two_stage();
    if (!trv.state_out.empty()) trainer.save_state(trv.state_out);

    ldsep::SeparationModel model(std::move(trainer.generator()),
                                 std::move(trainer.conditioner()),
                                 codec.latent_scale());
    ldsep::save_separation_model(model, trv.out);
    emit({{"command", "train"},
          {"out", trv.out},
          {"preset", trv.preset},
          {"steps", int(trainer.global_step())},
          {"stage1_final_loss", result.stage1_final_loss},
          {"stage2_final_loss", result.stage2_final_loss},
          {"stage1_val_loss", result.stage1_val_loss},
          {"stage2_val_loss", result.stage2_val_loss}});
  });

  // ---- separate ----
  auto* sp = app.add_subcommand("separate", "extract vocals from a mixture");
  struct {
    std::string model = "model.ckpt", codec = "codec.ckpt";
    std::string input, output = "vocals.wav";
    int steps = 50;
    std::size_t chunk = 65536;
    double overlap = 0.2;
    std::uint64_t seed = 0;
  } spv;
  auto* sp_cfg = sp->add_option("--config", config_path, "JSON config file");
  auto* sp_model = sp->add_option("--model", spv.model, "separation model checkpoint");
  auto* sp_codec = sp->add_option("--codec", spv.codec, "codec checkpoint");
  auto* sp_in = sp->add_option("--input,--in", spv.input, "mixture WAV");
  auto* sp_out = sp->add_option("--output,--out", spv.output, "estimated vocals WAV");
  auto* sp_steps = sp->add_option("--steps", spv.steps, "sampler steps T");
  auto* sp_chunk = sp->add_option("--chunk", spv.chunk, "chunk length in samples");
  auto* sp_ov = sp->add_option("--overlap", spv.overlap, "chunk overlap fraction");
  auto* sp_seed = sp->add_option("--seed", spv.seed, "sampling seed");
  sp->callback([&] {
    cfgfile.load(config_path);
    cfgfile.fallback(sp_model, spv.model, "model");
    cfgfile.fallback(sp_codec, spv.codec, "codec");
    cfgfile.fallback(sp_in, spv.input, "input");
    cfgfile.fallback(sp_out, spv.output, "output");
    cfgfile.fallback(sp_steps, spv.steps, "steps");
    cfgfile.fallback(sp_chunk, spv.chunk, "chunk");
    cfgfile.fallback(sp_ov, spv.overlap, "overlap");
    cfgfile.fallback(sp_seed, spv.seed, "seed");
    (void)sp_cfg;
    if (spv.input.empty()) throw std::invalid_argument("separate: --input is required");
    ldsep::SeparationModel model = ldsep::load_separation_model(spv.model);
    ldsep::CodecModel codec = ldsep::load_codec(spv.codec);
    ldsep::Waveform mixture = ldsep::read_wav(spv.input);
    ldsep::SamplerConfig sc;
    sc.num_steps = std::size_t(spv.steps);
    sc.seed = spv.seed;
    sc.chunk_samples = spv.chunk;
    sc.overlap_fraction = spv.overlap;
    ldsep::Waveform vocals = ldsep::separate_track(model, codec, mixture, sc);
    ldsep::write_wav(spv.output, vocals);
    emit({{"command", "separate"},
          {"input", spv.input},
          {"output", spv.output},
          {"samples", vocals.length()},
          {"steps", spv.steps},
          {"rms", vocals.rms()}});
  });

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "score estimates against references");
  struct {
    std::vector<std::string> refs, ests;
    std::string csv;
  } evv;
  auto* ev_cfg = ev->add_option("--config", config_path, "JSON config file");
  auto* ev_ref = ev->add_option("--ref", evv.refs, "reference vocals WAV(s)");
  auto* ev_est = ev->add_option("--est", evv.ests, "estimated vocals WAV(s)");
  auto* ev_csv = ev->add_option("--csv", evv.csv, "per-track CSV output path");
  ev->callback([&] {
    cfgfile.load(config_path);
    cfgfile.fallback(ev_ref, evv.refs, "ref");
    cfgfile.fallback(ev_est, evv.ests, "est");
    cfgfile.fallback(ev_csv, evv.csv, "csv");
    (void)ev_cfg;
    if (evv.refs.empty() || evv.refs.size() != evv.ests.size())
      throw std::invalid_argument("evaluate: need matching --ref/--est lists");
    std::vector<std::pair<std::string, ldsep::MetricReport>> rows;
    json tracks = json::array();
    for (std::size_t i = 0; i < evv.refs.size(); ++i) {
      ldsep::Waveform ref = ldsep::read_wav(evv.refs[i]);
      ldsep::Waveform est = ldsep::read_wav(evv.ests[i]);
      ldsep::MetricReport r = ldsep::evaluate_track(ref, est);
      rows.emplace_back(evv.refs[i], r);
      json t = ldsep::report_to_json(r);
      t["ref"] = evv.refs[i];
      t["est"] = evv.ests[i];
      tracks.push_back(t);
    }
    if (!evv.csv.empty()) ldsep::write_report_csv(rows, evv.csv);
    emit({{"command", "evaluate"}, {"tracks", tracks}});
  });

  // ---- robustness ----
  auto* rb = app.add_subcommand("robustness", "codec noise-injection table");
  struct {
    std::string codec = "codec.ckpt", data = "data", out = "robustness.csv";
    std::string split = "valid";
    std::vector<double> stds;
    std::uint64_t seed = 0;
  } rbv;
  auto* rb_cfg = rb->add_option("--config", config_path, "JSON config file");
  auto* rb_codec = rb->add_option("--codec", rbv.codec, "codec checkpoint");
  auto* rb_data = rb->add_option("--data", rbv.data, "corpus directory");
  auto* rb_split = rb->add_option("--split", rbv.split, "manifest split to evaluate");
  auto* rb_out = rb->add_option("--out", rbv.out, "CSV output path");
  auto* rb_stds = rb->add_option("--stds", rbv.stds, "noise std levels")->delimiter(',');
  auto* rb_seed = rb->add_option("--seed", rbv.seed, "noise seed");
  rb->callback([&] {
    cfgfile.load(config_path);
    cfgfile.fallback(rb_codec, rbv.codec, "codec");
    cfgfile.fallback(rb_data, rbv.data, "data");
    cfgfile.fallback(rb_split, rbv.split, "split");
    cfgfile.fallback(rb_out, rbv.out, "out");
    cfgfile.fallback(rb_stds, rbv.stds, "stds");
    cfgfile.fallback(rb_seed, rbv.seed, "seed");
    (void)rb_cfg;
    ldsep::CodecModel codec = ldsep::load_codec(rbv.codec);
    auto manifest = ldsep::load_manifest(
        (std::filesystem::path(rbv.data) / "manifest.json").string());
    std::vector<ldsep::Waveform> tracks;
    for (const auto& e : manifest.split(rbv.split))
      tracks.push_back(ldsep::read_wav(e.mixture_path));
    ldsep::RobustnessConfig rc;
    if (!rbv.stds.empty()) rc.stds = rbv.stds;
    rc.seed = rbv.seed;
    ldsep::RobustnessTable table = ldsep::run_table(codec, tracks, rc);
    ldsep::write_robustness_csv(table, rbv.out);
    json cols;
    cols["std"] = table.stds;
    cols["identity"] = table.identity;
    cols["nq"] = table.nq;
    cols["bq"] = table.bq;
    cols["aq"] = table.aq;
    emit({{"command", "robustness"}, {"out", rbv.out}, {"tracks", int(tracks.size())},
          {"table", cols}});
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
