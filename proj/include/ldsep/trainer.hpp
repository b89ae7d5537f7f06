#pragma once

#include <cmath>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "codec.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"
#include "core/serialize.hpp"
#include "diffusion.hpp"
#include "unet.hpp"

namespace ldsep {

struct TrainConfig {
  int diffusion_steps = 50;
  int stage1_steps = 300;
  int stage2_steps = 100;
  int batch_size = 4;
  std::size_t crop_frames = 256;  // latent frames per training crop
  double stage1_lr = 2e-4;
  double stage2_lr = 5e-5;
  double weight_decay = 1e-3;
  double aug_polarity_p = 0.5;
  double aug_channel_flip_p = 0.5;
  double aug_pitch_p = 0.5;
  double aug_remix_p = 0.5;
  double pitch_shift_semitones = 2.0;
  std::uint64_t seed = 0;
  int log_every = 10;
  std::string log_path;  // CSV step log; empty disables

  void validate() const {
    if (diffusion_steps < 1) throw std::invalid_argument("TrainConfig: diffusion_steps >= 1");
    if (stage1_steps < 0 || stage2_steps < 0)
      throw std::invalid_argument("TrainConfig: negative step counts");
    if (stage1_steps + stage2_steps == 0)
      throw std::invalid_argument("TrainConfig: total steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size >= 1");
    if (crop_frames < 1) throw std::invalid_argument("TrainConfig: crop_frames >= 1");
    if (stage1_lr < 0.0 || stage2_lr < 0.0)
      throw std::invalid_argument("TrainConfig: learning rates must be non-negative");
    if (stage2_lr > stage1_lr)
      throw std::invalid_argument("TrainConfig: stage 2 learning rate exceeds stage 1");
  }
};

struct AugmentationConfig {
  double polarity_p = 0.5;
  double channel_flip_p = 0.5;
  double pitch_p = 0.5;
  double pitch_shift_semitones = 2.0;
};

struct StemPair {
  Waveform vocals, accompaniment;
};

namespace train_detail {

// Linear-interpolation resample by rate ratio r (> 1 raises pitch), then
// trim/zero-pad back to the original length.
inline Waveform resample_ratio(const Waveform& w, double r) {
  const std::size_t S = w.length();
  Waveform out(w.channels(), S, w.sample_rate);
  for (std::size_t c = 0; c < w.channels(); ++c)
    for (std::size_t i = 0; i < S; ++i) {
      double pos = double(i) * r;
      std::size_t lo = std::size_t(pos);
      if (lo + 1 >= S) {
        out.samples.at(c, i) = lo < S ? w.samples.at(c, lo) : 0.0;
        continue;
      }
      double frac = pos - double(lo);
      out.samples.at(c, i) =
          (1.0 - frac) * w.samples.at(c, lo) + frac * w.samples.at(c, lo + 1);
    }
  return out;
}

}  // namespace train_detail

// Stem-level augmentations. The mixture is never augmented directly: callers
// recompute it as the exact sum of the augmented stems.
inline StemPair apply_augmentations(StemPair stems, const AugmentationConfig& cfg,
                                    Rng& rng, bool* warned_mono = nullptr) {
  check_same_shape(stems.vocals.samples, stems.accompaniment.samples,
                   "apply_augmentations");
  for (Waveform* w : {&stems.vocals, &stems.accompaniment})
    if (rng.uniform() < cfg.polarity_p)
      for (auto& v : w->samples.raw()) v = -v;

  if (rng.uniform() < cfg.channel_flip_p) {
    if (stems.vocals.channels() < 2) {
      if (warned_mono && !*warned_mono) {
        std::cerr << "warning: channel-flip augmentation skipped for mono audio\n";
        *warned_mono = true;
      }
    } else {
      for (Waveform* w : {&stems.vocals, &stems.accompaniment})
        for (std::size_t i = 0; i < w->length(); ++i)
          std::swap(w->samples.at(0, i), w->samples.at(1, i));
    }
  }

  if (rng.uniform() < cfg.pitch_p) {
    double semis = rng.uniform(-cfg.pitch_shift_semitones, cfg.pitch_shift_semitones);
    double r = std::pow(2.0, semis / 12.0);
    stems.vocals = train_detail::resample_ratio(stems.vocals, r);
    stems.accompaniment = train_detail::resample_ratio(stems.accompaniment, r);
  }
  return stems;
}

struct TrainStepResult {
  double loss = 0.0;
};

struct TrainRunResult {
  double stage1_final_loss = 0.0;
  double stage2_final_loss = 0.0;
  double stage1_val_loss = 0.0;
  double stage2_val_loss = 0.0;
  std::vector<double> loss_curve;
};

// Two-stage diffusion trainer. Stage 1 trains the generator against a frozen
// conditioner (a copy of the codec encoder); stage 2 fine-tunes generator and
// conditioner encoder jointly at a lower learning rate. All randomness is
// derived statelessly from (seed, global step), so a resumed run continues
// bit-exactly.
class Trainer {
 public:
  Trainer(GeneratorModel generator, const CodecModel& codec, TrainConfig cfg)
      : cfg_(cfg),
        gen_(std::move(generator)),
        codec_(&codec),
        conditioner_(codec) {
    cfg_.validate();
    if (!codec.trained())
      throw InvalidState("Trainer: codec must be trained before diffusion training");
    if (gen_.config().in_channels != codec.config().feature_channels)
      throw std::invalid_argument("Trainer: generator/codec feature channel mismatch");
    AdamWConfig oc;
    oc.lr = cfg_.stage1_lr;
    oc.weight_decay = cfg_.weight_decay;
    opt_gen_ = AdamW(oc);
    opt_cond_ = AdamW(oc);
    enter_stage(1);
  }

  const TrainConfig& config() const { return cfg_; }
  GeneratorModel& generator() { return gen_; }
  const GeneratorModel& generator() const { return gen_; }
  CodecModel& conditioner() { return conditioner_; }
  const CodecModel& conditioner() const { return conditioner_; }
  int stage() const { return stage_; }
  std::uint64_t global_step() const { return step_; }

  void set_data(std::vector<StemPair> train, std::vector<StemPair> valid) {
    if (train.empty()) throw std::invalid_argument("Trainer: empty training set");
    train_ = std::move(train);
    valid_ = std::move(valid);
  }

  // Freeze contract: the generator is always trainable; the conditioner is
  // fully frozen in stage 1 and only its encoder thaws in stage 2. The codec
  // used for targets and decoding is never touched.
  void enter_stage(int stage) {
    if (stage != 1 && stage != 2) throw std::invalid_argument("Trainer: stage is 1 or 2");
    stage_ = stage;
    conditioner_.params().set_frozen_prefix("", true);
    if (stage == 2) conditioner_.params().set_frozen_prefix("enc.", false);
    double lr = stage == 1 ? cfg_.stage1_lr : cfg_.stage2_lr;
    opt_gen_.config().lr = lr;
    opt_cond_.config().lr = lr;
  }

  TrainStepResult train_step() {
    if (train_.empty()) throw InvalidState("Trainer: call set_data first");
    const std::size_t T = std::size_t(cfg_.diffusion_steps);
    NoiseSchedule schedule(T);
    gen_.params().zero_grads();
    conditioner_.params().zero_grads();
    double total = 0.0;
    for (int item = 0; item < cfg_.batch_size; ++item) {
      Rng rng = Rng::derive(cfg_.seed, {0x73746570, step_, std::uint64_t(item)});
      StemPair stems = assemble_item_(rng);
      Tensor vox, mix;
      crop_pair_(stems, rng, vox, mix);

      LatentTensor x0 = encode(*codec_, Waveform(vox, codec_->config().sample_rate));
      x0 = normalize_latent(x0, codec_->latent_scale());

      std::size_t t = 1 + rng.integer(T);
      Tensor eps = rng.normal_tensor(x0.data.shape());
      LatentTensor x_t =
          forward_diffuse(x0, LatentTensor(eps), schedule, t);
      VelocityTarget v = velocity_target(x0, LatentTensor(eps), schedule, t);

      ad::Tape tape;
      auto gen_bound = gen_.params().bind(tape);
      auto cond_bound = conditioner_.params().bind(tape);
      ad::VarId mix_in = tape.leaf(mix);
      ad::VarId cond = CodecModel::encoder_forward(tape, conditioner_.config(),
                                                   conditioner_.params(), cond_bound, mix_in);
      cond = tape.scale(cond, 1.0 / codec_->latent_scale());
      ad::VarId v_hat = gen_.forward_on(tape, gen_bound, tape.leaf(x_t.data),
                                        schedule.sigma(t), cond);
      ad::VarId loss = tape.mse(v_hat, tape.leaf(v.data));
      total += tape.val(loss)[0];
      tape.backward(loss);
      double scale = 1.0 / double(cfg_.batch_size);
      gen_.params().accumulate(tape, gen_bound, scale);
      conditioner_.params().accumulate(tape, cond_bound, scale);
    }
    opt_gen_.step(gen_.params());
    if (stage_ == 2) opt_cond_.step(conditioner_.params());
    ++step_;
    return {total / double(cfg_.batch_size)};
  }

  // Deterministic diffusion loss over the validation stems (no grads).
  double validation_loss() const {
    if (valid_.empty()) throw InvalidState("Trainer: no validation data");
    NoiseSchedule schedule(std::size_t(cfg_.diffusion_steps));
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < valid_.size(); ++i) {
      Rng rng = Rng::derive(cfg_.seed, {0x76616c, i});
      Tensor vox, mix;
      StemPair stems = valid_[i];
      crop_pair_(stems, rng, vox, mix, /*random_start=*/false);
      LatentTensor x0 = encode(*codec_, Waveform(vox, codec_->config().sample_rate));
      x0 = normalize_latent(x0, codec_->latent_scale());
      LatentTensor cond =
          encode(conditioner_, Waveform(mix, codec_->config().sample_rate));
      cond = normalize_latent(cond, codec_->latent_scale());
      std::size_t t = 1 + i % std::size_t(cfg_.diffusion_steps);
      Tensor eps = rng.normal_tensor(x0.data.shape());
      LatentTensor x_t = forward_diffuse(x0, LatentTensor(eps), schedule, t);
      VelocityTarget v = velocity_target(x0, LatentTensor(eps), schedule, t);
      VelocityTarget v_hat = unet_forward(gen_, x_t, schedule.sigma(t), cond);
      total += diffusion_loss(v_hat, v);
      ++n;
    }
    return total / double(n);
  }

  TrainRunResult run_two_stage() {
    TrainRunResult result;
    std::ofstream log;
    if (!cfg_.log_path.empty()) {
      log.open(cfg_.log_path, std::ios::app);
      if (!log) throw std::runtime_error("Trainer: cannot open log " + cfg_.log_path);
      if (step_ == 0) log << "step,stage,loss,lr\n";
    }
    auto run_stage = [&](int stage, int steps, double& final_loss) {
      enter_stage(stage);
      std::uint64_t target = stage_boundary_(stage);
      (void)steps;
      double last = 0.0;
      while (step_ < target) {
        last = train_step().loss;
        result.loss_curve.push_back(last);
        if (log.is_open() && (step_ % std::uint64_t(std::max(cfg_.log_every, 1)) == 0 ||
                              step_ == target))
          log << step_ << ',' << stage << ',' << last << ','
              << (stage == 1 ? cfg_.stage1_lr : cfg_.stage2_lr) << '\n';
      }
      final_loss = last;
    };
    if (step_ < stage_boundary_(1)) run_stage(1, cfg_.stage1_steps, result.stage1_final_loss);
    if (!valid_.empty()) result.stage1_val_loss = validation_loss();
    if (step_ < stage_boundary_(2)) run_stage(2, cfg_.stage2_steps, result.stage2_final_loss);
    if (!valid_.empty()) result.stage2_val_loss = validation_loss();
    return result;
  }

  // Full-precision training-state checkpoint; reloading one and continuing
  // reproduces the uninterrupted run exactly.
  void save_state(const std::string& path) const {
    Checkpoint ck;
    ck.kind = CheckpointKind::TrainState;
    ck.config = {stage_, std::int64_t(step_), std::int64_t(opt_gen_.step_count()),
                 std::int64_t(opt_cond_.step_count())};
    append_store_(ck, gen_.params(), "gen.");
    append_store_(ck, conditioner_.params(), "cond.");
    ck.save(path);
  }

  void load_state(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.kind != CheckpointKind::TrainState)
      throw std::runtime_error("Trainer: not a training-state checkpoint: " + path);
    restore_store_(ck, gen_.params(), "gen.");
    restore_store_(ck, conditioner_.params(), "cond.");
    step_ = std::uint64_t(ck.config.at(1));
    opt_gen_.set_step_count(std::uint64_t(ck.config.at(2)));
    opt_cond_.set_step_count(std::uint64_t(ck.config.at(3)));
    enter_stage(int(ck.config.at(0)));
  }

 private:
  std::uint64_t stage_boundary_(int stage) const {
    return std::uint64_t(cfg_.stage1_steps) +
           (stage == 2 ? std::uint64_t(cfg_.stage2_steps) : 0);
  }

  StemPair assemble_item_(Rng& rng) const {
    std::size_t i = rng.integer(train_.size());
    StemPair stems = train_[i];
    if (train_.size() > 1 && rng.uniform() < cfg_.aug_remix_p) {
      std::size_t j = rng.integer(train_.size());
      const Waveform& acc = train_[j].accompaniment;
      if (acc.samples.same_shape(stems.accompaniment.samples))
        stems.accompaniment = acc;
    }
    AugmentationConfig ac;
    ac.polarity_p = cfg_.aug_polarity_p;
    ac.channel_flip_p = cfg_.aug_channel_flip_p;
    ac.pitch_p = cfg_.aug_pitch_p;
    ac.pitch_shift_semitones = cfg_.pitch_shift_semitones;
    return apply_augmentations(std::move(stems), ac, rng, &warned_mono_);
  }

  // Fixed-length aligned crop; mixture is the exact stem sum on the crop.
  void crop_pair_(const StemPair& stems, Rng& rng, Tensor& vox, Tensor& mix,
                  bool random_start = true) const {
    const std::size_t cf = std::size_t(codec_->config().compression_factor);
    const std::size_t span = cfg_.crop_frames * cf;
    const std::size_t S = stems.vocals.length();
    std::size_t start = 0;
    if (random_start && S > span) start = rng.integer((S - span) / cf + 1) * cf;
    const std::size_t A = stems.vocals.channels();
    vox = Tensor({A, span});
    mix = Tensor({A, span});
    for (std::size_t c = 0; c < A; ++c)
      for (std::size_t k = 0; k < span && start + k < S; ++k) {
        double v = stems.vocals.samples.at(c, start + k);
        double a = stems.accompaniment.samples.at(c, start + k);
        vox.at(c, k) = v;
        mix.at(c, k) = v + a;
      }
  }

  static void append_store_(Checkpoint& ck, const ParamStore& p, const std::string& pre) {
    for (std::size_t i = 0; i < p.count(); ++i) {
      ck.tensors.emplace_back(pre + p.name(i), p.value(i));
      ck.tensors.emplace_back(pre + "m." + p.name(i),
                              const_cast<ParamStore&>(p).adam_m(i));
      ck.tensors.emplace_back(pre + "v." + p.name(i),
                              const_cast<ParamStore&>(p).adam_v(i));
    }
  }

  static void restore_store_(const Checkpoint& ck, ParamStore& p, const std::string& pre) {
    for (std::size_t i = 0; i < p.count(); ++i) {
      p.value(i) = ck.tensor(pre + p.name(i));
      p.adam_m(i) = ck.tensor(pre + "m." + p.name(i));
      p.adam_v(i) = ck.tensor(pre + "v." + p.name(i));
    }
  }

  TrainConfig cfg_;
  GeneratorModel gen_;
  const CodecModel* codec_;
  CodecModel conditioner_;
  AdamW opt_gen_, opt_cond_;
  std::vector<StemPair> train_, valid_;
  int stage_ = 1;
  std::uint64_t step_ = 0;
  mutable bool warned_mono_ = false;
};

}  // namespace ldsep
