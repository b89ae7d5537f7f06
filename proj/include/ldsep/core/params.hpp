#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace ldsep {

// Named trainable tensors with gradient accumulators and Adam moments.
// Registration order is deterministic and defines checkpoint layout.
class ParamStore {
 public:
  std::size_t add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    grads_.emplace_back(init.shape());
    m_.emplace_back(init.shape());
    v_.emplace_back(init.shape());
    frozen_.push_back(false);
    values_.push_back(std::move(init));
    return values_.size() - 1;
  }

  std::size_t count() const { return values_.size(); }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& t : values_) n += t.size();
    return n;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown " + name);
    return it->second;
  }

  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& value(std::size_t i) { return values_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }
  Tensor& value(const std::string& n) { return values_[index_of(n)]; }
  const Tensor& value(const std::string& n) const { return values_[index_of(n)]; }
  Tensor& grad(std::size_t i) { return grads_[i]; }
  Tensor& adam_m(std::size_t i) { return m_[i]; }
  Tensor& adam_v(std::size_t i) { return v_[i]; }

  void set_frozen(std::size_t i, bool f) { frozen_[i] = f; }
  bool frozen(std::size_t i) const { return frozen_[i]; }

  // Freeze/unfreeze every parameter whose name starts with prefix.
  void set_frozen_prefix(const std::string& prefix, bool f) {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i].rfind(prefix, 0) == 0) frozen_[i] = f;
  }

  void zero_grads() {
    for (auto& g : grads_) g.fill(0.0);
  }

  // Bind every parameter as a leaf on a tape; returns the VarIds in order.
  std::vector<ad::VarId> bind(ad::Tape& tape) const {
    std::vector<ad::VarId> ids(values_.size());
    for (std::size_t i = 0; i < values_.size(); ++i) ids[i] = tape.leaf(values_[i]);
    return ids;
  }

  // Accumulate tape gradients (scaled) into the store.
  void accumulate(const ad::Tape& tape, const std::vector<ad::VarId>& ids,
                  double scale = 1.0) {
    for (std::size_t i = 0; i < values_.size(); ++i) {
      const Tensor& g = tape.grad(ids[i]);
      for (std::size_t j = 0; j < g.size(); ++j) grads_[i][j] += scale * g[j];
    }
  }

  // Simple order-independent content checksum, used by freeze-contract tests.
  double checksum_prefix(const std::string& prefix) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i].rfind(prefix, 0) == 0)
        for (double x : values_[i].raw()) acc += x;
    return acc;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_, grads_, m_, v_;
  std::vector<bool> frozen_;
  std::map<std::string, std::size_t> index_;
};

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

// Adam with decoupled weight decay. Frozen parameters are skipped entirely.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  AdamWConfig& config() { return cfg_; }
  std::uint64_t step_count() const { return step_; }
  void set_step_count(std::uint64_t s) { step_ = s; }

  void step(ParamStore& params) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    for (std::size_t i = 0; i < params.count(); ++i) {
      if (params.frozen(i)) continue;
      Tensor& p = params.value(i);
      Tensor& g = params.grad(i);
      Tensor& m = params.adam_m(i);
      Tensor& v = params.adam_v(i);
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        double mh = m[j] / bc1, vh = v[j] / bc2;
        p[j] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * p[j]);
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::uint64_t step_ = 0;
};

// He-style fan-in initialization for conv/linear weights.
inline Tensor init_weight(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in) {
  double s = std::sqrt(1.0 / double(std::max<std::size_t>(fan_in, 1)));
  return rng.normal_tensor(std::move(shape), s);
}

}  // namespace ldsep
