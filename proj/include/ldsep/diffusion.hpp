#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "core/fft.hpp"
#include "core/tensor.hpp"

namespace ldsep {

// Feature-by-time latent matrix (F x D). The object the diffusion process
// runs on, is conditioned on, and the codec decodes.
struct LatentTensor {
  Tensor data;  // shape (F, D)
  int sample_rate_hint = 0;

  LatentTensor() = default;
  explicit LatentTensor(Tensor t, int rate_hint = 0)
      : data(std::move(t)), sample_rate_hint(rate_hint) {
    if (data.rank() != 2) throw std::invalid_argument("LatentTensor: rank-2 expected");
  }

  std::size_t features() const { return data.dim(0); }
  std::size_t frames() const { return data.dim(1); }
};

struct VelocityTarget {
  Tensor data;  // same shape as the latent it derives from
};

// Linear sigma grid over [0, 1] with the trigonometric alpha/beta mapping
// alpha = cos(pi/2 * sigma), beta = sin(pi/2 * sigma).
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::size_t num_steps) : sigmas_(num_steps + 1) {
    if (num_steps == 0) throw std::invalid_argument("NoiseSchedule: T must be >= 1");
    for (std::size_t i = 0; i <= num_steps; ++i)
      sigmas_[i] = double(i) / double(num_steps);
  }

  std::size_t num_steps() const { return sigmas_.size() - 1; }
  const std::vector<double>& sigmas() const { return sigmas_; }

  double sigma(std::size_t t) const {
    check_step_(t);
    return sigmas_[t];
  }

  std::pair<double, double> alpha_beta(std::size_t t) const {
    check_step_(t);
    return alpha_beta_of_sigma(sigmas_[t]);
  }

  static std::pair<double, double> alpha_beta_of_sigma(double sigma) {
    const double phi = 0.5 * kPi * sigma;
    return {std::cos(phi), std::sin(phi)};
  }

 private:
  void check_step_(std::size_t t) const {
    if (t >= sigmas_.size())
      throw std::invalid_argument("NoiseSchedule: step index out of range");
  }

  std::vector<double> sigmas_;
};

inline NoiseSchedule make_schedule(std::size_t num_steps) {
  return NoiseSchedule(num_steps);
}

// x_t = alpha * x0 + beta * eps
inline LatentTensor forward_diffuse(const LatentTensor& x0, const LatentTensor& eps,
                                    const NoiseSchedule& schedule, std::size_t t) {
  check_same_shape(x0.data, eps.data, "forward_diffuse");
  auto [a, b] = schedule.alpha_beta(t);
  LatentTensor out = x0;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a * x0.data[i] + b * eps.data[i];
  return out;
}

// v = alpha * eps - beta * x0
inline VelocityTarget velocity_target(const LatentTensor& x0, const LatentTensor& eps,
                                      const NoiseSchedule& schedule, std::size_t t) {
  check_same_shape(x0.data, eps.data, "velocity_target");
  auto [a, b] = schedule.alpha_beta(t);
  VelocityTarget v{Tensor(x0.data.shape())};
  for (std::size_t i = 0; i < v.data.size(); ++i)
    v.data[i] = a * eps.data[i] - b * x0.data[i];
  return v;
}

// Mean squared error over all elements.
inline double diffusion_loss(const VelocityTarget& v_hat, const VelocityTarget& v) {
  check_same_shape(v_hat.data, v.data, "diffusion_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    double d = v_hat.data[i] - v.data[i];
    acc += d * d;
  }
  return acc / double(v.data.size());
}

}  // namespace ldsep
