#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldsep {

// Dense row-major tensor of doubles. Rank is dynamic but in practice 1-3.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count_(shape_), 0.0) {}
  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count_(shape_))
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-d accessors (rows, cols)
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  // 3-d accessor
  double& at(std::size_t a, std::size_t b, std::size_t c) {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }
  double at(std::size_t a, std::size_t b, std::size_t c) const {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  double mean() const { return data_.empty() ? 0.0 : sum() / double(data_.size()); }

  // Population standard deviation over all elements.
  double std_dev() const {
    if (data_.empty()) return 0.0;
    double m = mean(), acc = 0.0;
    for (double v : data_) acc += (v - m) * (v - m);
    return std::sqrt(acc / double(data_.size()));
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  double sq_norm() const {
    double acc = 0.0;
    for (double v : data_) acc += v * v;
    return acc;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i)
      s += (i ? "," : "") + std::to_string(shape_[i]);
    return s + ")";
  }

 private:
  static std::size_t count_(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

}  // namespace ldsep
