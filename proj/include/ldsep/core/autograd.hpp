#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "fft.hpp"
#include "tensor.hpp"

namespace ldsep::ad {

using VarId = int;

// Reverse-mode tape. Ops append nodes with backward closures; backward()
// walks the tape in reverse and accumulates gradients into parent nodes.
class Tape {
 public:
  VarId leaf(Tensor value) { return push_(std::move(value), nullptr); }

  const Tensor& val(VarId id) const { return nodes_[id].value; }
  const Tensor& grad(VarId id) const { return nodes_[id].grad; }

  std::size_t num_nodes() const { return nodes_.size(); }

  void backward(VarId root) {
    if (nodes_[root].value.size() != 1)
      throw std::invalid_argument("backward: root must be scalar");
    nodes_[root].grad[0] = 1.0;
    for (int i = root; i >= 0; --i)
      if (nodes_[i].pull) nodes_[i].pull();
  }

  // ---- elementwise ----

  VarId add(VarId a, VarId b) {
    check_same_shape(val(a), val(b), "add");
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += val(b)[i];
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, a, b, o] {
      auto& g = nodes_[o].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        nodes_[a].grad[i] += g[i];
        nodes_[b].grad[i] += g[i];
      }
    };
    return o;
  }

  VarId sub(VarId a, VarId b) {
    check_same_shape(val(a), val(b), "sub");
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= val(b)[i];
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, a, b, o] {
      auto& g = nodes_[o].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        nodes_[a].grad[i] += g[i];
        nodes_[b].grad[i] -= g[i];
      }
    };
    return o;
  }

  VarId mul(VarId a, VarId b) {
    check_same_shape(val(a), val(b), "mul");
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= val(b)[i];
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, a, b, o] {
      auto& g = nodes_[o].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        nodes_[a].grad[i] += g[i] * nodes_[b].value[i];
        nodes_[b].grad[i] += g[i] * nodes_[a].value[i];
      }
    };
    return o;
  }

  VarId scale(VarId a, double s) {
    Tensor out = val(a);
    for (auto& v : out.raw()) v *= s;
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, a, o, s] {
      auto& g = nodes_[o].grad;
      for (std::size_t i = 0; i < g.size(); ++i) nodes_[a].grad[i] += g[i] * s;
    };
    return o;
  }

  VarId silu(VarId a) {
    Tensor out = val(a);
    for (auto& v : out.raw()) v = v / (1.0 + std::exp(-v));
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, a, o] {
      auto& g = nodes_[o].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        double x = nodes_[a].value[i];
        double s = 1.0 / (1.0 + std::exp(-x));
        nodes_[a].grad[i] += g[i] * (s * (1.0 + x * (1.0 - s)));
      }
    };
    return o;
  }

  VarId gelu(VarId a) {
    Tensor out = val(a);
    for (auto& v : out.raw()) v = 0.5 * v * (1.0 + std::erf(v / kSqrt2_));
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, a, o] {
      auto& g = nodes_[o].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        double x = nodes_[a].value[i];
        double cdf = 0.5 * (1.0 + std::erf(x / kSqrt2_));
        double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
        nodes_[a].grad[i] += g[i] * (cdf + x * pdf);
      }
    };
    return o;
  }

  // ---- shape ops on (C, T) feature maps ----

  VarId row(VarId a, std::size_t r) {
    const Tensor& x = val(a);
    std::size_t T = x.dim(1);
    Tensor out({T});
    for (std::size_t t = 0; t < T; ++t) out[t] = x.at(r, t);
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, a, o, r, T] {
      auto& g = nodes_[o].grad;
      for (std::size_t t = 0; t < T; ++t) nodes_[a].grad.at(r, t) += g[t];
    };
    return o;
  }

  VarId concat_rows(VarId a, VarId b) {
    const Tensor &x = val(a), &y = val(b);
    if (x.dim(1) != y.dim(1))
      throw std::invalid_argument("concat_rows: time length mismatch");
    std::size_t Ca = x.dim(0), Cb = y.dim(0), T = x.dim(1);
    Tensor out({Ca + Cb, T});
    for (std::size_t c = 0; c < Ca; ++c)
      for (std::size_t t = 0; t < T; ++t) out.at(c, t) = x.at(c, t);
    for (std::size_t c = 0; c < Cb; ++c)
      for (std::size_t t = 0; t < T; ++t) out.at(Ca + c, t) = y.at(c, t);
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, a, b, o, Ca, Cb, T] {
      auto& g = nodes_[o].grad;
      for (std::size_t c = 0; c < Ca; ++c)
        for (std::size_t t = 0; t < T; ++t) nodes_[a].grad.at(c, t) += g.at(c, t);
      for (std::size_t c = 0; c < Cb; ++c)
        for (std::size_t t = 0; t < T; ++t) nodes_[b].grad.at(c, t) += g.at(Ca + c, t);
    };
    return o;
  }

  // Per-channel linear interpolation of the time axis (align-corners).
  VarId interp_time(VarId a, std::size_t new_t) {
    const Tensor& x = val(a);
    std::size_t C = x.dim(0), T = x.dim(1);
    if (new_t == 0) throw std::invalid_argument("interp_time: empty target");
    Tensor out({C, new_t});
    std::vector<std::size_t> i0(new_t);
    std::vector<double> frac(new_t);
    for (std::size_t j = 0; j < new_t; ++j) {
      double pos = (new_t == 1 || T == 1)
                       ? 0.0
                       : double(j) * double(T - 1) / double(new_t - 1);
      std::size_t lo = std::min(std::size_t(pos), T - 1);
      i0[j] = lo;
      frac[j] = (lo + 1 < T) ? pos - double(lo) : 0.0;
    }
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < new_t; ++j) {
        double v = x.at(c, i0[j]) * (1.0 - frac[j]);
        if (frac[j] > 0.0) v += x.at(c, i0[j] + 1) * frac[j];
        out.at(c, j) = v;
      }
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, a, o, C, i0, frac, new_t] {
      auto& g = nodes_[o].grad;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < new_t; ++j) {
          nodes_[a].grad.at(c, i0[j]) += g.at(c, j) * (1.0 - frac[j]);
          if (frac[j] > 0.0) nodes_[a].grad.at(c, i0[j] + 1) += g.at(c, j) * frac[j];
        }
    };
    return o;
  }

  // Contiguous slice of a rank-1 tensor.
  VarId slice1d(VarId a, std::size_t start, std::size_t len) {
    const Tensor& x = val(a);
    if (x.rank() != 1 || start + len > x.size())
      throw std::invalid_argument("slice1d: out of range");
    Tensor out({len});
    for (std::size_t i = 0; i < len; ++i) out[i] = x[start + i];
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, a, o, start, len] {
      auto& g = nodes_[o].grad;
      for (std::size_t i = 0; i < len; ++i) nodes_[a].grad[start + i] += g[i];
    };
    return o;
  }

  // ---- convolutions ----

  // x: (Cin, T), w: (Cout, Cin, K), b: (Cout). Output (Cout, T_out) with
  // T_out = (T + 2*pad - K) / stride + 1.
  VarId conv1d(VarId xv, VarId wv, VarId bv, std::size_t stride, std::size_t pad) {
    const Tensor &x = val(xv), &w = val(wv), &b = val(bv);
    std::size_t Cin = x.dim(0), T = x.dim(1);
    std::size_t Cout = w.dim(0), K = w.dim(2);
    if (w.dim(1) != Cin) throw std::invalid_argument("conv1d: channel mismatch");
    if (T + 2 * pad < K) throw std::invalid_argument("conv1d: input shorter than kernel");
    std::size_t To = (T + 2 * pad - K) / stride + 1;
    Tensor out({Cout, To});
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::size_t to = 0; to < To; ++to) {
        double acc = b[co];
        for (std::size_t ci = 0; ci < Cin; ++ci) {
          const double* xr = x.data() + ci * T;
          const double* wr = w.data() + (co * Cin + ci) * K;
          for (std::size_t k = 0; k < K; ++k) {
            std::ptrdiff_t ti = std::ptrdiff_t(to * stride + k) - std::ptrdiff_t(pad);
            if (ti >= 0 && ti < std::ptrdiff_t(T)) acc += wr[k] * xr[ti];
          }
        }
        out.at(co, to) = acc;
      }
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, xv, wv, bv, o, Cin, T, Cout, K, To, stride, pad] {
      const Tensor &x = nodes_[xv].value, &w = nodes_[wv].value;
      Tensor &gx = nodes_[xv].grad, &gw = nodes_[wv].grad, &gb = nodes_[bv].grad;
      const Tensor& g = nodes_[o].grad;
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t to = 0; to < To; ++to) {
          double gv = g.at(co, to);
          if (gv == 0.0) continue;
          gb[co] += gv;
          for (std::size_t ci = 0; ci < Cin; ++ci) {
            const double* xr = x.data() + ci * T;
            const double* wr = w.data() + (co * Cin + ci) * K;
            double* gxr = gx.data() + ci * T;
            double* gwr = gw.data() + (co * Cin + ci) * K;
            for (std::size_t k = 0; k < K; ++k) {
              std::ptrdiff_t ti = std::ptrdiff_t(to * stride + k) - std::ptrdiff_t(pad);
              if (ti >= 0 && ti < std::ptrdiff_t(T)) {
                gwr[k] += gv * xr[ti];
                gxr[ti] += gv * wr[k];
              }
            }
          }
        }
    };
    return o;
  }

  // x: (Cin, T), w: (Cin, Cout, K), b: (Cout). Output length
  // (T - 1)*stride + K - 2*pad.
  VarId conv_transpose1d(VarId xv, VarId wv, VarId bv, std::size_t stride,
                         std::size_t pad) {
    const Tensor &x = val(xv), &w = val(wv), &b = val(bv);
    std::size_t Cin = x.dim(0), T = x.dim(1);
    std::size_t Cout = w.dim(1), K = w.dim(2);
    if (w.dim(0) != Cin) throw std::invalid_argument("conv_transpose1d: channel mismatch");
    std::ptrdiff_t To = std::ptrdiff_t((T - 1) * stride + K) - 2 * std::ptrdiff_t(pad);
    if (To <= 0) throw std::invalid_argument("conv_transpose1d: empty output");
    Tensor out({Cout, std::size_t(To)});
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::ptrdiff_t t = 0; t < To; ++t) out.at(co, std::size_t(t)) = b[co];
    for (std::size_t ci = 0; ci < Cin; ++ci)
      for (std::size_t ti = 0; ti < T; ++ti) {
        double xv_ = x.at(ci, ti);
        for (std::size_t k = 0; k < K; ++k) {
          std::ptrdiff_t t = std::ptrdiff_t(ti * stride + k) - std::ptrdiff_t(pad);
          if (t < 0 || t >= To) continue;
          const double* wr = w.data() + (ci * Cout) * K;
          for (std::size_t co = 0; co < Cout; ++co)
            out.at(co, std::size_t(t)) += xv_ * wr[co * K + k];
        }
      }
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, xv, wv, bv, o, Cin, T, Cout, K, To, stride, pad] {
      const Tensor &x = nodes_[xv].value, &w = nodes_[wv].value;
      Tensor &gx = nodes_[xv].grad, &gw = nodes_[wv].grad, &gb = nodes_[bv].grad;
      const Tensor& g = nodes_[o].grad;
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::ptrdiff_t t = 0; t < To; ++t) gb[co] += g.at(co, std::size_t(t));
      for (std::size_t ci = 0; ci < Cin; ++ci)
        for (std::size_t ti = 0; ti < T; ++ti) {
          double xv_ = x.at(ci, ti);
          double gacc = 0.0;
          for (std::size_t k = 0; k < K; ++k) {
            std::ptrdiff_t t = std::ptrdiff_t(ti * stride + k) - std::ptrdiff_t(pad);
            if (t < 0 || t >= To) continue;
            for (std::size_t co = 0; co < Cout; ++co) {
              double gv = g.at(co, std::size_t(t));
              gacc += gv * w.at(ci, co, k);
              gw.at(ci, co, k) += gv * xv_;
            }
          }
          gx.at(ci, ti) += gacc;
        }
    };
    return o;
  }

  // ---- normalization / modulation ----

  VarId group_norm(VarId xv, VarId gammav, VarId betav, std::size_t groups,
                   double eps = 1e-6) {
    const Tensor& x = val(xv);
    std::size_t C = x.dim(0), T = x.dim(1);
    if (groups == 0 || C % groups != 0)
      throw std::invalid_argument("group_norm: groups must divide channels");
    std::size_t cg = C / groups;
    Tensor out({C, T});
    auto xhat = std::make_shared<Tensor>(std::vector<std::size_t>{C, T});
    auto invstd = std::make_shared<std::vector<double>>(groups);
    const Tensor &gamma = val(gammav), &beta = val(betav);
    for (std::size_t g = 0; g < groups; ++g) {
      double mean = 0.0;
      for (std::size_t c = g * cg; c < (g + 1) * cg; ++c)
        for (std::size_t t = 0; t < T; ++t) mean += x.at(c, t);
      std::size_t n = cg * T;
      mean /= double(n);
      double var = 0.0;
      for (std::size_t c = g * cg; c < (g + 1) * cg; ++c)
        for (std::size_t t = 0; t < T; ++t) {
          double d = x.at(c, t) - mean;
          var += d * d;
        }
      var /= double(n);
      double is = 1.0 / std::sqrt(var + eps);
      (*invstd)[g] = is;
      for (std::size_t c = g * cg; c < (g + 1) * cg; ++c)
        for (std::size_t t = 0; t < T; ++t) {
          double h = (x.at(c, t) - mean) * is;
          xhat->at(c, t) = h;
          out.at(c, t) = gamma[c] * h + beta[c];
        }
    }
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, xv, gammav, betav, o, groups, cg, T, xhat, invstd] {
      const Tensor& g = nodes_[o].grad;
      const Tensor& gamma = nodes_[gammav].value;
      Tensor &gx = nodes_[xv].grad, &ggam = nodes_[gammav].grad, &gbet = nodes_[betav].grad;
      std::size_t n = cg * T;
      for (std::size_t gr = 0; gr < groups; ++gr) {
        double sum_dh = 0.0, sum_dh_h = 0.0;
        for (std::size_t c = gr * cg; c < (gr + 1) * cg; ++c)
          for (std::size_t t = 0; t < T; ++t) {
            double gv = g.at(c, t), h = xhat->at(c, t);
            ggam[c] += gv * h;
            gbet[c] += gv;
            double dh = gv * gamma[c];
            sum_dh += dh;
            sum_dh_h += dh * h;
          }
        double is = (*invstd)[gr];
        for (std::size_t c = gr * cg; c < (gr + 1) * cg; ++c)
          for (std::size_t t = 0; t < T; ++t) {
            double dh = g.at(c, t) * gamma[c];
            double h = xhat->at(c, t);
            gx.at(c, t) += is * (dh - sum_dh / double(n) - h * sum_dh_h / double(n));
          }
      }
    };
    return o;
  }

  // FiLM: out[c,t] = (1 + s[c]) * x[c,t] + h[c].
  VarId film(VarId xv, VarId sv, VarId hv) {
    const Tensor &x = val(xv), &s = val(sv), &h = val(hv);
    std::size_t C = x.dim(0), T = x.dim(1);
    if (s.size() != C || h.size() != C)
      throw std::invalid_argument("film: modulation size must equal channels");
    Tensor out({C, T});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < T; ++t)
        out.at(c, t) = (1.0 + s[c]) * x.at(c, t) + h[c];
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, xv, sv, hv, o, C, T] {
      const Tensor& g = nodes_[o].grad;
      const Tensor &x = nodes_[xv].value, &s = nodes_[sv].value;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t) {
          double gv = g.at(c, t);
          nodes_[xv].grad.at(c, t) += gv * (1.0 + s[c]);
          nodes_[sv].grad[c] += gv * x.at(c, t);
          nodes_[hv].grad[c] += gv;
        }
    };
    return o;
  }

  // ---- dense / attention ----

  // x: (N), W: (M, N), b: (M) -> (M)
  VarId linear(VarId xv, VarId wv, VarId bv) {
    const Tensor &x = val(xv), &w = val(wv), &b = val(bv);
    std::size_t N = x.size(), M = w.dim(0);
    if (w.dim(1) != N) throw std::invalid_argument("linear: dimension mismatch");
    Tensor out({M});
    for (std::size_t m = 0; m < M; ++m) {
      double acc = b[m];
      const double* wr = w.data() + m * N;
      for (std::size_t n = 0; n < N; ++n) acc += wr[n] * x[n];
      out[m] = acc;
    }
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, xv, wv, bv, o, N, M] {
      const Tensor& g = nodes_[o].grad;
      const Tensor &x = nodes_[xv].value, &w = nodes_[wv].value;
      for (std::size_t m = 0; m < M; ++m) {
        double gv = g[m];
        nodes_[bv].grad[m] += gv;
        for (std::size_t n = 0; n < N; ++n) {
          nodes_[wv].grad[m * N + n] += gv * x[n];
          nodes_[xv].grad[n] += gv * w[m * N + n];
        }
      }
    };
    return o;
  }

  VarId matmul(VarId av, VarId bv) {
    const Tensor &a = val(av), &b = val(bv);
    std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
    if (b.dim(0) != K) throw std::invalid_argument("matmul: inner dimension mismatch");
    Tensor out({M, N});
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t k = 0; k < K; ++k) {
        double va = a.at(m, k);
        for (std::size_t n = 0; n < N; ++n) out.at(m, n) += va * b.at(k, n);
      }
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, av, bv, o, M, K, N] {
      const Tensor& g = nodes_[o].grad;
      const Tensor &a = nodes_[av].value, &b = nodes_[bv].value;
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t k = 0; k < K; ++k) {
          double acc = 0.0;
          for (std::size_t n = 0; n < N; ++n) acc += g.at(m, n) * b.at(k, n);
          nodes_[av].grad.at(m, k) += acc;
        }
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t n = 0; n < N; ++n) {
          double acc = 0.0;
          for (std::size_t m = 0; m < M; ++m) acc += g.at(m, n) * a.at(m, k);
          nodes_[bv].grad.at(k, n) += acc;
        }
    };
    return o;
  }

  VarId transpose(VarId av) {
    const Tensor& a = val(av);
    std::size_t M = a.dim(0), N = a.dim(1);
    Tensor out({N, M});
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t n = 0; n < N; ++n) out.at(n, m) = a.at(m, n);
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, av, o, M, N] {
      const Tensor& g = nodes_[o].grad;
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t n = 0; n < N; ++n) nodes_[av].grad.at(m, n) += g.at(n, m);
    };
    return o;
  }

  VarId softmax_rows(VarId av) {
    const Tensor& a = val(av);
    std::size_t M = a.dim(0), N = a.dim(1);
    Tensor out({M, N});
    for (std::size_t m = 0; m < M; ++m) {
      double mx = a.at(m, 0);
      for (std::size_t n = 1; n < N; ++n) mx = std::max(mx, a.at(m, n));
      double z = 0.0;
      for (std::size_t n = 0; n < N; ++n) z += std::exp(a.at(m, n) - mx);
      for (std::size_t n = 0; n < N; ++n) out.at(m, n) = std::exp(a.at(m, n) - mx) / z;
    }
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, av, o, M, N] {
      const Tensor& g = nodes_[o].grad;
      const Tensor& y = nodes_[o].value;
      for (std::size_t m = 0; m < M; ++m) {
        double dot = 0.0;
        for (std::size_t n = 0; n < N; ++n) dot += g.at(m, n) * y.at(m, n);
        for (std::size_t n = 0; n < N; ++n)
          nodes_[av].grad.at(m, n) += y.at(m, n) * (g.at(m, n) - dot);
      }
    };
    return o;
  }

  // ---- reductions ----

  VarId mse(VarId av, VarId bv) {
    check_same_shape(val(av), val(bv), "mse");
    const Tensor &a = val(av), &b = val(bv);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      double d = a[i] - b[i];
      acc += d * d;
    }
    std::size_t n = a.size();
    VarId o = push_(Tensor::scalar(acc / double(n)));
    nodes_[o].pull = [this, av, bv, o, n] {
      double g = nodes_[o].grad[0] * 2.0 / double(n);
      const Tensor &a = nodes_[av].value, &b = nodes_[bv].value;
      for (std::size_t i = 0; i < n; ++i) {
        double d = g * (a[i] - b[i]);
        nodes_[av].grad[i] += d;
        nodes_[bv].grad[i] -= d;
      }
    };
    return o;
  }

  VarId l1(VarId av, VarId bv) {
    check_same_shape(val(av), val(bv), "l1");
    const Tensor &a = val(av), &b = val(bv);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    std::size_t n = a.size();
    VarId o = push_(Tensor::scalar(acc / double(n)));
    nodes_[o].pull = [this, av, bv, o, n] {
      double g = nodes_[o].grad[0] / double(n);
      const Tensor &a = nodes_[av].value, &b = nodes_[bv].value;
      for (std::size_t i = 0; i < n; ++i) {
        double s = (a[i] > b[i]) ? 1.0 : (a[i] < b[i] ? -1.0 : 0.0);
        nodes_[av].grad[i] += g * s;
        nodes_[bv].grad[i] -= g * s;
      }
    };
    return o;
  }

  // Windowed magnitude spectrogram of a rank-1 signal, shape (bins, frames).
  // Backward goes through the DFT adjoint.
  VarId stft_mag(VarId xv, std::size_t n_fft, std::size_t hop) {
    const Tensor& x = val(xv);
    if (x.rank() != 1) throw std::invalid_argument("stft_mag: rank-1 input expected");
    auto window = std::make_shared<std::vector<double>>(hann_window(n_fft));
    auto spectra = std::make_shared<std::vector<std::vector<std::complex<double>>>>(
        stft(x.raw(), n_fft, hop, *window));
    std::size_t bins = n_fft / 2 + 1, frames = spectra->size();
    Tensor out({bins, frames});
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t k = 0; k < bins; ++k) out.at(k, f) = std::abs((*spectra)[f][k]);
    VarId o = push_(std::move(out));
    nodes_[o].pull = [this, xv, o, n_fft, hop, window, spectra, bins, frames] {
      const Tensor& g = nodes_[o].grad;
      Tensor& gx = nodes_[xv].grad;
      const std::size_t T = nodes_[xv].value.size();
      std::vector<std::complex<double>> c(n_fft);
      for (std::size_t f = 0; f < frames; ++f) {
        std::fill(c.begin(), c.end(), std::complex<double>(0.0, 0.0));
        for (std::size_t k = 0; k < bins; ++k) {
          double mag = std::abs((*spectra)[f][k]);
          if (mag < 1e-300) continue;
          c[k] = g.at(k, f) * std::conj((*spectra)[f][k]) / mag;
        }
        fft_inplace(c);  // forward DFT over bin index gives the adjoint
        const std::size_t start = f * hop;
        for (std::size_t i = 0; i < n_fft && start + i < T; ++i)
          gx[start + i] += (*window)[i] * c[i].real();
      }
    };
    return o;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void()> pull;
  };

  VarId push_(Tensor value, std::function<void()> pull = nullptr) {
    Node n;
    n.grad = Tensor(value.shape());
    n.value = std::move(value);
    n.pull = std::move(pull);
    nodes_.push_back(std::move(n));
    return VarId(nodes_.size() - 1);
  }

  static constexpr double kSqrt2_ = 1.41421356237309504880168872420969808;

  std::vector<Node> nodes_;
};

}  // namespace ldsep::ad
