#include <doctest.h>

#include <functional>
#include <ldsep/core/autograd.hpp>
#include <ldsep/core/rng.hpp>

using namespace ldsep;

namespace {

// Central finite-difference check of every input element against the tape
// gradient. build must construct a scalar from the bound leaves.
void check_grads(std::vector<Tensor> inputs,
                 const std::function<ad::VarId(ad::Tape&, const std::vector<ad::VarId>&)>& build,
                 double tol = 1e-6) {
  ad::Tape tape;
  std::vector<ad::VarId> ids;
  for (const auto& t : inputs) ids.push_back(tape.leaf(t));
  ad::VarId root = build(tape, ids);
  REQUIRE(tape.val(root).size() == 1);
  tape.backward(root);

  const double h = 1e-5;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double orig = inputs[i][j];
      auto eval = [&](double v) {
        inputs[i][j] = v;
        ad::Tape t2;
        std::vector<ad::VarId> ids2;
        for (const auto& t : inputs) ids2.push_back(t2.leaf(t));
        double out = t2.val(build(t2, ids2))[0];
        inputs[i][j] = orig;
        return out;
      };
      double fd = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
      double ag = tape.grad(ids[i])[j];
      CHECK(std::abs(fd - ag) <= tol * std::max(1.0, std::abs(fd)));
    }
}

Tensor randn(Rng& rng, std::vector<std::size_t> shape, double s = 1.0) {
  return rng.normal_tensor(std::move(shape), s);
}

}  // namespace

TEST_CASE("elementwise op gradients") {
  Rng rng(11);
  std::vector<Tensor> in = {randn(rng, {2, 5}), randn(rng, {2, 5})};
  check_grads(in, [](ad::Tape& t, const std::vector<ad::VarId>& v) {
    return t.mse(t.silu(t.add(v[0], v[1])), t.gelu(t.sub(v[0], t.scale(v[1], 0.3))));
  });
  check_grads(in, [](ad::Tape& t, const std::vector<ad::VarId>& v) {
    return t.mse(t.mul(v[0], v[1]), t.scale(v[0], 0.5));
  });
}

TEST_CASE("conv1d gradient") {
  Rng rng(12);
  std::vector<Tensor> in = {randn(rng, {3, 8}), randn(rng, {2, 3, 3}), randn(rng, {2})};
  for (std::size_t stride : {std::size_t(1), std::size_t(2)})
    check_grads(in, [stride](ad::Tape& t, const std::vector<ad::VarId>& v) {
      ad::VarId y = t.conv1d(v[0], v[1], v[2], stride, 1);
      return t.mse(y, t.scale(y, 0.0));
    });
}

TEST_CASE("conv1d shape and errors") {
  ad::Tape t;
  ad::VarId x = t.leaf(Tensor({2, 10}));
  ad::VarId w = t.leaf(Tensor({4, 2, 3}));
  ad::VarId b = t.leaf(Tensor({4}));
  CHECK(t.val(t.conv1d(x, w, b, 1, 1)).dim(1) == 10);
  CHECK(t.val(t.conv1d(x, w, b, 2, 1)).dim(1) == 5);
  ad::VarId wbad = t.leaf(Tensor({4, 3, 3}));
  CHECK_THROWS_AS(t.conv1d(x, wbad, b, 1, 1), std::invalid_argument);
}

TEST_CASE("conv_transpose1d gradient and shape") {
  Rng rng(13);
  std::vector<Tensor> in = {randn(rng, {2, 5}), randn(rng, {2, 3, 4}), randn(rng, {3})};
  check_grads(in, [](ad::Tape& t, const std::vector<ad::VarId>& v) {
    ad::VarId y = t.conv_transpose1d(v[0], v[1], v[2], 2, 1);
    return t.mse(y, t.scale(y, 0.0));
  });
  ad::Tape t;
  ad::VarId y = t.conv_transpose1d(t.leaf(Tensor({2, 5})), t.leaf(Tensor({2, 3, 4})),
                                   t.leaf(Tensor({3})), 2, 1);
  CHECK(t.val(y).dim(0) == 3);
  CHECK(t.val(y).dim(1) == (5 - 1) * 2 + 4 - 2);
}

TEST_CASE("group_norm gradient") {
  Rng rng(14);
  std::vector<Tensor> in = {randn(rng, {4, 6}), randn(rng, {4}, 0.3), randn(rng, {4}, 0.3)};
  in[1][0] += 1.0;  // keep gamma away from zero
  for (std::size_t groups : {std::size_t(1), std::size_t(2), std::size_t(4)})
    check_grads(in, [groups](ad::Tape& t, const std::vector<ad::VarId>& v) {
      ad::VarId y = t.group_norm(v[0], v[1], v[2], groups);
      return t.mse(t.silu(y), t.scale(y, 0.0));
    }, 1e-5);
  ad::Tape t;
  CHECK_THROWS_AS(t.group_norm(t.leaf(Tensor({4, 2})), t.leaf(Tensor({4})),
                               t.leaf(Tensor({4})), 3),
                  std::invalid_argument);
}

TEST_CASE("group_norm normalizes") {
  ad::Tape t;
  Rng rng(15);
  ad::VarId x = t.leaf(randn(rng, {4, 16}, 3.0));
  Tensor ones({4});
  ones.fill(1.0);
  ad::VarId y = t.group_norm(x, t.leaf(ones), t.leaf(Tensor({4})), 2);
  CHECK(t.val(y).mean() == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(t.val(y).std_dev() == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("film semantics and gradient") {
  ad::Tape t;
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  ad::VarId y = t.film(t.leaf(x), t.leaf(Tensor({2})), t.leaf(Tensor({2}, {1.0, -1.0})));
  CHECK(t.val(y).at(0, 0) == 2.0);  // scale 1+0, shift +1
  CHECK(t.val(y).at(1, 2) == 5.0);
  Rng rng(16);
  std::vector<Tensor> in = {rng.normal_tensor({3, 4}), rng.normal_tensor({3}),
                            rng.normal_tensor({3})};
  check_grads(in, [](ad::Tape& tp, const std::vector<ad::VarId>& v) {
    ad::VarId y2 = tp.film(v[0], v[1], v[2]);
    return tp.mse(y2, tp.scale(y2, 0.0));
  });
}

TEST_CASE("linear and attention-chain gradients") {
  Rng rng(17);
  std::vector<Tensor> lin = {randn(rng, {4}), randn(rng, {3, 4}), randn(rng, {3})};
  check_grads(lin, [](ad::Tape& t, const std::vector<ad::VarId>& v) {
    ad::VarId y = t.linear(v[0], v[1], v[2]);
    return t.mse(y, t.scale(y, 0.0));
  });
  std::vector<Tensor> attn = {randn(rng, {3, 5}), randn(rng, {3, 3}), randn(rng, {3, 3}),
                              randn(rng, {3, 3})};
  check_grads(attn, [](ad::Tape& t, const std::vector<ad::VarId>& v) {
    ad::VarId q = t.matmul(v[1], v[0]);
    ad::VarId k = t.matmul(v[2], v[0]);
    ad::VarId val = t.matmul(v[3], v[0]);
    ad::VarId s = t.softmax_rows(t.scale(t.matmul(t.transpose(q), k), 0.5));
    ad::VarId y = t.matmul(val, t.transpose(s));
    return t.mse(y, t.scale(y, 0.0));
  }, 1e-5);
}

TEST_CASE("softmax rows sum to one") {
  ad::Tape t;
  Rng rng(18);
  ad::VarId y = t.softmax_rows(t.leaf(rng.normal_tensor({3, 7})));
  for (std::size_t m = 0; m < 3; ++m) {
    double s = 0.0;
    for (std::size_t n = 0; n < 7; ++n) s += t.val(y).at(m, n);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("shape op gradients") {
  Rng rng(19);
  std::vector<Tensor> in = {randn(rng, {2, 6}), randn(rng, {3, 6})};
  check_grads(in, [](ad::Tape& t, const std::vector<ad::VarId>& v) {
    ad::VarId cat = t.concat_rows(v[0], v[1]);
    ad::VarId r = t.row(cat, 3);
    ad::VarId s = t.slice1d(r, 1, 4);
    return t.mse(s, t.scale(s, 0.0));
  });
  std::vector<Tensor> it = {randn(rng, {2, 5})};
  check_grads(it, [](ad::Tape& t, const std::vector<ad::VarId>& v) {
    ad::VarId y = t.interp_time(v[0], 9);
    return t.mse(y, t.scale(y, 0.0));
  });
}

TEST_CASE("interp_time endpoints and identity") {
  ad::Tape t;
  Tensor x({1, 3}, {1.0, 5.0, 9.0});
  ad::VarId y = t.interp_time(t.leaf(x), 5);
  CHECK(t.val(y)[0] == 1.0);
  CHECK(t.val(y)[4] == 9.0);
  CHECK(t.val(y)[2] == doctest::Approx(5.0));
  ad::VarId same = t.interp_time(t.leaf(x), 3);
  for (int i = 0; i < 3; ++i) CHECK(t.val(same)[i] == x[i]);
}

TEST_CASE("loss gradients") {
  Rng rng(20);
  std::vector<Tensor> in = {randn(rng, {2, 4}), randn(rng, {2, 4})};
  check_grads(in, [](ad::Tape& t, const std::vector<ad::VarId>& v) {
    return t.mse(v[0], v[1]);
  });
  check_grads(in, [](ad::Tape& t, const std::vector<ad::VarId>& v) {
    return t.l1(v[0], v[1]);
  });
}

TEST_CASE("stft_mag gradient via dft adjoint") {
  Rng rng(21);
  std::vector<Tensor> in = {randn(rng, {40})};
  check_grads(in, [](ad::Tape& t, const std::vector<ad::VarId>& v) {
    ad::VarId y = t.stft_mag(v[0], 16, 8);
    return t.l1(y, t.scale(y, 0.0));
  }, 1e-5);
}

TEST_CASE("backward requires scalar root") {
  ad::Tape t;
  ad::VarId x = t.leaf(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(t.backward(x), std::invalid_argument);
}
