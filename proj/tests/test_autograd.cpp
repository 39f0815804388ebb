#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "spikeforge/autograd.hpp"

using namespace spikeforge;

namespace {

// Relative tolerance check with an absolute floor for near-zero gradients.
// The floor sits above the noise of central differences taken on float32
// losses (~1e-7 |L| / h with h = 1e-3).
void check_close(double got, double want, double rel = 1e-3, double floor_abs = 2e-4) {
  const double scale = std::max(std::abs(want), floor_abs / rel);
  CHECK(std::abs(got - want) <= rel * scale);
}

}  // namespace

TEST_CASE("linear + cross entropy gradients match finite differences") {
  Rng rng(201);
  Tensor x = oracle::random_tensor({4, 6}, rng, -1, 1);
  Tensor w = oracle::random_tensor({3, 6}, rng, -0.5, 0.5);
  Tensor b = oracle::random_tensor({3}, rng, -0.2, 0.2);
  const std::vector<int> labels = {0, 2, 1, 2};

  auto loss_value = [&]() {
    Tape t;
    Var vx = t.constant(x);
    Var vw = t.leaf(&w);
    Var vb = t.leaf(&b);
    Var logits = t.linear(vx, vw, vb);
    return double(t.value(t.cross_entropy(logits, labels)).at(0));
  };

  Tape tape;
  Var vx = tape.constant(x);
  Var vw = tape.leaf(&w);
  Var vb = tape.leaf(&b);
  Var loss = tape.cross_entropy(tape.linear(vx, vw, vb), labels);
  tape.backward(loss);

  REQUIRE(w.has_grad());
  REQUIRE(b.has_grad());
  for (int64_t i = 0; i < w.numel(); ++i)
    check_close(w.grad().at(i), oracle::fd_grad(w, i, loss_value));
  for (int64_t i = 0; i < b.numel(); ++i)
    check_close(b.grad().at(i), oracle::fd_grad(b, i, loss_value));
}

TEST_CASE("cross entropy value matches a double-precision softmax") {
  Tensor logits({2, 3});
  const double rows[2][3] = {{1.0, 2.0, 3.0}, {-1.0, 0.5, 0.25}};
  for (int64_t i = 0; i < 6; ++i) logits.at(i) = float(rows[i / 3][i % 3]);
  const std::vector<int> labels = {2, 0};

  double want = 0.0;
  for (int r = 0; r < 2; ++r) {
    double denom = 0.0;
    for (int c = 0; c < 3; ++c) denom += std::exp(rows[r][c]);
    want += -(rows[r][labels[size_t(r)]] - std::log(denom));
  }
  want /= 2.0;

  Tape t;
  Var v = t.cross_entropy(t.constant(logits), labels);
  CHECK(double(t.value(v).at(0)) == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("conv -> train-mode batchnorm -> pool -> linear chain gradients") {
  Rng rng(203);
  Tensor x = oracle::random_tensor({2, 1, 4, 4}, rng, -1, 1);
  Tensor w = oracle::random_tensor({2, 1, 3, 3}, rng, -0.5, 0.5);
  Tensor gamma = oracle::random_tensor({2}, rng, 0.8, 1.2);
  Tensor beta = oracle::random_tensor({2}, rng, -0.2, 0.2);
  Tensor hw = oracle::random_tensor({2, 8}, rng, -0.5, 0.5);
  Tensor hb = oracle::random_tensor({2}, rng, -0.2, 0.2);
  const std::vector<int> labels = {0, 1};
  const float eps = 1e-5f;

  auto loss_value = [&]() {
    Tape t;
    Var h = t.conv2d(t.constant(x), t.leaf(&w), 1, 1);
    h = t.batchnorm_train(h, t.leaf(&gamma), t.leaf(&beta), eps);
    h = t.avgpool2d(h, 2);
    h = t.flatten(h);
    Var logits = t.linear(h, t.leaf(&hw), t.leaf(&hb));
    return double(t.value(t.cross_entropy(logits, labels)).at(0));
  };

  Tape t;
  Var h = t.conv2d(t.constant(x), t.leaf(&w), 1, 1);
  h = t.batchnorm_train(h, t.leaf(&gamma), t.leaf(&beta), eps);
  h = t.avgpool2d(h, 2);
  h = t.flatten(h);
  Var logits = t.linear(h, t.leaf(&hw), t.leaf(&hb));
  t.backward(t.cross_entropy(logits, labels));

  for (Tensor* p : {&w, &gamma, &beta, &hw, &hb}) {
    REQUIRE(p->has_grad());
    for (int64_t i = 0; i < p->numel(); ++i)
      check_close(p->grad().at(i), oracle::fd_grad(*p, i, loss_value), 2e-3, 1e-4);
  }
}

TEST_CASE("batchnorm_train exposes batch statistics") {
  Rng rng(207);
  Tensor x = oracle::random_tensor({3, 2, 3, 3}, rng, -1, 1);
  Tensor gamma = Tensor::full({2}, 1.0f);
  Tensor beta = Tensor::full({2}, 0.0f);
  Tape t;
  Tensor mu, sigma;
  t.batchnorm_train(t.constant(x), t.leaf(&gamma), t.leaf(&beta), 1e-5f, &mu, &sigma);
  auto ref = ops::batchnorm_train(x, gamma, beta, 1e-5f);
  CHECK(max_abs_diff(mu, ref.batch_mu) < 1e-6);
  CHECK(max_abs_diff(sigma, ref.batch_sigma) < 1e-6);
}

TEST_CASE("batchnorm_affine differentiates gamma and beta but not statistics") {
  Rng rng(209);
  Tensor x = oracle::random_tensor({2, 2, 3, 3}, rng, -1, 1);
  Tensor mu = oracle::random_tensor({2}, rng, -0.2, 0.2);
  Tensor sigma = oracle::random_tensor({2}, rng, 0.8, 1.2);
  Tensor gamma = oracle::random_tensor({2}, rng, 0.8, 1.2);
  Tensor beta = oracle::random_tensor({2}, rng, -0.2, 0.2);
  const std::vector<int> labels = {0, 1};
  Tensor hw = oracle::random_tensor({2, 18}, rng, -0.3, 0.3);
  Tensor hb = Tensor({2});

  auto loss_value = [&]() {
    Tape t;
    Var h = t.batchnorm_affine(t.constant(x), mu, sigma, t.leaf(&gamma), t.leaf(&beta), 0.0f);
    Var logits = t.linear(t.flatten(h), t.leaf(&hw), t.leaf(&hb));
    return double(t.value(t.cross_entropy(logits, labels)).at(0));
  };

  Tape t;
  Var h = t.batchnorm_affine(t.constant(x), mu, sigma, t.leaf(&gamma), t.leaf(&beta), 0.0f);
  Var logits = t.linear(t.flatten(h), t.leaf(&hw), t.leaf(&hb));
  t.backward(t.cross_entropy(logits, labels));

  for (Tensor* p : {&gamma, &beta}) {
    REQUIRE(p->has_grad());
    for (int64_t i = 0; i < p->numel(); ++i)
      check_close(p->grad().at(i), oracle::fd_grad(*p, i, loss_value), 2e-3, 1e-4);
  }
}

TEST_CASE("qcfs node forwards the staircase exactly") {
  Tensor z({4});
  z.at(0) = -0.2f;
  z.at(1) = 0.33f;
  z.at(2) = 0.74f;
  z.at(3) = 1.4f;
  Tensor lambda = Tensor::scalar(1.0f);

  Tape t;
  Var va = t.qcfs(t.constant(z), t.leaf(&lambda), 16, 15);

  QcfsActivation act;
  CHECK(bitwise_equal(t.value(va), qcfs_forward(z, act)));
}

TEST_CASE("qcfs gradients route through a downstream penalty node") {
  // bit_l1's backward sends coeff * T * 1{0 < a < lambda} into the qcfs node,
  // which applies the straight-through rule for z and the closed-form lambda
  // sensitivity. Both are checked against hand-computed values.
  Tensor z({4});
  z.at(0) = -0.2f;  // a = 0: no penalty gradient, no z gradient
  z.at(1) = 0.33f;  // a = 5/16, interior
  z.at(2) = 0.74f;  // a = 12/16, interior
  z.at(3) = 1.4f;   // a = 15/16 interior, but z saturated: lambda only
  Tensor lambda = Tensor::scalar(1.0f);
  const float coeff = 0.5f;

  Tape t;
  Var vz = t.constant(z);
  Var vl = t.leaf(&lambda);
  Var va = t.qcfs(vz, vl, 16, 15);
  Var reg = t.bit_l1(va, 1.0f, 16, coeff);
  // popcounts: 0 (0b0000), 2 (0b0101), 2 (0b1100), 4 (0b1111)
  CHECK(t.value(reg).at(0) == doctest::Approx(coeff * (0 + 2 + 2 + 4)));
  t.backward(reg);

  const Tensor a = t.value(va);
  const float up = coeff * 4.0f;  // surrogate upstream on interior activations
  Tensor gz = t.gradient(vz);
  CHECK(gz.at(0) == 0.0f);
  CHECK(gz.at(1) == doctest::Approx(up));
  CHECK(gz.at(2) == doctest::Approx(up));
  CHECK(gz.at(3) == 0.0f);  // z above lambda: straight-through mask closes

  REQUIRE(lambda.has_grad());
  double want = 0.0;
  want += double(up) * (double(a.at(1)) - 0.33);
  want += double(up) * (double(a.at(2)) - 0.74);
  want += double(up) * double(a.at(3));
  CHECK(lambda.grad().at(0) == doctest::Approx(want).epsilon(1e-4));
}

TEST_CASE("bit_l1 counts ones and backpropagates the surrogate") {
  // activations on the lambda/Q grid with known popcounts
  Tensor a({4});
  a.at(0) = 0.0f;         // code 0, 0 ones, boundary
  a.at(1) = 3.0f / 16.0f; // code 3, 2 ones, interior
  a.at(2) = 7.0f / 16.0f; // code 7, 3 ones, interior
  a.at(3) = 15.0f / 16.0f;// code 15, 4 ones, interior
  const float coeff = 0.25f;

  Tape t;
  Var va = t.constant(a);
  Var reg = t.bit_l1(va, 1.0f, 16, coeff);
  CHECK(t.value(reg).at(0) == doctest::Approx(coeff * (0 + 2 + 3 + 4)));

  t.backward(reg);
  Tensor g = t.gradient(va);
  CHECK(g.at(0) == 0.0f);                       // a = 0 outside (0, lambda)
  CHECK(g.at(1) == doctest::Approx(coeff * 4)); // T = 4 surrogate
  CHECK(g.at(2) == doctest::Approx(coeff * 4));
  CHECK(g.at(3) == doctest::Approx(coeff * 4));
}

TEST_CASE("add_scaled combines losses and routes gradients to both sides") {
  Tensor wa = Tensor::scalar(2.0f);
  Tensor wb = Tensor::scalar(5.0f);
  Tape t;
  Var va = t.leaf(&wa);
  Var vb = t.leaf(&wb);
  Var sum = t.add_scaled(va, vb, 0.5f);
  CHECK(t.value(sum).at(0) == doctest::Approx(4.5));
  t.backward(sum);
  CHECK(wa.grad().at(0) == doctest::Approx(1.0));
  CHECK(wb.grad().at(0) == doctest::Approx(0.5));
}

TEST_CASE("backward accumulates into existing grad buffers") {
  Tensor w = Tensor::scalar(1.0f);
  {
    Tape t;
    Var v = t.leaf(&w);
    Var doubled = t.add_scaled(v, v, 1.0f);
    t.backward(doubled);
  }
  CHECK(w.grad().at(0) == doctest::Approx(2.0));
  {
    Tape t;
    Var v = t.leaf(&w);
    t.backward(t.add_scaled(v, v, 1.0f));
  }
  CHECK(w.grad().at(0) == doctest::Approx(4.0));  // accumulated, not replaced
  w.zero_grad();
  CHECK(w.grad().at(0) == 0.0f);
}

TEST_CASE("backward rejects non-scalar losses") {
  Tensor x({2, 2});
  Tape t;
  Var v = t.constant(x);
  CHECK_THROWS(t.backward(v));
}

TEST_CASE("gradient of an untouched variable is zero-shaped") {
  Tensor x = Tensor::full({3}, 1.0f);
  Tape t;
  Var v = t.constant(x);
  Tensor g = t.gradient(v);
  CHECK(g.numel() == 3);
  for (int64_t i = 0; i < 3; ++i) CHECK(g.at(i) == 0.0f);
}
