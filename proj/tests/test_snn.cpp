#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "oracles.hpp"
#include "spikeforge/snn.hpp"

using namespace spikeforge;

TEST_CASE("fire_bit_serial matches the scalar expansion element by element") {
  Rng rng(601);
  Tensor drive = oracle::random_tensor({2, 3, 4, 4}, rng, -0.5, 1.5);
  const float theta = 1.25f;
  BitSerialResult r = fire_bit_serial(drive, theta, 4);
  REQUIRE(r.planes.size() == 4);

  uint8_t bits[4];
  for (int64_t i = 0; i < drive.numel(); ++i) {
    float residue;
    bit_serial_expand(drive.at(i), theta, 4, bits, &residue);
    for (int t = 0; t < 4; ++t) CHECK(r.planes[size_t(t)].at(i) == float(bits[t]));
    CHECK(r.residue.at(i) == residue);
  }
}

TEST_CASE("fire_bit_serial planes are binary and clip to the code range") {
  BitSerialResult deep = fire_bit_serial(Tensor::full({3}, 100.0f), 1.0f, 4);
  BitSerialResult neg = fire_bit_serial(Tensor::full({3}, -5.0f), 1.0f, 4);
  for (int t = 0; t < 4; ++t) {
    for (int64_t i = 0; i < 3; ++i) {
      CHECK(deep.planes[size_t(t)].at(i) == 1.0f);  // saturates at 1111
      CHECK(neg.planes[size_t(t)].at(i) == 0.0f);
    }
  }
  CHECK_THROWS(fire_bit_serial(Tensor::full({1}, 0.5f), 0.0f, 4));
  CHECK_THROWS(fire_bit_serial(Tensor::full({1}, 0.5f), 1.0f, 0));
}

TEST_CASE("fire_baseline implements strict threshold and reset by subtraction") {
  // theta = 1, u0 = 0.5, constant drive 0.4:
  // u: 0.9 no, 1.3 spike -> 0.3, 0.7 no, 1.1 spike -> 0.1
  std::vector<Tensor> z(4, Tensor::full({1}, 0.4f));
  BaselineResult r = fire_baseline(z, 1.0f, Tensor::full({1}, 0.5f));
  REQUIRE(r.planes.size() == 4);
  CHECK(r.planes[0].at(0) == 0.0f);
  CHECK(r.planes[1].at(0) == 1.0f);
  CHECK(r.planes[2].at(0) == 0.0f);
  CHECK(r.planes[3].at(0) == 1.0f);
  CHECK(r.u_final.at(0) == doctest::Approx(0.1).epsilon(1e-5));
  CHECK(r.u_initial.at(0) == 0.5f);

  // exactly reaching theta does not fire: H(0) = 0
  std::vector<Tensor> tie(1, Tensor::full({1}, 0.5f));
  BaselineResult rt = fire_baseline(tie, 1.0f, Tensor::full({1}, 0.5f));
  CHECK(rt.planes[0].at(0) == 0.0f);
}

TEST_CASE("baseline potential identity: sum of currents = spikes * theta + drift") {
  Rng rng(603);
  const float theta = 0.8f;
  std::vector<Tensor> z;
  for (int t = 0; t < 6; ++t) z.push_back(oracle::random_tensor({5}, rng, -0.3, 0.6));
  Tensor u0 = Tensor::full({5}, 0.4f);
  BaselineResult r = fire_baseline(z, theta, u0);
  for (int64_t i = 0; i < 5; ++i) {
    double sum_z = 0, spikes = 0;
    for (int t = 0; t < 6; ++t) {
      sum_z += z[size_t(t)].at(i);
      spikes += r.planes[size_t(t)].at(i);
    }
    const double drift = double(r.u_final.at(i)) - double(r.u_initial.at(i));
    CHECK(sum_z == doctest::Approx(spikes * theta + drift).epsilon(1e-4));
  }
}

TEST_CASE("rate_from_train weighs planes by neuron kind") {
  SpikeTrain train;
  for (int t = 0; t < 4; ++t) train.push_back(Tensor::full({1}, float((t == 0) | (t == 3))));
  // planes 1,0,0,1 -> code 9
  Tensor bs = rate_from_train(train, 2.0f, NeuronKind::kBitSerial);
  CHECK(bs.at(0) == doctest::Approx(2.0 * 9.0 / 16.0));
  Tensor base = rate_from_train(train, 2.0f, NeuronKind::kBaseline);
  CHECK(base.at(0) == doctest::Approx(2.0 * 2.0 / 4.0));
}

TEST_CASE("step_current shifts the plane gain by local step") {
  Rng rng(605);
  AnnModel ann = oracle::random_model(rng, {4}, 16);
  const ConvBnBlock& b = ann.blocks[0];
  Tensor plane({1, 1, 6, 6});
  for (int64_t i = 0; i < plane.numel(); ++i) plane.at(i) = float(rng.uniform() < 0.5);

  const float base = 0.125f;
  Tensor c1 = step_current(b, plane, 1, base);
  Tensor c3 = step_current(b, plane, 3, base);

  // doubling the gain twice equals feeding a 4x plane through conv + norm
  Tensor scaled(plane.shape());
  for (int64_t i = 0; i < plane.numel(); ++i) scaled.at(i) = plane.at(i) * base * 4.0f;
  Tensor conv = ops::conv2d(scaled, b.weights, b.stride, b.padding);
  Tensor want = ops::batchnorm(conv, b.mu, b.sigma, b.gamma, b.beta);
  CHECK(max_abs_diff(c3, want) < 1e-5);

  // linearity in the gain up to normalization: c3 - bias = 4 (c1 - bias)
  Tensor conv1 = ops::conv2d(plane, b.weights, b.stride, b.padding);
  (void)conv1;
  for (int64_t i = 0; i < c1.numel(); ++i) {
    const int64_t ch = (i / (6 * 6)) % 4;
    const double bias = double(b.beta.at(ch)) -
                        double(b.gamma.at(ch)) * double(b.mu.at(ch)) / double(b.sigma.at(ch));
    CHECK(double(c3.at(i)) - bias == doctest::Approx(4.0 * (double(c1.at(i)) - bias))
                                         .epsilon(1e-3)
                                         .scale(std::abs(bias) + 1.0));
  }
}

TEST_CASE("exact mode: spike trains are the activation codes and logits match") {
  Rng rng(607);
  AnnModel ann = oracle::dyadic_model(rng, {4, 6}, 16);
  SnnModel snn = convert(ann, 4, NeuronKind::kBitSerial);
  Tensor x = oracle::dyadic_inputs(rng, {3, 1, 6, 6});

  AnnTrace trace;
  Tensor ann_logits = ann_forward(ann, x, &trace);
  RunResult run = run_snn(snn, x);

  REQUIRE(run.trains.size() == 2);
  for (size_t l = 0; l < 2; ++l) {
    const Tensor& a = trace.act[l];
    const float lambda = ann.blocks[l].activation.lambda;
    for (int64_t i = 0; i < a.numel(); ++i) {
      const std::vector<uint8_t> want = bits_of_activation(a.at(i), lambda, 16);
      for (int t = 0; t < 4; ++t)
        CHECK(run.trains[l][size_t(t)].at(i) == float(want[size_t(t)]));
    }
  }
  CHECK(max_abs_diff(run.logits, ann_logits) <= 1e-4f);
}

TEST_CASE("bit-serial network rejects the stepwise scheduler") {
  Rng rng(609);
  AnnModel ann = oracle::dyadic_model(rng, {4}, 16);
  SnnModel snn = convert(ann, 4, NeuronKind::kBitSerial);
  Tensor x = oracle::dyadic_inputs(rng, {1, 1, 6, 6});
  RunOptions opt;
  opt.scheduler = Scheduler::kStepByStep;
  CHECK_THROWS_AS(run_snn(snn, x, opt), std::invalid_argument);
}

TEST_CASE("baseline trains are bit-identical under both schedulers") {
  Rng rng(611);
  AnnModel ann = oracle::random_model(rng, {4, 6}, 16);
  SnnModel snn = convert(ann, 6, NeuronKind::kBaseline);
  Tensor x = oracle::random_tensor({2, 1, 6, 6}, rng, 0, 1);

  RunOptions layer, step;
  layer.scheduler = Scheduler::kLayerByLayer;
  step.scheduler = Scheduler::kStepByStep;
  RunResult a = run_snn(snn, x, layer);
  RunResult b = run_snn(snn, x, step);

  REQUIRE(a.trains.size() == b.trains.size());
  for (size_t l = 0; l < a.trains.size(); ++l) {
    REQUIRE(a.trains[l].size() == 6);
    for (size_t t = 0; t < 6; ++t) CHECK(bitwise_equal(a.trains[l][t], b.trains[l][t]));
  }
  CHECK(bitwise_equal(a.logits, b.logits));
}

TEST_CASE("ledger: layer-by-layer peak grows with T, stepwise with depth") {
  Rng rng(613);
  AnnModel shallow = oracle::random_model(rng, {4, 4}, 16);
  AnnModel deep = oracle::random_model(rng, {4, 4, 4, 4, 4}, 16);
  Tensor x = oracle::random_tensor({1, 1, 6, 6}, rng, 0, 1);

  auto peak = [&](const AnnModel& m, int t, Scheduler s) {
    SnnModel snn = convert(m, t, NeuronKind::kBaseline);
    RunOptions opt;
    opt.scheduler = s;
    return run_snn(snn, x, opt).ledger.peak_live_tensors;
  };

  // layer by layer: more steps, more live planes; depth does not matter
  const int64_t l4 = peak(shallow, 4, Scheduler::kLayerByLayer);
  const int64_t l8 = peak(shallow, 8, Scheduler::kLayerByLayer);
  const int64_t l16 = peak(shallow, 16, Scheduler::kLayerByLayer);
  CHECK(l8 > l4);
  CHECK(l16 > l8);
  CHECK(peak(deep, 4, Scheduler::kLayerByLayer) == l4);

  // step by step: more layers, more live planes; T does not matter
  const int64_t s_shallow = peak(shallow, 4, Scheduler::kStepByStep);
  const int64_t s_deep = peak(deep, 4, Scheduler::kStepByStep);
  CHECK(s_deep > s_shallow);
  CHECK(peak(deep, 8, Scheduler::kStepByStep) == s_deep);

  // latency is layers times steps under both schedules
  SnnModel snn = convert(shallow, 4, NeuronKind::kBaseline);
  RunOptions opt;
  CHECK(run_snn(snn, x, opt).ledger.latency_units == 3 * 4);  // 2 blocks + head
  opt.scheduler = Scheduler::kStepByStep;
  CHECK(run_snn(snn, x, opt).ledger.latency_units == 3 * 4);
}

TEST_CASE("baseline traces expose the rate identity inputs") {
  Rng rng(617);
  AnnModel ann = oracle::random_model(rng, {4, 5}, 16);
  SnnModel snn = convert(ann, 8, NeuronKind::kBaseline);
  Tensor x = oracle::random_tensor({2, 1, 6, 6}, rng, 0, 1);
  RunOptions opt;
  opt.keep_traces = true;
  RunResult run = run_snn(snn, x, opt);
  REQUIRE(run.traces.size() == 2);
  for (size_t l = 0; l < 2; ++l) {
    const BlockTrace& tr = run.traces[l];
    REQUIRE(tr.phi.numel() > 0);
    REQUIRE(tr.sum_current.numel() == tr.phi.numel());
    // phi = Z_bar - (u_T - u_0) / T elementwise
    for (int64_t i = 0; i < tr.phi.numel(); ++i) {
      const double zbar = double(tr.sum_current.at(i)) / 8.0;
      const double drift = (double(tr.u_final.at(i)) - double(tr.u_initial.at(i))) / 8.0;
      CHECK(double(tr.phi.at(i)) == doctest::Approx(zbar - drift).epsilon(1e-5).scale(1.0));
    }
    CHECK(bitwise_equal(tr.phi, rate_from_train(run.trains[l], snn.theta[l],
                                                NeuronKind::kBaseline)));
  }
}

TEST_CASE("baseline u0 default is half the threshold") {
  Rng rng(619);
  AnnModel ann = oracle::random_model(rng, {4}, 16);
  SnnModel snn = convert(ann, 4, NeuronKind::kBaseline);
  Tensor x = oracle::random_tensor({1, 1, 6, 6}, rng, 0, 1);
  RunOptions opt;
  opt.keep_traces = true;
  RunResult run = run_snn(snn, x, opt);
  for (int64_t i = 0; i < run.traces[0].u_initial.numel(); ++i)
    CHECK(run.traces[0].u_initial.at(i) == 0.5f * snn.theta[0]);

  opt.u0_fraction = 0.0f;
  RunResult zero = run_snn(snn, x, opt);
  for (int64_t i = 0; i < zero.traces[0].u_initial.numel(); ++i)
    CHECK(zero.traces[0].u_initial.at(i) == 0.0f);
}

TEST_CASE("input density rows match scheduler semantics") {
  Rng rng(621);
  AnnModel ann = oracle::random_model(rng, {4, 5}, 16);
  Tensor x = oracle::random_tensor({2, 1, 6, 6}, rng, 0, 1);

  SnnModel bs = convert(ann, 4, NeuronKind::kBitSerial);
  RunResult rb = run_snn(bs, x);
  REQUIRE(rb.input_density.size() == 3);  // 2 blocks + head
  CHECK(rb.input_density[0].size() == 1);  // analog pass
  CHECK(rb.input_density[0][0] == 1.0);
  REQUIRE(rb.input_density[1].size() == 4);
  REQUIRE(rb.input_density[2].size() == 4);
  for (double d : rb.input_density[1]) {
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
  }
  // densities of consumed planes match the producer's train (LSB first)
  for (int t = 0; t < 4; ++t) {
    const double want = plane_density(rb.trains[0][size_t(3 - t)]);
    CHECK(rb.input_density[1][size_t(t)] == doctest::Approx(want));
  }

  SnnModel base = convert(ann, 4, NeuronKind::kBaseline);
  RunResult rbase = run_snn(base, x);
  REQUIRE(rbase.input_density[0].size() == 4);  // analog input re-fed each step
  for (double d : rbase.input_density[0]) CHECK(d == 1.0);
}

TEST_CASE("spike train files round trip") {
  Rng rng(623);
  SpikeTrain train;
  for (int t = 0; t < 4; ++t) {
    Tensor plane({2, 3, 5, 5});
    for (int64_t i = 0; i < plane.numel(); ++i) plane.at(i) = float(rng.uniform() < 0.3);
    train.push_back(plane);
  }
  const std::string path = "snn_test_train.spk";
  write_spike_train(path, train, 2);
  SpikeTrain r = read_spike_train(path);
  REQUIRE(r.size() == 4);
  for (size_t t = 0; t < 4; ++t) {
    CHECK(r[t].shape() == train[t].shape());
    CHECK(bitwise_equal(r[t], train[t]));
  }
  std::remove(path.c_str());

  // odd plane sizes exercise the padding byte path
  SpikeTrain odd;
  Tensor plane({1, 1, 3, 3});
  for (int64_t i = 0; i < 9; ++i) plane.at(i) = float(i % 2);
  odd.push_back(plane);
  write_spike_train(path, odd, 0);
  SpikeTrain ro = read_spike_train(path);
  CHECK(bitwise_equal(ro[0], odd[0]));
  std::remove(path.c_str());
}

TEST_CASE("plane_density counts ones") {
  Tensor plane({2, 2});
  plane.at(0) = 1.0f;
  plane.at(3) = 1.0f;
  CHECK(plane_density(plane) == doctest::Approx(0.5));
}

TEST_CASE("encode_input_block equals preactivation plus emission") {
  Rng rng(625);
  AnnModel ann = oracle::dyadic_model(rng, {4}, 16);
  SnnModel snn = convert(ann, 4, NeuronKind::kBitSerial);
  Tensor x = oracle::dyadic_inputs(rng, {2, 1, 6, 6});
  BitSerialResult got = encode_input_block(snn, x);
  Tensor z = block_preactivation(snn.blocks[0], x);
  BitSerialResult want = fire_bit_serial(z, snn.theta[0], 4);
  for (int t = 0; t < 4; ++t) CHECK(bitwise_equal(got.planes[size_t(t)], want.planes[size_t(t)]));
  CHECK(bitwise_equal(got.residue, want.residue));
}
