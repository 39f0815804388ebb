#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "spikeforge/checkpoint.hpp"
#include "spikeforge/convert.hpp"
#include "spikeforge/model.hpp"

using namespace spikeforge;

namespace {

std::string tmp_path(const char* name) {
  return std::string("ckpt_test_") + name;
}

bool blocks_equal(const ConvBnBlock& a, const ConvBnBlock& b) {
  return bitwise_equal(a.weights, b.weights) && bitwise_equal(a.mu, b.mu) &&
         bitwise_equal(a.sigma, b.sigma) && bitwise_equal(a.gamma, b.gamma) &&
         bitwise_equal(a.beta, b.beta) && a.stride == b.stride && a.padding == b.padding &&
         a.pool_after == b.pool_after && a.activation.lambda == b.activation.lambda &&
         a.activation.q_steps == b.activation.q_steps &&
         a.activation.clip_hi == b.activation.clip_hi;
}

}  // namespace

TEST_CASE("make_ann_model wires shapes that validate") {
  Rng rng(301);
  AnnModel m = make_ann_model({1, 8, 8}, {4, 8}, {0, 2}, 3, 16, false, rng);
  CHECK(m.blocks.size() == 2);
  CHECK(m.blocks[0].weights.dim(0) == 4);
  CHECK(m.blocks[1].weights.dim(1) == 4);
  CHECK(m.blocks[1].pool_after == 2);
  CHECK(m.head.weights.dim(0) == 3);
  CHECK(m.head.weights.dim(1) == 8 * 4 * 4);  // pooled 8x8 -> 4x4
  CHECK(m.blocks[0].activation.clip_hi == 15);
  CHECK_NOTHROW(m.validate());

  AnnModel full = make_ann_model({1, 8, 8}, {4}, {0}, 2, 16, true, rng);
  CHECK(full.blocks[0].activation.clip_hi == 16);
}

TEST_CASE("validate rejects broken models") {
  Rng rng(303);
  AnnModel m = oracle::random_model(rng, {4, 6}, 16);
  CHECK_NOTHROW(m.validate());

  AnnModel bad = m;
  bad.blocks[1].weights = Tensor({6, 5, 3, 3});  // channel chain broken
  CHECK_THROWS(bad.validate());

  bad = m;
  bad.head.weights = Tensor({3, 17});
  CHECK_THROWS(bad.validate());

  bad = m;
  bad.blocks[0].sigma.at(0) = 0.0f;
  CHECK_THROWS(bad.validate());

  bad = m;
  bad.blocks[0].activation.q_steps = 8;  // disagrees with model q_steps
  CHECK_THROWS(bad.validate());
}

TEST_CASE("block_preactivation is conv then normalization") {
  Rng rng(305);
  AnnModel m = oracle::random_model(rng, {4}, 16);
  Tensor x = oracle::random_tensor({2, 1, 6, 6}, rng, 0, 1);
  const ConvBnBlock& b = m.blocks[0];
  Tensor got = block_preactivation(b, x);
  Tensor conv = oracle::conv2d(x, b.weights, b.stride, b.padding);
  Tensor want = oracle::batchnorm(conv, b.mu, b.sigma, b.gamma, b.beta);
  CHECK(max_abs_diff(got, want) < 1e-4);
}

TEST_CASE("ann_forward trace stages are consistent") {
  Rng rng(307);
  AnnModel m = oracle::random_model(rng, {4, 6}, 16);
  m.blocks[1].pool_after = 2;
  m.head.weights = oracle::random_tensor({3, 6 * 3 * 3}, rng, -0.2, 0.2);
  m.validate();
  Tensor x = oracle::random_tensor({3, 1, 6, 6}, rng, 0, 1);

  AnnTrace trace;
  Tensor logits = ann_forward(m, x, &trace);
  REQUIRE(trace.pre.size() == 2);
  REQUIRE(trace.act.size() == 2);
  REQUIRE(trace.fed.size() == 2);
  CHECK(bitwise_equal(trace.logits, logits));

  // stage 0: pre = block_preactivation(x), act = staircase(pre), fed = act
  CHECK(bitwise_equal(trace.pre[0], block_preactivation(m.blocks[0], x)));
  CHECK(bitwise_equal(trace.act[0], qcfs_forward(trace.pre[0], m.blocks[0].activation)));
  CHECK(bitwise_equal(trace.fed[0], trace.act[0]));

  // stage 1 consumes fed[0]; pooling applies after the activation
  CHECK(bitwise_equal(trace.pre[1], block_preactivation(m.blocks[1], trace.fed[0])));
  CHECK(trace.fed[1].dim(2) == 3);
  CHECK(max_abs_diff(trace.fed[1], ops::avgpool2d(trace.act[1], 2)) == 0.0f);

  // head consumes flattened fed[1]
  Tensor flat = trace.fed[1].reshaped({3, 6 * 3 * 3});
  Tensor want = ops::linear(flat, m.head.weights, &m.head.bias);
  CHECK(bitwise_equal(logits, want));
}

TEST_CASE("relu reference mode skips the staircase") {
  Rng rng(309);
  AnnModel m = oracle::random_model(rng, {4}, 16);
  Tensor x = oracle::random_tensor({2, 1, 6, 6}, rng, 0, 1);
  AnnTrace tq, tr;
  ann_forward(m, x, &tq, ActivationMode::kQuantized);
  ann_forward(m, x, &tr, ActivationMode::kRelu);
  CHECK(bitwise_equal(tq.pre[0], tr.pre[0]));
  bool differs = false;
  for (int64_t i = 0; i < tq.act[0].numel(); ++i) {
    const float z = tr.pre[0].at(i);
    CHECK(tr.act[0].at(i) == (z > 0.0f ? z : 0.0f));
    differs |= tr.act[0].at(i) != tq.act[0].at(i);
  }
  CHECK(differs);
}

TEST_CASE("predict_classes takes the row argmax, first index winning ties") {
  Tensor logits({3, 3});
  const float rows[3][3] = {{0.1f, 0.9f, 0.3f}, {2.0f, -1.0f, 2.0f}, {-5.0f, -4.0f, -4.5f}};
  for (int64_t i = 0; i < 9; ++i) logits.at(i) = rows[i / 3][i % 3];
  const std::vector<int> got = predict_classes(logits);
  REQUIRE(got.size() == 3);
  CHECK(got[0] == 1);
  CHECK(got[1] == 0);
  CHECK(got[2] == 1);
}

TEST_CASE("ann checkpoint round trip is bit exact") {
  Rng rng(311);
  AnnModel m = oracle::random_model(rng, {4, 6, 8}, 16);
  m.blocks[1].pool_after = 2;
  m.blocks[1].stride = 1;
  m.head.weights = oracle::random_tensor({3, 8 * 3 * 3}, rng, -0.2, 0.2);
  m.validate();

  const std::string path = tmp_path("ann.ckpt");
  save_ann(path, m);
  CHECK(checkpoint_kind(path) == "ann");
  AnnModel r = load_ann(path);

  CHECK(r.q_steps == m.q_steps);
  CHECK(r.class_count == m.class_count);
  CHECK(r.input_shape == m.input_shape);
  REQUIRE(r.blocks.size() == m.blocks.size());
  for (size_t i = 0; i < m.blocks.size(); ++i) CHECK(blocks_equal(r.blocks[i], m.blocks[i]));
  CHECK(bitwise_equal(r.head.weights, m.head.weights));
  CHECK(bitwise_equal(r.head.bias, m.head.bias));

  // identical behavior, not just identical bytes
  Tensor x = oracle::random_tensor({2, 1, 6, 6}, rng, 0, 1);
  CHECK(bitwise_equal(ann_forward(m, x), ann_forward(r, x)));
  std::remove(path.c_str());
}

TEST_CASE("snn checkpoint round trip keeps thresholds and neuron kind") {
  Rng rng(313);
  AnnModel ann = oracle::random_model(rng, {4, 6}, 16);
  SnnModel snn = convert(ann, 4, NeuronKind::kBitSerial);

  const std::string path = tmp_path("snn.ckpt");
  save_snn(path, snn);
  CHECK(checkpoint_kind(path) == "snn");
  SnnModel r = load_snn(path);

  CHECK(r.timesteps == 4);
  CHECK(r.neuron == NeuronKind::kBitSerial);
  CHECK(r.source_q_steps == 16);
  CHECK(r.exact_mode());
  REQUIRE(r.theta.size() == snn.theta.size());
  for (size_t i = 0; i < r.theta.size(); ++i) CHECK(r.theta[i] == snn.theta[i]);
  for (size_t i = 0; i < r.blocks.size(); ++i) CHECK(blocks_equal(r.blocks[i], snn.blocks[i]));
  CHECK(bitwise_equal(r.head.weights, snn.head.weights));

  SnnModel base = convert(ann, 4, NeuronKind::kBaseline);
  save_snn(path, base);
  CHECK(load_snn(path).neuron == NeuronKind::kBaseline);
  std::remove(path.c_str());
}

TEST_CASE("payload tensors start on 64-byte boundaries") {
  Rng rng(317);
  AnnModel m = oracle::random_model(rng, {3}, 16);
  const std::string path = tmp_path("align.ckpt");
  save_ann(path, m);

  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  char magic[4];
  uint32_t version;
  uint64_t hlen;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&hlen), 8);
  CHECK(std::string(magic, 4) == "SFRG");
  CHECK(version == 1);
  std::string header(hlen, '\0');
  in.read(header.data(), std::streamsize(hlen));
  // every "offset" field in the header is a multiple of 64
  size_t pos = 0;
  int seen = 0;
  while ((pos = header.find("\"offset\":", pos)) != std::string::npos) {
    pos += 9;
    const uint64_t off = std::stoull(header.substr(pos));
    CHECK(off % 64 == 0);
    ++seen;
  }
  CHECK(seen >= 7);  // 5 block tensors + 2 head tensors at least
  std::remove(path.c_str());
}

TEST_CASE("foreign and truncated files are rejected") {
  const std::string path = tmp_path("junk.bin");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPEnot a checkpoint";
  }
  CHECK_THROWS(load_ann(path));
  CHECK_THROWS(checkpoint_kind(path));
  std::remove(path.c_str());

  CHECK_THROWS(load_ann("does_not_exist.ckpt"));

  // ann loader refuses snn files and vice versa
  Rng rng(319);
  AnnModel m = oracle::random_model(rng, {3}, 16);
  const std::string ap = tmp_path("kind.ckpt");
  save_ann(ap, m);
  CHECK_THROWS(load_snn(ap));
  std::remove(ap.c_str());
}

TEST_CASE("accuracy counts argmax hits") {
  Rng rng(321);
  AnnModel m = oracle::random_model(rng, {3}, 16);
  Tensor x = oracle::random_tensor({8, 1, 6, 6}, rng, 0, 1);
  Tensor logits = ann_forward(m, x);
  std::vector<int> labels = predict_classes(logits);
  CHECK(accuracy(m, x, labels) == doctest::Approx(1.0));
  for (auto& l : labels) l = (l + 1) % 3;
  CHECK(accuracy(m, x, labels) == doctest::Approx(0.0));
}
