#include "spikeforge/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace spikeforge {

namespace {

Shape block_output_shape(const ConvBnBlock& b, const Shape& in) {
  const int64_t h = (in[1] + 2 * b.padding - b.kernel()) / b.stride + 1;
  const int64_t w = (in[2] + 2 * b.padding - b.kernel()) / b.stride + 1;
  Shape out{b.out_channels(), h, w};
  if (b.pool_after > 0) {
    if (h % b.pool_after != 0 || w % b.pool_after != 0)
      throw std::invalid_argument("pool window does not divide block output " + shape_str(out));
    out[1] /= b.pool_after;
    out[2] /= b.pool_after;
  }
  return out;
}

}  // namespace

void AnnModel::validate() const {
  if (blocks.empty()) throw std::invalid_argument("model must have at least one block");
  if (input_shape.size() != 3)
    throw std::invalid_argument("input_shape must be [C, H, W], got " + shape_str(input_shape));
  Shape cur = input_shape;
  for (size_t i = 0; i < blocks.size(); ++i) {
    const ConvBnBlock& b = blocks[i];
    if (b.in_channels() != cur[0])
      throw std::invalid_argument("block " + std::to_string(i) + " expects " +
                                  std::to_string(b.in_channels()) + " channels, previous stage yields " +
                                  std::to_string(cur[0]));
    const int64_t c = b.out_channels();
    for (const Tensor* p : {&b.mu, &b.sigma, &b.gamma, &b.beta})
      if (p->ndim() != 1 || p->dim(0) != c)
        throw std::invalid_argument("block " + std::to_string(i) +
                                    " normalization parameters must have shape [" +
                                    std::to_string(c) + "]");
    for (int64_t j = 0; j < c; ++j)
      if (!(b.sigma.at(j) > 0.0f))
        throw std::invalid_argument("block " + std::to_string(i) + " sigma must be positive");
    if (!(b.activation.lambda > 0.0f))
      throw std::invalid_argument("block " + std::to_string(i) + " lambda must be positive");
    if (b.activation.q_steps != q_steps)
      throw std::invalid_argument("block " + std::to_string(i) + " q_steps differs from model");
    cur = block_output_shape(b, cur);
  }
  const int64_t features = cur[0] * cur[1] * cur[2];
  if (head.weights.ndim() != 2 || head.weights.dim(1) != features)
    throw std::invalid_argument("head expects " + std::to_string(features) +
                                " features, weights are " + shape_str(head.weights.shape()));
  if (head.weights.dim(0) != class_count || head.bias.dim(0) != class_count)
    throw std::invalid_argument("head output size does not match class_count");
}

Tensor block_preactivation(const ConvBnBlock& block, const Tensor& x) {
  Tensor c = ops::conv2d(x, block.weights, block.stride, block.padding);
  return ops::batchnorm(c, block.mu, block.sigma, block.gamma, block.beta, 0.0f);
}

Tensor ann_forward(const AnnModel& model, const Tensor& x, AnnTrace* trace, ActivationMode mode) {
  if (x.ndim() != 4 || x.dim(1) != model.input_shape[0] || x.dim(2) != model.input_shape[1] ||
      x.dim(3) != model.input_shape[2])
    throw std::invalid_argument("input " + shape_str(x.shape()) + " does not match model input " +
                                shape_str(model.input_shape));
  if (trace) {
    trace->pre.clear();
    trace->act.clear();
    trace->fed.clear();
  }
  Tensor cur = x;
  for (const ConvBnBlock& b : model.blocks) {
    Tensor z = block_preactivation(b, cur);
    Tensor a;
    if (mode == ActivationMode::kQuantized) {
      a = qcfs_forward(z, b.activation);
    } else {
      a = Tensor(z.shape());
      for (int64_t i = 0; i < z.numel(); ++i) a.at(i) = z.at(i) > 0.0f ? z.at(i) : 0.0f;
    }
    Tensor fed = b.pool_after > 0 ? ops::avgpool2d(a, b.pool_after) : a;
    if (trace) {
      trace->pre.push_back(std::move(z));
      trace->act.push_back(a);
      trace->fed.push_back(fed);
    }
    cur = std::move(fed);
  }
  const int64_t n = cur.dim(0);
  Tensor flat = cur.reshaped({n, cur.numel() / n});
  Tensor logits = ops::linear(flat, model.head.weights, &model.head.bias);
  if (trace) trace->logits = logits;
  return logits;
}

std::vector<int> predict_classes(const Tensor& logits) {
  const int64_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int best = 0;
    for (int64_t j = 1; j < k; ++j)
      if (logits.at(i * k + j) > logits.at(i * k + best)) best = int(j);
    out[size_t(i)] = best;
  }
  return out;
}

double accuracy(const AnnModel& model, const Tensor& images, const std::vector<int>& labels) {
  Tensor logits = ann_forward(model, images);
  std::vector<int> pred = predict_classes(logits);
  if (pred.size() != labels.size())
    throw std::invalid_argument("label count does not match image count");
  int64_t hit = 0;
  for (size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return double(hit) / double(pred.size());
}

AnnModel make_ann_model(const Shape& input_shape, const std::vector<int>& channels,
                        const std::vector<int>& pool_after, int class_count, int q_steps,
                        bool full_range_clip, Rng& rng) {
  if (channels.empty()) throw std::invalid_argument("need at least one block");
  if (!pool_after.empty() && pool_after.size() != channels.size())
    throw std::invalid_argument("pool_after must be empty or match the block count");
  AnnModel m;
  m.q_steps = q_steps;
  m.input_shape = input_shape;
  m.class_count = class_count;
  int64_t cin = input_shape[0];
  Shape cur = input_shape;
  for (size_t i = 0; i < channels.size(); ++i) {
    ConvBnBlock b;
    const int64_t cout = channels[i];
    const int64_t k = 3;
    b.weights = Tensor({cout, cin, k, k});
    const double scale = std::sqrt(2.0 / (double(cin) * double(k) * double(k)));
    for (int64_t j = 0; j < b.weights.numel(); ++j)
      b.weights.at(j) = float(rng.normal(0.0, scale));
    b.mu = Tensor({cout});
    b.sigma = Tensor::full({cout}, 1.0f);
    b.gamma = Tensor::full({cout}, 1.0f);
    b.beta = Tensor({cout});
    b.stride = 1;
    b.padding = 1;
    b.activation.lambda = 1.0f;
    b.activation.q_steps = q_steps;
    b.activation.clip_hi = full_range_clip ? q_steps : q_steps - 1;
    b.pool_after = pool_after.empty() ? 0 : pool_after[i];
    m.blocks.push_back(std::move(b));
    cur = Shape{cout, cur[1], cur[2]};
    if (m.blocks.back().pool_after > 0) {
      cur[1] /= m.blocks.back().pool_after;
      cur[2] /= m.blocks.back().pool_after;
    }
    cin = cout;
  }
  const int64_t features = cur[0] * cur[1] * cur[2];
  m.head.weights = Tensor({class_count, features});
  const double hs = std::sqrt(1.0 / double(features));
  for (int64_t j = 0; j < m.head.weights.numel(); ++j)
    m.head.weights.at(j) = float(rng.normal(0.0, hs));
  m.head.bias = Tensor({class_count});
  m.validate();
  return m;
}

}  // namespace spikeforge
