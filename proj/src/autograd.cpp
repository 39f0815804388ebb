#include "spikeforge/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace spikeforge {

Var Tape::push(Tensor value, std::function<void(Tape&, const Tensor&)> back) {
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{int(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor* param) {
  if (!param) throw std::invalid_argument("leaf requires a tensor");
  Var v = push(*param, nullptr);
  nodes_[size_t(v.id)].leaf = param;
  return v;
}

Var Tape::constant(Tensor value) { return push(std::move(value), nullptr); }

const Tensor& Tape::value(Var v) const {
  if (v.id < 0 || size_t(v.id) >= nodes_.size()) throw std::out_of_range("bad tape variable");
  return nodes_[size_t(v.id)].value;
}

Tensor Tape::gradient(Var v) const {
  const Node& n = nodes_.at(size_t(v.id));
  return n.grad.numel() > 0 ? n.grad : Tensor(n.value.shape());
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (!v.tracked()) return;
  Node& n = nodes_[size_t(v.id)];
  if (!n.value.same_shape(g)) throw std::invalid_argument("gradient shape mismatch");
  if (n.grad.numel() == 0) n.grad = Tensor(n.value.shape());
  for (int64_t i = 0; i < g.numel(); ++i) n.grad.at(i) += g.at(i);
}

Var Tape::conv2d(Var x, Var w, int stride, int padding) {
  Tensor y = ops::conv2d(value(x), value(w), stride, padding);
  return push(std::move(y), [x, w, stride, padding](Tape& t, const Tensor& go) {
    Tensor gx(t.value(x).shape()), gw(t.value(w).shape());
    ops::conv2d_backward(t.value(x), t.value(w), stride, padding, go,
                         x.tracked() ? &gx : nullptr, w.tracked() ? &gw : nullptr);
    t.accumulate(x, gx);
    t.accumulate(w, gw);
  });
}

Var Tape::batchnorm_train(Var x, Var gamma, Var beta, float eps, Tensor* out_mu,
                          Tensor* out_sigma) {
  ops::BatchNormTrainResult r = ops::batchnorm_train(value(x), value(gamma), value(beta), eps);
  if (out_mu) *out_mu = r.batch_mu;
  if (out_sigma) *out_sigma = r.batch_sigma;
  Tensor mu = std::move(r.batch_mu);
  Tensor sigma = std::move(r.batch_sigma);
  return push(std::move(r.y), [x, gamma, beta, eps, mu, sigma](Tape& t, const Tensor& go) {
    Tensor gx(t.value(x).shape()), ggamma(t.value(gamma).shape()), gbeta(t.value(beta).shape());
    ops::batchnorm_train_backward(t.value(x), t.value(gamma), mu, sigma, eps, go, &gx, &ggamma,
                                  &gbeta);
    t.accumulate(x, gx);
    t.accumulate(gamma, ggamma);
    t.accumulate(beta, gbeta);
  });
}

Var Tape::batchnorm_affine(Var x, const Tensor& mu, const Tensor& sigma, Var gamma, Var beta,
                           float eps) {
  Tensor y = ops::batchnorm(value(x), mu, sigma, value(gamma), value(beta), eps);
  return push(std::move(y), [x, gamma, beta, eps, mu, sigma](Tape& t, const Tensor& go) {
    Tensor gx(t.value(x).shape()), ggamma(t.value(gamma).shape()), gbeta(t.value(beta).shape());
    ops::batchnorm_backward(t.value(x), mu, sigma, t.value(gamma), eps, go, &gx, &ggamma,
                            &gbeta);
    t.accumulate(x, gx);
    t.accumulate(gamma, ggamma);
    t.accumulate(beta, gbeta);
  });
}

Var Tape::qcfs(Var z, Var lambda, int q_steps, int clip_hi) {
  if (value(lambda).numel() != 1)
    throw std::invalid_argument("qcfs lambda must be a one-element tensor");
  QcfsActivation act{value(lambda).at(0), q_steps, clip_hi};
  Tensor a = qcfs_forward(value(z), act);
  Tensor a_copy = a;
  return push(std::move(a), [z, lambda, act, a_copy](Tape& t, const Tensor& go) {
    Tensor dz(t.value(z).shape());
    float dlambda = 0.0f;
    qcfs_backward(t.value(z), a_copy, act, go, z.tracked() ? &dz : nullptr,
                  lambda.tracked() ? &dlambda : nullptr);
    t.accumulate(z, dz);
    if (lambda.tracked()) t.accumulate(lambda, Tensor({1}, {dlambda}));
  });
}

Var Tape::avgpool2d(Var x, int window) {
  Tensor y = ops::avgpool2d(value(x), window);
  const Shape in_shape = value(x).shape();
  return push(std::move(y), [x, window, in_shape](Tape& t, const Tensor& go) {
    Tensor gx(in_shape);
    ops::avgpool2d_backward(in_shape, window, go, &gx);
    t.accumulate(x, gx);
  });
}

Var Tape::flatten(Var x) {
  const Shape in_shape = value(x).shape();
  if (in_shape.empty()) throw std::invalid_argument("flatten needs at least one axis");
  Tensor y = value(x).reshaped({in_shape[0], value(x).numel() / in_shape[0]});
  return push(std::move(y), [x, in_shape](Tape& t, const Tensor& go) {
    t.accumulate(x, go.reshaped(in_shape));
  });
}

Var Tape::linear(Var x, Var w, Var bias) {
  const Tensor* bp = bias.tracked() ? &value(bias) : nullptr;
  Tensor y = ops::linear(value(x), value(w), bp);
  return push(std::move(y), [x, w, bias](Tape& t, const Tensor& go) {
    Tensor gx(t.value(x).shape()), gw(t.value(w).shape()), gb(t.value(bias).shape());
    ops::linear_backward(t.value(x), t.value(w), go, x.tracked() ? &gx : nullptr,
                         w.tracked() ? &gw : nullptr, bias.tracked() ? &gb : nullptr);
    t.accumulate(x, gx);
    t.accumulate(w, gw);
    t.accumulate(bias, gb);
  });
}

Var Tape::cross_entropy(Var logits, std::vector<int> labels) {
  const Tensor& l = value(logits);
  if (l.ndim() != 2) throw std::invalid_argument("cross_entropy expects [N, classes] logits");
  const int64_t n = l.dim(0), c = l.dim(1);
  if (int64_t(labels.size()) != n)
    throw std::invalid_argument("cross_entropy label count mismatch");
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (labels[size_t(i)] < 0 || labels[size_t(i)] >= c)
      throw std::invalid_argument("label out of range");
    double m = l.at(i * c);
    for (int64_t j = 1; j < c; ++j) m = std::max(m, double(l.at(i * c + j)));
    double sum = 0.0;
    for (int64_t j = 0; j < c; ++j) sum += std::exp(double(l.at(i * c + j)) - m);
    total += m + std::log(sum) - double(l.at(i * c + labels[size_t(i)]));
  }
  Tensor loss = Tensor::scalar(float(total / double(n)));
  return push(std::move(loss), [logits, labels](Tape& t, const Tensor& go) {
    const Tensor& lv = t.value(logits);
    const int64_t rows = lv.dim(0), cols = lv.dim(1);
    const double g = double(go.at(0)) / double(rows);
    Tensor gl(lv.shape());
    for (int64_t i = 0; i < rows; ++i) {
      double m = lv.at(i * cols);
      for (int64_t j = 1; j < cols; ++j) m = std::max(m, double(lv.at(i * cols + j)));
      double sum = 0.0;
      for (int64_t j = 0; j < cols; ++j) sum += std::exp(double(lv.at(i * cols + j)) - m);
      for (int64_t j = 0; j < cols; ++j) {
        const double p = std::exp(double(lv.at(i * cols + j)) - m) / sum;
        gl.at(i * cols + j) = float(g * (p - (j == labels[size_t(i)] ? 1.0 : 0.0)));
      }
    }
    t.accumulate(logits, gl);
  });
}

Var Tape::bit_l1(Var a, float lambda_value, int q_steps, float coeff) {
  const Tensor& av = value(a);
  const int t_steps = log2_steps(q_steps);
  int64_t ones = 0;
  for (int64_t i = 0; i < av.numel(); ++i) {
    int n = grid_index_of_activation(av.at(i), lambda_value, q_steps);
    while (n) {
      ones += n & 1;
      n >>= 1;
    }
  }
  Tensor penalty = Tensor::scalar(coeff * float(ones));
  return push(std::move(penalty),
              [a, lambda_value, t_steps, coeff](Tape& t, const Tensor& go) {
                const Tensor& av2 = t.value(a);
                Tensor ga(av2.shape());
                const float g = go.at(0) * coeff * float(t_steps);
                for (int64_t i = 0; i < av2.numel(); ++i)
                  ga.at(i) = (av2.at(i) > 0.0f && av2.at(i) < lambda_value) ? g : 0.0f;
                t.accumulate(a, ga);
              });
}

Var Tape::add_scaled(Var a, Var b, float scale) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("add_scaled shape mismatch");
  Tensor y(av.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y.at(i) = av.at(i) + scale * bv.at(i);
  return push(std::move(y), [a, b, scale](Tape& t, const Tensor& go) {
    t.accumulate(a, go);
    Tensor gb(go.shape());
    for (int64_t i = 0; i < go.numel(); ++i) gb.at(i) = scale * go.at(i);
    t.accumulate(b, gb);
  });
}

void Tape::backward(Var loss) {
  if (!loss.tracked() || size_t(loss.id) >= nodes_.size())
    throw std::invalid_argument("backward needs a variable from this tape");
  if (nodes_[size_t(loss.id)].value.numel() != 1)
    throw std::invalid_argument("backward needs a scalar loss");
  for (Node& n : nodes_) n.grad = Tensor();
  nodes_[size_t(loss.id)].grad = Tensor::full(nodes_[size_t(loss.id)].value.shape(), 1.0f);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[size_t(i)];
    if (n.grad.numel() == 0 || !n.back) continue;
    n.back(*this, n.grad);
  }
  for (Node& n : nodes_) {
    if (!n.leaf || n.grad.numel() == 0) continue;
    n.leaf->ensure_grad();
    std::vector<float>& g = n.leaf->grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) g[size_t(i)] += n.grad.at(i);
  }
}

}  // namespace spikeforge
