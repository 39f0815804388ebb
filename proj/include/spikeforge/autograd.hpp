// Reverse-mode differentiation on a flat tape.
//
// Every operation appends one node holding its forward value and a closure
// that routes the node's accumulated gradient to its inputs. backward() seeds
// the loss with 1 and sweeps the tape once in reverse. Leaves wrap parameter
// tensors owned by the caller; their gradients land in Tensor::grad so an
// optimizer can consume them after the sweep.
#pragma once

#include <functional>
#include <vector>

#include "spikeforge/ops.hpp"
#include "spikeforge/qcfs.hpp"
#include "spikeforge/tensor.hpp"

namespace spikeforge {

struct Var {
  int id = -1;
  bool tracked() const { return id >= 0; }
};

class Tape {
 public:
  // Tracked parameter; after backward() the accumulated gradient is added to
  // param->grad (allocated on demand). The tensor must outlive the tape.
  Var leaf(Tensor* param);
  // Untracked input such as a batch of images.
  Var constant(Tensor value);

  const Tensor& value(Var v) const;
  // Gradient accumulated at v during the last backward sweep (zeros if none).
  Tensor gradient(Var v) const;

  Var conv2d(Var x, Var w, int stride, int padding);
  // Normalizes with batch statistics; optionally exposes them for running
  // average updates. batch_sigma = sqrt(var) + eps.
  Var batchnorm_train(Var x, Var gamma, Var beta, float eps, Tensor* out_mu = nullptr,
                      Tensor* out_sigma = nullptr);
  // Normalizes with fixed statistics; mu and sigma are not differentiated.
  Var batchnorm_affine(Var x, const Tensor& mu, const Tensor& sigma, Var gamma, Var beta,
                       float eps);
  // Quantized clipped activation. lambda is a one-element tensor variable.
  Var qcfs(Var z, Var lambda, int q_steps, int clip_hi);
  Var avgpool2d(Var x, int window);
  Var flatten(Var x);
  Var linear(Var x, Var w, Var bias);
  // Mean cross entropy over rows of logits against integer labels.
  Var cross_entropy(Var logits, std::vector<int> labels);
  // Spike count penalty: coeff times the total number of ones across the
  // emitted codes of activation a. The true count is returned as the value;
  // the backward pass uses the surrogate coeff * T * 1{0 < a < lambda}.
  // lambda enters only through its current value.
  Var bit_l1(Var a, float lambda_value, int q_steps, float coeff);
  // value(a) + scale * value(b); both inputs must be scalars or same shape.
  Var add_scaled(Var a, Var b, float scale = 1.0f);

  // Seeds d(loss)/d(loss) = 1, sweeps the tape, then adds leaf gradients into
  // the wrapped tensors' grad buffers. loss must be a scalar.
  void backward(Var loss);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation during backward
    std::function<void(Tape&, const Tensor&)> back;  // null for leaves/constants
    Tensor* leaf = nullptr;
  };

  Var push(Tensor value, std::function<void(Tape&, const Tensor&)> back);
  void accumulate(Var v, const Tensor& g);

  std::vector<Node> nodes_;
};

}  // namespace spikeforge
