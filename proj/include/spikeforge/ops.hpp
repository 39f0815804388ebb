// Neural network primitives. Every kernel uses a fixed loop nest and a double
// accumulator, then rounds once to float32, so outputs are reproducible bit for
// bit and two algebraically equal evaluation orders agree whenever the operands
// are exactly representable.
#pragma once

#include "spikeforge/tensor.hpp"

namespace spikeforge::ops {

// input [N, Cin, H, W], weights [Cout, Cin, kh, kw], zero padding
Tensor conv2d(const Tensor& input, const Tensor& weights, int stride = 1, int padding = 0);

// accumulates into grads that are present (either pointer may be null)
void conv2d_backward(const Tensor& input, const Tensor& weights, int stride, int padding,
                     const Tensor& grad_out, Tensor* grad_input, Tensor* grad_weights);

// per-channel affine normalization: out = gamma * (x - mu) / (sigma + eps) + beta.
// Stored sigmas in this codebase already carry the training-time stabilizer,
// so inference and conversion call this with eps = 0.
Tensor batchnorm(const Tensor& x, const Tensor& mu, const Tensor& sigma, const Tensor& gamma,
                 const Tensor& beta, float eps = 0.0f);

void batchnorm_backward(const Tensor& x, const Tensor& mu, const Tensor& sigma,
                        const Tensor& gamma, float eps, const Tensor& grad_out, Tensor* grad_x,
                        Tensor* grad_gamma, Tensor* grad_beta);

// training-mode normalization over batch statistics; batch_sigma = sqrt(var) + eps
struct BatchNormTrainResult {
  Tensor y;
  Tensor batch_mu;
  Tensor batch_sigma;
};
BatchNormTrainResult batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                     float eps);

void batchnorm_train_backward(const Tensor& x, const Tensor& gamma, const Tensor& batch_mu,
                              const Tensor& batch_sigma, float eps, const Tensor& grad_out,
                              Tensor* grad_x, Tensor* grad_gamma, Tensor* grad_beta);

// x [N, F], w [O, F], optional bias [O]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias);

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& grad_out, Tensor* grad_x,
                     Tensor* grad_w, Tensor* grad_bias);

// non-overlapping window x window mean pooling; spatial dims must divide evenly
Tensor avgpool2d(const Tensor& x, int window);

void avgpool2d_backward(const Shape& input_shape, int window, const Tensor& grad_out,
                        Tensor* grad_x);

// step function with H(0) = 0
Tensor heaviside(const Tensor& x);

}  // namespace spikeforge::ops
