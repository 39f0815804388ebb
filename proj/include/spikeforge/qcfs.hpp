// Quantized clip-floor-shift activation and its bit-level codec.
//
// The activation maps a pre-activation z to a = (lambda/Q) * n with
// n = clip(floor(z * Q / lambda + 1/2), 0, clip_hi). In conversion-exact mode
// (clip_hi = Q - 1) the integer n is produced by bit_serial_expand, the same
// greedy compare-subtract routine the spiking neuron runs, so the quantization
// decision of the source network and the spike emission of the converted
// network agree bit for bit on every float input, boundary values included.
#pragma once

#include <cstdint>
#include <vector>

#include "spikeforge/tensor.hpp"

namespace spikeforge {

struct QcfsActivation {
  float lambda = 1.0f;  // trainable clipping threshold, must stay positive
  int q_steps = 16;     // quantization level count Q, a power of two
  int clip_hi = 15;     // Q - 1 in conversion-exact mode, Q in full-range mode
};

// log2(Q); throws unless Q is a positive power of two
int log2_steps(int q_steps);

// Greedy T-step binary expansion of z against threshold `theta`.
//
// Starting from u = z + theta / 2^(T+1) (a half step of the finest level, the
// round-to-nearest offset), step t emits bit 1 iff u > theta / 2^t strictly and
// then subtracts the threshold. The emitted most-significant-first bits form
// n = clip(floor(z * 2^T / theta + 1/2), 0, 2^T - 1); `residue`, when given,
// receives the final u. All thresholds are exact power-of-two scalings.
int bit_serial_expand(float z, float theta, int t_steps, uint8_t* bits = nullptr,
                      float* residue = nullptr);

// elementwise activation
Tensor qcfs_forward(const Tensor& z, const QcfsActivation& act);

// Straight-through backward. Writes
//   dz_i      = upstream_i * 1{0 < z_i < lambda}
//   dlambda  += sum_i upstream_i * (a_i - z_i * 1{0 < z_i < lambda}) / lambda
// where a = qcfs_forward(z, act).
void qcfs_backward(const Tensor& z, const Tensor& a, const QcfsActivation& act,
                   const Tensor& upstream, Tensor* dz, float* dlambda);

// Recovers the T most-significant-first bits of a / (lambda / Q). The value
// must sit on the activation grid; anything further than 1e-6 * lambda / Q off
// the grid is an error. T = log2(Q).
std::vector<uint8_t> bits_of_activation(float a, float lambda, int q_steps);

// integer grid index n = round(a * Q / lambda), with the same off-grid check
int grid_index_of_activation(float a, float lambda, int q_steps);

}  // namespace spikeforge
