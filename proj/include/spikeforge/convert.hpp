// Conversion of a trained source network into a spiking network.
//
// The converted network reuses every weight and normalization statistic; for
// the bit-serial neuron only the normalization bias changes. Splitting the
// per-step bias as beta_c = beta / T + (1 - 1/T) * gamma * mu / sigma makes the
// T per-step normalized currents sum to the single-shot normalized output, so
// the accumulated drive each neuron sees equals the source block's
// pre-activation. The first block is exempt: it runs once on the analog input,
// so its bias needs no T-way split.
#pragma once

#include <cstdint>
#include <vector>

#include "spikeforge/model.hpp"

namespace spikeforge {

enum class NeuronKind {
  kBitSerial,  // place-value spikes, halving thresholds, runs layer by layer
  kBaseline,   // classic integrate-and-fire rate coding
};

const char* neuron_kind_name(NeuronKind k);

struct SnnModel {
  std::vector<ConvBnBlock> blocks;  // beta holds the per-step bias
  LinearHead head;
  std::vector<float> theta;  // firing threshold per block, equal to source lambda
  int timesteps = 0;
  NeuronKind neuron = NeuronKind::kBitSerial;
  int source_q_steps = 0;
  Shape input_shape;
  int class_count = 0;

  bool exact_mode() const { return (1 << timesteps) == source_q_steps; }
};

// per-channel shifted bias: beta / T + (1 - 1/T) * gamma * mu / sigma
Tensor shift_bn_bias(const Tensor& beta, const Tensor& gamma, const Tensor& mu,
                     const Tensor& sigma, int timesteps);

// Builds the spiking model. Never mutates `ann`. For the bit-serial neuron all
// hidden-block biases are shifted; the baseline neuron keeps them unchanged.
SnnModel convert(const AnnModel& ann, int timesteps,
                 NeuronKind neuron = NeuronKind::kBitSerial);

// Additivity oracle for one converted block: over random binary spike plane
// sets s(1..T), compares sum_t g_snn(2^(t-1) s(t)) against g_ann applied to the
// accumulated input, where g is conv followed by normalization. Returns the
// elementwise max deviation across trials.
double check_step_additivity(const ConvBnBlock& ann_block, const ConvBnBlock& snn_block,
                         const Shape& in_shape, int timesteps, int trials, uint64_t seed);

// enumerates every spike pattern instead of sampling; feasible for tiny blocks
double check_step_additivity_exhaustive(const ConvBnBlock& ann_block, const ConvBnBlock& snn_block,
                                    const Shape& in_shape, int timesteps);

struct LosslessReport {
  int64_t bit_mismatches = 0;    // spike bits differing from activation bits
  double max_rate_deviation = 0.0;   // max |a - sum_t s(t) theta / 2^t|
  double max_logit_deviation = 0.0;
  std::vector<double> per_block_rate_deviation;
};

// Runs the source and converted networks on `x` and compares them block by
// block. Bit equality is only promised in exact mode (2^T = Q); other T values
// report how far the degraded network drifts.
LosslessReport verify_lossless(const AnnModel& ann, const SnnModel& snn, const Tensor& x);

// Snapping grids for exact fixed-point deployment. Weights and normalization
// parameters land on coarse dyadic grids and sigma becomes a power of two, so
// both evaluation paths of the converted network round identically.
struct ExactQuantizeSpec {
  int weight_bits = 6;   // weights snap to multiples of 2^-weight_bits
  int param_bits = 6;    // mu, beta
  int gamma_bits = 4;
  int lambda_bits = 4;
};

// returns a copy of the model with all parameters on the dyadic grids
AnnModel quantize_for_exact_conversion(const AnnModel& ann, const ExactQuantizeSpec& spec = {});

}  // namespace spikeforge
