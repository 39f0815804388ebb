// Quantization-aware training: cross entropy plus an optional spike-count
// penalty, SGD with momentum, cosine learning-rate decay, batch-statistics
// normalization with running averages stored for inference.
#pragma once

#include <vector>

#include "spikeforge/config.hpp"
#include "spikeforge/dataset.hpp"
#include "spikeforge/model.hpp"

namespace spikeforge {

struct TrainHistory {
  std::vector<double> loss;       // mean total loss per epoch
  std::vector<double> ce_loss;    // mean cross-entropy component per epoch
  std::vector<double> accuracy;   // training-set accuracy per epoch
  std::vector<double> mean_bits;  // mean spike bits per sample per epoch
};

// Penalty value coeff * sum over activations of ones in their emitted codes.
// Activations must sit on their QCFS grids. The classifier head never enters.
double sparsity_loss(const std::vector<Tensor>& activations,
                     const std::vector<QcfsActivation>& acts, float coeff);

// Surrogate derivative of the penalty at one activation value:
// coeff * T * 1{0 < a < lambda}, T = log2(q_steps).
float sparsity_grad(float a, const QcfsActivation& act, float coeff);

// Mean number of ones per sample across all block activation codes.
double mean_bit_activity(const AnnModel& model, const Tensor& images);

// Trains in place. Fixed seed gives a bit-reproducible run; a non-finite loss
// aborts with a diagnostic. Weight decay touches conv and head weights only.
TrainHistory train(AnnModel& model, const Dataset& data, const TrainSettings& tcfg,
                   const RegSettings& rcfg);

// Fresh model matching the config, parameters drawn from the given seed.
AnnModel build_model(const ModelSettings& ms, const Shape& input_shape, int class_count,
                     uint64_t seed);

}  // namespace spikeforge
