// Convolutional source network: a chain of conv + batchnorm + quantized
// activation blocks with optional average pooling between them, closed by a
// linear classifier head.
#pragma once

#include <vector>

#include "spikeforge/ops.hpp"
#include "spikeforge/qcfs.hpp"
#include "spikeforge/rng.hpp"
#include "spikeforge/tensor.hpp"

namespace spikeforge {

struct ConvBnBlock {
  Tensor weights;  // [Cout, Cin, k, k]
  Tensor mu;       // [Cout] normalization mean
  Tensor sigma;    // [Cout] normalization scale, stabilizer already included
  Tensor gamma;    // [Cout]
  Tensor beta;     // [Cout]
  int stride = 1;
  int padding = 1;
  QcfsActivation activation;
  int pool_after = 0;  // avgpool window applied to this block's output, 0 = none

  int64_t out_channels() const { return weights.dim(0); }
  int64_t in_channels() const { return weights.dim(1); }
  int64_t kernel() const { return weights.dim(2); }
};

struct LinearHead {
  Tensor weights;  // [classes, features]
  Tensor bias;     // [classes]
};

struct AnnModel {
  std::vector<ConvBnBlock> blocks;
  LinearHead head;
  int q_steps = 16;
  Shape input_shape;  // [C, H, W]
  int class_count = 0;

  // throws when shapes do not chain or parameters are inconsistent
  void validate() const;
};

// conv + normalization for one block; sigma is used as stored (eps = 0)
Tensor block_preactivation(const ConvBnBlock& block, const Tensor& x);

enum class ActivationMode {
  kQuantized,  // the trained staircase activation
  kRelu,       // full-precision rectifier reference
};

struct AnnTrace {
  std::vector<Tensor> pre;  // per block: normalized pre-activation z
  std::vector<Tensor> act;  // per block: activation output a, before pooling
  std::vector<Tensor> fed;  // per block: tensor fed forward, after pooling
  Tensor logits;
};

// batched forward; input [N, C, H, W]
Tensor ann_forward(const AnnModel& model, const Tensor& x, AnnTrace* trace = nullptr,
                   ActivationMode mode = ActivationMode::kQuantized);

// argmax over the class axis
std::vector<int> predict_classes(const Tensor& logits);

double accuracy(const AnnModel& model, const Tensor& images, const std::vector<int>& labels);

// Model builder used by the trainer and the test rigs: 3x3 conv blocks with
// the given channel progression, He-style random init, lambda = 1.
AnnModel make_ann_model(const Shape& input_shape, const std::vector<int>& channels,
                        const std::vector<int>& pool_after, int class_count, int q_steps,
                        bool full_range_clip, Rng& rng);

}  // namespace spikeforge
