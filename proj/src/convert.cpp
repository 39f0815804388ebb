#include "spikeforge/convert.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "spikeforge/snn.hpp"

namespace spikeforge {

const char* neuron_kind_name(NeuronKind k) {
  return k == NeuronKind::kBitSerial ? "bit_serial" : "baseline";
}

Tensor shift_bn_bias(const Tensor& beta, const Tensor& gamma, const Tensor& mu,
                     const Tensor& sigma, int timesteps) {
  if (timesteps < 1) throw std::invalid_argument("timesteps must be >= 1");
  const int64_t c = beta.dim(0);
  if (gamma.dim(0) != c || mu.dim(0) != c || sigma.dim(0) != c)
    throw std::invalid_argument("shift_bn_bias parameter shapes disagree");
  Tensor out({c});
  const double t = timesteps;
  for (int64_t i = 0; i < c; ++i) {
    const double s = sigma.at(i);
    if (!(s > 0.0)) throw std::invalid_argument("shift_bn_bias requires positive sigma");
    out.at(i) = float(double(beta.at(i)) / t +
                      (1.0 - 1.0 / t) * double(gamma.at(i)) * double(mu.at(i)) / s);
  }
  return out;
}

SnnModel convert(const AnnModel& ann, int timesteps, NeuronKind neuron) {
  ann.validate();
  if (timesteps < 1 || timesteps > 24)
    throw std::invalid_argument("timesteps must be in [1, 24], got " + std::to_string(timesteps));
  SnnModel snn;
  snn.blocks = ann.blocks;
  snn.head.weights = ann.head.weights;
  snn.head.bias = ann.head.bias;
  snn.timesteps = timesteps;
  snn.neuron = neuron;
  snn.source_q_steps = ann.q_steps;
  snn.input_shape = ann.input_shape;
  snn.class_count = ann.class_count;
  snn.theta.reserve(ann.blocks.size());
  for (size_t l = 0; l < ann.blocks.size(); ++l) {
    snn.theta.push_back(ann.blocks[l].activation.lambda);
    // The first block integrates the analog input in one pass, so its bias is
    // never split across steps. Baseline rate coding keeps the original bias
    // everywhere.
    if (neuron == NeuronKind::kBitSerial && l > 0) {
      const ConvBnBlock& src = ann.blocks[l];
      snn.blocks[l].beta = shift_bn_bias(src.beta, src.gamma, src.mu, src.sigma, timesteps);
    }
  }
  return snn;
}

namespace {

double condition_deviation(const ConvBnBlock& ann_block, const ConvBnBlock& snn_block,
                           const std::vector<Tensor>& planes) {
  const int t_steps = int(planes.size());
  Tensor acc(planes[0].shape());
  Tensor lhs;
  for (int t = 1; t <= t_steps; ++t) {
    const float k = std::ldexp(1.0f, t - 1);
    Tensor scaled(planes[size_t(t - 1)].shape());
    for (int64_t i = 0; i < scaled.numel(); ++i) {
      scaled.at(i) = k * planes[size_t(t - 1)].at(i);
      acc.at(i) += scaled.at(i);
    }
    Tensor cur = ops::batchnorm(ops::conv2d(scaled, snn_block.weights, snn_block.stride,
                                            snn_block.padding),
                                snn_block.mu, snn_block.sigma, snn_block.gamma, snn_block.beta);
    if (t == 1) {
      lhs = std::move(cur);
    } else {
      for (int64_t i = 0; i < lhs.numel(); ++i) lhs.at(i) += cur.at(i);
    }
  }
  Tensor rhs = ops::batchnorm(ops::conv2d(acc, ann_block.weights, ann_block.stride,
                                          ann_block.padding),
                              ann_block.mu, ann_block.sigma, ann_block.gamma, ann_block.beta);
  return max_abs_diff(lhs, rhs);
}

}  // namespace

double check_step_additivity(const ConvBnBlock& ann_block, const ConvBnBlock& snn_block,
                         const Shape& in_shape, int timesteps, int trials, uint64_t seed) {
  if (in_shape.size() != 3) throw std::invalid_argument("in_shape must be [C, H, W]");
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<Tensor> planes;
    for (int t = 0; t < timesteps; ++t) {
      Tensor p({1, in_shape[0], in_shape[1], in_shape[2]});
      for (int64_t i = 0; i < p.numel(); ++i) p.at(i) = rng.uniform() < 0.5 ? 1.0f : 0.0f;
      planes.push_back(std::move(p));
    }
    worst = std::max(worst, condition_deviation(ann_block, snn_block, planes));
  }
  return worst;
}

double check_step_additivity_exhaustive(const ConvBnBlock& ann_block, const ConvBnBlock& snn_block,
                                    const Shape& in_shape, int timesteps) {
  const int64_t per_plane = in_shape[0] * in_shape[1] * in_shape[2];
  const int64_t bits = per_plane * timesteps;
  if (bits > 20)
    throw std::invalid_argument("exhaustive check limited to 20 total spike bits, got " +
                                std::to_string(bits));
  double worst = 0.0;
  for (int64_t pattern = 0; pattern < (int64_t(1) << bits); ++pattern) {
    std::vector<Tensor> planes;
    for (int t = 0; t < timesteps; ++t) {
      Tensor p({1, in_shape[0], in_shape[1], in_shape[2]});
      for (int64_t i = 0; i < per_plane; ++i)
        p.at(i) = float((pattern >> (t * per_plane + i)) & 1);
      planes.push_back(std::move(p));
    }
    worst = std::max(worst, condition_deviation(ann_block, snn_block, planes));
  }
  return worst;
}

LosslessReport verify_lossless(const AnnModel& ann, const SnnModel& snn, const Tensor& x) {
  if (snn.blocks.size() != ann.blocks.size())
    throw std::invalid_argument("source and converted models have different block counts");
  if (snn.neuron != NeuronKind::kBitSerial)
    throw std::invalid_argument("verify_lossless applies to the bit-serial neuron");

  // The equivalence target always quantizes with ceiling Q - 1.
  AnnModel ref = ann;
  for (ConvBnBlock& b : ref.blocks) b.activation.clip_hi = b.activation.q_steps - 1;

  AnnTrace trace;
  ann_forward(ref, x, &trace);

  RunOptions opt;
  opt.scheduler = Scheduler::kLayerByLayer;
  RunResult run = run_snn(snn, x, opt);

  LosslessReport report;
  const bool exact = snn.exact_mode();
  const int t_steps = snn.timesteps;
  for (size_t l = 0; l < snn.blocks.size(); ++l) {
    const Tensor& a = trace.act[l];
    const float lambda = ref.blocks[l].activation.lambda;
    Tensor phi = rate_from_train(run.trains[l], snn.theta[l], NeuronKind::kBitSerial);
    double dev = max_abs_diff(a, phi);
    report.per_block_rate_deviation.push_back(dev);
    report.max_rate_deviation = std::max(report.max_rate_deviation, dev);
    if (exact) {
      for (int64_t i = 0; i < a.numel(); ++i) {
        const int n_ann = grid_index_of_activation(a.at(i), lambda, ref.q_steps);
        int n_snn = 0;
        for (int t = 0; t < t_steps; ++t)
          n_snn |= (run.trains[l][size_t(t)].at(i) != 0.0f ? 1 : 0) << (t_steps - 1 - t);
        int diff = n_ann ^ n_snn;
        while (diff) {
          report.bit_mismatches += diff & 1;
          diff >>= 1;
        }
      }
    }
  }
  report.max_logit_deviation = max_abs_diff(trace.logits, run.logits);
  return report;
}

namespace {

float snap_to_grid(float v, int bits) {
  const double scale = std::ldexp(1.0, bits);
  return float(std::nearbyint(double(v) * scale) / scale);
}

void snap_tensor(Tensor& t, int bits) {
  for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = snap_to_grid(t.at(i), bits);
}

}  // namespace

AnnModel quantize_for_exact_conversion(const AnnModel& ann, const ExactQuantizeSpec& spec) {
  AnnModel m = ann;
  for (ConvBnBlock& b : m.blocks) {
    snap_tensor(b.weights, spec.weight_bits);
    snap_tensor(b.mu, spec.param_bits);
    snap_tensor(b.beta, spec.param_bits);
    // sigma becomes a power of two; the scale change folds into gamma before
    // gamma itself snaps, so the trained gamma / sigma ratio survives.
    for (int64_t i = 0; i < b.sigma.numel(); ++i) {
      const double s = b.sigma.at(i);
      if (!(s > 0.0)) throw std::invalid_argument("sigma must be positive before snapping");
      const double sq = std::ldexp(1.0, int(std::lround(std::log2(s))));
      b.gamma.at(i) = float(double(b.gamma.at(i)) * sq / s);
      b.sigma.at(i) = float(sq);
    }
    for (int64_t i = 0; i < b.gamma.numel(); ++i) {
      const float g = b.gamma.at(i);
      float gq = snap_to_grid(g, spec.gamma_bits);
      // keep a vanishing channel scale at the smallest grid step, not zero
      if (gq == 0.0f) gq = std::copysign(float(std::ldexp(1.0, -spec.gamma_bits)), g);
      b.gamma.at(i) = gq;
    }
    const double lscale = std::ldexp(1.0, spec.lambda_bits);
    double lq = std::nearbyint(double(b.activation.lambda) * lscale);
    if (lq < 1.0) lq = 1.0;
    b.activation.lambda = float(lq / lscale);
  }
  snap_tensor(m.head.weights, spec.weight_bits);
  snap_tensor(m.head.bias, spec.param_bits);
  m.validate();
  return m;
}

}  // namespace spikeforge
