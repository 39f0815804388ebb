// Spiking network simulation.
//
// Two neuron models share the engine. The bit-serial neuron accumulates all T
// per-step currents first, adds a half step of the finest threshold, then
// walks thresholds theta/2, theta/4, ..., theta/2^T emitting one spike plane
// per step with reset by subtraction; the emitted train is the T-bit code of
// the block activation, most significant plane first. The baseline neuron is
// the classic integrate-and-fire unit: potential plus current crosses theta,
// spike, subtract theta.
//
// Consuming layers weight an incoming plane by 2^(t-1) at local step t (a left
// shift), walking the producer's train least-significant plane first with base
// amplitude theta_prev / 2^T, so the accumulated drive reconstructs the
// producer's activation value exactly.
#pragma once

#include <string>
#include <vector>

#include "spikeforge/convert.hpp"

namespace spikeforge {

using SpikeTrain = std::vector<Tensor>;  // length T, most significant plane first

enum class Scheduler {
  kLayerByLayer,  // finish all T steps of a layer before its successor starts
  kStepByStep,    // advance every layer one step at a time (baseline only)
};

const char* scheduler_name(Scheduler s);

struct CostLedger {
  int64_t live_tensors = 0;
  int64_t peak_live_tensors = 0;
  int64_t latency_units = 0;

  void alloc(int64_t n = 1) {
    live_tensors += n;
    if (live_tensors > peak_live_tensors) peak_live_tensors = live_tensors;
  }
  void release(int64_t n = 1) { live_tensors -= n; }
};

// Bit-serial emission: returns T spike planes for drive h (the accumulated
// current); `residue` receives the final potential. Spikes are exactly the
// T-bit expansion of clip(floor(h * 2^T / theta + 1/2), 0, 2^T - 1).
struct BitSerialResult {
  SpikeTrain planes;
  Tensor residue;
};
BitSerialResult fire_bit_serial(const Tensor& drive, float theta, int timesteps);

// Classic IF dynamics over a per-step current sequence, u(0) = u0.
// s(t) = H(u(t-1) + z(t) - theta) with H(0) = 0, reset by subtraction.
struct BaselineResult {
  SpikeTrain planes;
  Tensor u_final;
  Tensor u_initial;
};
BaselineResult fire_baseline(const std::vector<Tensor>& z_seq, float theta, const Tensor& u0);

// One per-step current of a consuming block: normalization(conv(plane * gain))
// with gain = 2^(t-1) * base_amplitude, t counted from 1. The block's beta is
// used as stored, so pass a bias-shifted block for bit-serial operation.
Tensor step_current(const ConvBnBlock& block, const Tensor& plane, int t, float base_amplitude);

// First block of a bit-serial network: conv + normalization once on the analog
// input, then bit-serial emission against theta[0].
BitSerialResult encode_input_block(const SnnModel& snn, const Tensor& x);

struct RunOptions {
  Scheduler scheduler = Scheduler::kLayerByLayer;
  float u0_fraction = 0.5f;  // baseline initial potential as a fraction of theta
  bool keep_traces = false;  // retain rate maps, accumulated currents, potentials
};

struct BlockTrace {
  Tensor phi;           // rate reconstruction of the block output
  Tensor sum_current;   // accumulated per-step currents
  Tensor u_initial;     // baseline only
  Tensor u_final;
};

struct RunResult {
  Tensor logits;
  std::vector<SpikeTrain> trains;               // per block
  std::vector<std::vector<double>> input_density;  // per layer (blocks then head) per step
  CostLedger ledger;
  std::vector<BlockTrace> traces;               // filled when keep_traces is set
};

RunResult run_snn(const SnnModel& snn, const Tensor& x, const RunOptions& options = {});

// rate reconstruction: bit-serial sums s(t) * theta / 2^t, baseline s(t) * theta / T
Tensor rate_from_train(const SpikeTrain& train, float theta, NeuronKind kind);

double plane_density(const Tensor& plane);  // fraction of nonzero entries

// bit-packed spike train files, one per layer
void write_spike_train(const std::string& path, const SpikeTrain& train, int layer_index);
SpikeTrain read_spike_train(const std::string& path);

}  // namespace spikeforge
