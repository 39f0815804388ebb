// Post-conversion analysis: the three error components of rate coding
// (quantization, clipping, deviation), spiking-activity statistics, operation
// counting, and energy estimation from a per-operation cost table.
#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "spikeforge/snn.hpp"

namespace spikeforge {

struct LayerErrors {
  double quantization_expected = 0.0;  // theta / (4T)
  double quantization_err = 0.0;       // mean |a - phi| over interior values
  double clipping_err = 0.0;           // mean max(z - theta, 0)
  double deviation_err = 0.0;  // baseline: mean |(u(T) - u(0)) / T|; bit-serial: mean |phi - a|
};

struct ErrorDecomposition {
  std::vector<LayerErrors> baseline;
  std::vector<LayerErrors> modified;
};

// Runs both converted networks on the inputs and measures each block against
// the quantized source activations (ceiling Q - 1, the conversion target).
// Interior means pre-activations strictly inside (0, theta).
ErrorDecomposition decompose_errors(const AnnModel& ann, const SnnModel& baseline_snn,
                                    const SnnModel& modified_snn, const Tensor& inputs);

// max over elements of |phi - (mean current - (u(T) - u(0)) / T)| for one
// baseline block trace: the potential bookkeeping identity of rate coding.
double rate_identity_residual(const BlockTrace& trace, int t_steps);

struct ActivityReport {
  std::vector<double> per_layer;  // ones / entries across a block's train
  double overall = 0.0;
};
ActivityReport spiking_activity(const std::vector<SpikeTrain>& trains);

struct LayerOps {
  std::string kind;  // analog_conv | spiking_conv | head
  int64_t macs = 0;  // analog first layer only
  double acs = 0.0;  // density-weighted accumulates
  int64_t input_shifts = 0;
  int64_t threshold_shifts = 0;
  int64_t comparisons = 0;
  int64_t resets = 0;
};

struct OpCounts {
  std::vector<LayerOps> layers;
  int timesteps = 0;
};

// input_density comes from a run: one row per layer (blocks then head), one
// entry per step; the first block's row is ignored (its input is analog).
// Shift counts apply to the bit-serial neuron only.
OpCounts count_ops(const SnnModel& snn, const std::vector<std::vector<double>>& input_density);

// accumulates per produced entry over shifts per produced entry: s * k^2 * c_in
double ac_shift_ratio(double density, int64_t kernel, int64_t c_in);

struct EnergyTable {
  double mult32 = 3.1, add32 = 0.1, shift32 = 0.13, compare32 = 0.08;
  double mult8 = 0.2, add8 = 0.03, shift8 = 0.024, compare8 = 0.03;

  // {"32": {"mult":..,"add":..,"shift":..,"compare":..}, "8": {...}}
  static EnergyTable from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;  // all entries positive

  double mult(int width) const;
  double add(int width) const;
  double shift(int width) const;
  double compare(int width) const;
};

struct EnergyReport {
  int width = 32;
  double mac_pj = 0.0;
  double ac_pj = 0.0;
  double shift_pj = 0.0;
  double compare_pj = 0.0;
  double reset_pj = 0.0;  // resets cost one addition each
  double total_pj = 0.0;
  double shift_share = 0.0;
};
EnergyReport estimate_energy(const OpCounts& ops, const EnergyTable& table, int width);

nlohmann::json to_json(const LayerErrors& e);
nlohmann::json to_json(const ErrorDecomposition& d);
nlohmann::json to_json(const ActivityReport& a);
nlohmann::json to_json(const OpCounts& o);
nlohmann::json to_json(const EnergyReport& r);

}  // namespace spikeforge
