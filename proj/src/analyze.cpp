#include "spikeforge/analyze.hpp"

#include <cmath>
#include <stdexcept>

namespace spikeforge {

ErrorDecomposition decompose_errors(const AnnModel& ann, const SnnModel& baseline_snn,
                                    const SnnModel& modified_snn, const Tensor& inputs) {
  if (baseline_snn.neuron != NeuronKind::kBaseline ||
      modified_snn.neuron != NeuronKind::kBitSerial)
    throw std::invalid_argument("decompose_errors wants one baseline and one bit-serial model");
  if (baseline_snn.timesteps != modified_snn.timesteps)
    throw std::invalid_argument("the two converted models must share T");
  if (baseline_snn.blocks.size() != ann.blocks.size() ||
      modified_snn.blocks.size() != ann.blocks.size())
    throw std::invalid_argument("block counts disagree");

  AnnModel ref = ann;
  for (ConvBnBlock& b : ref.blocks) b.activation.clip_hi = b.activation.q_steps - 1;
  AnnTrace trace;
  ann_forward(ref, inputs, &trace);

  RunOptions opt;
  opt.keep_traces = true;
  RunResult base_run = run_snn(baseline_snn, inputs, opt);
  RunResult mod_run = run_snn(modified_snn, inputs, opt);

  const int t_steps = baseline_snn.timesteps;
  ErrorDecomposition out;
  for (size_t l = 0; l < ann.blocks.size(); ++l) {
    const Tensor& z = trace.pre[l];
    const Tensor& a = trace.act[l];
    for (int pass = 0; pass < 2; ++pass) {
      const RunResult& run = pass == 0 ? base_run : mod_run;
      const float theta = (pass == 0 ? baseline_snn : modified_snn).theta[l];
      const BlockTrace& tr = run.traces[l];
      LayerErrors e;
      e.quantization_expected = double(theta) / (4.0 * t_steps);
      double quant = 0.0, clip = 0.0, dev = 0.0;
      int64_t interior = 0;
      for (int64_t i = 0; i < z.numel(); ++i) {
        const double zi = z.at(i);
        clip += std::max(0.0, zi - double(theta));
        if (zi > 0.0 && zi < double(theta)) {
          quant += std::abs(double(a.at(i)) - double(tr.phi.at(i)));
          ++interior;
        }
        if (pass == 0)
          dev += std::abs(double(tr.u_final.at(i)) - double(tr.u_initial.at(i))) / t_steps;
        else
          dev += std::abs(double(tr.phi.at(i)) - double(a.at(i)));
      }
      e.quantization_err = interior > 0 ? quant / double(interior) : 0.0;
      e.clipping_err = clip / double(z.numel());
      e.deviation_err = dev / double(z.numel());
      (pass == 0 ? out.baseline : out.modified).push_back(e);
    }
  }
  return out;
}

double rate_identity_residual(const BlockTrace& trace, int t_steps) {
  double worst = 0.0;
  for (int64_t i = 0; i < trace.phi.numel(); ++i) {
    const double mean_current = double(trace.sum_current.at(i)) / t_steps;
    const double drift = (double(trace.u_final.at(i)) - double(trace.u_initial.at(i))) / t_steps;
    worst = std::max(worst, std::abs(double(trace.phi.at(i)) - (mean_current - drift)));
  }
  return worst;
}

ActivityReport spiking_activity(const std::vector<SpikeTrain>& trains) {
  ActivityReport report;
  int64_t ones = 0, total = 0;
  for (const SpikeTrain& train : trains) {
    int64_t layer_ones = 0, layer_total = 0;
    for (const Tensor& plane : train) {
      for (int64_t i = 0; i < plane.numel(); ++i) {
        const float v = plane.at(i);
        if (v != 0.0f && v != 1.0f)
          throw std::invalid_argument("spiking_activity expects binary planes");
        layer_ones += v != 0.0f;
      }
      layer_total += plane.numel();
    }
    report.per_layer.push_back(layer_total > 0 ? double(layer_ones) / double(layer_total) : 0.0);
    ones += layer_ones;
    total += layer_total;
  }
  report.overall = total > 0 ? double(ones) / double(total) : 0.0;
  return report;
}

namespace {

struct PlaneDims {
  int64_t c = 0, h = 0, w = 0;
  int64_t count() const { return c * h * w; }
};

PlaneDims conv_out_dims(const ConvBnBlock& b, const PlaneDims& in) {
  PlaneDims out;
  out.c = b.out_channels();
  out.h = (in.h + 2 * b.padding - b.kernel()) / b.stride + 1;
  out.w = (in.w + 2 * b.padding - b.kernel()) / b.stride + 1;
  return out;
}

}  // namespace

OpCounts count_ops(const SnnModel& snn, const std::vector<std::vector<double>>& input_density) {
  if (input_density.size() != snn.blocks.size() + 1)
    throw std::invalid_argument("count_ops wants one density row per block plus the head");
  for (const std::vector<double>& row : input_density)
    for (double s : row)
      if (s < 0.0 || s > 1.0) throw std::invalid_argument("density out of [0, 1]");
  const int t_steps = snn.timesteps;
  const bool shifts = snn.neuron == NeuronKind::kBitSerial;
  OpCounts out;
  out.timesteps = t_steps;

  PlaneDims fed{snn.input_shape[0], snn.input_shape[1], snn.input_shape[2]};
  for (size_t l = 0; l < snn.blocks.size(); ++l) {
    const ConvBnBlock& b = snn.blocks[l];
    const PlaneDims produced = conv_out_dims(b, fed);
    LayerOps ops;
    const int64_t work = b.kernel() * b.kernel() * b.in_channels() * produced.count();
    if (l == 0) {
      ops.kind = "analog_conv";
      ops.macs = work;  // one full-precision pass over the analog input
    } else {
      ops.kind = "spiking_conv";
      const std::vector<double>& row = input_density[l];
      if (int(row.size()) != t_steps)
        throw std::invalid_argument("hidden layers want one density entry per step");
      for (double s : row) ops.acs += s * double(work);
      if (shifts) ops.input_shifts = produced.count() * t_steps;
    }
    if (shifts) ops.threshold_shifts = t_steps;
    ops.comparisons = produced.count() * t_steps;
    ops.resets = produced.count() * t_steps;
    out.layers.push_back(ops);
    fed = produced;
    if (b.pool_after > 0) {
      fed.h /= b.pool_after;
      fed.w /= b.pool_after;
    }
  }

  LayerOps head;
  head.kind = "head";
  const std::vector<double>& row = input_density.back();
  if (int(row.size()) != t_steps)
    throw std::invalid_argument("the head wants one density entry per step");
  const int64_t features = fed.count();
  for (double s : row) head.acs += s * double(features) * double(snn.class_count);
  if (shifts) head.input_shifts = int64_t(snn.class_count) * t_steps;
  out.layers.push_back(head);
  return out;
}

double ac_shift_ratio(double density, int64_t kernel, int64_t c_in) {
  if (density < 0.0 || density > 1.0) throw std::invalid_argument("density out of [0, 1]");
  return density * double(kernel * kernel) * double(c_in);
}

EnergyTable EnergyTable::from_json(const nlohmann::json& j) {
  EnergyTable t;
  const nlohmann::json& w32 = j.at("32");
  const nlohmann::json& w8 = j.at("8");
  t.mult32 = w32.at("mult").get<double>();
  t.add32 = w32.at("add").get<double>();
  t.shift32 = w32.at("shift").get<double>();
  t.compare32 = w32.at("compare").get<double>();
  t.mult8 = w8.at("mult").get<double>();
  t.add8 = w8.at("add").get<double>();
  t.shift8 = w8.at("shift").get<double>();
  t.compare8 = w8.at("compare").get<double>();
  t.validate();
  return t;
}

nlohmann::json EnergyTable::to_json() const {
  return {{"32", {{"mult", mult32}, {"add", add32}, {"shift", shift32}, {"compare", compare32}}},
          {"8", {{"mult", mult8}, {"add", add8}, {"shift", shift8}, {"compare", compare8}}}};
}

void EnergyTable::validate() const {
  for (double v : {mult32, add32, shift32, compare32, mult8, add8, shift8, compare8})
    if (!(v > 0.0)) throw std::invalid_argument("energy table entries must be positive");
}

namespace {
[[noreturn]] void bad_width(int width) {
  throw std::invalid_argument("unsupported width " + std::to_string(width) +
                              "; the table covers 32 and 8");
}
}  // namespace

double EnergyTable::mult(int width) const {
  if (width == 32) return mult32;
  if (width == 8) return mult8;
  bad_width(width);
}
double EnergyTable::add(int width) const {
  if (width == 32) return add32;
  if (width == 8) return add8;
  bad_width(width);
}
double EnergyTable::shift(int width) const {
  if (width == 32) return shift32;
  if (width == 8) return shift8;
  bad_width(width);
}
double EnergyTable::compare(int width) const {
  if (width == 32) return compare32;
  if (width == 8) return compare8;
  bad_width(width);
}

EnergyReport estimate_energy(const OpCounts& ops, const EnergyTable& table, int width) {
  table.validate();
  EnergyReport r;
  r.width = width;
  for (const LayerOps& layer : ops.layers) {
    r.mac_pj += double(layer.macs) * (table.mult(width) + table.add(width));
    r.ac_pj += layer.acs * table.add(width);
    r.shift_pj += double(layer.input_shifts + layer.threshold_shifts) * table.shift(width);
    r.compare_pj += double(layer.comparisons) * table.compare(width);
    r.reset_pj += double(layer.resets) * table.add(width);
  }
  r.total_pj = r.mac_pj + r.ac_pj + r.shift_pj + r.compare_pj + r.reset_pj;
  r.shift_share = r.total_pj > 0.0 ? r.shift_pj / r.total_pj : 0.0;
  return r;
}

nlohmann::json to_json(const LayerErrors& e) {
  return {{"quantization_expected", e.quantization_expected},
          {"quantization_err", e.quantization_err},
          {"clipping_err", e.clipping_err},
          {"deviation_err", e.deviation_err}};
}

nlohmann::json to_json(const ErrorDecomposition& d) {
  nlohmann::json j;
  j["baseline"] = nlohmann::json::array();
  j["modified"] = nlohmann::json::array();
  for (const LayerErrors& e : d.baseline) j["baseline"].push_back(to_json(e));
  for (const LayerErrors& e : d.modified) j["modified"].push_back(to_json(e));
  return j;
}

nlohmann::json to_json(const ActivityReport& a) {
  return {{"per_layer", a.per_layer}, {"overall", a.overall}};
}

nlohmann::json to_json(const OpCounts& o) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerOps& l : o.layers)
    layers.push_back({{"kind", l.kind},
                      {"macs", l.macs},
                      {"acs", l.acs},
                      {"input_shifts", l.input_shifts},
                      {"threshold_shifts", l.threshold_shifts},
                      {"comparisons", l.comparisons},
                      {"resets", l.resets}});
  return {{"timesteps", o.timesteps}, {"layers", layers}};
}

nlohmann::json to_json(const EnergyReport& r) {
  return {{"width", r.width},         {"mac_pj", r.mac_pj},     {"ac_pj", r.ac_pj},
          {"shift_pj", r.shift_pj},   {"compare_pj", r.compare_pj}, {"reset_pj", r.reset_pj},
          {"total_pj", r.total_pj},   {"shift_share", r.shift_share}};
}

}  // namespace spikeforge
