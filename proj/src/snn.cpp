#include "spikeforge/snn.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <utility>

#include "json.hpp"
#include "spikeforge/qcfs.hpp"

namespace spikeforge {

const char* scheduler_name(Scheduler s) {
  return s == Scheduler::kLayerByLayer ? "layer_by_layer" : "step_by_step";
}

BitSerialResult fire_bit_serial(const Tensor& drive, float theta, int timesteps) {
  if (!(theta > 0.0f)) throw std::invalid_argument("fire_bit_serial requires positive theta");
  if (timesteps < 1 || timesteps > 24)
    throw std::invalid_argument("fire_bit_serial timesteps must be in [1, 24]");
  BitSerialResult res;
  res.planes.assign(size_t(timesteps), Tensor(drive.shape()));
  res.residue = Tensor(drive.shape());
  uint8_t bits[24];
  for (int64_t i = 0; i < drive.numel(); ++i) {
    float residue = 0.0f;
    bit_serial_expand(drive.at(i), theta, timesteps, bits, &residue);
    for (int t = 0; t < timesteps; ++t) res.planes[size_t(t)].at(i) = float(bits[t]);
    res.residue.at(i) = residue;
  }
  return res;
}

BaselineResult fire_baseline(const std::vector<Tensor>& z_seq, float theta, const Tensor& u0) {
  if (z_seq.empty()) throw std::invalid_argument("fire_baseline needs at least one step");
  if (!(theta > 0.0f)) throw std::invalid_argument("fire_baseline requires positive theta");
  for (const Tensor& z : z_seq)
    if (!z.same_shape(u0)) throw std::invalid_argument("fire_baseline current/potential mismatch");
  BaselineResult res;
  res.u_initial = u0;
  Tensor u = u0;
  res.planes.reserve(z_seq.size());
  for (const Tensor& z : z_seq) {
    Tensor s(u.shape());
    for (int64_t i = 0; i < u.numel(); ++i) {
      u.at(i) += z.at(i);
      if (u.at(i) > theta) {
        s.at(i) = 1.0f;
        u.at(i) -= theta;
      }
    }
    res.planes.push_back(std::move(s));
  }
  res.u_final = std::move(u);
  return res;
}

Tensor step_current(const ConvBnBlock& block, const Tensor& plane, int t, float base_amplitude) {
  if (t < 1) throw std::invalid_argument("step_current steps count from 1");
  const float gain = std::ldexp(base_amplitude, t - 1);
  Tensor scaled(plane.shape());
  for (int64_t i = 0; i < plane.numel(); ++i) scaled.at(i) = gain * plane.at(i);
  return ops::batchnorm(ops::conv2d(scaled, block.weights, block.stride, block.padding),
                        block.mu, block.sigma, block.gamma, block.beta);
}

BitSerialResult encode_input_block(const SnnModel& snn, const Tensor& x) {
  if (snn.blocks.empty()) throw std::invalid_argument("model has no blocks");
  Tensor z = block_preactivation(snn.blocks[0], x);
  return fire_bit_serial(z, snn.theta[0], snn.timesteps);
}

Tensor rate_from_train(const SpikeTrain& train, float theta, NeuronKind kind) {
  if (train.empty()) throw std::invalid_argument("empty spike train");
  const int t_steps = int(train.size());
  Tensor out(train[0].shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    double acc = 0.0;
    for (int t = 1; t <= t_steps; ++t) {
      const double s = train[size_t(t - 1)].at(i);
      acc += kind == NeuronKind::kBitSerial ? s * std::ldexp(double(theta), -t)
                                            : s * double(theta) / t_steps;
    }
    out.at(i) = float(acc);
  }
  return out;
}

double plane_density(const Tensor& plane) {
  int64_t nonzero = 0;
  for (int64_t i = 0; i < plane.numel(); ++i)
    if (plane.at(i) != 0.0f) ++nonzero;
  return plane.numel() == 0 ? 0.0 : double(nonzero) / double(plane.numel());
}

namespace {

void add_inplace(Tensor& a, const Tensor& b) {
  for (int64_t i = 0; i < a.numel(); ++i) a.at(i) += b.at(i);
}

Tensor flatten_rows(const Tensor& t) {
  return t.reshaped({t.dim(0), t.numel() / t.dim(0)});
}

Tensor scaled_copy(const Tensor& t, float gain) {
  Tensor out(t.shape());
  for (int64_t i = 0; i < t.numel(); ++i) out.at(i) = gain * t.at(i);
  return out;
}

void check_run_inputs(const SnnModel& snn, const Tensor& x) {
  if (snn.blocks.empty() || snn.theta.size() != snn.blocks.size())
    throw std::invalid_argument("malformed converted model");
  if (snn.timesteps < 1) throw std::invalid_argument("model has no timesteps");
  if (x.ndim() != 4) throw std::invalid_argument("input must be [N, C, H, W]");
  for (int d = 0; d < 3; ++d)
    if (x.dim(d + 1) != snn.input_shape[size_t(d)])
      throw std::invalid_argument("input shape does not match model input " +
                                  shape_str(snn.input_shape));
}

// Finishes the classifier head from per-step flattened inputs. The head only
// accumulates potential; it never spikes. `finalize_mean` divides by T before
// the bias (rate decoding), otherwise the bias joins the plain sum.
struct HeadAccumulator {
  const LinearHead& head;
  bool finalize_mean;
  Tensor acc;
  void add(const Tensor& flat_in) {
    Tensor part = ops::linear(flat_in, head.weights, nullptr);
    if (acc.numel() == 0)
      acc = std::move(part);
    else
      add_inplace(acc, part);
  }
  Tensor finish(int t_steps) const {
    Tensor logits = acc;
    const int64_t classes = head.bias.dim(0);
    for (int64_t n = 0; n < logits.dim(0); ++n)
      for (int64_t o = 0; o < classes; ++o) {
        float v = logits.at(n * classes + o);
        if (finalize_mean) v /= float(t_steps);
        logits.at(n * classes + o) = v + head.bias.at(o);
      }
    return logits;
  }
};

RunResult run_bit_serial(const SnnModel& snn, const Tensor& x, const RunOptions& opt) {
  const int t_steps = snn.timesteps;
  const size_t blocks = snn.blocks.size();
  RunResult res;
  res.input_density.resize(blocks + 1);
  if (opt.keep_traces) res.traces.resize(blocks);

  // Block 0 sees the analog input in a single pass.
  res.input_density[0] = {1.0};
  Tensor z = block_preactivation(snn.blocks[0], x);
  res.ledger.alloc(1);
  BitSerialResult fired = fire_bit_serial(z, snn.theta[0], t_steps);
  res.ledger.alloc(t_steps);
  res.ledger.latency_units += t_steps;
  if (opt.keep_traces) {
    BlockTrace& tr = res.traces[0];
    tr.phi = rate_from_train(fired.planes, snn.theta[0], NeuronKind::kBitSerial);
    tr.sum_current = z;
    tr.u_final = fired.residue;
  }
  res.ledger.release(1);  // analog drive consumed
  res.trains.push_back(std::move(fired.planes));

  for (size_t l = 1; l < blocks; ++l) {
    const ConvBnBlock& prev = snn.blocks[l - 1];
    const ConvBnBlock& cur_block = snn.blocks[l];
    const float base = std::ldexp(snn.theta[l - 1], -t_steps);
    Tensor u;
    res.ledger.alloc(1);  // potential
    // Walk the producer's train least significant plane first; local step tau
    // weights it by 2^(tau - 1) * theta_prev / 2^T.
    for (int tau = 1; tau <= t_steps; ++tau) {
      const Tensor& raw = res.trains[l - 1][size_t(t_steps - tau)];
      Tensor plane = prev.pool_after > 0 ? ops::avgpool2d(raw, prev.pool_after) : raw;
      if (prev.pool_after > 0) res.ledger.alloc(1);
      res.input_density[l].push_back(plane_density(plane));
      Tensor current = step_current(cur_block, plane, tau, base);
      res.ledger.alloc(1);
      if (u.numel() == 0)
        u = std::move(current);
      else
        add_inplace(u, current);
      res.ledger.release(1);  // current folded into the potential
      if (prev.pool_after > 0) res.ledger.release(1);
    }
    BitSerialResult out = fire_bit_serial(u, snn.theta[l], t_steps);
    res.ledger.alloc(t_steps);
    res.ledger.latency_units += t_steps;
    if (opt.keep_traces) {
      BlockTrace& tr = res.traces[l];
      tr.phi = rate_from_train(out.planes, snn.theta[l], NeuronKind::kBitSerial);
      tr.sum_current = u;
      tr.u_final = out.residue;
    }
    res.ledger.release(1);              // potential consumed
    res.ledger.release(t_steps);        // producer train no longer needed
    res.trains.push_back(std::move(out.planes));
  }

  const ConvBnBlock& last = snn.blocks.back();
  const float base = std::ldexp(snn.theta.back(), -t_steps);
  HeadAccumulator head{snn.head, false, Tensor()};
  for (int tau = 1; tau <= t_steps; ++tau) {
    const Tensor& raw = res.trains.back()[size_t(t_steps - tau)];
    Tensor plane = last.pool_after > 0 ? ops::avgpool2d(raw, last.pool_after) : raw;
    res.input_density[blocks].push_back(plane_density(plane));
    Tensor scaled = scaled_copy(plane, std::ldexp(base, tau - 1));
    res.ledger.alloc(1);
    head.add(flatten_rows(scaled));
    res.ledger.release(1);
  }
  res.ledger.latency_units += t_steps;
  res.logits = head.finish(t_steps);
  res.ledger.release(t_steps);  // final train consumed
  return res;
}

RunResult run_baseline(const SnnModel& snn, const Tensor& x, const RunOptions& opt) {
  const int t_steps = snn.timesteps;
  const size_t blocks = snn.blocks.size();
  RunResult res;
  res.input_density.resize(blocks + 1);
  if (opt.keep_traces) res.traces.resize(blocks);
  res.input_density[0].assign(size_t(t_steps), 1.0);

  // The analog drive of block 0 is constant across steps; compute it once.
  Tensor z0 = block_preactivation(snn.blocks[0], x);
  res.ledger.alloc(1);

  if (opt.scheduler == Scheduler::kLayerByLayer) {
    for (size_t l = 0; l < blocks; ++l) {
      const float theta = snn.theta[l];
      std::vector<Tensor> z_seq;
      z_seq.reserve(size_t(t_steps));
      for (int t = 1; t <= t_steps; ++t) {
        if (l == 0) {
          z_seq.push_back(z0);
        } else {
          const ConvBnBlock& prev = snn.blocks[l - 1];
          const Tensor& raw = res.trains[l - 1][size_t(t - 1)];
          Tensor plane = prev.pool_after > 0 ? ops::avgpool2d(raw, prev.pool_after) : raw;
          res.input_density[l].push_back(plane_density(plane));
          z_seq.push_back(step_current(snn.blocks[l], plane, 1, snn.theta[l - 1]));
        }
        res.ledger.alloc(1);
      }
      Tensor u0 = Tensor::full(z_seq[0].shape(), opt.u0_fraction * theta);
      res.ledger.alloc(1);
      BaselineResult fired = fire_baseline(z_seq, theta, u0);
      res.ledger.alloc(t_steps);
      res.ledger.latency_units += t_steps;
      if (opt.keep_traces) {
        BlockTrace& tr = res.traces[l];
        tr.phi = rate_from_train(fired.planes, theta, NeuronKind::kBaseline);
        tr.sum_current = Tensor(z_seq[0].shape());
        for (const Tensor& zt : z_seq) add_inplace(tr.sum_current, zt);
        tr.u_initial = std::move(fired.u_initial);
        tr.u_final = std::move(fired.u_final);
      }
      res.ledger.release(t_steps + 1);  // currents and potential consumed
      if (l > 0) res.ledger.release(t_steps);  // producer train no longer needed
      res.trains.push_back(std::move(fired.planes));
    }
    const ConvBnBlock& last = snn.blocks.back();
    HeadAccumulator head{snn.head, true, Tensor()};
    for (int t = 1; t <= t_steps; ++t) {
      const Tensor& raw = res.trains.back()[size_t(t - 1)];
      Tensor plane = last.pool_after > 0 ? ops::avgpool2d(raw, last.pool_after) : raw;
      res.input_density[blocks].push_back(plane_density(plane));
      Tensor scaled = scaled_copy(plane, snn.theta.back());
      res.ledger.alloc(1);
      head.add(flatten_rows(scaled));
      res.ledger.release(1);
    }
    res.ledger.latency_units += t_steps;
    res.logits = head.finish(t_steps);
    res.ledger.release(t_steps);
    res.ledger.release(1);  // z0
    return res;
  }

  // Step-by-step: every layer advances one step per tick, so only one
  // potential per layer plus the plane in flight stays live.
  std::vector<Tensor> potential(blocks);
  res.trains.assign(blocks, SpikeTrain());
  HeadAccumulator head{snn.head, true, Tensor()};
  res.ledger.alloc(int64_t(blocks));  // one potential per layer
  if (opt.keep_traces)
    for (size_t l = 0; l < blocks; ++l) res.traces[l] = BlockTrace{};
  for (int t = 1; t <= t_steps; ++t) {
    Tensor plane;  // spike plane travelling down the stack this tick
    for (size_t l = 0; l < blocks; ++l) {
      const float theta = snn.theta[l];
      Tensor z;
      if (l == 0) {
        z = z0;
      } else {
        const ConvBnBlock& prev = snn.blocks[l - 1];
        Tensor fed = prev.pool_after > 0 ? ops::avgpool2d(plane, prev.pool_after) : plane;
        res.input_density[l].push_back(plane_density(fed));
        z = step_current(snn.blocks[l], fed, 1, snn.theta[l - 1]);
      }
      res.ledger.alloc(1);
      if (potential[l].numel() == 0) {
        potential[l] = Tensor::full(z.shape(), opt.u0_fraction * theta);
        if (opt.keep_traces) {
          res.traces[l].u_initial = potential[l];
          res.traces[l].sum_current = Tensor(z.shape());
        }
      }
      Tensor& u = potential[l];
      Tensor s(u.shape());
      for (int64_t i = 0; i < u.numel(); ++i) {
        u.at(i) += z.at(i);
        if (u.at(i) > theta) {
          s.at(i) = 1.0f;
          u.at(i) -= theta;
        }
      }
      if (opt.keep_traces) add_inplace(res.traces[l].sum_current, z);
      res.ledger.release(1);  // current folded in
      if (l > 0) res.ledger.release(1);  // previous plane consumed
      res.ledger.alloc(1);
      plane = s;
      res.trains[l].push_back(std::move(s));
    }
    const ConvBnBlock& last = snn.blocks.back();
    Tensor fed = last.pool_after > 0 ? ops::avgpool2d(plane, last.pool_after) : plane;
    res.input_density[blocks].push_back(plane_density(fed));
    Tensor scaled = scaled_copy(fed, snn.theta.back());
    head.add(flatten_rows(scaled));
    res.ledger.release(1);  // plane consumed by the head
    res.ledger.latency_units += int64_t(blocks) + 1;  // one unit per layer per step
  }
  res.logits = head.finish(t_steps);
  if (opt.keep_traces)
    for (size_t l = 0; l < blocks; ++l) {
      res.traces[l].phi = rate_from_train(res.trains[l], snn.theta[l], NeuronKind::kBaseline);
      res.traces[l].u_final = potential[l];
    }
  res.ledger.release(int64_t(blocks));
  res.ledger.release(1);  // z0
  return res;
}

}  // namespace

RunResult run_snn(const SnnModel& snn, const Tensor& x, const RunOptions& options) {
  check_run_inputs(snn, x);
  if (snn.neuron == NeuronKind::kBitSerial) {
    if (options.scheduler != Scheduler::kLayerByLayer)
      throw std::invalid_argument(
          "the bit-serial neuron weights incoming planes by place value, so a consumer "
          "cannot start before its producer has finished; use the layer_by_layer scheduler");
    return run_bit_serial(snn, x, options);
  }
  return run_baseline(snn, x, options);
}

namespace {
constexpr char kSpikeMagic[4] = {'S', 'F', 'S', 'P'};
}

void write_spike_train(const std::string& path, const SpikeTrain& train, int layer_index) {
  if (train.empty()) throw std::invalid_argument("cannot write an empty spike train");
  nlohmann::json header;
  header["layer_index"] = layer_index;
  header["timesteps"] = train.size();
  header["shape"] = train[0].shape();
  header["bit_order"] = "lsb_first_within_byte";
  header["plane_order"] = "most_significant_first";
  const std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kSpikeMagic, 4);
  const uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  const uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(htext.data(), std::streamsize(htext.size()));
  const int64_t numel = train[0].numel();
  std::vector<uint8_t> packed(size_t((numel + 7) / 8));
  for (const Tensor& plane : train) {
    if (!plane.same_shape(train[0]))
      throw std::invalid_argument("spike planes disagree on shape");
    std::fill(packed.begin(), packed.end(), uint8_t(0));
    for (int64_t i = 0; i < numel; ++i)
      if (plane.at(i) != 0.0f) packed[size_t(i / 8)] |= uint8_t(1u << (i % 8));
    out.write(reinterpret_cast<const char*>(packed.data()), std::streamsize(packed.size()));
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

SpikeTrain read_spike_train(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kSpikeMagic, 4) != 0)
    throw std::runtime_error(path + " is not a spike train file");
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != 1) throw std::runtime_error("unsupported spike train version");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (hlen > (1u << 24)) throw std::runtime_error(path + " header length is implausible");
  std::string htext(hlen, '\0');
  in.read(htext.data(), std::streamsize(hlen));
  if (!in) throw std::runtime_error(path + " is truncated");
  const nlohmann::json header = nlohmann::json::parse(htext);
  const int t_steps = header.at("timesteps").get<int>();
  Shape shape = header.at("shape").get<Shape>();
  const int64_t numel = shape_numel(shape);
  SpikeTrain train;
  std::vector<uint8_t> packed(size_t((numel + 7) / 8));
  for (int t = 0; t < t_steps; ++t) {
    in.read(reinterpret_cast<char*>(packed.data()), std::streamsize(packed.size()));
    if (!in) throw std::runtime_error(path + " is truncated");
    Tensor plane(shape);
    for (int64_t i = 0; i < numel; ++i)
      plane.at(i) = float((packed[size_t(i / 8)] >> (i % 8)) & 1u);
    train.push_back(std::move(plane));
  }
  return train;
}

}  // namespace spikeforge
