// Command-line pipeline: train -> convert -> verify -> infer -> analyze.
// Exit codes: 0 success, 2 usage or config error, 3 numeric failure,
// 4 verification failure.
#include <cstring>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "spikeforge/analyze.hpp"
#include "spikeforge/checkpoint.hpp"
#include "spikeforge/config.hpp"
#include "spikeforge/convert.hpp"
#include "spikeforge/dataset.hpp"
#include "spikeforge/model.hpp"
#include "spikeforge/snn.hpp"
#include "spikeforge/trainer.hpp"

namespace sf = spikeforge;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kNumeric = 3;
constexpr int kVerification = 4;

int classify_error(const std::exception& e) {
  const std::string m = e.what();
  if (m.find("diverged") != std::string::npos || m.find("finite") != std::string::npos)
    return kNumeric;
  return kUsage;
}

void write_manifest_for(const std::string& out_path, const std::string& command,
                        const nlohmann::json& config_snapshot, uint64_t seed,
                        const std::vector<std::string>& outputs) {
  nlohmann::json manifest = sf::make_manifest(command, config_snapshot, seed, outputs);
  sf::write_json(out_path + ".manifest.json", manifest);
}

sf::Dataset dataset_from_config(const sf::DataSettings& ds) {
  if (ds.synthetic) return sf::gen_synthetic(ds.seed, ds.count, ds.classes);
  return sf::load_idx(ds.images, ds.labels);
}

// --input accepts IDX image files or raw tensor files; dispatch on magic.
sf::Tensor load_input_tensor(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("cannot open " + path);
  char magic[4] = {};
  probe.read(magic, 4);
  probe.close();
  if (std::memcmp(magic, "SFTN", 4) == 0) return sf::load_tensor(path);
  return sf::load_idx_images(path);
}

int cmd_train(const std::string& config_path, const std::string& out_path) {
  sf::RunConfig cfg = sf::RunConfig::from_file(config_path);
  sf::Dataset data = dataset_from_config(cfg.data);
  const sf::Shape input_shape = {data.images.dim(1), data.images.dim(2), data.images.dim(3)};
  sf::AnnModel model = sf::build_model(cfg.model, input_shape, data.class_count, cfg.train.seed);
  sf::TrainHistory history = sf::train(model, data, cfg.train, cfg.reg);
  if (cfg.model.exact_snap) model = sf::quantize_for_exact_conversion(model);
  sf::save_ann(out_path, model);
  write_manifest_for(out_path, "train", cfg.to_json(), cfg.train.seed, {out_path});
  const double final_acc = sf::accuracy(model, data.images, data.labels);
  std::cout << "trained " << cfg.model.channels.size() << " blocks for " << cfg.train.epochs
            << " epochs\n"
            << "final loss " << history.loss.back() << ", train accuracy " << final_acc
            << (cfg.model.exact_snap ? " (after grid snap)" : "") << "\n"
            << "saved " << out_path << "\n";
  return kOk;
}

int cmd_convert(const std::string& model_path, int timesteps, const std::string& neuron_name,
                bool allow_degraded, const std::string& out_path) {
  sf::AnnModel ann = sf::load_ann(model_path);
  sf::NeuronKind neuron;
  if (neuron_name == "bit_serial")
    neuron = sf::NeuronKind::kBitSerial;
  else if (neuron_name == "baseline")
    neuron = sf::NeuronKind::kBaseline;
  else
    throw std::runtime_error("unknown neuron kind " + neuron_name);
  const bool exact = (1 << timesteps) == ann.q_steps;
  if (neuron == sf::NeuronKind::kBitSerial && !exact && !allow_degraded) {
    std::cerr << "error: timesteps " << timesteps << " does not satisfy 2^T = Q for Q = "
              << ann.q_steps << "; pass --allow-degraded to study reduced timesteps\n";
    return kUsage;
  }
  sf::SnnModel snn = sf::convert(ann, timesteps, neuron);
  sf::save_snn(out_path, snn);

  nlohmann::json snapshot;
  snapshot["model"] = model_path;
  snapshot["timesteps"] = timesteps;
  snapshot["neuron"] = neuron_name;
  snapshot["exact_mode"] = snn.exact_mode();
  write_manifest_for(out_path, "convert", snapshot, 0, {out_path});

  if (neuron == sf::NeuronKind::kBitSerial) {
    if (snn.exact_mode())
      std::cout << "exact mode: T = " << timesteps << " matches Q = " << ann.q_steps << "\n";
    else
      std::cout << "degraded mode: T = " << timesteps << " below log2(Q) for Q = "
                << ann.q_steps << "; expect quantization error\n";
  }
  std::cout << "saved " << out_path << "\n";
  return kOk;
}

int cmd_verify(const std::string& ann_path, const std::string& snn_path, int samples,
               double tol, uint64_t seed, const std::string& report_path) {
  sf::AnnModel ann = sf::load_ann(ann_path);
  sf::SnnModel snn = sf::load_snn(snn_path);
  sf::Rng rng(seed);
  sf::Tensor x({samples, ann.input_shape[0], ann.input_shape[1], ann.input_shape[2]});
  for (int64_t i = 0; i < x.numel(); ++i) x.at(i) = float(rng.uniform());
  sf::LosslessReport report = sf::verify_lossless(ann, snn, x);

  std::cout << "per-block max rate deviation:\n";
  for (size_t l = 0; l < report.per_block_rate_deviation.size(); ++l)
    std::cout << "  block " << l << ": " << report.per_block_rate_deviation[l] << "\n";
  std::cout << "spike bits differing from activation codes: " << report.bit_mismatches
            << (snn.exact_mode() ? "" : " (not checked below log2 Q)") << "\n"
            << "max logit deviation: " << report.max_logit_deviation << "\n";

  const bool pass = report.max_rate_deviation <= tol && report.max_logit_deviation <= tol &&
                    (!snn.exact_mode() || report.bit_mismatches == 0);
  if (!report_path.empty()) {
    nlohmann::json j;
    j["samples"] = samples;
    j["seed"] = seed;
    j["tol"] = tol;
    j["per_block_rate_deviation"] = report.per_block_rate_deviation;
    j["bit_mismatches"] = report.bit_mismatches;
    j["max_rate_deviation"] = report.max_rate_deviation;
    j["max_logit_deviation"] = report.max_logit_deviation;
    j["pass"] = pass;
    sf::write_json(report_path, j);
  }
  if (!pass) {
    std::cout << "verification FAILED: deviation above " << tol << "\n";
    return kVerification;
  }
  std::cout << "verification passed within " << tol << "\n";
  return kOk;
}

int cmd_infer(const std::string& model_path, const std::string& input_path,
              const std::string& scheduler_name, const std::string& dump_prefix,
              const std::string& out_path) {
  const sf::Tensor x = load_input_tensor(input_path);
  const std::string kind = sf::checkpoint_kind(model_path);
  std::vector<int> classes;
  nlohmann::json extra;

  if (kind == "ann") {
    sf::AnnModel ann = sf::load_ann(model_path);
    sf::Tensor logits = sf::ann_forward(ann, x);
    classes = sf::predict_classes(logits);
  } else {
    sf::SnnModel snn = sf::load_snn(model_path);
    sf::RunOptions opt;
    opt.scheduler = scheduler_name == "step_by_step" ? sf::Scheduler::kStepByStep
                                                     : sf::Scheduler::kLayerByLayer;
    sf::RunResult run = sf::run_snn(snn, x, opt);
    classes = sf::predict_classes(run.logits);
    extra["peak_live_tensors"] = run.ledger.peak_live_tensors;
    extra["latency_units"] = run.ledger.latency_units;
    extra["scheduler"] = sf::scheduler_name(opt.scheduler);
    if (!dump_prefix.empty()) {
      for (size_t l = 0; l < run.trains.size(); ++l)
        sf::write_spike_train(dump_prefix + "_layer" + std::to_string(l) + ".spk",
                              run.trains[l], int(l));
      std::cout << "spike trains written to " << dump_prefix << "_layer*.spk\n";
    }
  }

  std::cout << "predictions:";
  for (int c : classes) std::cout << " " << c;
  std::cout << "\n";

  if (!out_path.empty()) {
    nlohmann::json j;
    j["model"] = model_path;
    j["kind"] = kind;
    j["predictions"] = classes;
    if (!extra.empty()) j["run"] = extra;
    sf::write_json(out_path, j);
    write_manifest_for(out_path, "infer", {{"model", model_path}, {"input", input_path}}, 0,
                       {out_path});
  }
  return kOk;
}

int cmd_analyze(const std::string& model_path, int timesteps, const sf::DataSettings& ds,
                int samples, const std::string& table_path, int width, bool sweep_t,
                const std::string& report_path) {
  sf::AnnModel ann = sf::load_ann(model_path);
  sf::Dataset data = dataset_from_config(ds);
  if (samples > 0 && samples < data.size()) {
    data.images = sf::slice_images(data.images, 0, samples);
    data.labels.resize(size_t(samples));
  }
  const int t_steps = timesteps > 0 ? timesteps : sf::log2_steps(ann.q_steps);

  sf::EnergyTable table;
  bool default_table = true;
  if (!table_path.empty()) {
    std::ifstream in(table_path);
    if (!in) throw std::runtime_error("cannot open " + table_path);
    table = sf::EnergyTable::from_json(nlohmann::json::parse(in));
    default_table = false;
  }

  sf::SnnModel modified = sf::convert(ann, t_steps, sf::NeuronKind::kBitSerial);
  sf::SnnModel baseline = sf::convert(ann, t_steps, sf::NeuronKind::kBaseline);
  sf::ErrorDecomposition errors = sf::decompose_errors(ann, baseline, modified, data.images);

  sf::RunOptions opt;
  sf::RunResult run = sf::run_snn(modified, data.images, opt);
  sf::ActivityReport activity = sf::spiking_activity(run.trains);
  sf::OpCounts ops = sf::count_ops(modified, run.input_density);
  sf::EnergyReport energy = sf::estimate_energy(ops, table, width);

  nlohmann::json j;
  j["schema"] = 1;
  j["model"] = model_path;
  j["timesteps"] = t_steps;
  j["errors"] = sf::to_json(errors);
  j["activity"] = sf::to_json(activity);
  j["ops"] = sf::to_json(ops);
  j["energy"] = sf::to_json(energy);
  j["energy_table"] = {{"source", default_table ? "default_table_values" : table_path},
                       {"values", table.to_json()}};

  if (sweep_t) {
    nlohmann::json sweep = nlohmann::json::array();
    const double ann_acc = sf::accuracy(ann, data.images, data.labels);
    for (int t = 1; t <= sf::log2_steps(ann.q_steps); ++t) {
      sf::SnnModel snn_t = sf::convert(ann, t, sf::NeuronKind::kBitSerial);
      sf::RunResult run_t = sf::run_snn(snn_t, data.images, opt);
      std::vector<int> pred = sf::predict_classes(run_t.logits);
      int64_t hits = 0;
      for (size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
      sweep.push_back({{"timesteps", t}, {"accuracy", double(hits) / double(pred.size())}});
    }
    j["accuracy_vs_t"] = {{"ann_accuracy", ann_acc}, {"snn", sweep}};
  }

  sf::write_json(report_path, j);
  write_manifest_for(report_path, "analyze",
                     {{"model", model_path}, {"timesteps", t_steps}, {"width", width}},
                     ds.seed, {report_path});
  std::cout << "total energy " << energy.total_pj << " pJ (" << width << "-bit), shift share "
            << energy.shift_share << "\n"
            << "overall spiking density " << activity.overall << "\n"
            << "report written to " << report_path << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantized ANN training, lossless SNN conversion, and analysis"};
  app.require_subcommand(1);

  std::string config_path, out_path = "model.ckpt";
  CLI::App* train = app.add_subcommand("train", "train a quantized source network");
  train->add_option("--config", config_path, "TOML run configuration")->required();
  train->add_option("--out", out_path, "checkpoint path");

  std::string conv_model, conv_out = "snn.ckpt", neuron = "bit_serial";
  int conv_t = 4;
  bool allow_degraded = false;
  CLI::App* convert = app.add_subcommand("convert", "convert a checkpoint to a spiking network");
  convert->add_option("--model", conv_model, "source checkpoint")->required();
  convert->add_option("--timesteps", conv_t, "simulation steps T")->required();
  convert->add_option("--neuron", neuron, "bit_serial or baseline");
  convert->add_flag("--allow-degraded", allow_degraded, "permit T below log2(Q)");
  convert->add_option("--out", conv_out, "converted checkpoint path");

  std::string ver_ann, ver_snn, ver_report;
  int ver_samples = 8;
  double ver_tol = 1e-4;
  uint64_t ver_seed = 2024;
  CLI::App* verify = app.add_subcommand("verify", "check a conversion against its source");
  verify->add_option("--ann", ver_ann, "source checkpoint")->required();
  verify->add_option("--snn", ver_snn, "converted checkpoint")->required();
  verify->add_option("--samples", ver_samples, "random input count");
  verify->add_option("--tol", ver_tol, "deviation tolerance");
  verify->add_option("--seed", ver_seed, "input generator seed");
  verify->add_option("--report", ver_report, "optional JSON report path");

  std::string inf_model, inf_input, inf_sched = "layer_by_layer", inf_dump, inf_out;
  CLI::App* infer = app.add_subcommand("infer", "run a checkpoint on inputs");
  infer->add_option("--model", inf_model, "ann or snn checkpoint")->required();
  infer->add_option("--input", inf_input, "IDX images or tensor file")->required();
  infer->add_option("--scheduler", inf_sched, "layer_by_layer or step_by_step")
      ->check(CLI::IsMember({"layer_by_layer", "step_by_step"}));
  infer->add_option("--dump-spikes", inf_dump, "spike train file prefix, one file per layer");
  infer->add_option("--out", inf_out, "optional JSON result path");

  std::string ana_model, ana_table, ana_report = "report.json", ana_images, ana_labels;
  int ana_t = 0, ana_samples = 64, ana_width = 32, ana_count = 64, ana_classes = 2;
  uint64_t ana_seed = 7;
  bool ana_sweep = false;
  CLI::App* analyze = app.add_subcommand("analyze", "error, activity, and energy report");
  analyze->add_option("--model", ana_model, "source checkpoint")->required();
  analyze->add_option("--timesteps", ana_t, "simulation steps (default log2 Q)");
  analyze->add_option("--images", ana_images, "IDX images (default: synthetic data)");
  analyze->add_option("--labels", ana_labels, "IDX labels");
  analyze->add_option("--data-seed", ana_seed, "synthetic data seed");
  analyze->add_option("--count", ana_count, "synthetic sample count");
  analyze->add_option("--classes", ana_classes, "synthetic class count");
  analyze->add_option("--samples", ana_samples, "cap on analyzed samples");
  analyze->add_option("--energy-table", ana_table, "JSON cost table overriding the defaults");
  analyze->add_option("--width", ana_width, "operand width in bits")
      ->check(CLI::IsMember({32, 8}));
  analyze->add_flag("--sweep-t", ana_sweep, "include accuracy for every T up to log2 Q");
  analyze->add_option("--report", ana_report, "report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, out_path);
    if (convert->parsed()) return cmd_convert(conv_model, conv_t, neuron, allow_degraded,
                                              conv_out);
    if (verify->parsed())
      return cmd_verify(ver_ann, ver_snn, ver_samples, ver_tol, ver_seed, ver_report);
    if (infer->parsed()) return cmd_infer(inf_model, inf_input, inf_sched, inf_dump, inf_out);
    if (analyze->parsed()) {
      sf::DataSettings ds;
      ds.synthetic = ana_images.empty();
      ds.seed = ana_seed;
      ds.count = ana_count;
      ds.classes = ana_classes;
      ds.images = ana_images;
      ds.labels = ana_labels;
      return cmd_analyze(ana_model, ana_t, ds, ana_samples, ana_table, ana_width, ana_sweep,
                         ana_report);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return classify_error(e);
  }
  return kUsage;
}
