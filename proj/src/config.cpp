#include "spikeforge/config.hpp"

#include <ctime>
#include <fstream>
#include <set>
#include <stdexcept>

#include "spikeforge/qcfs.hpp"

namespace spikeforge {

namespace {

std::vector<int> to_int_vec(const std::vector<int64_t>& v) {
  return std::vector<int>(v.begin(), v.end());
}

}  // namespace

RunConfig RunConfig::from_toml(const TomlDoc& doc) {
  // a typoed key would otherwise silently fall back to its default
  static const std::set<std::string> known = {
      "train.lr",        "train.momentum",        "train.weight_decay",
      "train.epochs",    "train.batch",           "train.seed",
      "reg.coeff",       "model.channels",        "model.pool_after",
      "model.q_steps",   "model.full_range_clip", "model.exact_snap",
      "model.blocks",    "data.synthetic",        "data.seed",
      "data.count",      "data.classes",          "data.images",
      "data.labels"};
  for (const auto& [key, value] : doc.entries())
    if (!known.count(key)) throw std::runtime_error("unknown config key: " + key);

  RunConfig c;
  c.train.lr = doc.get_float("train.lr", c.train.lr);
  c.train.momentum = doc.get_float("train.momentum", c.train.momentum);
  c.train.weight_decay = doc.get_float("train.weight_decay", c.train.weight_decay);
  c.train.epochs = int(doc.get_int("train.epochs", c.train.epochs));
  c.train.batch = int(doc.get_int("train.batch", c.train.batch));
  c.train.seed = uint64_t(doc.get_int("train.seed", int64_t(c.train.seed)));

  c.reg.coeff = doc.get_float("reg.coeff", c.reg.coeff);

  c.model.channels = to_int_vec(doc.get_int_array("model.channels", {8, 16}));
  c.model.pool_after = to_int_vec(doc.get_int_array("model.pool_after", {}));
  c.model.q_steps = int(doc.get_int("model.q_steps", c.model.q_steps));
  c.model.full_range_clip = doc.get_bool("model.full_range_clip", c.model.full_range_clip);
  c.model.exact_snap = doc.get_bool("model.exact_snap", c.model.exact_snap);
  if (doc.has("model.blocks") &&
      doc.get_int("model.blocks", 0) != int64_t(c.model.channels.size()))
    throw std::runtime_error("model.blocks disagrees with model.channels length");

  c.data.synthetic = doc.get_bool("data.synthetic", c.data.synthetic);
  c.data.seed = uint64_t(doc.get_int("data.seed", int64_t(c.data.seed)));
  c.data.count = int(doc.get_int("data.count", c.data.count));
  c.data.classes = int(doc.get_int("data.classes", c.data.classes));
  c.data.images = doc.get_string("data.images", "");
  c.data.labels = doc.get_string("data.labels", "");

  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  return from_toml(TomlDoc::parse_file(path));
}

void RunConfig::validate() const {
  if (!(train.lr > 0.0)) throw std::runtime_error("train.lr must be positive");
  if (train.momentum < 0.0 || train.momentum >= 1.0)
    throw std::runtime_error("train.momentum must lie in [0, 1)");
  if (train.weight_decay < 0.0) throw std::runtime_error("train.weight_decay must be >= 0");
  if (train.epochs < 1) throw std::runtime_error("train.epochs must be >= 1");
  if (train.batch < 1) throw std::runtime_error("train.batch must be >= 1");
  if (reg.coeff < 0.0) throw std::runtime_error("reg.coeff must be >= 0");
  if (model.channels.empty()) throw std::runtime_error("model.channels must not be empty");
  for (int c : model.channels)
    if (c < 1 || c > 512) throw std::runtime_error("model.channels entries must lie in [1, 512]");
  if (!model.pool_after.empty() && model.pool_after.size() != model.channels.size())
    throw std::runtime_error("model.pool_after must match model.channels length");
  for (int p : model.pool_after)
    if (p != 0 && p != 2 && p != 4)
      throw std::runtime_error("model.pool_after entries must be 0, 2, or 4");
  log2_steps(model.q_steps);  // validates power of two
  if (data.synthetic) {
    if (data.count < 2) throw std::runtime_error("data.count must be >= 2");
    if (data.classes < 2 || data.classes > 16)
      throw std::runtime_error("data.classes must lie in [2, 16]");
  } else if (data.images.empty() || data.labels.empty()) {
    throw std::runtime_error("data.images and data.labels are required unless data.synthetic");
  }
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["train"] = {{"lr", train.lr},         {"momentum", train.momentum},
                {"weight_decay", train.weight_decay}, {"epochs", train.epochs},
                {"batch", train.batch},   {"seed", train.seed}};
  j["reg"] = {{"coeff", reg.coeff}};
  j["model"] = {{"channels", model.channels},
                {"pool_after", model.pool_after},
                {"q_steps", model.q_steps},
                {"full_range_clip", model.full_range_clip},
                {"exact_snap", model.exact_snap}};
  j["data"] = {{"synthetic", data.synthetic}, {"seed", data.seed},
               {"count", data.count},         {"classes", data.classes},
               {"images", data.images},       {"labels", data.labels}};
  return j;
}

nlohmann::json make_manifest(const std::string& command, const nlohmann::json& config_snapshot,
                             uint64_t seed, const std::vector<std::string>& outputs) {
  nlohmann::json m;
  m["command"] = command;
  m["config"] = config_snapshot;
  m["seed"] = seed;
  m["tool"] = kToolVersion;
  char stamp[32];
  std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  m["timestamp"] = stamp;
  m["outputs"] = outputs;
  return m;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace spikeforge
