#include "spikeforge/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "json.hpp"

namespace spikeforge {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'R', 'G'};
constexpr uint32_t kVersion = 1;
constexpr uint64_t kAlign = 64;

uint64_t align_up(uint64_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

// Assigns aligned payload offsets while the header is being built, then
// writes the payload region in the same order.
class PayloadLayout {
 public:
  nlohmann::json ref(const Tensor& t) {
    nlohmann::json j;
    j["shape"] = t.shape();
    j["offset"] = cursor_;
    tensors_.push_back(&t);
    cursor_ = align_up(cursor_ + uint64_t(t.numel()) * sizeof(float));
    return j;
  }

  void write(std::ofstream& out, uint64_t payload_base) const {
    uint64_t pos = payload_base;
    uint64_t expect = 0;
    static const char zeros[kAlign] = {};
    for (const Tensor* t : tensors_) {
      const uint64_t target = payload_base + expect;
      if (target > pos) {
        out.write(zeros, std::streamsize(target - pos));
        pos = target;
      }
      out.write(reinterpret_cast<const char*>(t->vec().data()),
                std::streamsize(t->numel() * sizeof(float)));
      pos += uint64_t(t->numel()) * sizeof(float);
      expect = align_up(expect + uint64_t(t->numel()) * sizeof(float));
    }
  }

 private:
  std::vector<const Tensor*> tensors_;
  uint64_t cursor_ = 0;
};

void write_file(const std::string& path, const nlohmann::json& header,
                const PayloadLayout& layout) {
  const std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  const uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(htext.data(), std::streamsize(htext.size()));
  const uint64_t after_header = 4 + sizeof kVersion + sizeof hlen + hlen;
  const uint64_t payload_base = align_up(after_header);
  static const char zeros[kAlign] = {};
  out.write(zeros, std::streamsize(payload_base - after_header));
  layout.write(out, payload_base);
  if (!out) throw std::runtime_error("failed writing " + path);
}

struct OpenFile {
  std::ifstream in;
  nlohmann::json header;
  uint64_t payload_base = 0;
};

OpenFile open_checkpoint(const std::string& path) {
  OpenFile f;
  f.in.open(path, std::ios::binary);
  if (!f.in) throw std::runtime_error("cannot open " + path);
  char magic[4];
  f.in.read(magic, 4);
  if (!f.in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error(path + " is not a model file");
  uint32_t version = 0;
  f.in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kVersion)
    throw std::runtime_error(path + " has unsupported version " + std::to_string(version));
  uint64_t hlen = 0;
  f.in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (hlen > (1u << 24)) throw std::runtime_error(path + " header length is implausible");
  std::string htext(hlen, '\0');
  f.in.read(htext.data(), std::streamsize(hlen));
  if (!f.in) throw std::runtime_error(path + " is truncated");
  f.header = nlohmann::json::parse(htext);
  f.payload_base = align_up(4 + sizeof version + sizeof hlen + hlen);
  return f;
}

Tensor read_tensor(OpenFile& f, const nlohmann::json& ref) {
  Shape shape = ref.at("shape").get<Shape>();
  const uint64_t offset = ref.at("offset").get<uint64_t>();
  Tensor t(shape);
  f.in.seekg(std::streamoff(f.payload_base + offset));
  f.in.read(reinterpret_cast<char*>(t.vec().data()),
            std::streamsize(t.numel() * sizeof(float)));
  if (!f.in) throw std::runtime_error("model file payload is truncated");
  return t;
}

nlohmann::json block_header(const ConvBnBlock& b, PayloadLayout& layout) {
  nlohmann::json j;
  j["stride"] = b.stride;
  j["padding"] = b.padding;
  j["pool_after"] = b.pool_after;
  j["lambda"] = b.activation.lambda;
  j["q_steps"] = b.activation.q_steps;
  j["clip_hi"] = b.activation.clip_hi;
  j["weights"] = layout.ref(b.weights);
  j["mu"] = layout.ref(b.mu);
  j["sigma"] = layout.ref(b.sigma);
  j["gamma"] = layout.ref(b.gamma);
  j["beta"] = layout.ref(b.beta);
  return j;
}

ConvBnBlock read_block(OpenFile& f, const nlohmann::json& j) {
  ConvBnBlock b;
  b.stride = j.at("stride").get<int>();
  b.padding = j.at("padding").get<int>();
  b.pool_after = j.at("pool_after").get<int>();
  b.activation.lambda = j.at("lambda").get<float>();
  b.activation.q_steps = j.at("q_steps").get<int>();
  b.activation.clip_hi = j.at("clip_hi").get<int>();
  b.weights = read_tensor(f, j.at("weights"));
  b.mu = read_tensor(f, j.at("mu"));
  b.sigma = read_tensor(f, j.at("sigma"));
  b.gamma = read_tensor(f, j.at("gamma"));
  b.beta = read_tensor(f, j.at("beta"));
  return b;
}

}  // namespace

void save_ann(const std::string& path, const AnnModel& model) {
  model.validate();
  PayloadLayout layout;
  nlohmann::json h;
  h["kind"] = "ann";
  h["q_steps"] = model.q_steps;
  h["input_shape"] = model.input_shape;
  h["class_count"] = model.class_count;
  h["blocks"] = nlohmann::json::array();
  for (const ConvBnBlock& b : model.blocks) h["blocks"].push_back(block_header(b, layout));
  h["head"]["weights"] = layout.ref(model.head.weights);
  h["head"]["bias"] = layout.ref(model.head.bias);
  write_file(path, h, layout);
}

AnnModel load_ann(const std::string& path) {
  OpenFile f = open_checkpoint(path);
  if (f.header.at("kind") != "ann")
    throw std::runtime_error(path + " holds a " + f.header.at("kind").get<std::string>() +
                             " model, expected ann");
  AnnModel m;
  m.q_steps = f.header.at("q_steps").get<int>();
  m.input_shape = f.header.at("input_shape").get<Shape>();
  m.class_count = f.header.at("class_count").get<int>();
  for (const nlohmann::json& j : f.header.at("blocks")) m.blocks.push_back(read_block(f, j));
  m.head.weights = read_tensor(f, f.header.at("head").at("weights"));
  m.head.bias = read_tensor(f, f.header.at("head").at("bias"));
  m.validate();
  return m;
}

void save_snn(const std::string& path, const SnnModel& model) {
  PayloadLayout layout;
  nlohmann::json h;
  h["kind"] = "snn";
  h["timesteps"] = model.timesteps;
  h["neuron"] = neuron_kind_name(model.neuron);
  h["source_q_steps"] = model.source_q_steps;
  h["input_shape"] = model.input_shape;
  h["class_count"] = model.class_count;
  h["theta"] = model.theta;
  h["blocks"] = nlohmann::json::array();
  for (const ConvBnBlock& b : model.blocks) h["blocks"].push_back(block_header(b, layout));
  h["head"]["weights"] = layout.ref(model.head.weights);
  h["head"]["bias"] = layout.ref(model.head.bias);
  write_file(path, h, layout);
}

SnnModel load_snn(const std::string& path) {
  OpenFile f = open_checkpoint(path);
  if (f.header.at("kind") != "snn")
    throw std::runtime_error(path + " holds a " + f.header.at("kind").get<std::string>() +
                             " model, expected snn");
  SnnModel m;
  m.timesteps = f.header.at("timesteps").get<int>();
  const std::string neuron = f.header.at("neuron").get<std::string>();
  if (neuron == "bit_serial")
    m.neuron = NeuronKind::kBitSerial;
  else if (neuron == "baseline")
    m.neuron = NeuronKind::kBaseline;
  else
    throw std::runtime_error("unknown neuron kind " + neuron);
  m.source_q_steps = f.header.at("source_q_steps").get<int>();
  m.input_shape = f.header.at("input_shape").get<Shape>();
  m.class_count = f.header.at("class_count").get<int>();
  m.theta = f.header.at("theta").get<std::vector<float>>();
  for (const nlohmann::json& j : f.header.at("blocks")) m.blocks.push_back(read_block(f, j));
  m.head.weights = read_tensor(f, f.header.at("head").at("weights"));
  m.head.bias = read_tensor(f, f.header.at("head").at("bias"));
  if (m.theta.size() != m.blocks.size())
    throw std::runtime_error(path + " theta count does not match block count");
  return m;
}

std::string checkpoint_kind(const std::string& path) {
  OpenFile f = open_checkpoint(path);
  return f.header.at("kind").get<std::string>();
}

}  // namespace spikeforge
