#include "spikeforge/dataset.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace spikeforge {

void Dataset::validate() const {
  if (images.ndim() != 4) throw std::invalid_argument("dataset images must be [N, C, H, W]");
  if (int64_t(labels.size()) != images.dim(0))
    throw std::invalid_argument("dataset label count does not match image count");
  if (class_count < 2) throw std::invalid_argument("dataset needs at least two classes");
  for (int label : labels)
    if (label < 0 || label >= class_count)
      throw std::invalid_argument("dataset label out of range");
}

namespace {

uint32_t read_be32(std::istream& in) {
  uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
  const uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Tensor load_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  const uint32_t magic = read_be32(in);
  if (!in || magic != 0x00000803u)
    throw std::runtime_error(path + " is not an IDX ubyte image file");
  const int64_t n = read_be32(in);
  const int64_t h = read_be32(in);
  const int64_t w = read_be32(in);
  if (!in || n < 0 || h <= 0 || w <= 0) throw std::runtime_error(path + " has a bad header");
  std::vector<uint8_t> raw(size_t(n * h * w));
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (!in) throw std::runtime_error(path + " is truncated");
  Tensor t({n, 1, h, w});
  for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = float(raw[size_t(i)]) / 255.0f;
  return t;
}

std::vector<int> load_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  const uint32_t magic = read_be32(in);
  if (!in || magic != 0x00000801u)
    throw std::runtime_error(path + " is not an IDX ubyte label file");
  const int64_t n = read_be32(in);
  std::vector<uint8_t> raw(static_cast<size_t>(n));
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (!in) throw std::runtime_error(path + " is truncated");
  return std::vector<int>(raw.begin(), raw.end());
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  Dataset d;
  d.images = load_idx_images(images_path);
  d.labels = load_idx_labels(labels_path);
  int max_label = 1;
  for (int label : d.labels) max_label = std::max(max_label, label);
  d.class_count = max_label + 1;
  d.validate();
  return d;
}

void save_idx_images(const std::string& path, const Tensor& images) {
  if (images.ndim() != 4 || images.dim(1) != 1)
    throw std::invalid_argument("IDX image files hold single-channel [N, 1, H, W] tensors");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_be32(out, 0x00000803u);
  write_be32(out, uint32_t(images.dim(0)));
  write_be32(out, uint32_t(images.dim(2)));
  write_be32(out, uint32_t(images.dim(3)));
  for (int64_t i = 0; i < images.numel(); ++i) {
    const float v = std::min(1.0f, std::max(0.0f, images.at(i)));
    const uint8_t b = uint8_t(std::lround(v * 255.0f));
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

void save_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_be32(out, 0x00000801u);
  write_be32(out, uint32_t(labels.size()));
  for (int label : labels) {
    if (label < 0 || label > 255) throw std::invalid_argument("IDX labels must fit a byte");
    const uint8_t b = uint8_t(label);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

Dataset gen_synthetic(uint64_t seed, int n, int classes) {
  if (n < 1 || classes < 2 || classes > 16)
    throw std::invalid_argument("synthetic generator wants n >= 1 and 2..16 classes");
  constexpr int kSide = 8;
  constexpr double kPi = 3.14159265358979323846;
  Rng rng(seed);
  Dataset d;
  d.class_count = classes;
  d.images = Tensor({int64_t(n), 1, kSide, kSide});
  d.labels.resize(size_t(n));
  const double cx0 = (kSide - 1) / 2.0, cy0 = (kSide - 1) / 2.0;
  for (int i = 0; i < n; ++i) {
    const int label = i % classes;
    d.labels[size_t(i)] = label;
    const double angle = 2.0 * kPi * label / classes;
    const double cx = cx0 + 2.2 * std::cos(angle) + rng.normal(0.0, 0.45);
    const double cy = cy0 + 2.2 * std::sin(angle) + rng.normal(0.0, 0.45);
    for (int y = 0; y < kSide; ++y)
      for (int x = 0; x < kSide; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        const double v = std::exp(-d2 / (2.0 * 1.2 * 1.2));
        d.images.at4(i, 0, y, x) = float(std::min(1.0, v));
      }
  }
  d.validate();
  return d;
}

void save_tensor(const std::string& path, const Tensor& t) {
  nlohmann::json header;
  header["shape"] = t.shape();
  const std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write("SFTN", 4);
  const uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  const uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(htext.data(), std::streamsize(htext.size()));
  out.write(reinterpret_cast<const char*>(t.vec().data()),
            std::streamsize(t.numel() * sizeof(float)));
  if (!out) throw std::runtime_error("failed writing " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SFTN", 4) != 0)
    throw std::runtime_error(path + " is not a tensor file");
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != 1) throw std::runtime_error("unsupported tensor file version");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (hlen > (1u << 24)) throw std::runtime_error(path + " header length is implausible");
  std::string htext(hlen, '\0');
  in.read(htext.data(), std::streamsize(hlen));
  if (!in) throw std::runtime_error(path + " is truncated");
  Shape shape = nlohmann::json::parse(htext).at("shape").get<Shape>();
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.vec().data()),
          std::streamsize(t.numel() * sizeof(float)));
  if (!in) throw std::runtime_error(path + " is truncated");
  return t;
}

Tensor slice_images(const Tensor& images, int64_t begin, int64_t end) {
  if (begin < 0 || end > images.dim(0) || begin >= end)
    throw std::invalid_argument("bad batch bounds");
  Shape s = images.shape();
  const int64_t per = images.numel() / images.dim(0);
  s[0] = end - begin;
  Tensor out(s);
  std::memcpy(out.vec().data(), images.vec().data() + begin * per,
              size_t((end - begin) * per) * sizeof(float));
  return out;
}

}  // namespace spikeforge
