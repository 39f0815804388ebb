// Dataset ingestion: IDX ubyte files (big-endian header, the classic digit
// dataset layout), a deterministic synthetic blob generator for desk-scale
// experiments, and a raw float tensor container for image batches.
#pragma once

#include <string>
#include <vector>

#include "spikeforge/rng.hpp"
#include "spikeforge/tensor.hpp"

namespace spikeforge {

struct Dataset {
  Tensor images;  // [N, C, H, W], values in [0, 1]
  std::vector<int> labels;
  int class_count = 0;
  std::string split = "train";

  int64_t size() const { return images.numel() == 0 ? 0 : images.dim(0); }
  void validate() const;
};

// IDX ubyte images: magic 0x00000803, dims [N, H, W], pixels scaled by 1/255
// into a [N, 1, H, W] tensor.
Tensor load_idx_images(const std::string& path);
// IDX ubyte labels: magic 0x00000801, dims [N].
std::vector<int> load_idx_labels(const std::string& path);
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
// Writes round(v * 255) clamped to [0, 255]; input must be single-channel.
void save_idx_images(const std::string& path, const Tensor& images);
void save_idx_labels(const std::string& path, const std::vector<int>& labels);

// Gaussian intensity blobs on an 8x8 canvas, one blob center per class spread
// on a circle, sample centers jittered. Same seed gives identical datasets.
Dataset gen_synthetic(uint64_t seed, int n, int classes);

// Raw float tensor file: magic "SFTN", version, JSON {"shape": [...]}, then
// little-endian float32 data.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Rows [begin, end) of a dataset as a batch plus its labels.
Tensor slice_images(const Tensor& images, int64_t begin, int64_t end);

}  // namespace spikeforge
