// Model files: 4-byte magic "SFRG", u32 version, u64 header length, a JSON
// header describing structure and tensor layout, then raw little-endian
// float32 payloads. Each tensor starts at a 64-byte-aligned offset relative
// to the payload base (the first 64-byte boundary after the header).
#pragma once

#include <string>

#include "spikeforge/convert.hpp"
#include "spikeforge/model.hpp"

namespace spikeforge {

void save_ann(const std::string& path, const AnnModel& model);
AnnModel load_ann(const std::string& path);

void save_snn(const std::string& path, const SnnModel& model);
SnnModel load_snn(const std::string& path);

// "ann" or "snn" without loading payloads; throws on foreign files.
std::string checkpoint_kind(const std::string& path);

}  // namespace spikeforge
