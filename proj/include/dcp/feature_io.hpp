#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dcp/encoders.hpp"
#include "dcp/tensor.hpp"

namespace dcp {

// Container layout (all integers little-endian):
//
//   "DCPF" | u32 version=1 | u8 kind | u32 rank | u32 dims[rank]
//   | f64 payload[prod(dims)] | u64 xxh64(payload bytes)
//   | kind-specific trailer
//
// kind 0 (visual): payload is f_patch; trailer is u32 grid_h, u32 grid_w, then
//   tensor records for f_cls, a_clip, u32 level count and one record per f_v level.
//   A tensor record is u32 rank | u32 dims | f64 data | u64 xxh64(data).
// kind 1 (text): payload is e_t; trailer is u32 count, count x (u32 len, UTF-8 bytes),
//   then count bytes of seen mask (0/1).
// kind 2 (checkpoint): payload is every parameter flattened in order; trailer is
//   u32 count, count x (u32 len, name, u32 rank, u32 dims), u32 len, config text.

enum class FileKind : std::uint8_t { visual = 0, text = 1, checkpoint = 2 };

inline constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t xxhash64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0);

struct Checkpoint {
    std::vector<ParamTensor> params;
    std::string config;
};

std::vector<std::uint8_t> serialize_visual(const VisualFeatures& v);
std::vector<std::uint8_t> serialize_text(const TextEmbeddings& t);
std::vector<std::uint8_t> serialize_checkpoint(const std::vector<const ParamTensor*>& params, const std::string& config);

using FeatureFile = std::variant<VisualFeatures, TextEmbeddings>;

FeatureFile deserialize_features(std::span<const std::uint8_t> bytes);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_features(const VisualFeatures& v, const std::string& path);
void save_features(const TextEmbeddings& t, const std::string& path);
FeatureFile load_features(const std::string& path);
void save_checkpoint(const std::vector<const ParamTensor*>& params, const std::string& config, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace dcp
