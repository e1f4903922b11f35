#pragma once

#include "clickforge/image_io.hpp"
#include "clickforge/netcore.hpp"
#include "clickforge/params.hpp"

#include <filesystem>

namespace clickforge {

/// Binary layout, little-endian:
///   "CFCK" | u16 version | u32 tensor count |
///   per tensor: u16 name length, name bytes, u8 tag (0 = BSM, 1 = ADM),
///               u8 rank, u32 dims[rank], f32 values (row-major) |
///   u32 CRC-32 of every preceding byte.
constexpr std::uint16_t kCheckpointVersion = 1;

Bytes encode_checkpoint(const ParamSet<float>& params);
ParamSet<float> decode_checkpoint(const Bytes& bytes);

void save_checkpoint(const ParamSet<float>& params, const std::filesystem::path& path);
ParamSet<float> load_checkpoint(const std::filesystem::path& path);

/// Loads and checks names and shapes against a freshly initialized model of
/// `cfg`; a mismatch names the offending tensor.
ParamSet<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg);
void check_compatible(const ParamSet<float>& params, const ModelConfig& cfg);

}  // namespace clickforge
