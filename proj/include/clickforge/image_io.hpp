#pragma once

#include "clickforge/raster.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace clickforge {

using Bytes = std::vector<std::uint8_t>;

/// 8-bit RGB PNG. Intensities are stored as round(255·v).
Bytes encode_image_png(const RasterImage& image);
RasterImage decode_image_png(const Bytes& png);

/// 8-bit single-channel PNG with values 0 / 255.
Bytes encode_mask_png(const Mask& mask);
/// Rejects any value other than 0 or 255.
Mask decode_mask_png(const Bytes& png);

Bytes read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const Bytes& bytes);

/// Layout: <root>/images/<stem>.png paired with <root>/masks/<stem>.png.
/// Samples are named by zero-padded index.
void save_dataset(const Dataset& dataset, const std::filesystem::path& root);
/// Pairs by stem, sorted by stem.
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace clickforge
