#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bslb/network.hpp"

namespace bslb {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image file and its label file. Pixels are scaled by 1/255.
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Parses in-memory IDX containers (same rules as load_idx).
LabeledDataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

/// Writes an IDX pair; inputs are quantized to bytes with round(255 * v).
void save_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
              const LabeledDataset& data, std::uint32_t rows, std::uint32_t cols);

}  // namespace bslb
