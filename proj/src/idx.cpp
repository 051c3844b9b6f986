#include "bslb/idx.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace bslb {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
  if (bytes.size() < offset + 4)
    throw FormatError(std::string(what) + ": truncated header (" + std::to_string(bytes.size()) +
                      " bytes)");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

LabeledDataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  const std::uint32_t image_magic = read_be32(images, 0, "image file");
  if (image_magic != kIdxImageMagic)
    throw FormatError("image file has magic " + hex(image_magic) + ", expected " + hex(kIdxImageMagic));
  const std::uint32_t label_magic = read_be32(labels, 0, "label file");
  if (label_magic != kIdxLabelMagic)
    throw FormatError("label file has magic " + hex(label_magic) + ", expected " + hex(kIdxLabelMagic));

  const std::uint64_t count = read_be32(images, 4, "image file");
  const std::uint64_t rows = read_be32(images, 8, "image file");
  const std::uint64_t cols = read_be32(images, 12, "image file");
  const std::uint64_t label_count = read_be32(labels, 4, "label file");
  if (count != label_count)
    throw ShapeError("image count " + std::to_string(count) + " differs from label count " +
                     std::to_string(label_count));

  const std::uint64_t pixels = rows * cols;
  if (images.size() - 16 < count * pixels)
    throw FormatError("image file truncated: need " + std::to_string(16 + count * pixels) +
                      " bytes, have " + std::to_string(images.size()));
  if (labels.size() - 8 < count)
    throw FormatError("label file truncated: need " + std::to_string(8 + count) + " bytes, have " +
                      std::to_string(labels.size()));

  LabeledDataset data;
  data.inputs.resize(static_cast<Index>(pixels), static_cast<Index>(count));
  const std::uint8_t* src = images.data() + 16;
  for (std::uint64_t i = 0; i < count; ++i)
    for (std::uint64_t p = 0; p < pixels; ++p)
      data.inputs(static_cast<Index>(p), static_cast<Index>(i)) = src[i * pixels + p] / 255.0;
  data.labels.assign(labels.begin() + 8, labels.begin() + 8 + static_cast<std::ptrdiff_t>(count));
  return data;
}

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto image_bytes = read_file(images);
  const auto label_bytes = read_file(labels);
  return parse_idx(image_bytes, label_bytes);
}

void save_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
              const LabeledDataset& data, std::uint32_t rows, std::uint32_t cols) {
  if (static_cast<Index>(rows) * cols != data.dim()) throw ShapeError("rows x cols != input dimension");
  if (static_cast<std::size_t>(data.size()) != data.labels.size()) throw ShapeError("label count mismatch");
  std::ofstream img(images, std::ios::binary);
  std::ofstream lab(labels, std::ios::binary);
  if (!img || !lab) throw IoError("cannot write IDX files");
  put_be32(img, kIdxImageMagic);
  put_be32(img, static_cast<std::uint32_t>(data.size()));
  put_be32(img, rows);
  put_be32(img, cols);
  for (Index i = 0; i < data.size(); ++i)
    for (Index p = 0; p < data.dim(); ++p) {
      const double v = std::clamp(data.inputs(p, i), 0.0, 1.0);
      img.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
    }
  put_be32(lab, kIdxLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int y : data.labels) lab.put(static_cast<char>(static_cast<std::uint8_t>(y)));
  if (!img || !lab) throw IoError("failed writing IDX files");
}

}  // namespace bslb
