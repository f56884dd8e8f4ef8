#include <zlib.h>

#include <cmath>
#include <memory>

#include "fedalc/data.hpp"
#include "fedalc/error.hpp"

namespace fedalc {

namespace {

constexpr std::uint32_t kImagesMagic = 2051;
constexpr std::uint32_t kLabelsMagic = 2049;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
  if (offset + 4 > bytes.size()) {
    throw DataError(std::string(what) + ": truncated header at offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void expect_magic(std::uint32_t got, std::uint32_t want, const char* what) {
  if (got != want) {
    throw DataError(std::string(what) + ": wrong magic " + std::to_string(got) + " at offset 0 (expected " +
                    std::to_string(want) + ")");
  }
}

void expect_payload(std::span<const std::uint8_t> bytes, std::size_t offset, std::size_t need, const char* what) {
  if (bytes.size() - offset < need) {
    throw DataError(std::string(what) + ": truncated payload at offset " + std::to_string(offset) + ", expected " +
                    std::to_string(need) + " bytes, found " + std::to_string(bytes.size() - offset));
  }
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::unique_ptr<gzFile_s, int (*)(gzFile)> file(gzopen(path.c_str(), "rb"), gzclose);
  if (!file) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  for (;;) {
    const int n = gzread(file.get(), buf, sizeof(buf));
    if (n < 0) throw DataError("read error in " + path.string());
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  return out;
}

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels, std::size_t classes,
                  Split split) {
  expect_magic(read_be32(images, 0, "images"), kImagesMagic, "images");
  expect_magic(read_be32(labels, 0, "labels"), kLabelsMagic, "labels");
  const std::size_t n = read_be32(images, 4, "images");
  const std::size_t rows = read_be32(images, 8, "images");
  const std::size_t cols = read_be32(images, 12, "images");
  const std::size_t n_labels = read_be32(labels, 4, "labels");
  if (n != n_labels) {
    throw DataError("labels: count " + std::to_string(n_labels) + " at offset 4 does not match " + std::to_string(n) +
                    " images");
  }
  if (n == 0) throw DataError("images: empty dataset at offset 4");
  const std::size_t pixels = rows * cols;
  expect_payload(images, 16, n * pixels, "images");
  expect_payload(labels, 8, n, "labels");

  Dataset ds;
  ds.classes = classes;
  ds.split = split;
  ds.features = Tensor(Shape{n, 1, rows, cols});
  for (std::size_t i = 0; i < n * pixels; ++i) ds.features[i] = images[16 + i] / 255.0;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = labels[8 + i];
    if (labels[8 + i] >= classes) {
      throw DataError("labels: value " + std::to_string(labels[8 + i]) + " at offset " + std::to_string(8 + i) +
                      " is not below " + std::to_string(classes));
    }
  }
  return ds;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t classes, Split split) {
  const auto images = read_file_bytes(images_path);
  const auto labels = read_file_bytes(labels_path);
  return parse_idx(images, labels, classes, split);
}

std::vector<std::uint8_t> encode_idx_images(const Dataset& ds) {
  const Shape& s = ds.features.shape();
  if (s.size() != 4 || s[1] != 1) throw StructuralError("encode_idx_images: expects [N, 1, rows, cols] features");
  std::vector<std::uint8_t> out;
  out.reserve(16 + ds.features.size());
  put_be32(out, kImagesMagic);
  put_be32(out, static_cast<std::uint32_t>(s[0]));
  put_be32(out, static_cast<std::uint32_t>(s[2]));
  put_be32(out, static_cast<std::uint32_t>(s[3]));
  for (double v : ds.features.data()) out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const Dataset& ds) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + ds.labels.size());
  put_be32(out, kLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(ds.labels.size()));
  for (Label y : ds.labels) out.push_back(static_cast<std::uint8_t>(y));
  return out;
}

}  // namespace fedalc
