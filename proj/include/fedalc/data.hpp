#pragma once

// Dataset ingestion (IDX), synthetic fixtures, subsampling and Dirichlet
// label-skew partitioning.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <span>
#include <string>
#include <vector>

#include "fedalc/nn.hpp"

namespace fedalc {

enum class Split { train, test };

struct Dataset {
  Tensor features;  // [N, sample shape...], values in [0, 1]
  std::vector<Label> labels;
  std::size_t classes = 0;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return Shape(features.shape().begin() + 1, features.shape().end()); }
  Batch batch(std::span<const std::size_t> rows) const;
  Batch all() const;
  /// Number of samples per class.
  std::vector<std::size_t> histogram() const;
};

/// Malformed or inconsistent IDX input. The message names the byte offset.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads a whole file, transparently inflating gzip.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Parses an image/label IDX pair (magic 2051 / 2049, big-endian sizes).
/// Pixels are divided by 255; images become [N, 1, rows, cols].
Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels, std::size_t classes = 10,
                  Split split = Split::train);
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t classes = 10, Split split = Split::train);

/// Inverse of parse_idx; pixel bytes are round(255 * v).
std::vector<std::uint8_t> encode_idx_images(const Dataset& ds);
std::vector<std::uint8_t> encode_idx_labels(const Dataset& ds);

/// n samples drawn uniformly without replacement. Throws ValidationError if n is 0 or exceeds the dataset.
Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed);

struct Partition {
  std::vector<std::vector<std::size_t>> clients;  // sorted index lists
  double alpha = 0.0;
  std::uint64_t seed = 0;

  std::size_t num_clients() const { return clients.size(); }
};

/// Per class, draws client proportions from Dir(alpha) and deals that class's
/// shuffled indices out in contiguous blocks (largest-remainder rounding).
/// Empty clients then take single samples from the largest client.
Partition dirichlet_partition(std::span<const Label> labels, std::size_t num_clients, double alpha,
                              std::uint64_t seed);

/// Client-by-class sample counts.
std::vector<std::vector<std::size_t>> client_histograms(const Partition& p, std::span<const Label> labels,
                                                        std::size_t classes);

/// Mean over clients of the total-variation distance between the client's
/// label distribution and the uniform distribution.
double mean_tv_from_uniform(const Partition& p, std::span<const Label> labels, std::size_t classes);

/// Gaussian clusters around distinct corners of the unit cube (class c sits
/// at the corner given by the bits of c), clipped to [0, 1]. Requires
/// 2^dim >= classes.
Dataset synthetic_blobs(std::size_t classes, std::size_t dim, std::size_t n_per_class, double spread,
                        std::uint64_t seed, Split split = Split::train);

}  // namespace fedalc
