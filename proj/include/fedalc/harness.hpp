#pragma once

// Experiment configuration, the end-to-end driver and the CSV metrics
// writer behind the `fedalc` command line tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedalc/federation.hpp"

namespace fedalc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string dataset = "synthetic";  // mnist | fashion_mnist | synthetic
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::size_t subsample_n = 5000;
  double alpha = 0.1;
  std::string model = "mlp";  // mlp | cnn
  std::size_t hidden = 128;
  FedConfig fed;
  std::vector<AttackConfig> eval_attacks;
  std::filesystem::path out = "metrics.csv";
  int threads = 0;  // 0 keeps the OpenMP default

  std::size_t synthetic_classes = 3;
  std::size_t synthetic_dim = 2;
  std::size_t synthetic_per_class = 200;
  std::size_t synthetic_test_per_class = 100;
  double synthetic_spread = 0.1;

  bool file_backed() const { return dataset != "synthetic"; }
};

using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

/// Every recognised configuration key, in documentation order.
const std::vector<std::string>& config_keys();

/// Resolves defaults <- `key = value` file <- overrides. Unknown keys,
/// unparsable values and missing data paths throw ConfigError.
ExperimentConfig parse_config(const std::optional<std::filesystem::path>& file, const ConfigOverrides& overrides = {});
/// Same, reading the `key = value` text from a string.
ExperimentConfig parse_config_text(const std::string& text, const ConfigOverrides& overrides = {});

/// Model named by cfg.model for the given sample shape.
ModelSpec build_model(const ExperimentConfig& cfg, const Shape& sample_shape, std::size_t classes);

struct LoadedData {
  Dataset train;  // after subsampling
  Dataset test;
};
LoadedData load_data(const ExperimentConfig& cfg);
/// The client split run_experiment uses for this config and training set.
Partition make_partition(const ExperimentConfig& cfg, const Dataset& train);

/// Column order of the metrics CSV.
extern const char* const kCsvHeader;
std::string csv_row(const RoundMetrics& m);
void write_csv(std::ostream& out, std::span<const RoundMetrics> rows, const RoundMetrics& summary);

struct ExperimentResult {
  std::vector<RoundMetrics> rows;
  RoundMetrics summary;
};

/// Load, partition, train and write cfg.out. Progress lines go to `log` when given.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

/// Exit status for an exception escaping run_experiment: 2 config, 3 data,
/// 4 numeric, 1 anything else.
int exit_code_for(const std::exception& e);

struct GradcheckCase {
  std::string description;
  GradCheckReport report;
};

/// Finite-difference checks over `cases` random small models covering every
/// layer type, alternating plain and calibrated losses. Inputs are redrawn
/// until no ReLU or pooling kink lies within 1e-3.
std::vector<GradcheckCase> gradcheck_suite(std::uint64_t seed, std::size_t cases, double h = 1e-5,
                                           double tol = 1e-4);

}  // namespace fedalc
