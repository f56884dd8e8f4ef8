#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "fedalc/error.hpp"
#include "fedalc/harness.hpp"
#include "fedalc/kernels.hpp"

namespace fedalc {

namespace {

// Stream ids for the derived seeds of a run.
constexpr std::uint64_t kSubsampleStream = 0x5b;
constexpr std::uint64_t kPartitionStream = 0x9a;
constexpr std::uint64_t kSyntheticTrainStream = 0x7a;
constexpr std::uint64_t kSyntheticTestStream = 0x7e;

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

ModelSpec build_model(const ExperimentConfig& cfg, const Shape& sample_shape, std::size_t classes) {
  if (cfg.model == "cnn") {
    if (sample_shape.size() != 3) throw ConfigError("model 'cnn' needs image data (CxHxW samples)");
    return make_cnn(sample_shape, classes);
  }
  return make_mlp(sample_shape, cfg.hidden, classes);
}

LoadedData load_data(const ExperimentConfig& cfg) {
  const std::uint64_t seed = cfg.fed.seed;
  if (!cfg.file_backed()) {
    return {synthetic_blobs(cfg.synthetic_classes, cfg.synthetic_dim, cfg.synthetic_per_class, cfg.synthetic_spread,
                            derive_seed(seed, {kSyntheticTrainStream}), Split::train),
            synthetic_blobs(cfg.synthetic_classes, cfg.synthetic_dim, cfg.synthetic_test_per_class,
                            cfg.synthetic_spread, derive_seed(seed, {kSyntheticTestStream}), Split::test)};
  }
  Dataset train = load_idx(cfg.train_images, cfg.train_labels, 10, Split::train);
  Dataset test = load_idx(cfg.test_images, cfg.test_labels, 10, Split::test);
  if (cfg.subsample_n > train.size()) {
    throw ConfigError("subsample " + std::to_string(cfg.subsample_n) + " exceeds the " +
                      std::to_string(train.size()) + " training samples");
  }
  train = subsample(train, cfg.subsample_n, derive_seed(seed, {kSubsampleStream}));
  return {std::move(train), std::move(test)};
}

Partition make_partition(const ExperimentConfig& cfg, const Dataset& train) {
  return dirichlet_partition(train.labels, cfg.fed.num_clients, cfg.alpha, derive_seed(cfg.fed.seed, {kPartitionStream}));
}

const char* const kCsvHeader = "round,algorithm,seed,alpha,train_loss,natural_acc,fgsm_acc,bim_acc,pgd_acc,cw_acc";

std::string csv_row(const RoundMetrics& m) {
  std::ostringstream os;
  os << m.round << ',' << to_string(m.algorithm) << ',' << m.seed << ',' << fixed6(m.alpha) << ','
     << fixed6(m.train_loss) << ',' << fixed6(m.natural_acc);
  for (AttackKind kind : {AttackKind::fgsm, AttackKind::bim, AttackKind::pgd, AttackKind::cw}) {
    os << ',';
    const auto it = m.robust_acc.find(kind);
    if (it != m.robust_acc.end()) os << fixed6(it->second);
  }
  return os.str();
}

void write_csv(std::ostream& out, std::span<const RoundMetrics> rows, const RoundMetrics& summary) {
  out << kCsvHeader << '\n';
  for (const auto& r : rows) out << csv_row(r) << '\n';
  out << csv_row(summary) << '\n';
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  if (cfg.threads > 0) kernels::set_threads(cfg.threads);
  LoadedData data = load_data(cfg);
  const Partition partition = make_partition(cfg, data.train);
  const ModelSpec spec = build_model(cfg, data.train.sample_shape(), data.train.classes);

  if (log) {
    *log << "dataset " << cfg.dataset << ": " << data.train.size() << " train / " << data.test.size()
         << " test samples, " << cfg.fed.num_clients << " clients, alpha " << cfg.alpha << ", "
         << to_string(cfg.fed.algorithm) << ", seed " << cfg.fed.seed << '\n';
  }
  RoundCallback progress;
  if (log) {
    progress = [log](const RoundMetrics& m) { *log << "round " << csv_row(m) << '\n' << std::flush; };
  }

  ExperimentResult result;
  result.rows = run_training(spec, cfg.fed, data.train, data.test, partition, cfg.eval_attacks, progress);
  result.summary = summarize(result.rows);

  if (!cfg.out.empty()) {
    if (cfg.out.has_parent_path()) std::filesystem::create_directories(cfg.out.parent_path());
    std::ofstream out(cfg.out);
    if (!out) throw std::runtime_error("cannot write " + cfg.out.string());
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    out << "# fedalc metrics generated " << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ") << '\n';
    write_csv(out, result.rows, result.summary);
  }
  return result;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

}  // namespace fedalc
