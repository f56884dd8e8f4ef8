#pragma once

// Federated adversarial training: local updates, sample-size-weighted
// aggregation and per-round evaluation of the global model.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "fedalc/attacks.hpp"
#include "fedalc/calibration.hpp"
#include "fedalc/data.hpp"
#include "fedalc/nn.hpp"

namespace fedalc {

enum class Algorithm { fedavg_at, fedprox_at, fedalc };

Algorithm parse_algorithm(std::string_view name);
std::string_view to_string(Algorithm algo);

struct FedConfig {
  std::size_t num_clients = 10;
  int rounds = 100;
  int local_epochs = 1;
  std::size_t batch_size = 32;
  double lr = 0.001;
  Algorithm algorithm = Algorithm::fedalc;
  double prox_mu = 0.001;  // only read by fedprox_at
  AttackConfig train_attack = AttackConfig::make(AttackKind::pgd);
  CalibrationMode calib_mode = CalibrationMode::sqrt_inv_freq;
  std::uint64_t seed = 0;
  bool reset_adam_each_round = false;
  bool parallel_clients = true;
  std::size_t eval_batch = 500;

  void validate() const;
};

struct ClientState {
  std::size_t id = 0;
  std::vector<std::size_t> indices;  // rows of the training set
  AdamState adam;

  std::size_t size() const { return indices.size(); }
};

/// Throws ValidationError for an empty index list.
ClientState make_client(std::size_t id, std::vector<std::size_t> indices, const ParamSet& like);

struct LocalResult {
  ParamSet params;
  double mean_loss = 0.0;  // mean of the optimized per-batch losses
  std::size_t steps = 0;
};

/// Runs the client's local epochs starting from global_params. Each batch is
/// attacked with cfg.train_attack on the plain cross-entropy, then the model
/// takes an Adam step on the algorithm's loss over the adversarial batch.
/// Mutates only client.adam.
LocalResult local_update(const ModelSpec& spec, const ParamSet& global_params, ClientState& client,
                         const Dataset& train, const FedConfig& cfg, Rng& rng);

/// Weighted mean of congruent parameter sets, weights sizes[i] / sum(sizes).
/// Accumulated as a running mean, so identical inputs return bitwise copies.
ParamSet aggregate(std::span<const ParamSet> params, std::span<const std::size_t> sizes);

/// Seed of the random stream used by one client in one round.
std::uint64_t client_stream_seed(std::uint64_t run_seed, int round, std::size_t client_id);

struct RoundResult {
  ParamSet global;
  std::vector<double> client_losses;  // in the order of `clients`
};

/// Every client updates from the same snapshot with its own random stream,
/// so the result does not depend on client order or thread count.
RoundResult run_round(const ModelSpec& spec, const ParamSet& global_params, std::span<ClientState> clients,
                      const Dataset& train, const FedConfig& cfg, int round);

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

/// Top-1 accuracy on the (optionally attacked) test set; attacks are
/// white-box against `params`. Argmax ties resolve to the lowest class.
EvalResult evaluate(const ModelSpec& spec, const ParamSet& params, const Dataset& test, const AttackConfig& attack,
                    Rng& rng, std::size_t batch_size = 500);

struct RoundMetrics {
  int round = 0;  // -1 marks a summary row
  Algorithm algorithm = Algorithm::fedalc;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  double train_loss = 0.0;
  double natural_acc = 0.0;
  std::map<AttackKind, double> robust_acc;
};

using RoundCallback = std::function<void(const RoundMetrics&)>;

/// Full training run; one metrics row per round.
std::vector<RoundMetrics> run_training(const ModelSpec& spec, const FedConfig& cfg, const Dataset& train,
                                       const Dataset& test, const Partition& partition,
                                       std::span<const AttackConfig> eval_attacks,
                                       const RoundCallback& on_round = {});

/// Mean of every metric over the last min(window, rows) rows, tagged round -1.
RoundMetrics summarize(std::span<const RoundMetrics> rows, std::size_t window = 10);

}  // namespace fedalc
