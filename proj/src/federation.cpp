#include "fedalc/federation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <string>

#include "fedalc/error.hpp"

namespace fedalc {

Algorithm parse_algorithm(std::string_view name) {
  if (name == "fedavg_at") return Algorithm::fedavg_at;
  if (name == "fedprox_at") return Algorithm::fedprox_at;
  if (name == "fedalc") return Algorithm::fedalc;
  throw ValidationError("unknown algorithm: " + std::string(name));
}

std::string_view to_string(Algorithm algo) {
  switch (algo) {
    case Algorithm::fedavg_at: return "fedavg_at";
    case Algorithm::fedprox_at: return "fedprox_at";
    case Algorithm::fedalc: return "fedalc";
  }
  return "?";
}

void FedConfig::validate() const {
  if (num_clients == 0) throw ValidationError("num_clients must be positive");
  if (rounds < 1) throw ValidationError("rounds must be positive");
  if (local_epochs < 0) throw ValidationError("local_epochs must be >= 0");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (!(lr > 0.0)) throw ValidationError("lr must be positive");
  if (!(prox_mu >= 0.0)) throw ValidationError("prox_mu must be >= 0");
  if (eval_batch == 0) throw ValidationError("eval_batch must be positive");
  train_attack.validate();
}

ClientState make_client(std::size_t id, std::vector<std::size_t> indices, const ParamSet& like) {
  if (indices.empty()) throw ValidationError("client " + std::to_string(id) + " has no data");
  return {id, std::move(indices), AdamState::for_params(like)};
}

LocalResult local_update(const ModelSpec& spec, const ParamSet& global_params, ClientState& client,
                         const Dataset& train, const FedConfig& cfg, Rng& rng) {
  LocalResult out{global_params, 0.0, 0};
  ParamSet& params = out.params;
  if (cfg.reset_adam_each_round) client.adam = AdamState::for_params(params);

  const bool prox = cfg.algorithm == Algorithm::fedprox_at && cfg.prox_mu > 0.0;
  double loss_sum = 0.0;
  std::vector<std::size_t> order = client.indices;
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const Batch batch = train.batch(std::span(order).subspan(start, end - start));
      const AdvBatch adv = run_attack(spec, params, batch, cfg.train_attack, rng);

      auto fwd = model_forward(spec, params, adv.x_adv);
      LossResult lr;
      if (cfg.algorithm == Algorithm::fedalc) {
        const auto w = calibration_weights(class_counts(batch.y, spec.num_classes()), cfg.calib_mode);
        lr = calibrated_cross_entropy(fwd.logits, w, batch.y);
      } else {
        lr = loss_cross_entropy(fwd.logits, batch.y);
      }
      BackwardResult grads = model_backward(fwd.tape, lr.grad, {.param_grads = true, .input_grad = false});
      if (prox) {
        lr.loss += 0.5 * cfg.prox_mu * params.squared_distance(global_params);
        grads.param_grads.axpy(cfg.prox_mu, params);
        grads.param_grads.axpy(-cfg.prox_mu, global_params);
      }
      if (!std::isfinite(lr.loss)) {
        throw NumericError("non-finite local loss on client " + std::to_string(client.id));
      }
      adam_step(params, grads.param_grads, client.adam, cfg.lr);
      loss_sum += lr.loss;
      ++out.steps;
    }
  }
  if (out.steps > 0) out.mean_loss = loss_sum / static_cast<double>(out.steps);
  return out;
}

ParamSet aggregate(std::span<const ParamSet> params, std::span<const std::size_t> sizes) {
  if (params.empty() || params.size() != sizes.size()) {
    throw ValidationError("aggregate: need matching, non-empty parameter and size lists");
  }
  ParamSet mean = params[0];
  double seen = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (sizes[i] == 0) throw ValidationError("aggregate: client sizes must be positive");
    if (!params[i].congruent(params[0])) {
      throw StructuralError("aggregate: parameter set " + std::to_string(i) + " is not congruent");
    }
    seen += static_cast<double>(sizes[i]);
    if (i == 0) continue;
    const double w = static_cast<double>(sizes[i]) / seen;
    // mean += w * (theta_i - mean)
    for (std::size_t k = 0; k < mean.num_layers(); ++k) {
      auto& dst = mean.mutable_layer(k);
      const auto& src = params[i].layer(k);
      for (std::size_t j = 0; j < dst.weight.size(); ++j) dst.weight[j] += w * (src.weight[j] - dst.weight[j]);
      for (std::size_t j = 0; j < dst.bias.size(); ++j) dst.bias[j] += w * (src.bias[j] - dst.bias[j]);
    }
  }
  return mean;
}

std::uint64_t client_stream_seed(std::uint64_t run_seed, int round, std::size_t client_id) {
  return derive_seed(run_seed, {static_cast<std::uint64_t>(round), 1, client_id});
}

RoundResult run_round(const ModelSpec& spec, const ParamSet& global_params, std::span<ClientState> clients,
                      const Dataset& train, const FedConfig& cfg, int round) {
  if (clients.empty()) throw ValidationError("run_round: no clients");
  std::vector<LocalResult> results(clients.size());
  std::vector<std::exception_ptr> errors(clients.size());
  const auto n = static_cast<std::ptrdiff_t>(clients.size());
#pragma omp parallel for schedule(dynamic) if (cfg.parallel_clients)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      Rng rng(client_stream_seed(cfg.seed, round, clients[i].id));
      results[i] = local_update(spec, global_params, clients[i], train, cfg, rng);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<ParamSet> params;
  std::vector<std::size_t> sizes;
  RoundResult out;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    params.push_back(std::move(results[i].params));
    sizes.push_back(clients[i].size());
    out.client_losses.push_back(results[i].mean_loss);
  }
  out.global = aggregate(params, sizes);
  return out;
}

EvalResult evaluate(const ModelSpec& spec, const ParamSet& params, const Dataset& test, const AttackConfig& attack,
                    Rng& rng, std::size_t batch_size) {
  if (test.size() == 0) throw ValidationError("evaluate: empty test set");
  if (batch_size == 0) throw ValidationError("evaluate: batch size must be positive");
  std::size_t correct = 0;
  double loss_sum = 0.0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < test.size(); start += batch_size) {
    const std::size_t end = std::min(test.size(), start + batch_size);
    rows.resize(end - start);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = start + i;
    const Batch batch = test.batch(rows);
    const AdvBatch adv = run_attack(spec, params, batch, attack, rng);
    const Tensor logits = model_logits(spec, params, adv.x_adv);
    const std::size_t C = logits.dim(1);
    for (std::size_t b = 0; b < rows.size(); ++b) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < C; ++j)
        if (logits.at(b, j) > logits.at(b, best)) best = j;
      if (best == static_cast<std::size_t>(batch.y[b])) ++correct;
    }
    loss_sum += loss_cross_entropy(logits, batch.y).loss * static_cast<double>(rows.size());
  }
  const double n = static_cast<double>(test.size());
  return {static_cast<double>(correct) / n, loss_sum / n};
}

std::vector<RoundMetrics> run_training(const ModelSpec& spec, const FedConfig& cfg, const Dataset& train,
                                       const Dataset& test, const Partition& partition,
                                       std::span<const AttackConfig> eval_attacks, const RoundCallback& on_round) {
  cfg.validate();
  if (partition.num_clients() != cfg.num_clients) {
    throw ValidationError("partition has " + std::to_string(partition.num_clients()) + " clients, config expects " +
                          std::to_string(cfg.num_clients));
  }
  if (spec.num_classes() != train.classes) throw StructuralError("model output does not match dataset classes");
  for (const auto& a : eval_attacks) a.validate();

  Rng init_rng(derive_seed(cfg.seed, {0, 0}));
  ParamSet global = init_params(spec, init_rng);
  std::vector<ClientState> clients;
  for (std::size_t i = 0; i < partition.num_clients(); ++i) clients.push_back(make_client(i, partition.clients[i], global));

  std::vector<RoundMetrics> rows;
  for (int round = 1; round <= cfg.rounds; ++round) {
    RoundResult rr = run_round(spec, global, clients, train, cfg, round);
    global = std::move(rr.global);
    if (!global.all_finite()) throw NumericError("non-finite global parameters after round " + std::to_string(round));

    RoundMetrics m;
    m.round = round;
    m.algorithm = cfg.algorithm;
    m.seed = cfg.seed;
    m.alpha = partition.alpha;
    double total = 0.0;
    for (std::size_t i = 0; i < clients.size(); ++i) {
      m.train_loss += rr.client_losses[i] * static_cast<double>(clients[i].size());
      total += static_cast<double>(clients[i].size());
    }
    m.train_loss /= total;

    Rng clean_rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(round), 2, 0}));
    m.natural_acc = evaluate(spec, global, test, AttackConfig{}, clean_rng, cfg.eval_batch).accuracy;
    for (const auto& attack : eval_attacks) {
      Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(round), 2, static_cast<std::uint64_t>(attack.kind)}));
      m.robust_acc[attack.kind] = evaluate(spec, global, test, attack, rng, cfg.eval_batch).accuracy;
    }
    if (on_round) on_round(m);
    rows.push_back(std::move(m));
  }
  return rows;
}

RoundMetrics summarize(std::span<const RoundMetrics> rows, std::size_t window) {
  if (rows.empty()) throw ValidationError("summarize: no rows");
  const std::size_t n = std::min(window, rows.size());
  const auto tail = rows.subspan(rows.size() - n);
  RoundMetrics s;
  s.round = -1;
  s.algorithm = tail.front().algorithm;
  s.seed = tail.front().seed;
  s.alpha = tail.front().alpha;
  std::map<AttackKind, std::size_t> seen;
  for (const auto& r : tail) {
    s.train_loss += r.train_loss;
    s.natural_acc += r.natural_acc;
    for (const auto& [kind, acc] : r.robust_acc) {
      s.robust_acc[kind] += acc;
      ++seen[kind];
    }
  }
  s.train_loss /= static_cast<double>(n);
  s.natural_acc /= static_cast<double>(n);
  for (auto& [kind, acc] : s.robust_acc) acc /= static_cast<double>(seen[kind]);
  return s;
}

}  // namespace fedalc
