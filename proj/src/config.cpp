#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fedalc/error.hpp"
#include "fedalc/harness.hpp"

namespace fedalc {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& why = "") {
  throw ConfigError("invalid value for key '" + key + "': '" + value + "'" + (why.empty() ? "" : " (" + why + ")"));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    // Allow simple fractions such as 8/255.
    const auto slash = v.find('/');
    if (slash != std::string::npos) {
      const double num = to_double(key, trim(v.substr(0, slash)));
      const double den = to_double(key, trim(v.substr(slash + 1)));
      if (den == 0.0) bad_value(key, v, "division by zero");
      return num / den;
    }
    bad_value(key, v, "expected a number");
  }
  return out;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "expected an integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "expected true or false");
}

template <typename Fn>
auto enum_value(const std::string& key, const std::string& v, Fn&& parse) {
  try {
    return parse(v);
  } catch (const ValidationError& e) {
    bad_value(key, v, e.what());
  }
}

// Values that combine into derived settings once every key is known.
struct Pending {
  std::optional<int> rounds;
  std::string data_dir;
  AttackKind train_attack = AttackKind::pgd;
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int attack_steps = 10;
  std::optional<bool> random_start;
  std::string eval_attacks = "fgsm,bim,pgd,cw";
};

using Setter = std::function<void(ExperimentConfig&, Pending&, const std::string& key, const std::string& value)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"dataset",
       [](auto& c, auto&, const auto& k, const auto& v) {
         if (v != "mnist" && v != "fashion_mnist" && v != "synthetic") bad_value(k, v, "mnist|fashion_mnist|synthetic");
         c.dataset = v;
       }},
      {"data_dir", [](auto&, auto& p, const auto&, const auto& v) { p.data_dir = v; }},
      {"train_images", [](auto& c, auto&, const auto&, const auto& v) { c.train_images = v; }},
      {"train_labels", [](auto& c, auto&, const auto&, const auto& v) { c.train_labels = v; }},
      {"test_images", [](auto& c, auto&, const auto&, const auto& v) { c.test_images = v; }},
      {"test_labels", [](auto& c, auto&, const auto&, const auto& v) { c.test_labels = v; }},
      {"subsample", [](auto& c, auto&, const auto& k, const auto& v) { c.subsample_n = to_int<std::size_t>(k, v); }},
      {"alpha",
       [](auto& c, auto&, const auto& k, const auto& v) {
         c.alpha = to_double(k, v);
         if (!(c.alpha > 0.0)) bad_value(k, v, "must be positive");
       }},
      {"model",
       [](auto& c, auto&, const auto& k, const auto& v) {
         if (v != "mlp" && v != "cnn") bad_value(k, v, "mlp|cnn");
         c.model = v;
       }},
      {"hidden", [](auto& c, auto&, const auto& k, const auto& v) { c.hidden = to_int<std::size_t>(k, v); }},
      {"clients", [](auto& c, auto&, const auto& k, const auto& v) { c.fed.num_clients = to_int<std::size_t>(k, v); }},
      {"rounds", [](auto&, auto& p, const auto& k, const auto& v) { p.rounds = to_int<int>(k, v); }},
      {"local_epochs", [](auto& c, auto&, const auto& k, const auto& v) { c.fed.local_epochs = to_int<int>(k, v); }},
      {"batch_size", [](auto& c, auto&, const auto& k, const auto& v) { c.fed.batch_size = to_int<std::size_t>(k, v); }},
      {"lr", [](auto& c, auto&, const auto& k, const auto& v) { c.fed.lr = to_double(k, v); }},
      {"algo", [](auto& c, auto&, const auto& k, const auto& v) { c.fed.algorithm = enum_value(k, v, parse_algorithm); }},
      {"prox_mu", [](auto& c, auto&, const auto& k, const auto& v) { c.fed.prox_mu = to_double(k, v); }},
      {"calib_mode",
       [](auto& c, auto&, const auto& k, const auto& v) { c.fed.calib_mode = enum_value(k, v, parse_calibration_mode); }},
      {"train_attack",
       [](auto&, auto& p, const auto& k, const auto& v) { p.train_attack = enum_value(k, v, parse_attack_kind); }},
      {"epsilon", [](auto&, auto& p, const auto& k, const auto& v) { p.epsilon = to_double(k, v); }},
      {"step_size", [](auto&, auto& p, const auto& k, const auto& v) { p.step_size = to_double(k, v); }},
      {"attack_steps", [](auto&, auto& p, const auto& k, const auto& v) { p.attack_steps = to_int<int>(k, v); }},
      {"random_start", [](auto&, auto& p, const auto& k, const auto& v) { p.random_start = to_bool(k, v); }},
      {"eval_attacks", [](auto&, auto& p, const auto&, const auto& v) { p.eval_attacks = v; }},
      {"eval_batch", [](auto& c, auto&, const auto& k, const auto& v) { c.fed.eval_batch = to_int<std::size_t>(k, v); }},
      {"adam_reset", [](auto& c, auto&, const auto& k, const auto& v) { c.fed.reset_adam_each_round = to_bool(k, v); }},
      {"parallel_clients",
       [](auto& c, auto&, const auto& k, const auto& v) { c.fed.parallel_clients = to_bool(k, v); }},
      {"threads", [](auto& c, auto&, const auto& k, const auto& v) { c.threads = to_int<int>(k, v); }},
      {"seed", [](auto& c, auto&, const auto& k, const auto& v) { c.fed.seed = to_int<std::uint64_t>(k, v); }},
      {"out", [](auto& c, auto&, const auto&, const auto& v) { c.out = v; }},
      {"synthetic_classes",
       [](auto& c, auto&, const auto& k, const auto& v) { c.synthetic_classes = to_int<std::size_t>(k, v); }},
      {"synthetic_dim", [](auto& c, auto&, const auto& k, const auto& v) { c.synthetic_dim = to_int<std::size_t>(k, v); }},
      {"synthetic_per_class",
       [](auto& c, auto&, const auto& k, const auto& v) { c.synthetic_per_class = to_int<std::size_t>(k, v); }},
      {"synthetic_test_per_class",
       [](auto& c, auto&, const auto& k, const auto& v) { c.synthetic_test_per_class = to_int<std::size_t>(k, v); }},
      {"synthetic_spread", [](auto& c, auto&, const auto& k, const auto& v) { c.synthetic_spread = to_double(k, v); }},
  };
  return table;
}

std::filesystem::path find_in_dir(const std::filesystem::path& dir, const std::string& stem) {
  for (const auto& name : {stem, stem + ".gz"}) {
    if (std::filesystem::exists(dir / name)) return dir / name;
  }
  return {};
}

std::map<std::string, std::string> parse_lines(const std::string& text) {
  std::map<std::string, std::string> raw;
  std::istringstream in(text);
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" + body + "'");
    }
    raw[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
  }
  return raw;
}

ExperimentConfig resolve(std::map<std::string, std::string> raw, const ConfigOverrides& overrides) {
  for (const auto& [k, v] : overrides) raw[trim(k)] = trim(v);

  const auto& table = setters();
  for (const auto& [key, value] : raw) {
    const bool known = std::any_of(table.begin(), table.end(), [&](const auto& e) { return e.first == key; });
    if (!known) throw ConfigError("unknown key: " + key);
  }

  ExperimentConfig cfg;
  Pending pending;
  for (const auto& [key, setter] : table) {
    const auto it = raw.find(key);
    if (it != raw.end()) setter(cfg, pending, key, it->second);
  }

  cfg.fed.rounds = pending.rounds.value_or(cfg.file_backed() ? 100 : 20);

  AttackConfig train = AttackConfig::make(pending.train_attack, pending.epsilon, pending.step_size, pending.attack_steps);
  if (pending.random_start) train.random_start = *pending.random_start;
  cfg.fed.train_attack = train;

  cfg.eval_attacks.clear();
  std::istringstream list(pending.eval_attacks);
  std::string item;
  while (std::getline(list, item, ',')) {
    item = trim(item);
    if (item.empty() || item == "none") continue;
    const AttackKind kind = enum_value("eval_attacks", item, parse_attack_kind);
    cfg.eval_attacks.push_back(AttackConfig::make(kind, pending.epsilon, pending.step_size, pending.attack_steps));
  }

  try {
    cfg.fed.validate();
    for (const auto& a : cfg.eval_attacks) a.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  if (cfg.hidden == 0) throw ConfigError("invalid configuration: hidden must be positive");
  if (cfg.subsample_n == 0) throw ConfigError("invalid configuration: subsample must be positive");

  if (cfg.file_backed()) {
    if (!pending.data_dir.empty()) {
      const std::filesystem::path dir = pending.data_dir;
      if (cfg.train_images.empty()) cfg.train_images = find_in_dir(dir, "train-images-idx3-ubyte");
      if (cfg.train_labels.empty()) cfg.train_labels = find_in_dir(dir, "train-labels-idx1-ubyte");
      if (cfg.test_images.empty()) cfg.test_images = find_in_dir(dir, "t10k-images-idx3-ubyte");
      if (cfg.test_labels.empty()) cfg.test_labels = find_in_dir(dir, "t10k-labels-idx1-ubyte");
    }
    const std::pair<const char*, const std::filesystem::path*> required[] = {
        {"train_images", &cfg.train_images},
        {"train_labels", &cfg.train_labels},
        {"test_images", &cfg.test_images},
        {"test_labels", &cfg.test_labels}};
    for (const auto& [key, path] : required) {
      if (path->empty()) throw ConfigError(std::string("missing required key: ") + key);
    }
  }
  return cfg;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& e : setters()) k.push_back(e.first);
    return k;
  }();
  return keys;
}

ExperimentConfig parse_config_text(const std::string& text, const ConfigOverrides& overrides) {
  return resolve(parse_lines(text), overrides);
}

ExperimentConfig parse_config(const std::optional<std::filesystem::path>& file, const ConfigOverrides& overrides) {
  std::string text;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config file " + file->string());
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  return parse_config_text(text, overrides);
}

}  // namespace fedalc
