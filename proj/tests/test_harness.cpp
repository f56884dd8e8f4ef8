#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "fedalc/error.hpp"
#include "fedalc/harness.hpp"

using namespace fedalc;
namespace fs = std::filesystem;

namespace {

template <typename T>
std::string str(const T& v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string error_of(const std::string& text, const ConfigOverrides& o = {}) {
  try {
    parse_config_text(text, o);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string strip_comments(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line))
    if (line.empty() || line[0] != '#') out += line + "\n";
  return out;
}

struct KeyCase {
  std::string file_value, flag_value;
  std::function<std::string(const ExperimentConfig&)> probe;
};

// Every key except data_dir (covered separately), with two distinct
// non-default values and a probe reading the resolved field.
std::map<std::string, KeyCase> key_cases() {
  using C = const ExperimentConfig&;
  return {
      {"dataset", {"fashion_mnist", "mnist", [](C c) { return c.dataset; }}},
      {"train_images", {"a1", "b1", [](C c) { return c.train_images.string(); }}},
      {"train_labels", {"a2", "b2", [](C c) { return c.train_labels.string(); }}},
      {"test_images", {"a3", "b3", [](C c) { return c.test_images.string(); }}},
      {"test_labels", {"a4", "b4", [](C c) { return c.test_labels.string(); }}},
      {"subsample", {"1000", "2000", [](C c) { return str(c.subsample_n); }}},
      {"alpha", {"0.5", "0.25", [](C c) { return str(c.alpha); }}},
      {"model", {"cnn", "mlp", [](C c) { return c.model; }}},
      {"hidden", {"64", "32", [](C c) { return str(c.hidden); }}},
      {"clients", {"4", "7", [](C c) { return str(c.fed.num_clients); }}},
      {"rounds", {"3", "9", [](C c) { return str(c.fed.rounds); }}},
      {"local_epochs", {"2", "5", [](C c) { return str(c.fed.local_epochs); }}},
      {"batch_size", {"16", "64", [](C c) { return str(c.fed.batch_size); }}},
      {"lr", {"0.5", "0.25", [](C c) { return str(c.fed.lr); }}},
      {"algo", {"fedprox_at", "fedavg_at", [](C c) { return std::string(to_string(c.fed.algorithm)); }}},
      {"prox_mu", {"0.5", "0.25", [](C c) { return str(c.fed.prox_mu); }}},
      {"calib_mode", {"eq5_literal", "unit", [](C c) { return std::string(to_string(c.fed.calib_mode)); }}},
      {"train_attack", {"bim", "cw", [](C c) { return std::string(to_string(c.fed.train_attack.kind)); }}},
      {"epsilon", {"0.5", "0.25", [](C c) { return str(c.fed.train_attack.epsilon); }}},
      {"step_size", {"0.125", "0.0625", [](C c) { return str(c.fed.train_attack.step_size); }}},
      {"attack_steps", {"3", "7", [](C c) { return str(c.fed.train_attack.steps); }}},
      {"random_start", {"false", "true", [](C c) { return str(c.fed.train_attack.random_start); }}},
      {"eval_attacks",
       {"fgsm", "cw,bim",
        [](C c) {
          std::string s;
          for (const auto& a : c.eval_attacks) s += std::string(to_string(a.kind)) + ";";
          return s;
        }}},
      {"eval_batch", {"100", "250", [](C c) { return str(c.fed.eval_batch); }}},
      {"adam_reset", {"true", "false", [](C c) { return str(c.fed.reset_adam_each_round); }}},
      {"parallel_clients", {"false", "true", [](C c) { return str(c.fed.parallel_clients); }}},
      {"threads", {"2", "3", [](C c) { return str(c.threads); }}},
      {"seed", {"11", "12", [](C c) { return str(c.fed.seed); }}},
      {"out", {"x.csv", "y.csv", [](C c) { return c.out.string(); }}},
      {"synthetic_classes", {"4", "2", [](C c) { return str(c.synthetic_classes); }}},
      {"synthetic_dim", {"3", "4", [](C c) { return str(c.synthetic_dim); }}},
      {"synthetic_per_class", {"10", "20", [](C c) { return str(c.synthetic_per_class); }}},
      {"synthetic_test_per_class", {"5", "6", [](C c) { return str(c.synthetic_test_per_class); }}},
      {"synthetic_spread", {"0.5", "0.25", [](C c) { return str(c.synthetic_spread); }}},
  };
}

ExperimentConfig tiny_synthetic(const fs::path& out) {
  return parse_config_text("clients = 4\nrounds = 5\nsynthetic_per_class = 40\nsynthetic_test_per_class = 20\n"
                           "eval_attacks = fgsm,pgd\nattack_steps = 3\n",
                           {{"out", out.string()}});
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("empty file with dataset=synthetic resolves every default") {
    const auto c = parse_config_text("", {{"dataset", "synthetic"}});
    CHECK(c.dataset == "synthetic");
    CHECK(c.fed.num_clients == 10);
    CHECK(c.fed.batch_size == 32);
    CHECK(c.fed.lr == 0.001);
    CHECK(c.fed.train_attack.kind == AttackKind::pgd);
    CHECK(c.fed.train_attack.epsilon == 8.0 / 255);
    CHECK(c.fed.train_attack.step_size == 2.0 / 255);
    CHECK(c.fed.train_attack.steps == 10);
    CHECK(c.fed.train_attack.random_start);
    CHECK(c.fed.algorithm == Algorithm::fedalc);
    CHECK(c.fed.prox_mu == 0.001);
    CHECK(c.fed.calib_mode == CalibrationMode::sqrt_inv_freq);
    CHECK(c.model == "mlp");
    CHECK(c.subsample_n == 5000);
    CHECK(c.eval_attacks.size() == 4);
    CHECK(c.eval_attacks[0].kind == AttackKind::fgsm);
    CHECK(c.eval_attacks[0].step_size == c.eval_attacks[0].epsilon);
  }

  TEST_CASE("rounds default to 100 for file-backed datasets") {
    const auto c = parse_config_text("dataset = mnist\ndata_dir = " FEDALC_DATA_DIR "/mnist\n");
    CHECK(c.fed.rounds == 100);
    CHECK(fs::exists(c.train_images));
    CHECK(fs::exists(c.test_labels));
  }

  TEST_CASE("alpha = 0.05") { CHECK(parse_config_text("alpha = 0.05\n").alpha == 0.05); }

  TEST_CASE("config errors are named") {
    CHECK(error_of("alpa = 0.05\n") == "unknown key: alpa");
    CHECK(error_of("", {{"alpa", "1"}}) == "unknown key: alpa");
    CHECK(error_of("rounds = ten\n").find("invalid value for key 'rounds'") != std::string::npos);
    CHECK(error_of("algo = scaffold\n").find("invalid value for key 'algo'") != std::string::npos);
    CHECK(error_of("alpha = -1\n").find("invalid value for key 'alpha'") != std::string::npos);
    CHECK(error_of("dataset = mnist\n").find("missing required key: train_images") != std::string::npos);
    CHECK(error_of("just words\n").find("line 1") != std::string::npos);
    CHECK(error_of("lr = 0\n").find("invalid configuration") != std::string::npos);
  }

  TEST_CASE("comments, blanks and fractions") {
    const auto c = parse_config_text("# header\n\n  epsilon = 16/255   # inline\nseed=3\n");
    CHECK(c.fed.train_attack.epsilon == 16.0 / 255);
    CHECK(c.fed.seed == 3);
  }

  TEST_CASE("flag beats file beats default, for every key") {
    const auto cases = key_cases();
    std::set<std::string> covered{"data_dir"};
    for (const auto& [k, _] : cases) covered.insert(k);
    CHECK(covered == std::set<std::string>(config_keys().begin(), config_keys().end()));

    const ConfigOverrides paths{{"train_images", "p1"}, {"train_labels", "p2"}, {"test_images", "p3"},
                                {"test_labels", "p4"}};
    for (const auto& [key, kc] : cases) {
      CAPTURE(key);
      // Keep file-backed datasets resolvable without touching the key under test.
      ConfigOverrides base;
      for (const auto& p : paths)
        if (p.first != key) base.push_back(p);
      const std::string file = key + " = " + kc.file_value + "\n";
      ConfigOverrides with_flag = base;
      with_flag.emplace_back(key, kc.flag_value);
      const std::string dflt = kc.probe(parse_config_text("", base));
      const std::string from_file = kc.probe(parse_config_text(file, base));
      const std::string from_flag = kc.probe(parse_config_text(file, with_flag));
      CHECK(from_file != dflt);
      CHECK(from_flag != from_file);
      CHECK(from_flag == kc.probe(parse_config_text("", with_flag)));
    }
  }

  TEST_CASE("data_dir precedence and explicit paths") {
    const fs::path root = fs::temp_directory_path() / "fedalc_cfg_test";
    for (const char* d : {"a", "b"}) {
      fs::create_directories(root / d);
      for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                            "t10k-labels-idx1-ubyte.gz"})
        std::ofstream(root / d / f) << "x";
    }
    const std::string file = "dataset = mnist\ndata_dir = " + (root / "a").string() + "\n";
    CHECK(parse_config_text(file).train_images == root / "a" / "train-images-idx3-ubyte");
    CHECK(parse_config_text(file).test_labels == root / "a" / "t10k-labels-idx1-ubyte.gz");
    CHECK(parse_config_text(file, {{"data_dir", (root / "b").string()}}).train_images ==
          root / "b" / "train-images-idx3-ubyte");
    CHECK(parse_config_text(file, {{"train_images", "mine"}}).train_images == "mine");
    fs::remove_all(root);
  }

  TEST_CASE("config file on disk") {
    const fs::path p = fs::temp_directory_path() / "fedalc_cfg.txt";
    std::ofstream(p) << "alpha = 0.3\nclients = 6\n";
    const auto c = parse_config(p, {{"clients", "8"}});
    CHECK(c.alpha == 0.3);
    CHECK(c.fed.num_clients == 8);
    fs::remove(p);
    CHECK_THROWS_AS(parse_config(fs::path("/nonexistent/fedalc.cfg")), ConfigError);
    CHECK(parse_config(std::nullopt).dataset == "synthetic");
  }

  TEST_CASE("build_model picks the architecture") {
    ExperimentConfig c;
    CHECK(build_model(c, {1, 28, 28}, 10).shape_at(1) == Shape{784});
    c.model = "cnn";
    CHECK(build_model(c, {1, 28, 28}, 10).num_layers() == 10);
    CHECK_THROWS_AS(build_model(c, {2}, 3), ConfigError);
  }

  TEST_CASE("synthetic run writes rounds + 1 rows of finite values") {
    const fs::path out = fs::temp_directory_path() / "fedalc_h1" / "m.csv";
    const auto cfg = tiny_synthetic(out);
    const auto res = run_experiment(cfg);
    CHECK(res.rows.size() == 5);
    const std::string text = read_file(out);
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    CHECK(line.rfind("# ", 0) == 0);
    std::getline(in, line);
    CHECK(line == kCsvHeader);
    int rows = 0;
    std::string last_round;
    while (std::getline(in, line)) {
      ++rows;
      std::vector<std::string> cells;
      std::stringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      if (line.back() == ',') cells.push_back("");
      REQUIRE(cells.size() == 10);
      last_round = cells[0];
      CHECK(cells[1] == "fedalc");
      for (int i : {3, 4, 5, 6, 8}) {
        const double v = std::stod(cells[i]);
        CHECK(std::isfinite(v));
        if (i >= 5) CHECK((v >= 0.0 && v <= 1.0));
      }
      CHECK(cells[7].empty());
      CHECK(cells[9].empty());
    }
    CHECK(rows == 6);
    CHECK(last_round == "-1");
    fs::remove_all(out.parent_path());
  }

  TEST_CASE("identical reruns give identical CSVs apart from the timestamp") {
    const fs::path dir = fs::temp_directory_path() / "fedalc_h2";
    run_experiment(tiny_synthetic(dir / "a.csv"));
    run_experiment(tiny_synthetic(dir / "b.csv"));
    const auto a = read_file(dir / "a.csv"), b = read_file(dir / "b.csv");
    CHECK(strip_comments(a) == strip_comments(b));
    CHECK(strip_comments(a).size() + 10 < a.size());
    fs::remove_all(dir);
  }

  TEST_CASE("csv_row formatting") {
    RoundMetrics m;
    m.round = 3;
    m.algorithm = Algorithm::fedprox_at;
    m.seed = 7;
    m.alpha = 0.05;
    m.train_loss = 1.0 / 3;
    m.natural_acc = 0.5;
    m.robust_acc[AttackKind::pgd] = 0.25;
    CHECK(csv_row(m) == "3,fedprox_at,7,0.050000,0.333333,0.500000,,,0.250000,");
  }

  TEST_CASE("exit codes") {
    CHECK(exit_code_for(ConfigError("x")) == 2);
    CHECK(exit_code_for(DataError("x")) == 3);
    CHECK(exit_code_for(NumericError("x")) == 4);
    CHECK(exit_code_for(std::runtime_error("x")) == 1);
  }

  TEST_CASE("gradcheck suite passes and covers every layer type") {
    const auto cases = gradcheck_suite(3, 12);
    std::set<std::string> seen;
    for (const auto& c : cases) {
      CHECK(c.report.passed);
      for (const char* name : {"Dense", "ReLU", "Conv2d", "MaxPool2d", "Flatten"})
        if (c.description.find(name) != std::string::npos) seen.insert(name);
    }
    CHECK(seen.size() == 5);
  }

  TEST_CASE("partition helper is seeded by the run seed") {
    const auto cfg = parse_config_text("seed = 4\n");
    const auto data = load_data(cfg);
    CHECK(make_partition(cfg, data.train).clients == make_partition(cfg, data.train).clients);
    const auto other = parse_config_text("seed = 5\n");
    CHECK(make_partition(other, load_data(other).train).clients != make_partition(cfg, data.train).clients);
  }

  TEST_CASE("subsample larger than the training set is a config error") {
    const auto cfg = parse_config_text("dataset = mnist\nsubsample = 9000\ndata_dir = " FEDALC_DATA_DIR "/mnist\n");
    CHECK_THROWS_AS(load_data(cfg), ConfigError);
  }
}
