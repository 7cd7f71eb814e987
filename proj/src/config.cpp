#include "rlbvae/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "rlbvae/errors.hpp"
#include "rlbvae/io.hpp"

namespace rlbvae {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(key + ": cannot parse '" + raw + "'");
  }
  return v;
}

bool parse_flag(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + raw + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& raw) {
  std::vector<T> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, item));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

struct Field {
  ConfigKey key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T, typename Member>
Field number(std::string name, std::string help, Member member) {
  Field f{{name, std::move(help)}, {}, {}};
  f.set = [name, member](ExperimentConfig& c, const std::string& v) {
    member(c) = parse_number<T>(name, v);
  };
  f.get = [member](const ExperimentConfig& c) {
    auto& m = member(const_cast<ExperimentConfig&>(c));
    if constexpr (std::is_floating_point_v<T>) {
      return format_double(m);
    } else {
      return std::to_string(m);
    }
  };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using C = ExperimentConfig;
    std::vector<Field> t;
    t.push_back(number<std::size_t>("data.train", "training stimuli",
                                    [](C& c) -> auto& { return c.data.train; }));
    t.push_back(number<std::size_t>("data.test_per_category", "test stimuli per category",
                                    [](C& c) -> auto& { return c.data.test_per_category; }));
    t.push_back(number<int>("data.size", "image side in pixels",
                            [](C& c) -> auto& { return c.data.size; }));
    t.push_back(number<double>("data.noise_sigma", "pixel noise standard deviation",
                               [](C& c) -> auto& { return c.data.noise_sigma; }));
    t.push_back({{"data.dir", "external image directory (empty: generate stimuli)"},
                 [](C& c, const std::string& v) { c.data_dir = trim(v); },
                 [](const C& c) { return c.data_dir.string(); }});
    t.push_back({{"data.manifest", "external attribute manifest"},
                 [](C& c, const std::string& v) { c.data_manifest = trim(v); },
                 [](const C& c) { return c.data_manifest.string(); }});
    t.push_back({{"vae.n_z", "latent sizes, comma-separated"},
                 [](C& c, const std::string& v) { c.vae.n_z = parse_list<int>("vae.n_z", v); },
                 [](const C& c) { return join(c.vae.n_z); }});
    t.push_back({{"vae.beta", "KL weights, comma-separated"},
                 [](C& c, const std::string& v) {
                   c.vae.beta = parse_list<double>("vae.beta", v);
                 },
                 [](const C& c) { return join(c.vae.beta); }});
    t.push_back(number<double>("vae.upsilon", "utility weight during pretraining",
                               [](C& c) -> auto& { return c.vae.upsilon; }));
    t.push_back(number<int>("vae.epochs", "pretraining epochs",
                            [](C& c) -> auto& { return c.vae.epochs; }));
    t.push_back(number<int>("vae.batch_size", "pretraining batch size",
                            [](C& c) -> auto& { return c.vae.batch_size; }));
    t.push_back(number<int>("vae.hidden", "hidden units",
                            [](C& c) -> auto& { return c.vae.hidden; }));
    t.push_back(number<double>("vae.learning_rate", "pretraining Adam step size",
                               [](C& c) -> auto& { return c.vae.learning_rate; }));
    t.push_back(number<std::size_t>("vae.replicates", "pretraining seeds per cell",
                                    [](C& c) -> auto& { return c.vae.replicates; }));
    t.push_back(number<int>("engine.k_max", "largest scope",
                            [](C& c) -> auto& { return c.engine.k_max; }));
    t.push_back(number<int>("engine.k_total", "largest hypothesis feature set",
                            [](C& c) -> auto& { return c.engine.k_total; }));
    t.push_back(number<double>("engine.ridge", "ridge penalty",
                               [](C& c) -> auto& { return c.engine.ridge; }));
    t.push_back(number<std::size_t>("engine.window", "scoring window, 0 = whole buffer",
                                    [](C& c) -> auto& { return c.engine.window; }));
    t.push_back(number<std::size_t>("bandit.trials", "trials per run",
                                    [](C& c) -> auto& { return c.bandit.trials; }));
    t.push_back(number<std::size_t>("bandit.runs", "runs per cell",
                                    [](C& c) -> auto& { return c.bandit.runs; }));
    t.push_back(number<double>("bandit.temperature", "softmax temperature in points",
                               [](C& c) -> auto& { return c.bandit.temperature; }));
    t.push_back(number<double>("bandit.upsilon", "fine-tune utility weight, 0 freezes",
                               [](C& c) -> auto& { return c.bandit.upsilon; }));
    t.push_back(number<double>("bandit.beta", "fine-tune KL weight",
                               [](C& c) -> auto& { return c.bandit.beta; }));
    t.push_back(number<double>("bandit.learning_rate", "fine-tune Adam step size",
                               [](C& c) -> auto& { return c.bandit.learning_rate; }));
    t.push_back(number<std::size_t>("bandit.snapshot_every", "latent snapshot interval",
                                    [](C& c) -> auto& { return c.bandit.snapshot_every; }));
    t.push_back({{"output.run_logs", "write per-run CSV logs"},
                 [](C& c, const std::string& v) {
                   c.write_run_logs = parse_flag("output.run_logs", v);
                 },
                 [](const C& c) { return std::string(c.write_run_logs ? "true" : "false"); }});
    t.push_back({{"experiment.out", "output directory"},
                 [](C& c, const std::string& v) { c.out = trim(v); },
                 [](const C& c) { return c.out.string(); }});
    t.push_back(number<std::uint64_t>("experiment.seed", "master seed",
                                      [](C& c) -> auto& { return c.seed; }));
    t.push_back(number<int>("experiment.jobs", "worker threads",
                            [](C& c) -> auto& { return c.jobs; }));
    return t;
  }();
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key.name == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

ExperimentConfig::ExperimentConfig() { bandit.runs = 200; }

void ExperimentConfig::validate() const {
  if (data.train < 4) throw ConfigError("data.train must be >= 4");
  if (data.test_per_category < 1) throw ConfigError("data.test_per_category must be >= 1");
  if (data.size < kMinImageSize) throw ConfigError("data.size must be >= 16");
  if (data.noise_sigma < 0) throw ConfigError("data.noise_sigma must be >= 0");
  if (data_dir.empty() != data_manifest.empty()) {
    throw ConfigError("data.dir and data.manifest must be given together");
  }
  if (vae.n_z.empty()) throw ConfigError("vae.n_z is empty");
  for (int n : vae.n_z) {
    if (n < 1) throw ConfigError("vae.n_z entries must be >= 1");
    if (engine.k_max > n) throw ConfigError("engine.k_max exceeds vae.n_z " + std::to_string(n));
  }
  if (vae.beta.empty()) throw ConfigError("vae.beta is empty");
  for (double b : vae.beta) {
    if (!(b >= 0)) throw ConfigError("vae.beta entries must be >= 0");
  }
  if (!(vae.upsilon >= 0)) throw ConfigError("vae.upsilon must be >= 0");
  if (vae.epochs < 0) throw ConfigError("vae.epochs must be >= 0");
  if (vae.batch_size < 1) throw ConfigError("vae.batch_size must be >= 1");
  if (vae.hidden < 1) throw ConfigError("vae.hidden must be >= 1");
  if (!(vae.learning_rate >= 0)) throw ConfigError("vae.learning_rate must be >= 0");
  if (vae.replicates < 1) throw ConfigError("vae.replicates must be >= 1");
  if (engine.k_max < 1) throw ConfigError("engine.k_max must be >= 1");
  if (engine.k_total < 1) throw ConfigError("engine.k_total must be >= 1");
  if (!(engine.ridge >= 0)) throw ConfigError("engine.ridge must be >= 0");
  if (bandit.trials < 1) throw ConfigError("bandit.trials must be >= 1");
  if (bandit.runs < 1) throw ConfigError("bandit.runs must be >= 1");
  if (!(bandit.temperature > 0)) throw ConfigError("bandit.temperature must be > 0");
  if (!(bandit.upsilon >= 0)) throw ConfigError("bandit.upsilon must be >= 0");
  if (!(bandit.beta >= 0)) throw ConfigError("bandit.beta must be >= 0");
  if (!(bandit.learning_rate >= 0)) throw ConfigError("bandit.learning_rate must be >= 0");
  if (out.empty()) throw ConfigError("experiment.out is empty");
  if (jobs < 1) throw ConfigError("experiment.jobs must be >= 1");
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void set_config_value(ExperimentConfig& config, const std::string& key,
                      const std::string& value) {
  field(key).set(config, value);
}

std::string get_config_value(const ExperimentConfig& config, const std::string& key) {
  return field(key).get(config);
}

void apply_config_text(ExperimentConfig& config, const std::string& text,
                       const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.find('.') == std::string::npos) {
      throw ConfigError(where + "key '" + key + "' has no section");
    }
    try {
      set_config_value(config, key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void apply_config_file(ExperimentConfig& config, const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  apply_config_text(config, text, path.string());
}

std::string config_to_text(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : fields()) {
    const std::string value = f.get(config);
    out += f.key.name + (value.empty() ? " =\n" : " = " + value + "\n");
  }
  return out;
}

}  // namespace rlbvae
