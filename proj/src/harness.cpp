#include "rlbvae/harness.hpp"

#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "rlbvae/errors.hpp"

namespace rlbvae {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t beta_bits(double beta) { return std::bit_cast<std::uint64_t>(beta); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string padded(std::size_t i, int width) {
  std::ostringstream ss;
  ss << std::setw(width) << std::setfill('0') << i;
  return ss.str();
}

struct MeanSem {
  double mean = 0;
  double sem = 0;
};

MeanSem mean_sem(const std::vector<double>& v) {
  MeanSem out;
  if (v.empty()) return out;
  const double n = double(v.size());
  for (double x : v) out.mean += x;
  out.mean /= n;
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.sem = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

std::mutex log_mutex;

template <typename... Args>
void progress(std::ostream* log, const Args&... args) {
  if (!log) return;
  std::lock_guard lock(log_mutex);
  ((*log) << ... << args) << '\n';
  log->flush();
}

std::string phase_name(std::size_t trial, std::size_t last) {
  if (trial == 0) return "pre";
  if (trial == last) return "post";
  return "trial_" + std::to_string(trial);
}

CsvTable pretrain_summary(const std::vector<const Checkpoint*>& reps) {
  CsvTable t({"epoch", "mean_reconstruction", "sem_reconstruction", "mean_kl", "sem_kl",
              "mean_total", "sem_total"});
  const std::size_t epochs = reps.front()->loss_curve.size();
  for (std::size_t e = 0; e < epochs; ++e) {
    std::vector<double> rec, kl, total;
    for (const auto* r : reps) {
      rec.push_back(r->loss_curve.at(e).reconstruction);
      kl.push_back(r->loss_curve.at(e).kl);
      total.push_back(r->loss_curve.at(e).total);
    }
    const auto a = mean_sem(rec), b = mean_sem(kl), c = mean_sem(total);
    t.add_row({std::to_string(e), format_double(a.mean), format_double(a.sem),
               format_double(b.mean), format_double(b.sem), format_double(c.mean),
               format_double(c.sem)});
  }
  return t;
}

// Per-run result with the latent snapshots reduced to representation
// differences.
struct RunOutcome {
  RunLog log;
  std::vector<std::size_t> snapshot_trials;
  std::vector<std::array<double, 4>> repr;
};

RunOutcome run_one(const NetworkParams& params, const std::vector<Stimulus>& test,
                   const HypothesisEngine& engine, const RunConfig& rc, std::uint64_t seed) {
  Rng rng(seed);
  RunOutcome out;
  out.log = run_bandit(params, test, engine, rc, rng);
  std::vector<Category> cats;
  cats.reserve(test.size());
  for (const auto& s : test) cats.push_back(s.category());
  for (const auto& snap : out.log.snapshots) {
    out.snapshot_trials.push_back(snap.trial);
    out.repr.push_back(representation_difference(snap.mu, cats));
  }
  out.log.snapshots.clear();
  return out;
}

CsvTable accuracy_table(const std::vector<RunLog>& logs) {
  const SeriesStats s = accuracy_stats(logs);
  LogFit fit;
  if (s.mean.size() >= 2) fit = fit_log_curve(s.mean);
  CsvTable t({"trial", "mean_accuracy", "sem", "log_fit_a", "log_fit_b"});
  for (std::size_t i = 0; i < s.mean.size(); ++i) {
    t.add_row({std::to_string(i + 1), format_double(s.mean[i]), format_double(s.sem[i]),
               format_double(fit.a), format_double(fit.b)});
  }
  return t;
}

CsvTable representation_table(const std::vector<RunOutcome>& runs) {
  CsvTable t({"phase", "category", "mean_repr_mse", "sem"});
  const auto& trials = runs.front().snapshot_trials;
  const std::size_t last = trials.back();
  for (std::size_t k = 0; k < trials.size(); ++k) {
    for (Category c : {Category::glasses, Category::hat, Category::both}) {
      std::vector<double> v;
      v.reserve(runs.size());
      for (const auto& r : runs) v.push_back(r.repr.at(k)[std::size_t(c)]);
      const auto ms = mean_sem(v);
      t.add_row({phase_name(trials[k], last), category_name(c), format_double(ms.mean),
                 format_double(ms.sem)});
    }
  }
  return t;
}

struct PretrainPhase {
  std::vector<CellResult> cells;
  // checkpoints[cell][replicate]; empty for failed cells
  std::vector<std::vector<Checkpoint>> checkpoints;
};

PretrainPhase pretrain_cells(const ExperimentConfig& config, const Dataset& dataset,
                             std::ostream* log) {
  PretrainPhase phase;
  for (int n_z : config.vae.n_z) {
    for (double beta : config.vae.beta) {
      CellResult c;
      c.key = {n_z, beta};
      phase.cells.push_back(c);
    }
  }
  const std::size_t reps = config.vae.replicates;
  const std::size_t n_tasks = phase.cells.size() * reps;
  std::vector<std::optional<Checkpoint>> results(n_tasks);
  std::vector<std::string> errors(n_tasks);
  std::vector<double> seconds(n_tasks, 0.0);
  fs::create_directories(config.out / "checkpoints");
  fs::create_directories(config.out / "curves");

  parallel_for(n_tasks, config.jobs, [&](std::size_t task) {
    const std::size_t cell = task / reps, rep = task % reps;
    const CellKey key = phase.cells[cell].key;
    const auto t0 = Clock::now();
    try {
      PretrainConfig pc;
      pc.n_z = key.n_z;
      pc.beta = key.beta;
      pc.hidden = config.vae.hidden;
      pc.epochs = config.vae.epochs;
      pc.batch_size = config.vae.batch_size;
      pc.upsilon = config.vae.upsilon;
      pc.learning_rate = config.vae.learning_rate;
      pc.seed = derive_seed(config.seed, "harness.pretrain",
                            {std::uint64_t(key.n_z), beta_bits(key.beta), rep});
      Checkpoint ck = pretrain(dataset, pc);
      const std::string stem = key.id() + "_rep" + std::to_string(rep);
      save_checkpoint(ck, config.out / "checkpoints" / (stem + ".ckpt"));
      write_loss_curve_csv(ck.loss_curve, config.out / "curves" / (stem + ".csv"));
      ck.adam = AdamState{};
      results[task] = std::move(ck);
    } catch (const std::exception& e) {
      errors[task] = e.what();
    }
    seconds[task] = seconds_since(t0);
    std::ostringstream secs;
    secs << std::fixed << std::setprecision(1) << seconds[task];
    progress(log, "pretrain ", key.id(), " rep ", rep,
             errors[task].empty() ? " done " : " FAILED: " + errors[task] + " ", secs.str(), " s");
  });

  phase.checkpoints.resize(phase.cells.size());
  for (std::size_t cell = 0; cell < phase.cells.size(); ++cell) {
    CellResult& c = phase.cells[cell];
    c.ok = true;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      const std::size_t task = cell * reps + rep;
      c.pretrain_seconds += seconds[task];
      if (!errors[task].empty()) {
        if (c.ok) c.error = "replicate " + std::to_string(rep) + ": " + errors[task];
        c.ok = false;
        continue;
      }
      const std::string stem = c.key.id() + "_rep" + std::to_string(rep);
      c.checkpoints.push_back("checkpoints/" + stem + ".ckpt");
      c.loss_curves.push_back("curves/" + stem + ".csv");
    }
    if (!c.ok) continue;
    std::vector<Checkpoint> cks;
    std::vector<const Checkpoint*> ptrs;
    for (std::size_t rep = 0; rep < reps; ++rep) cks.push_back(std::move(*results[cell * reps + rep]));
    for (const auto& ck : cks) ptrs.push_back(&ck);
    c.pretrain_summary = "aggregate/" + c.key.id() + "_pretrain.csv";
    fs::create_directories(config.out / "aggregate");
    pretrain_summary(ptrs).save(config.out / c.pretrain_summary);
    phase.checkpoints[cell] = std::move(cks);
  }
  return phase;
}

void write_manifest(const ExperimentManifest& m, const fs::path& out) {
  write_file_atomic(out / "manifest.txt", m.str(true));
}

std::map<std::string, std::string> parse_kv_block(const std::vector<std::string>& lines,
                                                  std::vector<std::pair<std::string, std::string>>* ordered) {
  std::map<std::string, std::string> kv;
  for (const auto& l : lines) {
    const auto eq = l.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = trim(l.substr(0, eq)), v = trim(l.substr(eq + 1));
    if (ordered) ordered->emplace_back(k, v);
    kv[k] = v;
  }
  return kv;
}

fs::path require_artifact(const fs::path& root, const std::string& rel) {
  const fs::path p = root / rel;
  if (rel.empty() || !fs::exists(p)) {
    throw IngestionError("missing artifact: " + p.string());
  }
  return p;
}

}  // namespace

std::string CellKey::id() const {
  return "nz" + std::to_string(n_z) + "_beta" + format_double(beta);
}

bool ExperimentManifest::complete() const {
  if (cells.empty()) return false;
  for (const auto& c : cells) {
    if (!c.ok) return false;
  }
  return true;
}

std::string ExperimentManifest::str(bool with_timings) const {
  std::ostringstream o;
  o << "tool_version = " << tool_version << "\n";
  o << "status = " << (complete() ? "complete" : "partial") << "\n";
  if (with_timings) o << "total_seconds = " << format_double(total_seconds) << "\n";
  o << "\n[config]\n" << config_text;
  for (const auto& c : cells) {
    o << "\n[cell " << c.key.id() << "]\n";
    o << "n_z = " << c.key.n_z << "\n";
    o << "beta = " << format_double(c.key.beta) << "\n";
    o << "status = " << (c.ok ? "ok" : "failed") << "\n";
    if (!c.error.empty()) o << "error = " << c.error << "\n";
    for (const auto& p : c.checkpoints) o << "checkpoint = " << p << "\n";
    for (const auto& p : c.loss_curves) o << "loss_curve = " << p << "\n";
    if (!c.pretrain_summary.empty()) o << "pretrain_summary = " << c.pretrain_summary << "\n";
    if (!c.accuracy.empty()) o << "accuracy = " << c.accuracy << "\n";
    if (!c.representation.empty()) o << "representation = " << c.representation << "\n";
    if (!c.runs_dir.empty()) o << "runs_dir = " << c.runs_dir << "\n";
    if (with_timings) {
      o << "pretrain_seconds = " << format_double(c.pretrain_seconds) << "\n";
      o << "bandit_seconds = " << format_double(c.bandit_seconds) << "\n";
    }
  }
  return o.str();
}

ExperimentManifest ExperimentManifest::parse(const std::string& text) {
  ExperimentManifest m;
  std::vector<std::pair<std::string, std::vector<std::string>>> sections{{"", {}}};
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw IngestionError("manifest: malformed section " + line);
      sections.push_back({line.substr(1, line.size() - 2), {}});
      continue;
    }
    sections.back().second.push_back(line);
  }
  bool saw_version = false;
  for (const auto& [name, lines] : sections) {
    std::vector<std::pair<std::string, std::string>> ordered;
    const auto kv = parse_kv_block(lines, &ordered);
    if (name.empty()) {
      if (kv.count("tool_version")) {
        m.tool_version = kv.at("tool_version");
        saw_version = true;
      }
      if (kv.count("total_seconds")) m.total_seconds = std::stod(kv.at("total_seconds"));
    } else if (name == "config") {
      for (const auto& l : lines) m.config_text += l + "\n";
    } else if (name.rfind("cell ", 0) == 0) {
      CellResult c;
      try {
        c.key.n_z = std::stoi(kv.at("n_z"));
        c.key.beta = std::stod(kv.at("beta"));
        c.ok = kv.at("status") == "ok";
      } catch (const std::exception&) {
        throw IngestionError("manifest: incomplete section [" + name + "]");
      }
      for (const auto& [k, v] : ordered) {
        if (k == "error") c.error = v;
        else if (k == "checkpoint") c.checkpoints.push_back(v);
        else if (k == "loss_curve") c.loss_curves.push_back(v);
        else if (k == "pretrain_summary") c.pretrain_summary = v;
        else if (k == "accuracy") c.accuracy = v;
        else if (k == "representation") c.representation = v;
        else if (k == "runs_dir") c.runs_dir = v;
        else if (k == "pretrain_seconds") c.pretrain_seconds = std::stod(v);
        else if (k == "bandit_seconds") c.bandit_seconds = std::stod(v);
      }
      m.cells.push_back(std::move(c));
    }
  }
  if (!saw_version) throw IngestionError("manifest: missing tool_version");
  return m;
}

ExperimentManifest ExperimentManifest::load(const fs::path& path) {
  if (!fs::exists(path)) throw IngestionError("missing manifest: " + path.string());
  return parse(read_file(path));
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(std::max(jobs, 1), n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Dataset load_or_make_dataset(const ExperimentConfig& config) {
  if (!config.data_manifest.empty()) {
    return load_external_dataset(config.data_dir, config.data_manifest, config.data.size);
  }
  DatasetConfig dc = config.data;
  dc.seed = derive_seed(config.seed, "harness.dataset");
  return make_dataset(dc);
}

namespace {

ExperimentManifest sweep(const ExperimentConfig& config, bool with_bandit, std::ostream* log) {
  config.validate();
  const auto t0 = Clock::now();
  fs::create_directories(config.out);
  const Dataset dataset = load_or_make_dataset(config);

  PretrainPhase phase = pretrain_cells(config, dataset, log);
  ExperimentManifest manifest;
  manifest.config_text = config_to_text(config);

  if (with_bandit) {
    struct Task {
      std::size_t cell, run;
    };
    std::vector<Task> tasks;
    std::map<int, std::shared_ptr<const std::vector<Hypothesis>>> spaces;
    for (std::size_t cell = 0; cell < phase.cells.size(); ++cell) {
      if (!phase.cells[cell].ok) continue;
      const int n_z = phase.cells[cell].key.n_z;
      if (!spaces.count(n_z)) spaces[n_z] = HypothesisEngine::build_space(n_z, config.engine);
      for (std::size_t r = 0; r < config.bandit.runs; ++r) tasks.push_back({cell, r});
    }
    for (auto& c : phase.cells) {
      if (c.ok && config.write_run_logs) {
        c.runs_dir = "runs/" + c.key.id();
        fs::create_directories(config.out / c.runs_dir);
      }
    }
    std::vector<std::optional<RunOutcome>> outcomes(tasks.size());
    std::vector<std::string> errors(tasks.size());
    std::vector<double> seconds(tasks.size(), 0.0);
    const std::size_t reps = config.vae.replicates;

    parallel_for(tasks.size(), config.jobs, [&](std::size_t i) {
      const auto [cell, run] = tasks[i];
      const CellResult& c = phase.cells[cell];
      const auto t1 = Clock::now();
      try {
        const HypothesisEngine engine(c.key.n_z, config.engine, spaces.at(c.key.n_z));
        const std::uint64_t seed = derive_seed(
            config.seed, "harness.bandit", {std::uint64_t(c.key.n_z), beta_bits(c.key.beta), run});
        RunOutcome o = run_one(phase.checkpoints[cell][run % reps].params, dataset.test, engine,
                               config.bandit, seed);
        if (!c.runs_dir.empty()) {
          const fs::path base = config.out / c.runs_dir / ("run_" + padded(run, 4));
          run_log_table(o.log).save(base.string() + ".csv");
          hypothesis_trace_table(o.log).save(base.string() + "_hypotheses.csv");
        }
        outcomes[i] = std::move(o);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
      seconds[i] = seconds_since(t1);
      if ((run + 1) % 50 == 0 || run + 1 == config.bandit.runs) {
        progress(log, "bandit ", c.key.id(), " run ", run + 1, "/", config.bandit.runs);
      }
    });

    for (std::size_t cell = 0; cell < phase.cells.size(); ++cell) {
      CellResult& c = phase.cells[cell];
      if (!c.ok) continue;
      std::vector<RunOutcome> runs;
      std::vector<RunLog> logs;
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (tasks[i].cell != cell) continue;
        c.bandit_seconds += seconds[i];
        if (!errors[i].empty()) {
          if (c.ok) c.error = "bandit run " + std::to_string(tasks[i].run) + ": " + errors[i];
          c.ok = false;
          continue;
        }
        logs.push_back(outcomes[i]->log);
        runs.push_back(std::move(*outcomes[i]));
      }
      if (!c.ok) continue;
      try {
        c.accuracy = "aggregate/" + c.key.id() + "_accuracy.csv";
        accuracy_table(logs).save(config.out / c.accuracy);
        c.representation = "aggregate/" + c.key.id() + "_representation.csv";
        representation_table(runs).save(config.out / c.representation);
      } catch (const std::exception& e) {
        c.ok = false;
        c.error = std::string("aggregation: ") + e.what();
        c.accuracy.clear();
        c.representation.clear();
      }
    }
  }

  manifest.cells = std::move(phase.cells);
  manifest.total_seconds = seconds_since(t0);
  write_manifest(manifest, config.out);
  return manifest;
}

}  // namespace

ExperimentManifest run_pretraining(const ExperimentConfig& config) {
  return sweep(config, false, nullptr);
}

ExperimentManifest run_sweep(const ExperimentConfig& config) {
  return sweep(config, true, nullptr);
}

std::vector<fs::path> analyze(const fs::path& manifest_path, fs::path out_dir) {
  const ExperimentManifest m = ExperimentManifest::load(manifest_path);
  const fs::path root = manifest_path.parent_path();
  if (out_dir.empty()) out_dir = root / "analysis";

  CsvTable left({"n_z", "beta", "epoch", "mean_reconstruction", "sem_reconstruction",
                 "mean_kl", "sem_kl"});
  CsvTable middle({"n_z", "beta", "trial", "mean_accuracy", "sem", "log_fit_a", "log_fit_b",
                   "log_fit_value"});
  CsvTable right({"n_z", "beta", "phase", "category", "mean_repr_mse", "sem"});
  bool any_bandit = false;

  for (const auto& c : m.cells) {
    if (c.pretrain_summary.empty()) continue;
    const std::string nz = std::to_string(c.key.n_z), beta = format_double(c.key.beta);
    const CsvTable s = CsvTable::load(require_artifact(root, c.pretrain_summary));
    for (const auto& row : s.rows()) {
      left.add_row({nz, beta, row[s.column("epoch")], row[s.column("mean_reconstruction")],
                    row[s.column("sem_reconstruction")], row[s.column("mean_kl")],
                    row[s.column("sem_kl")]});
    }
    if (c.accuracy.empty() && c.representation.empty()) continue;
    any_bandit = true;
    const CsvTable acc = CsvTable::load(require_artifact(root, c.accuracy));
    for (const auto& row : acc.rows()) {
      const double t = std::stod(row[acc.column("trial")]);
      const double a = std::stod(row[acc.column("log_fit_a")]);
      const double b = std::stod(row[acc.column("log_fit_b")]);
      middle.add_row({nz, beta, row[acc.column("trial")], row[acc.column("mean_accuracy")],
                      row[acc.column("sem")], row[acc.column("log_fit_a")],
                      row[acc.column("log_fit_b")], format_double(a * std::log(t) + b)});
    }
    const CsvTable rep = CsvTable::load(require_artifact(root, c.representation));
    for (const auto& row : rep.rows()) {
      right.add_row({nz, beta, row[rep.column("phase")], row[rep.column("category")],
                     row[rep.column("mean_repr_mse")], row[rep.column("sem")]});
    }
  }
  if (left.rows().empty()) throw IngestionError("manifest lists no pretraining results");

  fs::create_directories(out_dir);
  std::vector<fs::path> written{out_dir / "panel_left.csv"};
  left.save(written.back());
  if (any_bandit) {
    written.push_back(out_dir / "panel_middle.csv");
    middle.save(written.back());
    written.push_back(out_dir / "panel_right.csv");
    right.save(written.back());
  }
  return written;
}

// ---------------------------------------------------------------------------
// Command line

namespace {

struct Overrides {
  std::string config_file;
  std::map<std::string, std::string> values;  // key -> raw value
};

// Registers --config and every config key on a subcommand. Short aliases
// map to the same storage as their dotted key.
void add_config_options(CLI::App* cmd, Overrides& ov,
                        const std::map<std::string, std::string>& aliases) {
  cmd->add_option("--config", ov.config_file, "key = value config file")
      ->check(CLI::ExistingFile);
  const ExperimentConfig defaults;
  for (const auto& k : config_keys()) {
    std::string names = "--" + k.name;
    for (const auto& [alias, key] : aliases) {
      if (key == k.name) names += ",--" + alias;
    }
    cmd->add_option_function<std::string>(
        names, [&ov, key = k.name](const std::string& v) { ov.values[key] = v; },
        k.help + " [" + get_config_value(defaults, k.name) + "]")
        ->type_name("VALUE");
  }
}

ExperimentConfig build_config(const Overrides& ov) {
  ExperimentConfig config;
  if (!ov.config_file.empty()) apply_config_file(config, ov.config_file);
  for (const auto& k : config_keys()) {
    if (auto it = ov.values.find(k.name); it != ov.values.end()) {
      set_config_value(config, k.name, it->second);
    }
  }
  config.validate();
  return config;
}

const std::map<std::string, std::string> kCommonAliases = {
    {"seed", "experiment.seed"}, {"out", "experiment.out"}, {"jobs", "experiment.jobs"}};

int finish_sweep(const ExperimentManifest& m, std::ostream& out, std::ostream& err) {
  for (const auto& c : m.cells) {
    if (!c.ok) err << "cell " << c.key.id() << " failed: " << c.error << "\n";
  }
  out << "manifest status: " << (m.complete() ? "complete" : "partial") << "\n";
  return m.complete() ? 0 : 2;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"RL beta-VAE experiments on synthetic face stimuli", "rlbvae"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  auto with_data_aliases = kCommonAliases;
  with_data_aliases.insert({{"train", "data.train"},
                            {"test-per-category", "data.test_per_category"},
                            {"size", "data.size"}});

  Overrides gen_ov, pre_ov, bandit_ov, repro_ov;
  auto* gen = app.add_subcommand("generate-data", "render a stimulus dataset as PGM files");
  add_config_options(gen, gen_ov, with_data_aliases);

  auto* pre = app.add_subcommand("pretrain", "pretrain every (n_z, beta) cell");
  add_config_options(pre, pre_ov, kCommonAliases);

  std::string checkpoint;
  auto* bandit = app.add_subcommand("bandit", "run the bandit on one checkpoint");
  add_config_options(bandit, bandit_ov, kCommonAliases);
  bandit->add_option("--checkpoint", checkpoint, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);

  std::string manifest_path, analysis_out;
  auto* an = app.add_subcommand("analyze", "write the three panel files from a manifest");
  an->add_option("--manifest", manifest_path, "manifest.txt of a finished sweep")->required();
  an->add_option("--out", analysis_out, "output directory (default: <manifest dir>/analysis)");

  auto* repro = app.add_subcommand("reproduce-figure2", "full sweep followed by analyze");
  add_config_options(repro, repro_ov, kCommonAliases);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      ExperimentConfig config = build_config(gen_ov);
      config.data.seed = config.seed;
      const Dataset ds = make_dataset(config.data);
      export_dataset(ds, config.out);
      out << "wrote " << ds.train.size() + ds.test.size() << " stimuli to " << config.out.string()
          << "\n";
      return 0;
    }
    if (pre->parsed()) {
      const ExperimentConfig config = build_config(pre_ov);
      return finish_sweep(sweep(config, false, &err), out, err);
    }
    if (bandit->parsed()) {
      const ExperimentConfig config = build_config(bandit_ov);
      const Checkpoint ck = load_checkpoint(checkpoint);
      const Dataset ds = load_or_make_dataset(config);
      const int n_z = ck.params.shape.n_z;
      const HypothesisEngine engine(n_z, config.engine);
      const CellKey key{n_z, config.vae.beta.front()};
      std::vector<RunOutcome> runs(config.bandit.runs);
      fs::create_directories(config.out / "runs");
      parallel_for(runs.size(), config.jobs, [&](std::size_t r) {
        const std::uint64_t seed = derive_seed(config.seed, "harness.bandit",
                                               {std::uint64_t(n_z), beta_bits(key.beta), r});
        runs[r] = run_one(ck.params, ds.test, engine, config.bandit, seed);
        if (config.write_run_logs) {
          const fs::path base = config.out / "runs" / ("run_" + padded(r, 4));
          run_log_table(runs[r].log).save(base.string() + ".csv");
          hypothesis_trace_table(runs[r].log).save(base.string() + "_hypotheses.csv");
        }
      });
      std::vector<RunLog> logs;
      for (const auto& r : runs) logs.push_back(r.log);
      accuracy_table(logs).save(config.out / "accuracy.csv");
      representation_table(runs).save(config.out / "representation.csv");
      out << "wrote " << runs.size() << " runs to " << config.out.string() << "\n";
      return 0;
    }
    if (an->parsed()) {
      for (const auto& p : analyze(manifest_path, analysis_out)) out << p.string() << "\n";
      return 0;
    }
    if (repro->parsed()) {
      const ExperimentConfig config = build_config(repro_ov);
      const ExperimentManifest m = sweep(config, true, &err);
      const int code = finish_sweep(m, out, err);
      for (const auto& p : analyze(config.out / "manifest.txt")) out << p.string() << "\n";
      return code;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace rlbvae
