#include "rlbvae/bandit.hpp"

#include <algorithm>
#include <cmath>

namespace rlbvae {

namespace {

std::array<std::vector<std::size_t>, 4> by_category(const std::vector<Stimulus>& set) {
  std::array<std::vector<std::size_t>, 4> out;
  for (std::size_t i = 0; i < set.size(); ++i) out[std::size_t(set[i].category())].push_back(i);
  return out;
}

Matrix encode_means(const NetworkParams& params, const std::vector<Stimulus>& set) {
  std::vector<const Image*> images;
  images.reserve(set.size());
  for (const auto& s : set) images.push_back(&s.image);
  return encode_batch(params, stack_images(images)).mu;
}

std::vector<Category> categories_of(const std::vector<Stimulus>& set) {
  std::vector<Category> out;
  out.reserve(set.size());
  for (const auto& s : set) out.push_back(s.category());
  return out;
}

}  // namespace

Trial sample_trial(const std::vector<Stimulus>& test_set, Rng& rng) {
  const auto groups = by_category(test_set);
  std::vector<Category> populated;
  for (Category c : kAllCategories) {
    if (!groups[std::size_t(c)].empty()) populated.push_back(c);
  }
  if (populated.size() < 2) {
    throw ConfigError("sample_trial: test set needs at least two populated categories");
  }
  const std::size_t first = rng.uniform_index(populated.size());
  std::size_t second = rng.uniform_index(populated.size() - 1);
  if (second >= first) ++second;
  const Category ca = populated[first];
  const Category cb = populated[second];
  const auto& ga = groups[std::size_t(ca)];
  const auto& gb = groups[std::size_t(cb)];
  const std::size_t ia = ga[rng.uniform_index(ga.size())];
  const std::size_t ib = gb[rng.uniform_index(gb.size())];

  Trial t;
  const bool swap = rng.uniform_index(2) == 1;
  t.left = swap ? ib : ia;
  t.right = swap ? ia : ib;
  t.left_category = test_set[t.left].category();
  t.right_category = test_set[t.right].category();
  t.correct = reward_of(Attributes::from(t.left_category)) >
                      reward_of(Attributes::from(t.right_category))
                  ? Side::left
                  : Side::right;
  return t;
}

PolicyOutput softmax_policy(double rhat_left, double rhat_right, double temperature) {
  if (!(temperature > 0)) throw ConfigError("softmax_policy: temperature must be positive");
  if (!std::isfinite(rhat_left) || !std::isfinite(rhat_right)) {
    throw NumericalError("softmax_policy: non-finite prediction");
  }
  const double l = rhat_left / temperature;
  const double r = rhat_right / temperature;
  const double m = std::max(l, r);
  const double el = std::exp(l - m);
  const double er = std::exp(r - m);
  PolicyOutput out;
  out.p_left = el / (el + er);
  out.p_right = er / (el + er);
  return out;
}

Side sample_choice(const PolicyOutput& policy, Rng& rng) {
  return rng.uniform() < policy.p_left ? Side::left : Side::right;
}

RunLog run_bandit(const NetworkParams& initial, const std::vector<Stimulus>& test_set,
                  const HypothesisEngine& engine, const RunConfig& config, Rng& rng,
                  const BanditOptions& options) {
  if (engine.n_z() != initial.shape.n_z) {
    throw ShapeError("run_bandit: checkpoint n_z " + std::to_string(initial.shape.n_z) +
                     " does not match engine n_z " + std::to_string(engine.n_z()));
  }
  if (config.trials < 1) throw ConfigError("run_bandit: trials must be >= 1");
  if (!(config.temperature > 0)) throw ConfigError("run_bandit: temperature must be positive");
  if (config.upsilon < 0 || config.beta < 0) {
    throw ConfigError("run_bandit: upsilon and beta must be non-negative");
  }

  NetworkParams params = initial;
  AdamState adam = make_adam(params, config.learning_rate);
  const bool fine_tune = config.upsilon > 0;
  const TrainHyper hyper{config.beta, config.upsilon};

  RunLog log;
  log.snapshots.push_back({0, encode_means(params, test_set)});

  ExperienceBuffer buffer(params.shape.n_z);
  std::optional<FittedHypothesis> selected;
  if (options.fixed_hypothesis) selected = *options.fixed_hypothesis;

  for (std::size_t t = 1; t <= config.trials; ++t) {
    const Trial trial = sample_trial(test_set, rng);
    const Stimulus& left = test_set[trial.left];
    const Stimulus& right = test_set[trial.right];
    const Matrix pair_mu = encode_batch(params, stack_images({&left.image, &right.image})).mu;

    TrialRecord rec;
    rec.trial = t;
    rec.left_category = trial.left_category;
    rec.right_category = trial.right_category;
    PolicyOutput policy;
    if (selected) {
      rec.rhat_left = predict_reward(*selected, pair_mu.row(0).transpose());
      rec.rhat_right = predict_reward(*selected, pair_mu.row(1).transpose());
      rec.decision_features = selected->features();
      policy = softmax_policy(rec.rhat_left, rec.rhat_right, config.temperature);
    }
    rec.p_left = policy.p_left;
    rec.choice = sample_choice(policy, rng);
    rec.correct = rec.choice == trial.correct;

    const Stimulus& chosen = rec.choice == Side::left ? left : right;
    rec.reward = reward_of(chosen.attributes);
    buffer.append({pair_mu.row(rec.choice == Side::left ? 0 : 1).transpose(),
                   static_cast<int>(rec.choice), rec.reward, t});

    if (!options.fixed_hypothesis) selected = engine.refresh(buffer);
    rec.selected = selected;

    if (fine_tune && selected) {
      UtilityReadout readout{selected->features(), selected->weights, selected->bias};
      Vector target(1);
      target[0] = rec.reward;
      train_step(params, chosen.image.pixels.transpose(), target, hyper, adam, rng, &readout);
    }
    log.records.push_back(std::move(rec));

    const bool snapshot = t == config.trials ||
                          (config.snapshot_every > 0 && t % config.snapshot_every == 0);
    if (snapshot) {
      // A frozen network reuses the initial encoding.
      log.snapshots.push_back(
          {t, fine_tune ? encode_means(params, test_set) : log.snapshots.front().mu});
    }
  }
  return log;
}

std::vector<double> accuracy_by_trial(const std::vector<RunLog>& logs) {
  return accuracy_stats(logs).mean;
}

SeriesStats accuracy_stats(const std::vector<RunLog>& logs) {
  if (logs.empty()) throw AggregationError("accuracy_by_trial: no logs");
  const std::size_t n = logs.front().records.size();
  for (const auto& l : logs) {
    if (l.records.size() != n) throw AggregationError("accuracy_by_trial: trial counts differ");
  }
  SeriesStats s;
  s.mean.assign(n, 0.0);
  s.sem.assign(n, 0.0);
  const double runs = double(logs.size());
  for (std::size_t t = 0; t < n; ++t) {
    double sum = 0;
    for (const auto& l : logs) sum += l.records[t].correct ? 1.0 : 0.0;
    const double mean = sum / runs;
    double ss = 0;
    for (const auto& l : logs) {
      const double d = (l.records[t].correct ? 1.0 : 0.0) - mean;
      ss += d * d;
    }
    s.mean[t] = mean;
    s.sem[t] = logs.size() > 1 ? std::sqrt(ss / (runs - 1.0) / runs) : 0.0;
  }
  return s;
}

LogFit fit_log_curve(const std::vector<double>& accuracy) {
  if (accuracy.size() < 2) throw PreconditionError("fit_log_curve: need at least two points");
  const double n = double(accuracy.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < accuracy.size(); ++i) {
    sx += std::log(double(i + 1));
    sy += accuracy[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < accuracy.size(); ++i) {
    const double dx = std::log(double(i + 1)) - mx;
    sxx += dx * dx;
    sxy += dx * (accuracy[i] - my);
  }
  LogFit fit;
  fit.a = sxy / sxx;
  fit.b = my - fit.a * mx;
  for (std::size_t i = 0; i < accuracy.size(); ++i) {
    const double e = accuracy[i] - (fit.a * std::log(double(i + 1)) + fit.b);
    fit.residual += e * e;
  }
  return fit;
}

double representation_distance(const Matrix& mu, const std::vector<Category>& categories,
                               Category a, Category b) {
  if (Eigen::Index(categories.size()) != mu.rows()) {
    throw ShapeError("representation_distance: categories/latents mismatch");
  }
  std::vector<Eigen::Index> ia, ib;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (categories[i] == a) ia.push_back(Eigen::Index(i));
    if (categories[i] == b) ib.push_back(Eigen::Index(i));
  }
  if (ia.empty() || ib.empty()) {
    throw ConfigError(std::string("representation_difference: empty category ") +
                      category_name(ia.empty() ? a : b));
  }
  double sum = 0;
  for (Eigen::Index i : ia)
    for (Eigen::Index j : ib) sum += (mu.row(i) - mu.row(j)).squaredNorm();
  return sum / double(mu.cols()) / double(ia.size() * ib.size());
}

std::array<double, 4> representation_difference(const Matrix& mu,
                                                const std::vector<Category>& categories) {
  std::array<double, 4> out{};
  for (Category c : kAllCategories) {
    out[std::size_t(c)] = representation_distance(mu, categories, c, Category::neither);
  }
  return out;
}

std::array<double, 4> representation_difference(const NetworkParams& params,
                                                const std::vector<Stimulus>& test_set) {
  return representation_difference(encode_means(params, test_set), categories_of(test_set));
}

CsvTable run_log_table(const RunLog& log) {
  CsvTable t({"trial", "cat_left", "cat_right", "rhat_left", "rhat_right", "p_left", "choice",
              "reward", "correct", "hypothesis_features"});
  for (const auto& r : log.records) {
    t.add_row({std::to_string(r.trial), category_name(r.left_category),
               category_name(r.right_category), format_double(r.rhat_left),
               format_double(r.rhat_right), format_double(r.p_left), side_name(r.choice),
               format_double(r.reward), r.correct ? "1" : "0",
               format_feature_set(r.decision_features)});
  }
  return t;
}

CsvTable hypothesis_trace_table(const RunLog& log) {
  CsvTable t({"trial", "feature_set", "weights", "bias", "mse"});
  for (const auto& r : log.records) {
    if (!r.selected) continue;
    std::string weights;
    for (Eigen::Index j = 0; j < r.selected->weights.size(); ++j) {
      if (j) weights += ';';
      weights += format_double(r.selected->weights[j]);
    }
    t.add_row({std::to_string(r.trial), format_feature_set(r.selected->features()), weights,
               format_double(r.selected->bias), format_double(r.selected->mse)});
  }
  return t;
}

}  // namespace rlbvae
