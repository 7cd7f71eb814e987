#include "rlbvae/factored.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <Eigen/Cholesky>

namespace rlbvae {

namespace {

bool feature_order(const FeatureSet& a, const FeatureSet& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

FeatureSet set_union(const FeatureSet& a, const FeatureSet& b) {
  FeatureSet out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

void check_scope(const Scope& s) {
  if (s.empty()) throw ConfigError("empty scope");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < 0) throw ConfigError("negative latent index in scope");
    if (i && s[i] <= s[i - 1]) throw ConfigError("scope indices must be sorted and unique");
  }
}

}  // namespace

void ExperienceBuffer::append(Experience e) {
  if (e.z.size() != n_z_) {
    throw ShapeError("experience z has length " + std::to_string(e.z.size()) +
                     ", buffer expects " + std::to_string(n_z_));
  }
  records_.push_back(std::move(e));
}

Matrix ExperienceBuffer::latents() const {
  Matrix out(Eigen::Index(records_.size()), n_z_);
  for (std::size_t i = 0; i < records_.size(); ++i) out.row(Eigen::Index(i)) = records_[i].z.transpose();
  return out;
}

Vector ExperienceBuffer::rewards() const {
  Vector out(Eigen::Index(records_.size()));
  for (std::size_t i = 0; i < records_.size(); ++i) out[Eigen::Index(i)] = records_[i].reward;
  return out;
}

std::vector<Scope> enumerate_scopes(int n_z, int k_max) {
  if (n_z < 1 || k_max < 1 || k_max > n_z) {
    throw ConfigError("enumerate_scopes: need 1 <= k_max <= n_z, got k_max=" +
                      std::to_string(k_max) + " n_z=" + std::to_string(n_z));
  }
  std::vector<Scope> out;
  for (int k = 1; k <= k_max; ++k) {
    // Lexicographic k-combinations.
    Scope c(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) c[std::size_t(i)] = i;
    while (true) {
      out.push_back(c);
      int i = k - 1;
      while (i >= 0 && c[std::size_t(i)] == n_z - k + i) --i;
      if (i < 0) break;
      ++c[std::size_t(i)];
      for (int j = i + 1; j < k; ++j) c[std::size_t(j)] = c[std::size_t(j - 1)] + 1;
    }
  }
  return out;
}

std::vector<Hypothesis> generate_hypotheses(const std::vector<Scope>& scopes, int k_total) {
  if (scopes.empty()) throw ConfigError("generate_hypotheses: no candidate scopes");
  if (k_total < 1) throw ConfigError("generate_hypotheses: budget must be >= 1");
  for (const auto& s : scopes) check_scope(s);

  // Closure of the scope list under union, pruned at the feature budget.
  std::map<FeatureSet, std::vector<Scope>, decltype(&feature_order)> found(&feature_order);
  std::vector<FeatureSet> frontier;
  for (const auto& s : scopes) {
    if (int(s.size()) > k_total) continue;
    if (found.emplace(s, std::vector<Scope>{s}).second) frontier.push_back(s);
  }
  while (!frontier.empty()) {
    std::vector<FeatureSet> next;
    for (const auto& f : frontier) {
      const std::vector<Scope> base = found.at(f);
      for (const auto& s : scopes) {
        FeatureSet u = set_union(f, s);
        if (int(u.size()) > k_total || u.size() == f.size()) continue;
        auto with = base;
        with.push_back(s);
        if (found.emplace(u, std::move(with)).second) next.push_back(std::move(u));
      }
    }
    frontier = std::move(next);
  }

  std::vector<Hypothesis> out;
  out.reserve(found.size());
  for (auto& [features, parts] : found) out.push_back({parts, features});
  return out;
}

FittedHypothesis fit_hypothesis(const Hypothesis& h, const Matrix& latents,
                                const Vector& rewards, double ridge) {
  const Eigen::Index n = latents.rows();
  if (n < 1) throw PreconditionError("fit_hypothesis: empty buffer");
  if (rewards.size() != n) throw ShapeError("fit_hypothesis: rewards/latents mismatch");
  if (ridge < 0) throw ConfigError("fit_hypothesis: ridge must be >= 0");
  const auto p = Eigen::Index(h.features.size());
  for (int f : h.features) {
    if (f < 0 || f >= latents.cols()) throw ShapeError("fit_hypothesis: feature out of range");
  }

  Matrix x(n, p);
  for (Eigen::Index j = 0; j < p; ++j) x.col(j) = latents.col(h.features[std::size_t(j)]);
  const RowVector x_mean = x.colwise().mean();
  const double r_mean = rewards.mean();
  const Matrix xc = x.rowwise() - x_mean;
  const Vector rc = rewards.array() - r_mean;

  Matrix gram = xc.transpose() * xc;
  gram.diagonal().array() += ridge;
  Eigen::LDLT<Matrix> ldlt(gram);
  // LDLT::rcond misses exact rank deficiency, so inspect the pivots directly.
  const Vector d = ldlt.vectorD().cwiseAbs();
  if (ldlt.info() != Eigen::Success || (p > 0 && !(d.minCoeff() > 1e-12 * d.maxCoeff()))) {
    throw NumericalError("fit_hypothesis: singular normal equations for features " +
                         format_feature_set(h.features));
  }

  FittedHypothesis f;
  f.hypothesis = h;
  f.n_z = int(latents.cols());
  f.weights = p > 0 ? Vector(ldlt.solve(xc.transpose() * rc)) : Vector();
  f.bias = r_mean - x_mean.dot(f.weights);
  f.fit_count = std::size_t(n);
  const Vector resid = rewards - ((x * f.weights).array() + f.bias).matrix();
  f.mse = resid.squaredNorm() / double(n);
  return f;
}

FittedHypothesis fit_hypothesis(const Hypothesis& h, const ExperienceBuffer& buffer,
                                double ridge) {
  return fit_hypothesis(h, buffer.latents(), buffer.rewards(), ridge);
}

double predict_reward(const FittedHypothesis& f, const Eigen::Ref<const Vector>& z) {
  if (z.size() != f.n_z) {
    throw ShapeError("predict_reward: z has length " + std::to_string(z.size()) +
                     ", hypothesis fitted on n_z " + std::to_string(f.n_z));
  }
  double out = f.bias;
  for (std::size_t j = 0; j < f.features().size(); ++j) {
    out += f.weights[Eigen::Index(j)] * z[f.features()[j]];
  }
  return out;
}

double evaluate_hypothesis(const FittedHypothesis& f, const ExperienceBuffer& buffer,
                           std::size_t window) {
  if (buffer.empty()) throw PreconditionError("evaluate_hypothesis: empty buffer");
  const auto& recs = buffer.records();
  const std::size_t w = window == 0 ? recs.size() : std::min(window, recs.size());
  double sum = 0;
  for (std::size_t i = recs.size() - w; i < recs.size(); ++i) {
    const double e = predict_reward(f, recs[i].z) - recs[i].reward;
    sum += e * e;
  }
  return sum / double(w);
}

const FittedHypothesis& select_hypothesis(const std::vector<FittedHypothesis>& candidates) {
  if (candidates.empty()) throw PreconditionError("select_hypothesis: no candidates");
  double lowest = candidates.front().mse;
  for (const auto& c : candidates) lowest = std::min(lowest, c.mse);
  const double cutoff = lowest + kMseTieTolerance * std::max(1.0, lowest);
  const FittedHypothesis* best = nullptr;
  for (const auto& c : candidates) {
    if (!(c.mse <= cutoff)) continue;
    if (!best || feature_order(c.features(), best->features())) best = &c;
  }
  return *best;
}

std::string format_feature_set(const FeatureSet& features) {
  std::string out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(features[i]);
  }
  return out;
}

HypothesisEngine::HypothesisEngine(int n_z, const EngineConfig& config)
    : HypothesisEngine(n_z, config, build_space(n_z, config)) {}

HypothesisEngine::HypothesisEngine(int n_z, const EngineConfig& config,
                                   std::shared_ptr<const std::vector<Hypothesis>> hypotheses)
    : n_z_(n_z), config_(config), hypotheses_(std::move(hypotheses)) {
  if (config.ridge < 0) throw ConfigError("engine ridge must be >= 0");
  if (!hypotheses_ || hypotheses_->empty()) throw ConfigError("engine has no hypotheses");
}

std::shared_ptr<const std::vector<Hypothesis>> HypothesisEngine::build_space(
    int n_z, const EngineConfig& config) {
  if (config.k_total < 1) throw ConfigError("engine k_total must be >= 1");
  return std::make_shared<const std::vector<Hypothesis>>(
      generate_hypotheses(enumerate_scopes(n_z, config.k_max), config.k_total));
}

std::optional<FittedHypothesis> HypothesisEngine::refresh(const ExperienceBuffer& buffer) const {
  if (buffer.n_z() != n_z_) throw ShapeError("engine/buffer n_z mismatch");
  if (buffer.empty()) return std::nullopt;
  const Matrix z = buffer.latents();
  const Vector r = buffer.rewards();
  std::vector<FittedHypothesis> fitted;
  fitted.reserve(hypotheses_->size());
  for (const auto& h : *hypotheses_) {
    FittedHypothesis f = fit_hypothesis(h, z, r, config_.ridge);
    if (config_.window != 0) f.mse = evaluate_hypothesis(f, buffer, config_.window);
    fitted.push_back(std::move(f));
  }
  return select_hypothesis(fitted);
}

}  // namespace rlbvae
