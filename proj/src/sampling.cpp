#include "stanet/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <unordered_map>
#include <utility>

#include "stanet/rng.hpp"

namespace stanet::sampling {

namespace {

// Linear-separator fit used by svm_smote to locate margin points. The step
// count is fixed so the fit is a deterministic function of the data.
constexpr int kSvmSteps = 200;
constexpr double kSvmLearningRate = 0.1;
constexpr double kSvmRidge = 0.01;

std::vector<int> indices_with_label(const std::vector<int>& labels, int label) {
  std::vector<int> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) out.push_back(static_cast<int>(i));
  }
  return out;
}

// Caches the k nearest minority neighbors of each synthesis seed, so repeated
// draws from the same seed do not recompute distances.
class MinorityNeighbors {
 public:
  MinorityNeighbors(const LabeledSet& set, int k, int minority_label)
      : set_(set), k_(k), minority_(minority_label) {}

  const std::vector<int>& of(int index) {
    auto it = cache_.find(index);
    if (it == cache_.end()) {
      it = cache_.emplace(index, knn(set_.features, index, k_, set_.labels, minority_)).first;
    }
    return it->second;
  }

 private:
  const LabeledSet& set_;
  int k_;
  int minority_;
  std::unordered_map<int, std::vector<int>> cache_;
};

// Draws `count` interpolation recipes whose bases are sampled uniformly from
// `seeds`. Per recipe the draw order is base, neighbor, u.
void synthesize(std::vector<SynthRecipe>& out, Rng& rng, MinorityNeighbors& nn,
                const std::vector<int>& seeds, int count, int k, int label) {
  for (int c = 0; c < count; ++c) {
    const int base = seeds[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(seeds.size())))];
    const std::vector<int>& neighbors = nn.of(base);
    const int nbr = neighbors[static_cast<std::size_t>(rng.uniform_int(k))];
    out.push_back(SynthRecipe{base, nbr, rng.uniform(), label});
  }
}

// Number of majority-labeled points among the k nearest all-class neighbors.
int majority_neighbor_count(const LabeledSet& set, int index, int k, int majority_label) {
  int count = 0;
  for (int j : knn(set.features, index, k)) {
    if (set.labels[static_cast<std::size_t>(j)] == majority_label) ++count;
  }
  return count;
}

// Integer apportionment of `total` across weights by largest remainder, so
// the counts sum to exactly `total`. Remainder ties break toward the lower
// position.
std::vector<int> apportion(const std::vector<double>& weights, int total) {
  const std::size_t n = weights.size();
  std::vector<int> counts(n, 0);
  std::vector<std::pair<double, std::size_t>> remainders(n);
  int assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double target = weights[i] * total;
    counts[i] = static_cast<int>(std::floor(target));
    assigned += counts[i];
    remainders[i] = {target - counts[i], i};
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int r = 0; r < total - assigned; ++r) {
    ++counts[remainders[static_cast<std::size_t>(r)].second];
  }
  return counts;
}

// Minority points within the functional margin of a hinge-loss linear
// separator. Features are standardized per dimension for the fit so the
// unit margin is meaningful regardless of feature scale.
std::vector<int> margin_seeds(const LabeledSet& set, const std::vector<int>& minority_idx,
                              int minority_label) {
  const std::size_t n = set.size();
  const Eigen::Index dim = set.features[0].size();

  Vector mean = Vector::Zero(dim);
  for (const Vector& x : set.features) mean += x;
  mean /= static_cast<double>(n);
  Vector scale = Vector::Zero(dim);
  for (const Vector& x : set.features) scale += (x - mean).cwiseAbs2();
  scale = (scale / static_cast<double>(n)).cwiseSqrt().cwiseMax(1e-12);

  std::vector<Vector> z(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = (set.features[i] - mean).cwiseQuotient(scale);
    y[i] = set.labels[i] == minority_label ? 1.0 : -1.0;
  }

  Vector w = Vector::Zero(dim);
  double b = 0.0;
  for (int step = 0; step < kSvmSteps; ++step) {
    Vector gw = kSvmRidge * w;
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (y[i] * (w.dot(z[i]) + b) < 1.0) {
        gw -= (y[i] / static_cast<double>(n)) * z[i];
        gb -= y[i] / static_cast<double>(n);
      }
    }
    w -= kSvmLearningRate * gw;
    b -= kSvmLearningRate * gb;
  }

  std::vector<int> seeds;
  for (int i : minority_idx) {
    if (y[static_cast<std::size_t>(i)] * (w.dot(z[static_cast<std::size_t>(i)]) + b) <= 1.0) {
      seeds.push_back(i);
    }
  }
  return seeds;
}

// Removes both members of every Tomek link (mutual nearest neighbors with
// opposite labels) in the balanced cloud. Original casualties flip their
// keep flag; synthetic casualties drop out of the recipe list.
void remove_tomek_links(const LabeledSet& set, BalancePlan& plan) {
  std::vector<Vector> cloud = set.features;
  std::vector<int> labels = set.labels;
  for (const SynthRecipe& r : plan.synth) {
    const Vector& base = set.features[static_cast<std::size_t>(r.base)];
    const Vector& nbr = set.features[static_cast<std::size_t>(r.neighbor)];
    cloud.push_back(base + r.u * (nbr - base));
    labels.push_back(r.label);
  }

  const int n_cloud = static_cast<int>(cloud.size());
  std::vector<int> nearest(cloud.size());
  for (int i = 0; i < n_cloud; ++i) {
    nearest[static_cast<std::size_t>(i)] = knn(cloud, i, 1)[0];
  }

  std::vector<bool> removed(cloud.size(), false);
  for (int i = 0; i < n_cloud; ++i) {
    const int j = nearest[static_cast<std::size_t>(i)];
    if (j > i && nearest[static_cast<std::size_t>(j)] == i &&
        labels[static_cast<std::size_t>(i)] != labels[static_cast<std::size_t>(j)]) {
      removed[static_cast<std::size_t>(i)] = true;
      removed[static_cast<std::size_t>(j)] = true;
      ++plan.removed_pairs;
    }
  }

  const std::size_t n_orig = set.size();
  for (std::size_t i = 0; i < n_orig; ++i) {
    if (removed[i]) plan.keep[i] = false;
  }
  std::vector<SynthRecipe> survivors;
  survivors.reserve(plan.synth.size());
  for (std::size_t s = 0; s < plan.synth.size(); ++s) {
    if (!removed[n_orig + s]) survivors.push_back(plan.synth[s]);
  }
  plan.synth = std::move(survivors);
}

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::smote: return "smote";
    case Strategy::adasyn: return "adasyn";
    case Strategy::borderline: return "borderline";
    case Strategy::smote_tomek: return "smote_tomek";
    case Strategy::svm_smote: return "svm_smote";
  }
  throw ValidationError("strategy: unknown enum value");
}

Strategy strategy_from_string(const std::string& name) {
  if (name == "random") return Strategy::random;
  if (name == "smote") return Strategy::smote;
  if (name == "adasyn") return Strategy::adasyn;
  if (name == "borderline") return Strategy::borderline;
  if (name == "smote_tomek") return Strategy::smote_tomek;
  if (name == "svm_smote") return Strategy::svm_smote;
  throw ValidationError(
      "strategy: '" + name +
      "' is not one of random, smote, adasyn, borderline, smote_tomek, svm_smote");
}

void LabeledSet::validate() const {
  if (features.empty()) throw ValidationError("set: must contain at least one sample");
  if (features.size() != labels.size()) {
    throw ValidationError("set: feature and label counts differ");
  }
  const Eigen::Index dim = features[0].size();
  if (dim < 1) throw ValidationError("set: feature vectors must be nonempty");
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != dim) {
      throw ValidationError("set: feature " + std::to_string(i) +
                            " has length " + std::to_string(features[i].size()) +
                            ", expected " + std::to_string(dim));
    }
    if (labels[i] != 0 && labels[i] != 1) {
      throw ValidationError("set: label " + std::to_string(i) + " must be 0 or 1");
    }
  }
}

void SamplerConfig::validate() const {
  if (k_neighbors < 1) throw ValidationError("k_neighbors: must be at least 1");
}

std::vector<int> knn(const std::vector<Vector>& points, int query_index, int k,
                     const std::vector<int>& labels, std::optional<int> restrict_to) {
  const int n = static_cast<int>(points.size());
  if (n == 0) throw ValidationError("knn: points must be nonempty");
  if (query_index < 0 || query_index >= n) {
    throw ValidationError("knn: query index out of range");
  }
  if (k < 1) throw ValidationError("knn: k must be at least 1");
  if (restrict_to.has_value() && static_cast<int>(labels.size()) != n) {
    throw ValidationError("knn: label restriction requires one label per point");
  }

  const Vector& query = points[static_cast<std::size_t>(query_index)];
  std::vector<std::pair<double, int>> candidates;
  candidates.reserve(points.size());
  for (int i = 0; i < n; ++i) {
    if (i == query_index) continue;
    if (restrict_to.has_value() && labels[static_cast<std::size_t>(i)] != *restrict_to) continue;
    const Vector& p = points[static_cast<std::size_t>(i)];
    if (p.size() != query.size()) {
      throw ValidationError("knn: point " + std::to_string(i) +
                            " has a different dimension than the query");
    }
    candidates.emplace_back((p - query).squaredNorm(), i);
  }
  if (k > static_cast<int>(candidates.size())) {
    throw ValidationError("knn: k = " + std::to_string(k) + " exceeds the " +
                          std::to_string(candidates.size()) + " eligible points");
  }
  std::sort(candidates.begin(), candidates.end());
  std::vector<int> out(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = candidates[static_cast<std::size_t>(i)].second;
  return out;
}

BalancePlan make_plan(const LabeledSet& set, const SamplerConfig& cfg) {
  set.validate();
  cfg.validate();

  int count[2] = {0, 0};
  for (int label : set.labels) ++count[label];
  if (count[0] == 0 || count[1] == 0) {
    throw ValidationError("set: both classes must be present");
  }

  BalancePlan plan;
  plan.strategy = cfg.strategy;
  plan.keep.assign(set.size(), true);
  plan.minority_label = count[1] < count[0] ? 1 : 0;
  const int majority_label = 1 - plan.minority_label;
  const int deficit = count[majority_label] - count[plan.minority_label];
  if (deficit == 0) return plan;  // balanced input: untouched output

  Rng rng(derive_seed(cfg.seed, "sampling"));
  const std::vector<int> minority_idx = indices_with_label(set.labels, plan.minority_label);
  const int m = static_cast<int>(minority_idx.size());

  if (m == 1) {
    // A single minority point has no neighbors to interpolate toward; fall
    // back to duplication regardless of strategy.
    plan.random_fallback = true;
    for (int c = 0; c < deficit; ++c) {
      plan.synth.push_back(SynthRecipe{minority_idx[0], minority_idx[0], 0.0, plan.minority_label});
    }
    if (cfg.strategy == Strategy::smote_tomek) remove_tomek_links(set, plan);
    return plan;
  }

  const int k = std::min(cfg.k_neighbors, m - 1);
  plan.k_used = k;
  plan.k_fallback = k != cfg.k_neighbors;
  MinorityNeighbors nn(set, k, plan.minority_label);

  switch (cfg.strategy) {
    case Strategy::random: {
      plan.k_used = 0;
      for (int c = 0; c < deficit; ++c) {
        const int base = minority_idx[static_cast<std::size_t>(rng.uniform_int(m))];
        plan.synth.push_back(SynthRecipe{base, base, 0.0, plan.minority_label});
      }
      break;
    }
    case Strategy::smote: {
      synthesize(plan.synth, rng, nn, minority_idx, deficit, k, plan.minority_label);
      break;
    }
    case Strategy::adasyn: {
      std::vector<double> weights(static_cast<std::size_t>(m));
      double total = 0.0;
      for (int p = 0; p < m; ++p) {
        weights[static_cast<std::size_t>(p)] = static_cast<double>(majority_neighbor_count(
                                                   set, minority_idx[static_cast<std::size_t>(p)],
                                                   k, majority_label)) /
                                               k;
        total += weights[static_cast<std::size_t>(p)];
      }
      if (total == 0.0) {
        std::fill(weights.begin(), weights.end(), 1.0 / m);
      } else {
        for (double& w : weights) w /= total;
      }
      const std::vector<int> per_point = apportion(weights, deficit);
      for (int p = 0; p < m; ++p) {
        const std::vector<int> seed{minority_idx[static_cast<std::size_t>(p)]};
        synthesize(plan.synth, rng, nn, seed, per_point[static_cast<std::size_t>(p)], k,
                   plan.minority_label);
      }
      break;
    }
    case Strategy::borderline: {
      std::vector<int> danger;
      for (int i : minority_idx) {
        const int maj = majority_neighbor_count(set, i, k, majority_label);
        if (2 * maj >= k && maj < k) danger.push_back(i);
      }
      if (danger.empty()) {
        plan.seed_fallback = true;
        danger = minority_idx;
      }
      synthesize(plan.synth, rng, nn, danger, deficit, k, plan.minority_label);
      break;
    }
    case Strategy::smote_tomek: {
      synthesize(plan.synth, rng, nn, minority_idx, deficit, k, plan.minority_label);
      remove_tomek_links(set, plan);
      break;
    }
    case Strategy::svm_smote: {
      std::vector<int> seeds = margin_seeds(set, minority_idx, plan.minority_label);
      if (seeds.empty()) {
        plan.seed_fallback = true;
        seeds = minority_idx;
      }
      synthesize(plan.synth, rng, nn, seeds, deficit, k, plan.minority_label);
      break;
    }
  }
  return plan;
}

LabeledSet apply_plan(const LabeledSet& set, const BalancePlan& plan) {
  set.validate();
  if (plan.keep.size() != set.size()) {
    throw ValidationError("plan: keep mask does not match the set size");
  }
  const int n = static_cast<int>(set.size());
  LabeledSet out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!plan.keep[i]) continue;
    out.features.push_back(set.features[i]);
    out.labels.push_back(set.labels[i]);
  }
  for (std::size_t s = 0; s < plan.synth.size(); ++s) {
    const SynthRecipe& r = plan.synth[s];
    if (r.base < 0 || r.base >= n || r.neighbor < 0 || r.neighbor >= n) {
      throw ValidationError("plan: recipe " + std::to_string(s) + " references a missing sample");
    }
    if (!std::isfinite(r.u)) {
      throw ValidationError("plan: recipe " + std::to_string(s) + " has a non-finite u");
    }
    const Vector& base = set.features[static_cast<std::size_t>(r.base)];
    const Vector& nbr = set.features[static_cast<std::size_t>(r.neighbor)];
    out.features.push_back(base + r.u * (nbr - base));
    out.labels.push_back(r.label);
  }
  return out;
}

BalanceResult balance(const LabeledSet& set, const SamplerConfig& cfg) {
  BalanceResult result;
  result.plan = make_plan(set, cfg);
  result.set = apply_plan(set, result.plan);
  return result;
}

}  // namespace stanet::sampling
