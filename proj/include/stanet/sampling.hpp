#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stanet/types.hpp"

namespace stanet::sampling {

/// Minority-oversampling strategy. Every strategy balances the class counts
/// by synthesizing (or duplicating) minority samples; none ever touches the
/// majority class except smote_tomek, whose link cleaning may delete samples
/// from either class.
enum class Strategy {
  random,       ///< duplicate minority samples drawn with replacement
  smote,        ///< interpolate between a minority sample and one of its
                ///< k nearest minority neighbors
  adasyn,       ///< smote with per-point synthesis counts proportional to the
                ///< majority fraction among each point's k nearest neighbors
  borderline,   ///< smote restricted to minority points whose neighborhood is
                ///< majority-dominated but not entirely majority
  smote_tomek,  ///< smote, then removal of both members of every Tomek link
                ///< (mutual nearest neighbors with opposite labels)
  svm_smote,    ///< smote restricted to minority points within the margin of
                ///< a linear separator fit by hinge-loss subgradient descent
};

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);

/// Flat feature vectors with binary labels. Balancing operates on whatever
/// representation the caller flattens into rows; the pipeline passes fused
/// classifier features so synthetic points live in the learned space.
struct LabeledSet {
  std::vector<Vector> features;
  std::vector<int> labels;  ///< one 0/1 label per feature vector

  std::size_t size() const { return features.size(); }
  /// Throws ValidationError unless sizes match, all feature vectors share one
  /// nonzero length, and every label is 0 or 1.
  void validate() const;
};

struct SamplerConfig {
  Strategy strategy = Strategy::smote;
  int k_neighbors = 5;
  std::uint64_t seed = 0;

  void validate() const;  ///< k_neighbors must be at least 1
};

/// One synthetic sample: x = features[base] + u * (features[nbr] - features[base]).
/// Indices refer to the *input* set, so a recipe stays meaningful even when
/// link cleaning drops its parents from the balanced output. u = 0 with
/// nbr == base encodes a verbatim duplicate.
struct SynthRecipe {
  int base = 0;
  int neighbor = 0;
  double u = 0.0;
  int label = 0;
};

/// Everything needed to materialize a balanced set from the original one:
/// which originals survive, and how each synthetic point is interpolated.
/// Keeping the construction symbolic lets the classifier re-derive synthetic
/// points inside its own feature space each epoch instead of freezing them.
struct BalancePlan {
  Strategy strategy = Strategy::smote;
  std::vector<bool> keep;           ///< per input sample; false only for smote_tomek removals
  std::vector<SynthRecipe> synth;   ///< appended after the kept originals, in order
  int minority_label = 0;
  int k_used = 0;                   ///< neighbor count after any fallback
  bool k_fallback = false;          ///< k was reduced to minority_count - 1
  bool random_fallback = false;     ///< singleton minority: duplicated instead of interpolated
  bool seed_fallback = false;       ///< empty borderline/margin seed set: all minority used
  int removed_pairs = 0;            ///< smote_tomek: Tomek links removed
};

/// Indices of the k nearest points to points[query_index] by Euclidean
/// distance, ordered nearest first. The query itself is never a candidate;
/// distance ties break toward the lower index. When restrict_to is set, only
/// points with that label are eligible (labels must then be provided, one per
/// point). Throws ValidationError when k exceeds the eligible count.
std::vector<int> knn(const std::vector<Vector>& points, int query_index, int k,
                     const std::vector<int>& labels = {},
                     std::optional<int> restrict_to = std::nullopt);

/// Computes the balancing plan without materializing any features.
/// Requires both classes present. When the input is already balanced the plan
/// keeps everything and synthesizes nothing, for every strategy.
BalancePlan make_plan(const LabeledSet& set, const SamplerConfig& cfg);

/// Materializes a plan: kept originals verbatim and first (in input order),
/// then one interpolated sample per recipe.
LabeledSet apply_plan(const LabeledSet& set, const BalancePlan& plan);

struct BalanceResult {
  LabeledSet set;
  BalancePlan plan;
};

/// make_plan + apply_plan. Output counts are exactly balanced for every
/// strategy except smote_tomek, where link cleaning may leave the classes
/// unequal; the plan reports what actually happened.
BalanceResult balance(const LabeledSet& set, const SamplerConfig& cfg);

}  // namespace stanet::sampling
