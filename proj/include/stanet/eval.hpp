#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stanet/afgru.hpp"
#include "stanet/sampling.hpp"
#include "stanet/synthgen.hpp"
#include "stanet/types.hpp"

namespace stanet::eval {

struct ConfusionCounts {
  int tp = 0;
  int tn = 0;
  int fp = 0;
  int fn = 0;
  int total() const { return tp + tn + fp + fn; }
};

/// Classification quality summary. recall always equals sen. When no sample
/// is predicted positive, ppv is reported as 0 with ppv_undefined set so f1
/// degrades to 0 instead of erroring and fold aggregation stays total.
struct MetricsReport {
  double acc = 0.0;
  double sen = 0.0;
  double ppv = 0.0;
  double f1 = 0.0;
  double recall = 0.0;
  double auc = 0.0;
  bool ppv_undefined = false;
};

/// Thresholded confusion counts; a sample is predicted positive iff its
/// score is >= threshold. Throws ValidationError on empty or mismatched
/// inputs or non-binary labels.
ConfusionCounts confusion(const std::vector<double>& scores, const std::vector<int>& labels,
                          double threshold = 0.5);

/// Derives acc/sen/ppv/f1/recall from the counts and auc from the scores by
/// the Mann-Whitney statistic: (concordant pairs + 0.5 * ties) / (n+ * n-).
/// Throws ValidationError when the labels contain a single class (auc is
/// undefined) or when the counts do not cover the samples.
MetricsReport metrics(const ConfusionCounts& c, const std::vector<double>& scores,
                      const std::vector<int>& labels);

struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  bool stratified = true;
  std::string warning;                  ///< nonempty when stratification was relaxed
  std::vector<std::vector<int>> folds;  ///< subject indices, ascending within a fold
};

/// Seed-deterministic subject-level partition into k folds. Stratified when
/// both classes have at least k members: each class is shuffled and dealt
/// round-robin with a fold cursor that continues across classes, so per-class
/// and total fold sizes each differ by at most one. With a class smaller than
/// k, stratification relaxes to a plain shuffled deal and the plan carries a
/// warning. Throws ValidationError when k < 2, k exceeds the subject count,
/// or labels are not binary.
FoldPlan make_folds(const std::vector<int>& labels, int k = 10, std::uint64_t seed = 0);

/// Type-states for the leakage guard: balancing plans can only be derived
/// from TrainFeatures. TestFeatures has no balancing operation, so held-out
/// samples cannot flow into the sampler by construction.
struct TrainFeatures {
  sampling::LabeledSet set;
};
struct TestFeatures {
  sampling::LabeledSet set;
};

sampling::BalancePlan plan_balance(const TrainFeatures& train, const sampling::SamplerConfig& cfg);

enum class BaselineKind { logistic, tree, plain_gru };
std::string to_string(BaselineKind k);

/// Flat-feature reference classifiers, both deterministic:
///   logistic — full-batch gradient-descent logistic regression, 500 steps
///              at learning rate 0.1 from zero weights;
///   tree     — CART with Gini impurity, depth at most 6, minimum split of
///              two samples; the score is the leaf's positive fraction.
/// Returns one score per test vector. plain_gru is a recurrent model and is
/// dispatched through the experiment harness instead; passing it here throws
/// ValidationError, as does a single-class training set.
std::vector<double> baseline_fit_predict(BaselineKind kind, const sampling::LabeledSet& train,
                                         const std::vector<Vector>& test);

/// Full pipeline configuration. The model's timepoints/n_components/n_regions
/// are resolved from the cohort and the n_ics/n_regions fields at run time,
/// so config files never state them. All stage randomness derives from the
/// single seed via stage-name hashing.
struct ExperimentConfig {
  synthgen::CohortSpec cohort;
  int n_ics = 17;
  int n_regions = 10;
  afgru::ModelConfig model;  // hidden_size, ablation, stfa front end
  afgru::TrainConfig train;
  sampling::SamplerConfig sampler;
  std::string classifier = "stanet";  // stanet | logistic | tree | plain_gru
  int k_folds = 10;
  std::uint64_t seed = 0;

  ExperimentConfig();  ///< desk-scale defaults (small stfa bank, short training)

  void validate() const;
};

/// Permissive parse: absent keys keep the defaults above; unknown classifier
/// names and malformed values throw ValidationError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);

/// FNV-1a 64-bit hex digest of a canonical (sorted-key) JSON dump.
std::string config_hash(const nlohmann::json& j);

struct FoldReport {
  int fold_index = 0;
  std::vector<int> test_subjects;
  ConfusionCounts confusion;
  MetricsReport metrics;
};

struct ExperimentReport {
  std::string config_json;           ///< resolved config, canonical dump
  std::string hash;                  ///< config_hash of the resolved config
  std::uint64_t seed = 0;
  FoldPlan plan;
  std::vector<FoldReport> folds;
  MetricsReport aggregated;          ///< unweighted mean over folds
  double wall_seconds = 0.0;         ///< text report only, never in JSON
  std::string notes;
};

/// Cross-validated train/evaluate over the scans:
/// group decomposition once over the whole cohort (unsupervised), then per
/// fold — fit the front end and classifier on training subjects only, derive
/// the balancing plan from fused training features only, and score held-out
/// subjects. Folds use per-fold derived seeds and the report is assembled in
/// fold order, so the result is independent of evaluation order. Throws
/// TrainingError if any fold aborts (the message lists every failed fold).
ExperimentReport run_experiment(const std::vector<synthgen::SubjectScan>& scans,
                                const ExperimentConfig& cfg);

/// Machine form: resolved config, hash, seed, fold plan, per-fold confusion
/// and metrics, and the aggregate. Deterministic byte-for-byte for a given
/// config and seed (wall time is deliberately excluded).
std::string report_to_json_text(const ExperimentReport& report);

/// Inverse of report_to_json_text (wall_seconds comes back as 0, since the
/// machine form never carries it). Throws ValidationError on malformed text.
ExperimentReport report_from_json_text(const std::string& text);

/// Human form: aligned metric table plus wall time and notes.
std::string report_to_text(const ExperimentReport& report);

}  // namespace stanet::eval
