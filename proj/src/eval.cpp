#include "stanet/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <memory>
#include <utility>

#include <nlohmann/json.hpp>

#include "stanet/ica.hpp"
#include "stanet/rng.hpp"
#include "stanet/rsn.hpp"
#include "stanet/stfa.hpp"

namespace stanet::eval {

namespace {

using nlohmann::json;

void check_scores_labels(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty()) throw ValidationError("scores: must be nonempty");
  if (scores.size() != labels.size()) {
    throw ValidationError("scores/labels: lengths differ");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) {
      throw ValidationError("scores: entry " + std::to_string(i) + " is not finite");
    }
    if (labels[i] != 0 && labels[i] != 1) {
      throw ValidationError("labels: entry " + std::to_string(i) + " must be 0 or 1");
    }
  }
}

void fisher_yates(std::vector<int>& v, Rng& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
    std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Row-major flattening of a fused feature matrix into one sample vector.
Vector flatten(const Matrix& m) {
  Vector v(m.size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) v[k++] = m(i, j);
  }
  return v;
}

// ---- CART ------------------------------------------------------------

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double prob = 0.0;  // positive fraction of the training samples at the node
};

constexpr int kTreeMaxDepth = 6;

double gini(int pos, int n) {
  if (n == 0) return 0.0;
  const double p = static_cast<double>(pos) / n;
  return 1.0 - p * p - (1.0 - p) * (1.0 - p);
}

int build_tree(std::vector<TreeNode>& nodes, const sampling::LabeledSet& train,
               std::vector<int> idx, int depth) {
  const int n = static_cast<int>(idx.size());
  int pos = 0;
  for (int i : idx) pos += train.labels[static_cast<std::size_t>(i)];

  const int self = static_cast<int>(nodes.size());
  nodes.push_back(TreeNode{});
  nodes[static_cast<std::size_t>(self)].prob = static_cast<double>(pos) / n;
  if (depth >= kTreeMaxDepth || n < 2 || pos == 0 || pos == n) return self;

  // Exhaustive axis-aligned search: best Gini gain, ties toward the lower
  // feature index and threshold (first maximum found wins).
  const double parent = gini(pos, n);
  double best_gain = 1e-12;
  int best_dim = -1;
  double best_thr = 0.0;
  const Eigen::Index dims = train.features[0].size();
  std::vector<std::pair<double, int>> order(static_cast<std::size_t>(n));
  for (Eigen::Index d = 0; d < dims; ++d) {
    for (int i = 0; i < n; ++i) {
      order[static_cast<std::size_t>(i)] = {
          train.features[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])][d],
          train.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]};
    }
    std::sort(order.begin(), order.end());
    int left_pos = 0;
    for (int i = 0; i < n - 1; ++i) {
      left_pos += order[static_cast<std::size_t>(i)].second;
      if (order[static_cast<std::size_t>(i)].first == order[static_cast<std::size_t>(i + 1)].first) continue;
      const int n_left = i + 1;
      const double gain = parent -
                          (static_cast<double>(n_left) / n) * gini(left_pos, n_left) -
                          (static_cast<double>(n - n_left) / n) * gini(pos - left_pos, n - n_left);
      if (gain > best_gain) {
        best_gain = gain;
        best_dim = static_cast<int>(d);
        best_thr = 0.5 * (order[static_cast<std::size_t>(i)].first +
                          order[static_cast<std::size_t>(i + 1)].first);
      }
    }
  }
  if (best_dim < 0) return self;  // no split improves impurity

  std::vector<int> left_idx;
  std::vector<int> right_idx;
  for (int i : idx) {
    (train.features[static_cast<std::size_t>(i)][best_dim] < best_thr ? left_idx : right_idx)
        .push_back(i);
  }
  idx.clear();
  idx.shrink_to_fit();
  const int left = build_tree(nodes, train, std::move(left_idx), depth + 1);
  const int right = build_tree(nodes, train, std::move(right_idx), depth + 1);
  nodes[static_cast<std::size_t>(self)].feature = best_dim;
  nodes[static_cast<std::size_t>(self)].threshold = best_thr;
  nodes[static_cast<std::size_t>(self)].left = left;
  nodes[static_cast<std::size_t>(self)].right = right;
  return self;
}

double tree_score(const std::vector<TreeNode>& nodes, const Vector& x) {
  int at = 0;
  while (nodes[static_cast<std::size_t>(at)].feature >= 0) {
    const TreeNode& nd = nodes[static_cast<std::size_t>(at)];
    at = x[nd.feature] < nd.threshold ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(at)].prob;
}

// ---- logistic regression ----------------------------------------------

constexpr int kLogisticSteps = 500;
constexpr double kLogisticLr = 0.1;

std::vector<double> logistic_fit_predict(const sampling::LabeledSet& train,
                                         const std::vector<Vector>& test) {
  const std::size_t n = train.size();
  const Eigen::Index dim = train.features[0].size();
  Vector w = Vector::Zero(dim);
  double b = 0.0;
  for (int step = 0; step < kLogisticSteps; ++step) {
    Vector gw = Vector::Zero(dim);
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = sigmoid(w.dot(train.features[i]) + b) - train.labels[i];
      gw += (r / static_cast<double>(n)) * train.features[i];
      gb += r / static_cast<double>(n);
    }
    w -= kLogisticLr * gw;
    b -= kLogisticLr * gb;
  }
  std::vector<double> scores;
  scores.reserve(test.size());
  for (const Vector& x : test) scores.push_back(sigmoid(w.dot(x) + b));
  return scores;
}

// ---- report helpers ----------------------------------------------------

json metrics_to_json(const MetricsReport& m) {
  return json{{"acc", m.acc},   {"sen", m.sen},       {"ppv", m.ppv},
              {"f1", m.f1},     {"recall", m.recall}, {"auc", m.auc},
              {"ppv_undefined", m.ppv_undefined}};
}

json confusion_to_json(const ConfusionCounts& c) {
  return json{{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}};
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport m;
  m.acc = j.at("acc").get<double>();
  m.sen = j.at("sen").get<double>();
  m.ppv = j.at("ppv").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.recall = j.at("recall").get<double>();
  m.auc = j.at("auc").get<double>();
  m.ppv_undefined = j.at("ppv_undefined").get<bool>();
  return m;
}

ConfusionCounts confusion_from_json(const json& j) {
  ConfusionCounts c;
  c.tp = j.at("tp").get<int>();
  c.tn = j.at("tn").get<int>();
  c.fp = j.at("fp").get<int>();
  c.fn = j.at("fn").get<int>();
  return c;
}

struct FoldOutcome {
  FoldReport report;
  std::vector<int> train_subjects;
};

}  // namespace

ConfusionCounts confusion(const std::vector<double>& scores, const std::vector<int>& labels,
                          double threshold) {
  check_scores_labels(scores, labels);
  if (!std::isfinite(threshold)) throw ValidationError("threshold: must be finite");
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) {
      (predicted ? c.tp : c.fn) += 1;
    } else {
      (predicted ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

MetricsReport metrics(const ConfusionCounts& c, const std::vector<double>& scores,
                      const std::vector<int>& labels) {
  check_scores_labels(scores, labels);
  if (c.tp < 0 || c.tn < 0 || c.fp < 0 || c.fn < 0) {
    throw ValidationError("counts: must be nonnegative");
  }
  int n_pos = 0;
  for (int l : labels) n_pos += l;
  const int n_neg = static_cast<int>(labels.size()) - n_pos;
  if (c.total() != static_cast<int>(scores.size()) || c.tp + c.fn != n_pos ||
      c.tn + c.fp != n_neg) {
    throw ValidationError("counts: inconsistent with the scored samples");
  }
  if (n_pos == 0 || n_neg == 0) {
    throw ValidationError("labels: auc is undefined for a single-class sample");
  }

  MetricsReport m;
  m.acc = static_cast<double>(c.tp + c.tn) / c.total();
  m.sen = static_cast<double>(c.tp) / (c.tp + c.fn);
  m.recall = m.sen;
  if (c.tp + c.fp == 0) {
    m.ppv = 0.0;
    m.ppv_undefined = true;
  } else {
    m.ppv = static_cast<double>(c.tp) / (c.tp + c.fp);
  }
  m.f1 = m.sen + m.ppv > 0.0 ? 2.0 * m.sen * m.ppv / (m.sen + m.ppv) : 0.0;

  double credit = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j]) {
        credit += 1.0;
      } else if (scores[i] == scores[j]) {
        credit += 0.5;
      }
    }
  }
  m.auc = credit / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
  return m;
}

FoldPlan make_folds(const std::vector<int>& labels, int k, std::uint64_t seed) {
  const int n = static_cast<int>(labels.size());
  if (n == 0) throw ValidationError("labels: must be nonempty");
  int count[2] = {0, 0};
  for (int l : labels) {
    if (l != 0 && l != 1) throw ValidationError("labels: must be 0 or 1");
    ++count[l];
  }
  if (k < 2) throw ValidationError("k: must be at least 2");
  if (k > n) {
    throw ValidationError("k: " + std::to_string(k) + " folds exceed " + std::to_string(n) +
                          " subjects");
  }

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.assign(static_cast<std::size_t>(k), {});
  Rng rng(derive_seed(seed, "folds"));

  if (count[0] >= k && count[1] >= k) {
    // Stratified: shuffle within each class and deal round-robin with a fold
    // cursor that continues across classes. The concatenated deal is a single
    // round-robin pass over all subjects, so total fold sizes differ by at
    // most one while each class stays within one of even as well.
    plan.stratified = true;
    int cursor = 0;
    for (int cls : {1, 0}) {
      std::vector<int> members;
      for (int i = 0; i < n; ++i) {
        if (labels[static_cast<std::size_t>(i)] == cls) members.push_back(i);
      }
      fisher_yates(members, rng);
      for (int id : members) {
        plan.folds[static_cast<std::size_t>(cursor % k)].push_back(id);
        ++cursor;
      }
    }
  } else {
    plan.stratified = false;
    const int small = count[0] < count[1] ? 0 : 1;
    plan.warning = "stratification relaxed: class " + std::to_string(small) + " has " +
                   std::to_string(count[small]) + " members for k = " + std::to_string(k);
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    fisher_yates(all, rng);
    for (int i = 0; i < n; ++i) {
      plan.folds[static_cast<std::size_t>(i % k)].push_back(all[static_cast<std::size_t>(i)]);
    }
  }
  for (auto& fold : plan.folds) std::sort(fold.begin(), fold.end());
  return plan;
}

sampling::BalancePlan plan_balance(const TrainFeatures& train, const sampling::SamplerConfig& cfg) {
  return sampling::make_plan(train.set, cfg);
}

std::string to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::logistic: return "logistic";
    case BaselineKind::tree: return "tree";
    case BaselineKind::plain_gru: return "plain_gru";
  }
  throw ValidationError("baseline: unknown enum value");
}

std::vector<double> baseline_fit_predict(BaselineKind kind, const sampling::LabeledSet& train,
                                         const std::vector<Vector>& test) {
  train.validate();
  const int n_pos = static_cast<int>(std::count(train.labels.begin(), train.labels.end(), 1));
  if (n_pos == 0 || n_pos == static_cast<int>(train.size())) {
    throw ValidationError("train: both classes must be present");
  }
  const Eigen::Index dim = train.features[0].size();
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test[i].size() != dim) {
      throw ValidationError("test: vector " + std::to_string(i) +
                            " does not match the training dimension");
    }
  }
  switch (kind) {
    case BaselineKind::logistic:
      return logistic_fit_predict(train, test);
    case BaselineKind::tree: {
      std::vector<TreeNode> nodes;
      std::vector<int> idx(train.size());
      for (std::size_t i = 0; i < train.size(); ++i) idx[i] = static_cast<int>(i);
      build_tree(nodes, train, std::move(idx), 0);
      std::vector<double> scores;
      scores.reserve(test.size());
      for (const Vector& x : test) scores.push_back(tree_score(nodes, x));
      return scores;
    }
    case BaselineKind::plain_gru:
      throw ValidationError(
          "plain_gru: recurrent baseline runs through the experiment harness, "
          "not the flat-feature interface");
  }
  throw ValidationError("baseline: unknown enum value");
}

ExperimentConfig::ExperimentConfig() {
  // Desk-scale defaults: a small multi-scale bank and short full-batch
  // training keep a 72-subject, 10-fold run within a single-core budget.
  model.hidden_size = 16;
  model.stfa.kernel_sizes = {3, 5, 7};
  model.stfa.filters_per_scale = 1;
  model.stfa.pool_rows = 10;
  model.stfa.pool_cols = 10;
  train.lr = 0.7;
  train.epochs = 120;
  // Multiplicative-weight temperature lr * weight_rounds stays near the
  // contract default 0.01 * 500 = 5; hotter schedules collapse the fusion
  // weights onto one block and hurt ranking quality.
  train.weight_rounds = 7;
}

void ExperimentConfig::validate() const {
  cohort.validate();
  if (n_ics < 2) throw ValidationError("n_ics: must be at least 2");
  if (n_regions < 1) throw ValidationError("n_regions: must be at least 1");
  if (model.hidden_size < 1) throw ValidationError("model.hidden_size: must be positive");
  model.stfa.validate();
  train.validate();
  sampler.validate();
  if (classifier != "stanet" && classifier != "logistic" && classifier != "tree" &&
      classifier != "plain_gru") {
    throw ValidationError("classifier: '" + classifier +
                          "' is not one of stanet, logistic, tree, plain_gru");
  }
  if (k_folds < 2) throw ValidationError("k_folds: must be at least 2");
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig cfg;
    if (j.contains("cohort")) cfg.cohort = synthgen::spec_from_json(j.at("cohort"));
    cfg.n_ics = j.value("n_ics", cfg.n_ics);
    cfg.n_regions = j.value("n_regions", cfg.n_regions);
    if (j.contains("model")) {
      const json& m = j.at("model");
      cfg.model.hidden_size = m.value("hidden_size", cfg.model.hidden_size);
      if (m.contains("ablation")) {
        cfg.model.ablation = afgru::ablation_from_string(m.at("ablation").get<std::string>());
      }
      if (m.contains("stfa")) {
        const json& s = m.at("stfa");
        if (s.contains("kernel_sizes")) {
          cfg.model.stfa.kernel_sizes = s.at("kernel_sizes").get<std::vector<int>>();
        }
        cfg.model.stfa.filters_per_scale =
            s.value("filters_per_scale", cfg.model.stfa.filters_per_scale);
        cfg.model.stfa.pool_rows = s.value("pool_rows", cfg.model.stfa.pool_rows);
        cfg.model.stfa.pool_cols = s.value("pool_cols", cfg.model.stfa.pool_cols);
        if (s.contains("single_scale_override") && !s.at("single_scale_override").is_null()) {
          cfg.model.stfa.single_scale_override = s.at("single_scale_override").get<int>();
        }
      }
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      cfg.train.lr = t.value("lr", cfg.train.lr);
      cfg.train.epochs = t.value("epochs", cfg.train.epochs);
      cfg.train.weight_rounds = t.value("weight_rounds", cfg.train.weight_rounds);
    }
    if (j.contains("sampler")) {
      const json& s = j.at("sampler");
      if (s.contains("strategy")) {
        cfg.sampler.strategy = sampling::strategy_from_string(s.at("strategy").get<std::string>());
      }
      cfg.sampler.k_neighbors = s.value("k_neighbors", cfg.sampler.k_neighbors);
    }
    cfg.classifier = j.value("classifier", cfg.classifier);
    cfg.k_folds = j.value("k_folds", cfg.k_folds);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
  json stfa_j{{"kernel_sizes", cfg.model.stfa.kernel_sizes},
              {"filters_per_scale", cfg.model.stfa.filters_per_scale},
              {"pool_rows", cfg.model.stfa.pool_rows},
              {"pool_cols", cfg.model.stfa.pool_cols}};
  if (cfg.model.stfa.single_scale_override.has_value()) {
    stfa_j["single_scale_override"] = *cfg.model.stfa.single_scale_override;
  }
  return json{
      {"cohort", synthgen::spec_to_json(cfg.cohort)},
      {"n_ics", cfg.n_ics},
      {"n_regions", cfg.n_regions},
      {"model",
       json{{"hidden_size", cfg.model.hidden_size},
            {"ablation", afgru::to_string(cfg.model.ablation)},
            {"stfa", std::move(stfa_j)}}},
      {"train",
       json{{"lr", cfg.train.lr},
            {"epochs", cfg.train.epochs},
            {"weight_rounds", cfg.train.weight_rounds}}},
      {"sampler",
       json{{"strategy", sampling::to_string(cfg.sampler.strategy)},
            {"k_neighbors", cfg.sampler.k_neighbors}}},
      {"classifier", cfg.classifier},
      {"k_folds", cfg.k_folds},
      {"seed", cfg.seed},
  };
}

std::string config_hash(const nlohmann::json& j) {
  const std::string dump = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

namespace {

FoldReport run_fold(int fold_index, const FoldPlan& plan,
                    const std::vector<afgru::RawSample>& samples,
                    const afgru::ModelConfig& mc, const ExperimentConfig& cfg) {
  const std::vector<int>& test_ids = plan.folds[static_cast<std::size_t>(fold_index)];
  std::vector<int> train_ids;
  for (int f = 0; f < plan.k; ++f) {
    if (f == fold_index) continue;
    const auto& fold = plan.folds[static_cast<std::size_t>(f)];
    train_ids.insert(train_ids.end(), fold.begin(), fold.end());
  }
  std::sort(train_ids.begin(), train_ids.end());

  afgru::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, "fold-train", static_cast<std::uint64_t>(fold_index));

  // Fused features at the classifier's starting parameters drive both the
  // balancing plan and the flat-feature baselines. The initializer depends
  // only on the seed, never on held-out data.
  const afgru::AfgruModel init = afgru::init_model(mc, tc.seed);
  TrainFeatures train_features;
  for (int id : train_ids) {
    const afgru::RawSample& s = samples[static_cast<std::size_t>(id)];
    train_features.set.features.push_back(flatten(afgru::fused_feature(init, s.timecourses, s.similarity)));
    train_features.set.labels.push_back(s.label ? 1 : 0);
  }

  sampling::SamplerConfig scfg = cfg.sampler;
  scfg.seed = derive_seed(cfg.seed, "fold-balance", static_cast<std::uint64_t>(fold_index));
  const sampling::BalancePlan bplan = plan_balance(train_features, scfg);

  std::vector<double> scores;
  scores.reserve(test_ids.size());
  if (cfg.classifier == "stanet" || cfg.classifier == "plain_gru") {
    afgru::TrainSet set;
    for (int id : train_ids) set.raw.push_back(samples[static_cast<std::size_t>(id)]);
    if (std::find(bplan.keep.begin(), bplan.keep.end(), false) != bplan.keep.end()) {
      set.raw_in_loss = bplan.keep;
    }
    for (const sampling::SynthRecipe& r : bplan.synth) {
      set.mixed.push_back(afgru::MixedSample{r.base, r.neighbor, r.u,
                                             static_cast<double>(r.label)});
    }
    const afgru::TrainResult result = afgru::train(set, mc, tc);
    for (int id : test_ids) {
      const afgru::RawSample& s = samples[static_cast<std::size_t>(id)];
      scores.push_back(afgru::forward(result.model, s.timecourses, s.similarity).score);
    }
  } else {
    TestFeatures test_features;
    for (int id : test_ids) {
      const afgru::RawSample& s = samples[static_cast<std::size_t>(id)];
      test_features.set.features.push_back(flatten(afgru::fused_feature(init, s.timecourses, s.similarity)));
      test_features.set.labels.push_back(s.label ? 1 : 0);
    }
    const sampling::LabeledSet balanced = sampling::apply_plan(train_features.set, bplan);
    const BaselineKind kind =
        cfg.classifier == "logistic" ? BaselineKind::logistic : BaselineKind::tree;
    scores = baseline_fit_predict(kind, balanced, test_features.set.features);
  }

  std::vector<int> test_labels;
  test_labels.reserve(test_ids.size());
  for (int id : test_ids) test_labels.push_back(samples[static_cast<std::size_t>(id)].label ? 1 : 0);

  FoldReport fr;
  fr.fold_index = fold_index;
  fr.test_subjects = test_ids;
  fr.confusion = confusion(scores, test_labels);
  fr.metrics = metrics(fr.confusion, scores, test_labels);
  return fr;
}

}  // namespace

ExperimentReport run_experiment(const std::vector<synthgen::SubjectScan>& scans,
                                const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  if (scans.empty()) throw ValidationError("scans: empty cohort");
  const Eigen::Index t_len = scans[0].data.rows();
  const Eigen::Index voxels = scans[0].data.cols();
  std::vector<int> labels;
  labels.reserve(scans.size());
  std::vector<Matrix> data;
  data.reserve(scans.size());
  for (std::size_t s = 0; s < scans.size(); ++s) {
    if (scans[s].data.rows() != t_len || scans[s].data.cols() != voxels) {
      throw ValidationError("scans: subject " + std::to_string(s) + " has mismatched dimensions");
    }
    if (scans[s].label != 0 && scans[s].label != 1) {
      throw ValidationError("scans: subject " + std::to_string(s) + " label must be 0 or 1");
    }
    labels.push_back(scans[s].label);
    data.push_back(scans[s].data);
  }

  afgru::ModelConfig mc = cfg.model;
  mc.timepoints = static_cast<int>(t_len);
  mc.n_components = cfg.n_ics;
  mc.n_regions = cfg.n_regions;
  if (cfg.classifier == "plain_gru") mc.ablation = afgru::Ablation::sgru;
  mc.validate();

  // Unsupervised stages run once over the whole cohort; nothing here sees a
  // label, so the fold split below is the only supervised boundary.
  ica::FastIcaConfig icfg;
  icfg.seed = derive_seed(cfg.seed, "ica");
  const ica::GroupDecomposition dec = ica::group_decompose(data, cfg.n_ics, icfg);
  const rsn::RsnTemplate tmpl =
      rsn::synth_template(cfg.n_regions, static_cast<int>(voxels), derive_seed(cfg.seed, "rsn"));

  std::vector<afgru::RawSample> samples(scans.size());
  for (std::size_t s = 0; s < scans.size(); ++s) {
    samples[s].timecourses = dec.timecourses[s];
    samples[s].similarity = rsn::spatial_regression(
        ica::subject_spatial_maps(scans[s].data, dec.timecourses[s]), tmpl);
    samples[s].label = scans[s].label;
  }

  ExperimentReport report;
  report.seed = cfg.seed;
  report.plan = make_folds(labels, cfg.k_folds, cfg.seed);
  const nlohmann::json resolved = experiment_config_to_json(cfg);
  report.config_json = resolved.dump();
  report.hash = config_hash(resolved);
  report.notes =
      "class balancing operates on fused training features only; held-out folds are never resampled";

  std::vector<std::string> failures;
  int first_failed = -1;
  for (int f = 0; f < report.plan.k; ++f) {
    try {
      report.folds.push_back(run_fold(f, report.plan, samples, mc, cfg));
    } catch (const std::exception& e) {
      if (first_failed < 0) first_failed = f;
      failures.push_back("fold " + std::to_string(f) + ": " + e.what());
    }
  }
  if (!failures.empty()) {
    std::string msg = "experiment failed in " + std::to_string(failures.size()) + " fold(s): ";
    for (std::size_t i = 0; i < failures.size(); ++i) {
      if (i > 0) msg += "; ";
      msg += failures[i];
    }
    throw TrainingError(msg, first_failed);
  }

  MetricsReport agg;
  for (const FoldReport& fr : report.folds) {
    agg.acc += fr.metrics.acc;
    agg.sen += fr.metrics.sen;
    agg.ppv += fr.metrics.ppv;
    agg.f1 += fr.metrics.f1;
    agg.recall += fr.metrics.recall;
    agg.auc += fr.metrics.auc;
    agg.ppv_undefined = agg.ppv_undefined || fr.metrics.ppv_undefined;
  }
  const double k = static_cast<double>(report.folds.size());
  agg.acc /= k;
  agg.sen /= k;
  agg.ppv /= k;
  agg.f1 /= k;
  agg.recall /= k;
  agg.auc /= k;
  report.aggregated = agg;

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

std::string report_to_json_text(const ExperimentReport& report) {
  json folds = json::array();
  for (const FoldReport& fr : report.folds) {
    folds.push_back(json{{"fold", fr.fold_index},
                         {"test_subjects", fr.test_subjects},
                         {"confusion", confusion_to_json(fr.confusion)},
                         {"metrics", metrics_to_json(fr.metrics)}});
  }
  const json j{
      {"config", json::parse(report.config_json)},
      {"config_hash", report.hash},
      {"seed", report.seed},
      {"notes", report.notes},
      {"fold_plan",
       json{{"k", report.plan.k},
            {"stratified", report.plan.stratified},
            {"warning", report.plan.warning},
            {"folds", report.plan.folds}}},
      {"folds", std::move(folds)},
      {"aggregated", metrics_to_json(report.aggregated)},
  };
  return j.dump(2) + "\n";
}

ExperimentReport report_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("report: not valid JSON: ") + e.what());
  }
  ExperimentReport report;
  try {
    report.config_json = j.at("config").dump();
    report.hash = j.at("config_hash").get<std::string>();
    report.seed = j.at("seed").get<std::uint64_t>();
    report.notes = j.at("notes").get<std::string>();
    const json& plan = j.at("fold_plan");
    report.plan.k = plan.at("k").get<int>();
    report.plan.seed = report.seed;
    report.plan.stratified = plan.at("stratified").get<bool>();
    report.plan.warning = plan.at("warning").get<std::string>();
    report.plan.folds = plan.at("folds").get<std::vector<std::vector<int>>>();
    for (const json& fj : j.at("folds")) {
      FoldReport fr;
      fr.fold_index = fj.at("fold").get<int>();
      fr.test_subjects = fj.at("test_subjects").get<std::vector<int>>();
      fr.confusion = confusion_from_json(fj.at("confusion"));
      fr.metrics = metrics_from_json(fj.at("metrics"));
      report.folds.push_back(std::move(fr));
    }
    report.aggregated = metrics_from_json(j.at("aggregated"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("report: missing or malformed field: ") + e.what());
  }
  return report;
}

std::string report_to_text(const ExperimentReport& report) {
  const json cfg = json::parse(report.config_json);
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "experiment report  hash=%s  seed=%llu\n",
                report.hash.c_str(), static_cast<unsigned long long>(report.seed));
  out += line;
  std::snprintf(line, sizeof(line),
                "classifier=%s  ablation=%s  sampler=%s  n_ics=%d  folds=%d\n",
                cfg.at("classifier").get<std::string>().c_str(),
                cfg.at("model").at("ablation").get<std::string>().c_str(),
                cfg.at("sampler").at("strategy").get<std::string>().c_str(),
                cfg.at("n_ics").get<int>(), report.plan.k);
  out += line;
  out += "fold    n  TP TN FP FN      acc      sen      ppv       f1      auc\n";
  for (const FoldReport& fr : report.folds) {
    std::snprintf(line, sizeof(line), "%4d %4d  %2d %2d %2d %2d %8.4f %8.4f %8.4f %8.4f %8.4f\n",
                  fr.fold_index, static_cast<int>(fr.test_subjects.size()), fr.confusion.tp,
                  fr.confusion.tn, fr.confusion.fp, fr.confusion.fn, fr.metrics.acc,
                  fr.metrics.sen, fr.metrics.ppv, fr.metrics.f1, fr.metrics.auc);
    out += line;
  }
  std::snprintf(line, sizeof(line), "mean %4d              %8.4f %8.4f %8.4f %8.4f %8.4f\n",
                static_cast<int>(report.folds.size()), report.aggregated.acc,
                report.aggregated.sen, report.aggregated.ppv, report.aggregated.f1,
                report.aggregated.auc);
  out += line;
  if (!report.plan.warning.empty()) out += "warning: " + report.plan.warning + "\n";
  if (report.wall_seconds > 0.0) {
    std::snprintf(line, sizeof(line), "wall time: %.2f s\n", report.wall_seconds);
    out += line;
  }
  out += "note: " + report.notes + "\n";
  return out;
}

}  // namespace stanet::eval
