#pragma once

#include "stanet/stfa.hpp"
#include "stanet/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stanet::afgru {

/// Model variants. Each switch changes structure, never training code paths:
///   stanet   — full model: six blocks, spectral gating, attention, adaptive
///              fusion weights
///   atfgru   — adaptive weight updates disabled, fusion weights frozen uniform
///   adfgru   — attention removed; each branch output is the last hidden state
///   agru     — spectral gating removed (block inputs used verbatim)
///   sgru     — single block, no spectral gating / attention / adaptive weights
///   dgru     — two blocks, same disables as sgru
///   stanet_t — temporal branch only in the front end
///   stanet_s — spatial branch only in the front end
///   stfa_s   — front end restricted to the single 7x7 kernel scale
enum class Ablation { stanet, atfgru, adfgru, agru, sgru, dgru, stanet_t, stanet_s, stfa_s };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

struct ModelConfig {
  int hidden_size = 32;
  int timepoints = 95;    // rows of each subject's time-course matrix
  int n_components = 17;  // columns of the time-course matrix
  int n_regions = 10;     // columns of the similarity matrix
  Ablation ablation = Ablation::stanet;
  stfa::StfaConfig stfa;  // base front-end config; the ablation may narrow it

  int n_blocks() const;
  bool use_fft() const;
  bool use_attention() const;
  bool use_adaptive() const;
  /// Base stfa config with the ablation's branch/scale restrictions applied.
  stfa::StfaConfig effective_stfa() const;
  stfa::FeatureLayout layout() const;
  void validate() const;
};

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

/// Gate parameters of one recurrent block. Each matrix acts on the stacked
/// vector [h_prev, x] (x already transformed when spectral gating is on), so
/// shapes are hidden x (hidden + input). Biases start at zero.
struct FgruParams {
  Matrix w_z, w_r, w;
  Vector b_z, b_r, b_h;
};

struct AfgruModel {
  ModelConfig config;
  stfa::StfaParams stfa;
  std::vector<FgruParams> blocks;  // config.n_blocks() entries
  Matrix attn_p;                   // hidden x hidden; 0x0 when attention is off
  Vector attn_q;                   // hidden; empty when attention is off
  Vector head;                     // hidden
  double head_bias = 0.0;
  Vector w;                        // fusion weights: positive, sums to 1
};

/// Deterministic in (cfg, seed). Gate weights uniform in +-1/sqrt(fan_in),
/// biases zero, attention/head uniform in +-1/sqrt(hidden); fusion weights
/// are a softmax of normal draws when adaptive updates are on, else uniform.
AfgruModel init_model(const ModelConfig& cfg, std::uint64_t seed);

/// One recurrent step. z/r gate between the previous hidden state and a
/// candidate built from the reset-masked history:
///   u = [h_prev, f(x)], z = sigmoid(w_z u + b_z), r = sigmoid(w_r u + b_r),
///   h_tilde = tanh(w [r*h_prev, f(x)] + b_h), h = (1-z)*h_prev + z*h_tilde,
/// where f = real_fft when apply_fft, identity otherwise.
struct FgruState {
  Vector h, z, r, h_tilde, x_fft;
};
FgruState fgru_step(const Vector& x, const Vector& h_prev, const FgruParams& p,
                    bool apply_fft = true);

/// Scaled additive attention over a hidden sequence (rows of h_seq are
/// timesteps): score_t = (q . tanh(p h_t)) / sqrt(hidden), alpha = softmax,
/// pooled = sum_t alpha_t h_t.
struct AttnResult {
  Vector pooled;
  Vector alpha;
  Vector scores;
};
AttnResult attention_pool(const Matrix& h_seq, const Matrix& p, const Vector& q);

/// Front end only: the fused feature sequence the first block consumes.
Matrix fused_feature(const AfgruModel& model, const Matrix& timecourses,
                     const Matrix& similarity);

struct ForwardResult {
  double score = 0.0;                 // sigmoid(head . fused_repr + bias)
  std::vector<Vector> block_outputs;  // X_i: pooled (or last-hidden) per block
  Vector branch_scores;               // sigmoid(head . X_i + bias) per block
};
/// Full inference path on an already-aggregated feature sequence.
ForwardResult forward_fused(const AfgruModel& model, const Matrix& fused);
/// Full inference path from raw per-subject inputs.
ForwardResult forward(const AfgruModel& model, const Matrix& timecourses,
                      const Matrix& similarity);

/// Training data: raw subjects plus synthetic samples defined as segment
/// interpolations between raw samples *in fused-feature space*. Synthetic
/// points are re-derived from the current front-end parameters every epoch,
/// so they track the evolving feature geometry of their parents.
struct RawSample {
  Matrix timecourses;
  Matrix similarity;
  double label = 0.0;
};
struct MixedSample {
  int base = 0;      // index into raw
  int neighbor = 0;  // index into raw
  double u = 0.0;    // position on the segment: base + u * (neighbor - base)
  double label = 0.0;
};
struct TrainSet {
  std::vector<RawSample> raw;
  std::vector<MixedSample> mixed;
  /// Optional per-raw mask: raws flagged false still serve as interpolation
  /// parents for mixed samples but contribute nothing to the training loss
  /// (used when link cleaning removes an original that parents a synthetic
  /// sample). Empty means every raw sample counts.
  std::vector<bool> raw_in_loss;
  bool raw_counts(std::size_t i) const { return raw_in_loss.empty() || raw_in_loss[i]; }
  std::size_t loss_count() const {
    if (raw_in_loss.empty()) return raw.size() + mixed.size();
    std::size_t n = mixed.size();
    for (bool b : raw_in_loss) n += b ? 1 : 0;
    return n;
  }
  std::size_t size() const { return raw.size() + mixed.size(); }
};

struct TrainConfig {
  double lr = 0.01;
  int epochs = 200;
  int weight_rounds = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Named mutable view over one gradient-trained parameter's coefficients.
/// The enumeration order is fixed and shared by gradient descent, the
/// finite-difference harness, and the serialized blob. Fusion weights are
/// excluded: they are updated by adaptive_weight_update, not descent.
struct ParamView {
  std::string name;
  double* data = nullptr;
  Eigen::Index size = 0;
};
std::vector<ParamView> param_views(AfgruModel& model);

/// Mean squared error over the set plus d(mse)/d(parameter) for every
/// param_views entry (flattened in that parameter's storage order), and the
/// per-branch mean residuals e_i = mean(sigmoid(head . X_i + bias) - label)
/// that drive the adaptive weight updates.
struct LossGrads {
  double mse = 0.0;
  std::vector<Vector> grads;
  Vector branch_errors;
};
LossGrads loss_and_grads(const AfgruModel& model, const TrainSet& set);

/// Same mse as loss_and_grads, computed without a gradient tape.
double evaluate_loss(const AfgruModel& model, const TrainSet& set);

/// One multiplicative-reweighting round: w'_i = w_i * exp(-lr * e_i),
/// renormalized onto the simplex.
Vector adaptive_weight_update(const Vector& w, const Vector& branch_errors, double lr);

/// Full-batch gradient descent with the per-epoch share of weight-update
/// rounds interleaved after each step (branch errors taken at the pre-step
/// parameters). epochs = 0 returns the initialized model untouched.
struct TrainResult {
  AfgruModel model;
  std::vector<double> mse_curve;  // one entry per epoch, pre-step
  int weight_rounds_done = 0;
};
TrainResult train(const TrainSet& set, const ModelConfig& model_cfg, const TrainConfig& cfg);

/// Directory layout: header.json (kind, version, config, blob length) +
/// params.bin (every param_views entry row-major as 64-bit little-endian
/// floats, then the fusion weights).
void save_model(const AfgruModel& model, const std::filesystem::path& dir);
AfgruModel load_model(const std::filesystem::path& dir);

}  // namespace stanet::afgru
