#include "stanet/afgru.hpp"

#include "stanet/ad.hpp"
#include "stanet/fft.hpp"
#include "stanet/io.hpp"
#include "stanet/rng.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <utility>

static_assert(std::endian::native == std::endian::little,
              "model blobs are little-endian; big-endian hosts are unsupported");

namespace stanet::afgru {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vector sigmoid_vec(const Vector& v) {
  return v.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

std::string branches_to_string(stfa::Branches b) {
  switch (b) {
    case stfa::Branches::both: return "both";
    case stfa::Branches::temporal_only: return "temporal_only";
    case stfa::Branches::spatial_only: return "spatial_only";
  }
  throw ValidationError("branches: unknown enum value");
}

stfa::Branches branches_from_string(const std::string& s) {
  if (s == "both") return stfa::Branches::both;
  if (s == "temporal_only") return stfa::Branches::temporal_only;
  if (s == "spatial_only") return stfa::Branches::spatial_only;
  throw ValidationError("branches: expected both|temporal_only|spatial_only, got \"" + s + "\"");
}

/// Canonical enumeration of every gradient-trained parameter as
/// (name, data, rows, cols) with column-major data. The visit order defines
/// the param_views order, the gradient vector layout, and the blob layout;
/// push_params below mirrors it exactly. Fusion weights are excluded — they
/// are updated multiplicatively, not by descent.
template <typename F>
void for_each_param(AfgruModel& m, F&& f) {
  for (std::size_t i = 0; i < m.stfa.kernels.size(); ++i) {
    Matrix& k = m.stfa.kernels[i];
    f("stfa.kernel[" + std::to_string(i) + "]", k.data(), k.rows(), k.cols());
  }
  for (std::size_t i = 0; i < m.stfa.biases.size(); ++i) {
    f("stfa.bias[" + std::to_string(i) + "]", &m.stfa.biases[i], Eigen::Index{1},
      Eigen::Index{1});
  }
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    FgruParams& p = m.blocks[b];
    const std::string tag = "block[" + std::to_string(b) + "].";
    f(tag + "w_z", p.w_z.data(), p.w_z.rows(), p.w_z.cols());
    f(tag + "w_r", p.w_r.data(), p.w_r.rows(), p.w_r.cols());
    f(tag + "w", p.w.data(), p.w.rows(), p.w.cols());
    f(tag + "b_z", p.b_z.data(), p.b_z.size(), Eigen::Index{1});
    f(tag + "b_r", p.b_r.data(), p.b_r.size(), Eigen::Index{1});
    f(tag + "b_h", p.b_h.data(), p.b_h.size(), Eigen::Index{1});
  }
  if (m.config.use_attention()) {
    f("attn.p", m.attn_p.data(), m.attn_p.rows(), m.attn_p.cols());
    f("attn.q", m.attn_q.data(), m.attn_q.size(), Eigen::Index{1});
  }
  f("head", m.head.data(), m.head.size(), Eigen::Index{1});
  f("head_bias", &m.head_bias, Eigen::Index{1}, Eigen::Index{1});
}

/// Tape-side handles for the model parameters. `flat` is aligned with
/// param_views / for_each_param order, so harvested gradients line up with
/// the descent update coefficient by coefficient.
struct TapeModel {
  std::vector<ad::Ref> flat;
  std::vector<ad::Ref> kernels;
  std::vector<ad::Ref> kernel_biases;
  struct BlockRefs {
    ad::Ref w_z, w_r, w, b_z, b_r, b_h;
  };
  std::vector<BlockRefs> blocks;
  ad::Ref attn_p, attn_q, head, head_bias;
};

TapeModel push_params(ad::Tape& tape, const AfgruModel& m) {
  TapeModel tm;
  auto push = [&](const Matrix& value) {
    ad::Ref r = tape.param(value);
    tm.flat.push_back(r);
    return r;
  };
  for (const Matrix& k : m.stfa.kernels) tm.kernels.push_back(push(k));
  for (double b : m.stfa.biases) tm.kernel_biases.push_back(push(Matrix::Constant(1, 1, b)));
  for (const FgruParams& p : m.blocks) {
    TapeModel::BlockRefs br;
    br.w_z = push(p.w_z);
    br.w_r = push(p.w_r);
    br.w = push(p.w);
    br.b_z = push(p.b_z);
    br.b_r = push(p.b_r);
    br.b_h = push(p.b_h);
    tm.blocks.push_back(br);
  }
  if (m.config.use_attention()) {
    tm.attn_p = push(m.attn_p);
    // attn_q and head enter row-vector products; a vector's coefficients
    // flatten identically in either orientation, so gradients still align.
    tm.attn_q = push(m.attn_q.transpose());
  }
  tm.head = push(m.head.transpose());
  tm.head_bias = push(Matrix::Constant(1, 1, m.head_bias));
  return tm;
}

/// Front end on the tape, mirroring stfa::aggregate slice by slice.
ad::Ref fused_on_tape(ad::Tape& tape, const TapeModel& tm, const stfa::StfaConfig& eff,
                      const stfa::FeatureLayout& layout, const Matrix& timecourses,
                      const Matrix& similarity) {
  std::vector<ad::Ref> parts;
  parts.reserve(layout.slices.size());
  for (std::size_t s = 0; s < layout.slices.size(); ++s) {
    const stfa::FeatureSlice& slice = layout.slices[s];
    const Matrix& image = slice.branch == 0 ? timecourses : similarity;
    ad::Ref x = tape.conv2d_same(image, tm.kernels[s], tm.kernel_biases[s]);
    x = tape.maxpool(tape.relu(x), eff.pool_rows, eff.pool_cols);
    if (slice.branch == 1) {
      x = tape.broadcast_rows(tape.flatten_to_row(x), layout.t_prime);
    }
    parts.push_back(x);
  }
  return tape.hstack(parts);
}

struct TapeForward {
  ad::Ref score;                        // 1x1
  std::vector<ad::Ref> branch_outputs;  // hidden x 1 per block
};

TapeForward score_on_tape(ad::Tape& tape, const TapeModel& tm, const AfgruModel& model,
                          ad::Ref fused) {
  const ModelConfig& cfg = model.config;
  const Eigen::Index t_prime = tape.value(fused).rows();
  TapeForward out;
  std::vector<ad::Ref> prev_seq;
  for (int b = 0; b < cfg.n_blocks(); ++b) {
    ad::Ref h = tape.constant(Matrix::Zero(cfg.hidden_size, 1));
    std::vector<ad::Ref> seq;
    seq.reserve(static_cast<std::size_t>(t_prime));
    const TapeModel::BlockRefs& p = tm.blocks[static_cast<std::size_t>(b)];
    for (Eigen::Index t = 0; t < t_prime; ++t) {
      ad::Ref x = b == 0 ? tape.row_as_col(fused, t) : prev_seq[static_cast<std::size_t>(t)];
      if (cfg.use_fft()) x = tape.real_fft(x);
      h = tape.fgru_step(h, x, p.w_z, p.w_r, p.w, p.b_z, p.b_r, p.b_h);
      seq.push_back(h);
    }
    ad::Ref xi;
    if (cfg.use_attention()) {
      std::vector<ad::Ref> scores;
      scores.reserve(seq.size());
      for (ad::Ref ht : seq) scores.push_back(tape.attn_score(tm.attn_p, tm.attn_q, ht));
      ad::Ref alpha = tape.softmax(tape.stack_scalars(scores));
      xi = tape.matmul(tape.hstack(seq), alpha);
    } else {
      xi = seq.back();
    }
    out.branch_outputs.push_back(xi);
    prev_seq = std::move(seq);
  }
  ad::Ref acc = tape.scale(out.branch_outputs[0], model.w[0]);
  for (int b = 1; b < cfg.n_blocks(); ++b) {
    acc = tape.add(acc, tape.scale(out.branch_outputs[static_cast<std::size_t>(b)], model.w[b]));
  }
  out.score = tape.sigmoid(tape.add(tape.matmul(tm.head, acc), tm.head_bias));
  return out;
}

void check_sample_dims(const ModelConfig& cfg, const Matrix& timecourses,
                       const Matrix& similarity, std::size_t index) {
  if (timecourses.rows() != cfg.timepoints || timecourses.cols() != cfg.n_components) {
    throw ValidationError("raw[" + std::to_string(index) + "].timecourses: expected " +
                          std::to_string(cfg.timepoints) + "x" +
                          std::to_string(cfg.n_components) + ", got " +
                          std::to_string(timecourses.rows()) + "x" +
                          std::to_string(timecourses.cols()));
  }
  if (similarity.rows() != cfg.n_components || similarity.cols() != cfg.n_regions) {
    throw ValidationError("raw[" + std::to_string(index) + "].similarity: expected " +
                          std::to_string(cfg.n_components) + "x" +
                          std::to_string(cfg.n_regions) + ", got " +
                          std::to_string(similarity.rows()) + "x" +
                          std::to_string(similarity.cols()));
  }
}

void check_train_set(const ModelConfig& cfg, const TrainSet& set) {
  if (set.size() == 0) throw ValidationError("set: must contain at least one sample");
  if (!set.raw_in_loss.empty() && set.raw_in_loss.size() != set.raw.size()) {
    throw ValidationError("raw_in_loss: must be empty or match raw sample count");
  }
  if (set.loss_count() == 0) {
    throw ValidationError("set: every sample is excluded from the loss");
  }
  for (std::size_t i = 0; i < set.raw.size(); ++i) {
    check_sample_dims(cfg, set.raw[i].timecourses, set.raw[i].similarity, i);
  }
  const int n_raw = static_cast<int>(set.raw.size());
  for (std::size_t i = 0; i < set.mixed.size(); ++i) {
    const MixedSample& m = set.mixed[i];
    if (m.base < 0 || m.base >= n_raw || m.neighbor < 0 || m.neighbor >= n_raw) {
      throw ValidationError("mixed[" + std::to_string(i) + "]: base/neighbor out of range");
    }
    if (!std::isfinite(m.u)) {
      throw ValidationError("mixed[" + std::to_string(i) + "].u: must be finite");
    }
  }
}

void check_model_shapes(const AfgruModel& model) {
  const ModelConfig& cfg = model.config;
  if (static_cast<int>(model.blocks.size()) != cfg.n_blocks()) {
    throw ValidationError("model: expected " + std::to_string(cfg.n_blocks()) +
                          " blocks, got " + std::to_string(model.blocks.size()));
  }
  if (model.head.size() != cfg.hidden_size) {
    throw ValidationError("model: head size does not match hidden_size");
  }
  if (model.w.size() != cfg.n_blocks()) {
    throw ValidationError("model: fusion weight count does not match block count");
  }
  if (cfg.use_attention() &&
      (model.attn_p.rows() != cfg.hidden_size || model.attn_p.cols() != cfg.hidden_size ||
       model.attn_q.size() != cfg.hidden_size)) {
    throw ValidationError("model: attention parameter shapes do not match hidden_size");
  }
}

}  // namespace

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::stanet: return "stanet";
    case Ablation::atfgru: return "atfgru";
    case Ablation::adfgru: return "adfgru";
    case Ablation::agru: return "agru";
    case Ablation::sgru: return "sgru";
    case Ablation::dgru: return "dgru";
    case Ablation::stanet_t: return "stanet_t";
    case Ablation::stanet_s: return "stanet_s";
    case Ablation::stfa_s: return "stfa_s";
  }
  throw ValidationError("ablation: unknown enum value");
}

Ablation ablation_from_string(const std::string& s) {
  if (s == "stanet") return Ablation::stanet;
  if (s == "atfgru") return Ablation::atfgru;
  if (s == "adfgru") return Ablation::adfgru;
  if (s == "agru") return Ablation::agru;
  if (s == "sgru") return Ablation::sgru;
  if (s == "dgru") return Ablation::dgru;
  if (s == "stanet_t") return Ablation::stanet_t;
  if (s == "stanet_s") return Ablation::stanet_s;
  if (s == "stfa_s") return Ablation::stfa_s;
  throw ValidationError(
      "ablation: expected stanet|atfgru|adfgru|agru|sgru|dgru|stanet_t|stanet_s|stfa_s, got \"" +
      s + "\"");
}

int ModelConfig::n_blocks() const {
  switch (ablation) {
    case Ablation::sgru: return 1;
    case Ablation::dgru: return 2;
    default: return 6;
  }
}

bool ModelConfig::use_fft() const {
  return ablation != Ablation::agru && ablation != Ablation::sgru && ablation != Ablation::dgru;
}

bool ModelConfig::use_attention() const {
  return ablation != Ablation::adfgru && ablation != Ablation::sgru &&
         ablation != Ablation::dgru;
}

bool ModelConfig::use_adaptive() const {
  return ablation != Ablation::atfgru && ablation != Ablation::sgru &&
         ablation != Ablation::dgru;
}

stfa::StfaConfig ModelConfig::effective_stfa() const {
  stfa::StfaConfig eff = stfa;
  if (ablation == Ablation::stanet_t) eff.branches = stfa::Branches::temporal_only;
  if (ablation == Ablation::stanet_s) eff.branches = stfa::Branches::spatial_only;
  if (ablation == Ablation::stfa_s) eff.single_scale_override = 7;
  return eff;
}

stfa::FeatureLayout ModelConfig::layout() const {
  return stfa::feature_layout(effective_stfa(), timepoints, n_components, n_regions);
}

void ModelConfig::validate() const {
  if (hidden_size < 1) {
    throw ValidationError("hidden_size: must be >= 1, got " + std::to_string(hidden_size));
  }
  if (timepoints < 1) {
    throw ValidationError("timepoints: must be >= 1, got " + std::to_string(timepoints));
  }
  if (n_components < 1) {
    throw ValidationError("n_components: must be >= 1, got " + std::to_string(n_components));
  }
  if (n_regions < 1) {
    throw ValidationError("n_regions: must be >= 1, got " + std::to_string(n_regions));
  }
  stfa.validate();
  effective_stfa().validate();
}

nlohmann::json config_to_json(const ModelConfig& cfg) {
  nlohmann::json s = {
      {"kernel_sizes", cfg.stfa.kernel_sizes},
      {"filters_per_scale", cfg.stfa.filters_per_scale},
      {"pool_rows", cfg.stfa.pool_rows},
      {"pool_cols", cfg.stfa.pool_cols},
      {"branches", branches_to_string(cfg.stfa.branches)},
  };
  if (cfg.stfa.single_scale_override) {
    s["single_scale_override"] = *cfg.stfa.single_scale_override;
  } else {
    s["single_scale_override"] = nullptr;
  }
  return nlohmann::json{
      {"hidden_size", cfg.hidden_size},   {"timepoints", cfg.timepoints},
      {"n_components", cfg.n_components}, {"n_regions", cfg.n_regions},
      {"ablation", to_string(cfg.ablation)}, {"stfa", std::move(s)},
  };
}

ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig cfg;
    cfg.hidden_size = j.at("hidden_size").get<int>();
    cfg.timepoints = j.at("timepoints").get<int>();
    cfg.n_components = j.at("n_components").get<int>();
    cfg.n_regions = j.at("n_regions").get<int>();
    cfg.ablation = ablation_from_string(j.at("ablation").get<std::string>());
    const nlohmann::json& s = j.at("stfa");
    cfg.stfa.kernel_sizes = s.at("kernel_sizes").get<std::vector<int>>();
    cfg.stfa.filters_per_scale = s.at("filters_per_scale").get<int>();
    cfg.stfa.pool_rows = s.at("pool_rows").get<int>();
    cfg.stfa.pool_cols = s.at("pool_cols").get<int>();
    cfg.stfa.branches = branches_from_string(s.at("branches").get<std::string>());
    if (s.contains("single_scale_override") && !s.at("single_scale_override").is_null()) {
      cfg.stfa.single_scale_override = s.at("single_scale_override").get<int>();
    }
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config json: ") + e.what());
  }
}

AfgruModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "afgru-init"));
  AfgruModel m;
  m.config = cfg;
  m.stfa = stfa::init_params(cfg.effective_stfa(), rng);
  const int hidden = cfg.hidden_size;
  const int width = cfg.layout().width;
  const int n = cfg.n_blocks();
  m.blocks.reserve(static_cast<std::size_t>(n));
  for (int b = 0; b < n; ++b) {
    const int in = b == 0 ? width : hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden + in));
    FgruParams p;
    p.w_z = rng.uniform_matrix(hidden, hidden + in, -bound, bound);
    p.w_r = rng.uniform_matrix(hidden, hidden + in, -bound, bound);
    p.w = rng.uniform_matrix(hidden, hidden + in, -bound, bound);
    p.b_z = Vector::Zero(hidden);
    p.b_r = Vector::Zero(hidden);
    p.b_h = Vector::Zero(hidden);
    m.blocks.push_back(std::move(p));
  }
  const double hbound = 1.0 / std::sqrt(static_cast<double>(hidden));
  if (cfg.use_attention()) {
    m.attn_p = rng.uniform_matrix(hidden, hidden, -hbound, hbound);
    m.attn_q = rng.uniform_vector(hidden, -hbound, hbound);
  } else {
    m.attn_p = Matrix(0, 0);
    m.attn_q = Vector(0);
  }
  m.head = rng.uniform_vector(hidden, -hbound, hbound);
  m.head_bias = 0.0;
  if (cfg.use_adaptive()) {
    // Softmax of small Gaussian draws: strictly positive and sums to one by
    // construction, unlike raw normalized draws which can go negative. The
    // 0.1 scale keeps the starting point near uniform so the multiplicative
    // updates, not the initial lottery, decide how the blocks are weighted.
    Vector z(n);
    for (int i = 0; i < n; ++i) z[i] = 0.1 * rng.normal();
    Vector e = (z.array() - z.maxCoeff()).exp().matrix();
    m.w = e / e.sum();
  } else {
    m.w = Vector::Constant(n, 1.0 / n);
  }
  return m;
}

FgruState fgru_step(const Vector& x, const Vector& h_prev, const FgruParams& p,
                    bool apply_fft) {
  const Eigen::Index hidden = h_prev.size();
  const Eigen::Index in = x.size();
  if (hidden < 1) throw ValidationError("h_prev: must be nonempty");
  if (in < 1) throw ValidationError("x: must be nonempty");
  auto check_w = [&](const Matrix& w, const char* name) {
    if (w.rows() != hidden || w.cols() != hidden + in) {
      throw ValidationError(std::string(name) + ": expected " + std::to_string(hidden) + "x" +
                            std::to_string(hidden + in) + ", got " + std::to_string(w.rows()) +
                            "x" + std::to_string(w.cols()));
    }
  };
  auto check_b = [&](const Vector& b, const char* name) {
    if (b.size() != hidden) {
      throw ValidationError(std::string(name) + ": expected length " + std::to_string(hidden) +
                            ", got " + std::to_string(b.size()));
    }
  };
  check_w(p.w_z, "w_z");
  check_w(p.w_r, "w_r");
  check_w(p.w, "w");
  check_b(p.b_z, "b_z");
  check_b(p.b_r, "b_r");
  check_b(p.b_h, "b_h");

  FgruState st;
  st.x_fft = apply_fft ? fft::real_fft(x) : x;
  Vector u(hidden + in);
  u << h_prev, st.x_fft;
  st.z = sigmoid_vec(p.w_z * u + p.b_z);
  st.r = sigmoid_vec(p.w_r * u + p.b_r);
  Vector v(hidden + in);
  v << st.r.cwiseProduct(h_prev), st.x_fft;
  st.h_tilde = (p.w * v + p.b_h).array().tanh().matrix();
  st.h = (Vector::Ones(hidden) - st.z).cwiseProduct(h_prev) + st.z.cwiseProduct(st.h_tilde);
  return st;
}

AttnResult attention_pool(const Matrix& h_seq, const Matrix& p, const Vector& q) {
  if (h_seq.rows() < 1) throw ValidationError("h_seq: need at least one timestep");
  const Eigen::Index hidden = h_seq.cols();
  if (p.rows() != hidden || p.cols() != hidden) {
    throw ValidationError("p: expected " + std::to_string(hidden) + "x" +
                          std::to_string(hidden) + ", got " + std::to_string(p.rows()) + "x" +
                          std::to_string(p.cols()));
  }
  if (q.size() != hidden) {
    throw ValidationError("q: expected length " + std::to_string(hidden) + ", got " +
                          std::to_string(q.size()));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(hidden));
  AttnResult out;
  out.scores.resize(h_seq.rows());
  for (Eigen::Index t = 0; t < h_seq.rows(); ++t) {
    const Vector th = (p * h_seq.row(t).transpose()).array().tanh().matrix();
    out.scores[t] = q.dot(th) * scale;
  }
  Vector e = (out.scores.array() - out.scores.maxCoeff()).exp().matrix();
  out.alpha = e / e.sum();
  out.pooled = h_seq.transpose() * out.alpha;
  return out;
}

Matrix fused_feature(const AfgruModel& model, const Matrix& timecourses,
                     const Matrix& similarity) {
  check_sample_dims(model.config, timecourses, similarity, 0);
  return stfa::aggregate(timecourses, similarity, model.config.effective_stfa(), model.stfa);
}

ForwardResult forward_fused(const AfgruModel& model, const Matrix& fused) {
  const ModelConfig& cfg = model.config;
  check_model_shapes(model);
  if (fused.rows() < 1 || fused.cols() < 1) {
    throw ValidationError("fused: must be a nonempty sequence");
  }
  ForwardResult out;
  const int n = cfg.n_blocks();
  out.branch_scores.resize(n);
  Matrix seq = fused;
  for (int b = 0; b < n; ++b) {
    Matrix hs(seq.rows(), cfg.hidden_size);
    Vector h = Vector::Zero(cfg.hidden_size);
    for (Eigen::Index t = 0; t < seq.rows(); ++t) {
      h = fgru_step(seq.row(t).transpose(), h, model.blocks[static_cast<std::size_t>(b)],
                    cfg.use_fft())
              .h;
      hs.row(t) = h.transpose();
    }
    Vector xi = cfg.use_attention() ? attention_pool(hs, model.attn_p, model.attn_q).pooled
                                    : Vector(hs.row(hs.rows() - 1).transpose());
    out.block_outputs.push_back(std::move(xi));
    seq = std::move(hs);
  }
  Vector fused_repr = model.w[0] * out.block_outputs[0];
  for (int b = 1; b < n; ++b) {
    fused_repr += model.w[b] * out.block_outputs[static_cast<std::size_t>(b)];
  }
  for (int b = 0; b < n; ++b) {
    out.branch_scores[b] =
        sigmoid(model.head.dot(out.block_outputs[static_cast<std::size_t>(b)]) +
                model.head_bias);
  }
  out.score = sigmoid(model.head.dot(fused_repr) + model.head_bias);
  return out;
}

ForwardResult forward(const AfgruModel& model, const Matrix& timecourses,
                      const Matrix& similarity) {
  return forward_fused(model, fused_feature(model, timecourses, similarity));
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw ValidationError("lr: must be positive and finite, got " + std::to_string(lr));
  }
  if (epochs < 0) throw ValidationError("epochs: must be >= 0, got " + std::to_string(epochs));
  if (weight_rounds < 0) {
    throw ValidationError("weight_rounds: must be >= 0, got " + std::to_string(weight_rounds));
  }
}

std::vector<ParamView> param_views(AfgruModel& model) {
  std::vector<ParamView> views;
  for_each_param(model, [&](const std::string& name, double* data, Eigen::Index rows,
                            Eigen::Index cols) {
    views.push_back(ParamView{name, data, rows * cols});
  });
  return views;
}

LossGrads loss_and_grads(const AfgruModel& model, const TrainSet& set) {
  const ModelConfig& cfg = model.config;
  cfg.validate();
  check_model_shapes(model);
  check_train_set(cfg, set);
  const stfa::FeatureLayout layout = cfg.layout();
  const stfa::StfaConfig eff = cfg.effective_stfa();

  ad::Tape tape;
  TapeModel tm = push_params(tape, model);

  std::vector<ad::Ref> fused_raw;
  fused_raw.reserve(set.raw.size());
  for (const RawSample& s : set.raw) {
    fused_raw.push_back(fused_on_tape(tape, tm, eff, layout, s.timecourses, s.similarity));
  }

  const int n_blocks = cfg.n_blocks();
  Vector branch_sum = Vector::Zero(n_blocks);
  std::vector<ad::Ref> losses;
  losses.reserve(set.loss_count());
  int sample_idx = 0;
  auto add_sample = [&](ad::Ref fused, double label) {
    TapeForward f = score_on_tape(tape, tm, model, fused);
    ad::Ref loss = tape.squared_error(f.score, label);
    if (!std::isfinite(tape.value(loss)(0, 0))) {
      throw NumericError("non-finite loss for sample " + std::to_string(sample_idx),
                         sample_idx);
    }
    for (int b = 0; b < n_blocks; ++b) {
      const Vector xi = tape.value(f.branch_outputs[static_cast<std::size_t>(b)]).col(0);
      branch_sum[b] += sigmoid(model.head.dot(xi) + model.head_bias) - label;
    }
    losses.push_back(loss);
    ++sample_idx;
  };
  for (std::size_t i = 0; i < set.raw.size(); ++i) {
    if (!set.raw_counts(i)) continue;
    add_sample(fused_raw[i], set.raw[i].label);
  }
  for (const MixedSample& ms : set.mixed) {
    ad::Ref fused =
        tape.add(tape.scale(fused_raw[static_cast<std::size_t>(ms.base)], 1.0 - ms.u),
                 tape.scale(fused_raw[static_cast<std::size_t>(ms.neighbor)], ms.u));
    add_sample(fused, ms.label);
  }

  ad::Ref mse = tape.mean_scalars(losses);
  tape.backward(mse);

  LossGrads out;
  out.mse = tape.value(mse)(0, 0);
  out.grads.reserve(tm.flat.size());
  for (ad::Ref r : tm.flat) {
    const Matrix& g = tape.grad(r);
    out.grads.emplace_back(Eigen::Map<const Vector>(g.data(), g.size()));
  }
  out.branch_errors = branch_sum / static_cast<double>(set.loss_count());
  return out;
}

double evaluate_loss(const AfgruModel& model, const TrainSet& set) {
  const ModelConfig& cfg = model.config;
  cfg.validate();
  check_model_shapes(model);
  check_train_set(cfg, set);
  const stfa::StfaConfig eff = cfg.effective_stfa();

  std::vector<Matrix> fused;
  fused.reserve(set.raw.size());
  for (const RawSample& s : set.raw) {
    fused.push_back(stfa::aggregate(s.timecourses, s.similarity, eff, model.stfa));
  }
  double sum = 0.0;
  int sample_idx = 0;
  auto add_sample = [&](const Matrix& f, double label) {
    const double s = forward_fused(model, f).score;
    const double loss = (s - label) * (s - label);
    if (!std::isfinite(loss)) {
      throw NumericError("non-finite loss for sample " + std::to_string(sample_idx),
                         sample_idx);
    }
    sum += loss;
    ++sample_idx;
  };
  for (std::size_t i = 0; i < set.raw.size(); ++i) {
    if (!set.raw_counts(i)) continue;
    add_sample(fused[i], set.raw[i].label);
  }
  for (const MixedSample& ms : set.mixed) {
    const Matrix& base = fused[static_cast<std::size_t>(ms.base)];
    const Matrix& nbr = fused[static_cast<std::size_t>(ms.neighbor)];
    add_sample(base + ms.u * (nbr - base), ms.label);
  }
  return sum / static_cast<double>(set.loss_count());
}

Vector adaptive_weight_update(const Vector& w, const Vector& branch_errors, double lr) {
  if (w.size() < 1 || w.size() != branch_errors.size()) {
    throw ValidationError("w/branch_errors: sizes must match and be nonempty");
  }
  if (!std::isfinite(lr)) throw ValidationError("lr: must be finite");
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (!(w[i] > 0.0) || !std::isfinite(w[i])) {
      throw ValidationError("w: entries must be strictly positive and finite");
    }
    if (!std::isfinite(branch_errors[i])) {
      throw ValidationError("branch_errors: entries must be finite");
    }
  }
  Vector out = (w.array() * (-lr * branch_errors.array()).exp()).matrix();
  const double total = out.sum();
  if (!std::isfinite(total) || !(total > 0.0)) {
    throw ValidationError("adaptive update over/underflowed the weight scale");
  }
  return out / total;
}

TrainResult train(const TrainSet& set, const ModelConfig& model_cfg, const TrainConfig& cfg) {
  cfg.validate();
  TrainResult out{init_model(model_cfg, cfg.seed), {}, 0};
  if (cfg.epochs == 0) return out;
  out.mse_curve.reserve(static_cast<std::size_t>(cfg.epochs));
  const bool adaptive = model_cfg.use_adaptive();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    LossGrads lg;
    try {
      lg = loss_and_grads(out.model, set);
    } catch (const NumericError& err) {
      throw TrainingError(std::string("training diverged: ") + err.what(), epoch);
    }
    if (!std::isfinite(lg.mse)) throw TrainingError("training loss became non-finite", epoch);
    out.mse_curve.push_back(lg.mse);

    std::vector<ParamView> views = param_views(out.model);
    for (std::size_t i = 0; i < views.size(); ++i) {
      Eigen::Map<Vector>(views[i].data, views[i].size) -= cfg.lr * lg.grads[i];
    }

    // Spread the weight-update budget evenly across epochs via cumulative
    // targets; branch errors come from the pre-step parameters above.
    if (adaptive && cfg.weight_rounds > 0) {
      const long target = std::lround(static_cast<double>(cfg.weight_rounds) *
                                      static_cast<double>(epoch + 1) /
                                      static_cast<double>(cfg.epochs));
      while (out.weight_rounds_done < target) {
        out.model.w = adaptive_weight_update(out.model.w, lg.branch_errors, cfg.lr);
        ++out.weight_rounds_done;
      }
    }
  }
  return out;
}

void save_model(const AfgruModel& model, const std::filesystem::path& dir) {
  model.config.validate();
  check_model_shapes(model);
  std::filesystem::create_directories(dir);

  std::string blob;
  auto append = [&blob](const double* data, Eigen::Index rows, Eigen::Index cols) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        const double v = data[j * rows + i];  // column-major storage, row-major blob
        blob.append(reinterpret_cast<const char*>(&v), sizeof v);
      }
    }
  };
  Eigen::Index n_doubles = 0;
  AfgruModel scratch = model;  // the canonical enumerator needs mutable access
  for_each_param(scratch,
                 [&](const std::string&, double* data, Eigen::Index rows, Eigen::Index cols) {
                   append(data, rows, cols);
                   n_doubles += rows * cols;
                 });
  append(model.w.data(), model.w.size(), 1);
  n_doubles += model.w.size();

  io::write_json_atomic(dir / "header.json",
                        nlohmann::json{{"kind", "afgru_model"},
                                       {"version", 1},
                                       {"config", config_to_json(model.config)},
                                       {"blob_doubles", n_doubles}});
  const std::filesystem::path tmp = dir / "params.bin.tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + tmp.string());
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!f) throw std::runtime_error("short write: " + tmp.string());
  }
  std::filesystem::rename(tmp, dir / "params.bin");
}

AfgruModel load_model(const std::filesystem::path& dir) {
  const nlohmann::json header = io::read_json(dir / "header.json");
  ModelConfig cfg;
  std::int64_t blob_doubles = 0;
  try {
    if (header.at("kind").get<std::string>() != "afgru_model") {
      throw ValidationError("model header: kind is not afgru_model");
    }
    const int version = header.at("version").get<int>();
    if (version != 1) {
      throw ValidationError("model header: unsupported version " + std::to_string(version));
    }
    cfg = config_from_json(header.at("config"));
    blob_doubles = header.at("blob_doubles").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model header json: ") + e.what());
  }

  AfgruModel model = init_model(cfg, 0);  // allocates the right shapes; blob overwrites all
  Eigen::Index expected = model.w.size();
  for_each_param(model, [&](const std::string&, double*, Eigen::Index rows, Eigen::Index cols) {
    expected += rows * cols;
  });
  if (blob_doubles != expected) {
    throw ValidationError("model header: blob_doubles " + std::to_string(blob_doubles) +
                          " does not match config-implied count " + std::to_string(expected));
  }

  const std::filesystem::path bin = dir / "params.bin";
  std::ifstream f(bin, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + bin.string());
  std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (blob.size() != static_cast<std::size_t>(expected) * sizeof(double)) {
    throw ValidationError("params.bin: expected " + std::to_string(expected) +
                          " doubles, got " + std::to_string(blob.size() / sizeof(double)));
  }
  std::size_t cursor = 0;
  auto take = [&blob, &cursor](double* data, Eigen::Index rows, Eigen::Index cols) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        double v;
        std::memcpy(&v, blob.data() + cursor, sizeof v);
        cursor += sizeof v;
        data[j * rows + i] = v;
      }
    }
  };
  for_each_param(model, [&](const std::string&, double* data, Eigen::Index rows,
                            Eigen::Index cols) { take(data, rows, cols); });
  take(model.w.data(), model.w.size(), 1);

  for (Eigen::Index i = 0; i < model.w.size(); ++i) {
    if (!(model.w[i] > 0.0) || !std::isfinite(model.w[i])) {
      throw ValidationError("params.bin: fusion weights must be strictly positive");
    }
  }
  if (std::abs(model.w.sum() - 1.0) > 1e-6) {
    throw ValidationError("params.bin: fusion weights do not sum to 1");
  }
  return model;
}

}  // namespace stanet::afgru
