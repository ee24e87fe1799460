#include "stanet/ica.hpp"

#include "stanet/io.hpp"
#include "stanet/rng.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace stanet::ica {
namespace {

constexpr double kRankRelTol = 1e-10;

// Inverse square root of a symmetric positive-definite matrix.
Matrix sym_inv_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  const Vector& vals = eig.eigenvalues();
  if (vals[0] <= 0.0) {
    throw RankError("unmixing candidate lost rank during decorrelation",
                    static_cast<int>((vals.array() > 0.0).count()), static_cast<int>(m.rows()));
  }
  return eig.eigenvectors() * vals.cwiseSqrt().cwiseInverse().asDiagonal() *
         eig.eigenvectors().transpose();
}

// One restart of the fixed-point iteration. Returns true on convergence.
bool run_restart(const Matrix& z, const FastIcaConfig& cfg, Rng& rng, Matrix& w_out,
                 int& iters_out, double& delta_out) {
  const auto k = z.rows();
  const auto v = z.cols();
  Matrix w = rng.normal_matrix(k, k);
  w = sym_inv_sqrt(w * w.transpose()) * w;

  double delta = std::numeric_limits<double>::infinity();
  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    const Matrix y = w * z;                    // k x V current component estimates
    const Matrix g = y.array().tanh().matrix();
    const Vector gprime_mean = (1.0 - g.array().square()).rowwise().mean();
    Matrix w_new = (g * z.transpose()) / static_cast<double>(v) - gprime_mean.asDiagonal() * w;
    w_new = sym_inv_sqrt(w_new * w_new.transpose()) * w_new;

    delta = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
      delta = std::max(delta, std::abs(1.0 - std::abs(w_new.row(i).dot(w.row(i)))));
    }
    w = std::move(w_new);
    if (delta < cfg.tol) {
      w_out = std::move(w);
      iters_out = iter;
      delta_out = delta;
      return true;
    }
  }
  delta_out = delta;
  return false;
}

struct LeastSquares {
  // Solves min_A ||X - A * B||_F given B with independent rows, via QR on B^T.
  explicit LeastSquares(const Matrix& b) : qr(b.transpose()) {
    if (qr.rank() < b.rows()) {
      throw RankError("regressor rows are collinear", static_cast<int>(qr.rank()),
                      static_cast<int>(b.rows()));
    }
  }
  Matrix solve(const Matrix& x) const { return qr.solve(x.transpose()).transpose(); }
  Eigen::ColPivHouseholderQR<Matrix> qr;
};

}  // namespace

WhitenResult center_whiten(const Matrix& data, int k) {
  const auto m = data.rows();
  const auto v = data.cols();
  if (m < 2) throw ValidationError("data: need at least 2 rows to whiten, got " + std::to_string(m));
  if (v < 2) throw ValidationError("data: need at least 2 columns, got " + std::to_string(v));
  if (!data.allFinite()) throw ValidationError("data: non-finite entries");
  if (k < 1) throw ValidationError("k: must be >= 1, got " + std::to_string(k));
  if (k > std::min(m, v)) {
    throw ValidationError("k: must be <= min(rows, cols) = " +
                          std::to_string(std::min(m, v)) + ", got " + std::to_string(k));
  }

  WhitenResult res;
  res.row_means = data.rowwise().mean();
  const Matrix centered = data.colwise() - res.row_means;

  // Eigendecompose whichever Gram matrix is smaller. The row covariance
  // (M x M) and the column Gram (V x V) share their nonzero spectrum, so a
  // tall concatenated cohort (M in the thousands, V a few hundred) never
  // forms an M x M matrix, and a short-wide matrix never forms V x V.
  const bool use_column_gram = v <= m;
  const Matrix gram = use_column_gram
                          ? Matrix(centered.transpose() * centered / static_cast<double>(v - 1))
                          : Matrix(centered * centered.transpose() / static_cast<double>(v - 1));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const Vector& vals = eig.eigenvalues();  // ascending
  const double vmax = vals[vals.size() - 1];
  int rank = 0;
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    if (vals[i] > vmax * kRankRelTol && vals[i] > 0.0) ++rank;
  }
  if (rank < k) {
    throw RankError("data rank " + std::to_string(rank) + " is below the requested " +
                        std::to_string(k) + " components",
                    rank, k);
  }

  res.transform.resize(k, m);
  for (int i = 0; i < k; ++i) {
    const auto src = vals.size() - 1 - i;  // descending order
    const double lambda = vals[src];
    if (use_column_gram) {
      // Lift the column-Gram eigenvector into row space, normalized so the
      // projected row has unit variance.
      const Vector u = centered * eig.eigenvectors().col(src) / std::sqrt((v - 1) * lambda);
      res.transform.row(i) = u.transpose() / std::sqrt(lambda);
    } else {
      res.transform.row(i) = eig.eigenvectors().col(src).transpose() / std::sqrt(lambda);
    }
  }
  res.whitened = res.transform * centered;
  return res;
}

FastIcaResult fast_ica(const Matrix& whitened, const FastIcaConfig& cfg) {
  if (whitened.rows() < 1 || whitened.cols() < 2) {
    throw ValidationError("whitened: need at least 1 row and 2 columns");
  }
  if (cfg.max_iter < 1) throw ValidationError("max_iter: must be >= 1");
  if (cfg.restarts < 1) throw ValidationError("restarts: must be >= 1");
  if (!(cfg.tol > 0.0)) throw ValidationError("tol: must be > 0");

  Rng rng(derive_seed(cfg.seed, "fastica"));
  double best_delta = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < cfg.restarts; ++attempt) {
    FastIcaResult res;
    if (run_restart(whitened, cfg, rng, res.rotation, res.iterations, res.delta)) {
      res.restart_index = attempt;
      return res;
    }
    best_delta = std::min(best_delta, res.delta);
  }
  throw ConvergenceError("fixed-point iteration did not converge after " +
                             std::to_string(cfg.restarts) + " restarts (best delta " +
                             std::to_string(best_delta) + ")",
                         best_delta);
}

GroupDecomposition group_decompose(const std::vector<Matrix>& scans, int n_components,
                                   const FastIcaConfig& cfg) {
  if (scans.empty()) throw ValidationError("scans: empty cohort");
  const auto t_len = scans.front().rows();
  const auto v = scans.front().cols();
  for (std::size_t i = 1; i < scans.size(); ++i) {
    if (scans[i].rows() != t_len || scans[i].cols() != v) {
      throw ValidationError("scans: subject " + std::to_string(i) +
                            " dimensions disagree with subject 0");
    }
  }

  Matrix concatenated(static_cast<Eigen::Index>(scans.size()) * t_len, v);
  for (std::size_t i = 0; i < scans.size(); ++i) {
    concatenated.middleRows(static_cast<Eigen::Index>(i) * t_len, t_len) = scans[i];
  }

  WhitenResult white = center_whiten(concatenated, n_components);
  const FastIcaResult ica = fast_ica(white.whitened, cfg);

  GroupDecomposition d;
  d.n_components = n_components;
  d.unmixing = ica.rotation;
  d.whitening = std::move(white.transform);
  d.row_means = std::move(white.row_means);
  d.iterations = ica.iterations;
  d.delta = ica.delta;
  d.restart_index = ica.restart_index;
  d.seed = cfg.seed;
  d.spatial_maps = ica.rotation * white.whitened;

  // Unit-variance rows (they already are, up to rounding), then fix signs so
  // each row's maximum-magnitude entry is positive.
  for (Eigen::Index i = 0; i < d.spatial_maps.rows(); ++i) {
    const double sd = std::sqrt(d.spatial_maps.row(i).squaredNorm() / static_cast<double>(v - 1));
    if (sd > 0.0) {
      d.spatial_maps.row(i) /= sd;
      d.unmixing.row(i) /= sd;
    }
    Eigen::Index arg = 0;
    d.spatial_maps.row(i).cwiseAbs().maxCoeff(&arg);
    if (d.spatial_maps(i, arg) < 0.0) {
      d.spatial_maps.row(i) = -d.spatial_maps.row(i);
      d.unmixing.row(i) = -d.unmixing.row(i);
    }
  }

  // Order rows by explained variance in the concatenated data, descending.
  // With unit-variance near-orthogonal rows, the energy of the least-squares
  // mixing column measures each component's share.
  {
    LeastSquares ls(d.spatial_maps);
    const Matrix mixing = ls.solve(concatenated);
    const Vector energy = mixing.colwise().squaredNorm().transpose();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_components));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return energy[a] > energy[b]; });
    Matrix maps(n_components, v);
    Matrix rot(n_components, d.unmixing.cols());
    for (int i = 0; i < n_components; ++i) {
      maps.row(i) = d.spatial_maps.row(order[static_cast<std::size_t>(i)]);
      rot.row(i) = d.unmixing.row(order[static_cast<std::size_t>(i)]);
    }
    d.spatial_maps = std::move(maps);
    d.unmixing = std::move(rot);
  }

  LeastSquares ls(d.spatial_maps);
  d.timecourses.reserve(scans.size());
  for (const Matrix& scan : scans) d.timecourses.push_back(ls.solve(scan));
  return d;
}

Matrix subject_spatial_maps(const Matrix& scan, const Matrix& timecourse) {
  if (scan.rows() != timecourse.rows()) {
    throw ValidationError("timecourse: row count " + std::to_string(timecourse.rows()) +
                          " does not match scan rows " + std::to_string(scan.rows()));
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(timecourse);
  if (qr.rank() < timecourse.cols()) {
    throw RankError("subject time courses are collinear", static_cast<int>(qr.rank()),
                    static_cast<int>(timecourse.cols()));
  }
  return qr.solve(scan);
}

void save_decomposition(const std::filesystem::path& dir, const GroupDecomposition& d) {
  std::filesystem::create_directories(dir);
  io::write_matrix(dir / "spatial_maps.bin", d.spatial_maps);
  io::write_matrix(dir / "unmixing.bin", d.unmixing);
  io::write_matrix(dir / "whitening.bin", d.whitening);
  io::write_matrix(dir / "row_means.bin", Matrix(d.row_means.transpose()));
  nlohmann::json subjects = nlohmann::json::array();
  for (std::size_t i = 0; i < d.timecourses.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "tc%03zu.bin", i);
    subjects.push_back({{"file", name},
                        {"rows", d.timecourses[i].rows()},
                        {"cols", d.timecourses[i].cols()}});
    io::write_matrix(dir / name, d.timecourses[i]);
  }
  nlohmann::json header{
      {"kind", "decomposition"},
      {"n_components", d.n_components},
      {"voxels", d.spatial_maps.cols()},
      {"concat_rows", d.row_means.size()},
      {"iterations", d.iterations},
      {"delta", d.delta},
      {"restart_index", d.restart_index},
      {"seed", d.seed},
      {"timecourses", std::move(subjects)},
  };
  io::write_json_atomic(dir / "header.json", header);
}

GroupDecomposition load_decomposition(const std::filesystem::path& dir) {
  const nlohmann::json header = io::read_json(dir / "header.json");
  if (header.value("kind", std::string()) != "decomposition") {
    throw ValidationError("decomposition header: missing kind=\"decomposition\" in " +
                          (dir / "header.json").string());
  }
  GroupDecomposition d;
  d.n_components = header.at("n_components").get<int>();
  const auto v = header.at("voxels").get<Eigen::Index>();
  const auto m = header.at("concat_rows").get<Eigen::Index>();
  d.iterations = header.at("iterations").get<int>();
  d.delta = header.at("delta").get<double>();
  d.restart_index = header.at("restart_index").get<int>();
  d.seed = header.at("seed").get<std::uint64_t>();
  d.spatial_maps = io::read_matrix(dir / "spatial_maps.bin", d.n_components, v);
  d.unmixing = io::read_matrix(dir / "unmixing.bin", d.n_components, d.n_components);
  d.whitening = io::read_matrix(dir / "whitening.bin", d.n_components, m);
  d.row_means = io::read_matrix(dir / "row_means.bin", 1, m).transpose();
  for (const auto& entry : header.at("timecourses")) {
    d.timecourses.push_back(io::read_matrix(dir / entry.at("file").get<std::string>(),
                                            entry.at("rows").get<Eigen::Index>(),
                                            entry.at("cols").get<Eigen::Index>()));
  }
  return d;
}

}  // namespace stanet::ica
