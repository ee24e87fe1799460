#pragma once

#include "stanet/types.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace stanet::ica {

struct WhitenResult {
  Matrix whitened;    // k x V: zero-mean rows, pairwise uncorrelated, unit variance
  Matrix transform;   // k x M: maps centered input rows to whitened rows
  Vector row_means;   // M: per-row means removed before projecting
};

/// Project the rows of `data` (M x V) onto their top-k principal directions,
/// scaled to unit variance. Uses the V x V Gram matrix, so M may be large
/// (temporally concatenated cohorts) without forming an M x M covariance.
/// Throws RankError when the data carry fewer than k directions of variance.
WhitenResult center_whiten(const Matrix& data, int k);

struct FastIcaConfig {
  double tol = 1e-6;
  int max_iter = 500;
  int restarts = 5;
  std::uint64_t seed = 0;
};

struct FastIcaResult {
  Matrix rotation;    // k x k orthogonal; components = rotation * whitened
  int iterations = 0;       // iterations used by the successful restart
  double delta = 0.0;       // final fixed-point change of that restart
  int restart_index = 0;    // which restart converged
};

/// Fixed-point independent component estimation with the tanh contrast and
/// symmetric decorrelation, on data that is already whitened. Returns the
/// first converged restart; throws ConvergenceError carrying the best delta
/// seen when every restart exhausts max_iter.
FastIcaResult fast_ica(const Matrix& whitened, const FastIcaConfig& cfg);

struct GroupDecomposition {
  int n_components = 0;
  Matrix spatial_maps;               // N x V, unit-variance rows, sign-fixed,
                                     // ordered by explained variance descending
  Matrix unmixing;                   // N x N rotation applied to whitened rows
  Matrix whitening;                  // N x M over the concatenated rows
  Vector row_means;                  // M
  std::vector<Matrix> timecourses;   // per subject, T x N
  int iterations = 0;
  double delta = 0.0;
  int restart_index = 0;
  std::uint64_t seed = 0;
};

/// Temporally concatenate the scans (all T x V), whiten to n_components,
/// run fast_ica, then recover each subject's time courses by least-squares
/// regression of its scan onto the group maps.
GroupDecomposition group_decompose(const std::vector<Matrix>& scans, int n_components,
                                   const FastIcaConfig& cfg);

/// Second regression stage: subject-specific spatial maps from the subject's
/// scan and its recovered time courses (N x V result).
Matrix subject_spatial_maps(const Matrix& scan, const Matrix& timecourse);

/// Directory format: header.json plus row-major float64 matrices.
void save_decomposition(const std::filesystem::path& dir, const GroupDecomposition& d);
GroupDecomposition load_decomposition(const std::filesystem::path& dir);

}  // namespace stanet::ica
