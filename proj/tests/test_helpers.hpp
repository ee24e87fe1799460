#pragma once

// Shared oracles for the decomposition and pipeline tests. Everything here
// is intentionally naive: brute-force search and direct-formula evaluation,
// independent of the library's own algorithms.

#include "stanet/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace testutil {

inline double row_corr(const stanet::Vector& a, const stanet::Vector& b) {
  const double ma = a.mean();
  const double mb = b.mean();
  const stanet::Vector ca = a.array() - ma;
  const stanet::Vector cb = b.array() - mb;
  const double denom = ca.norm() * cb.norm();
  return denom == 0.0 ? 0.0 : ca.dot(cb) / denom;
}

inline stanet::Matrix abs_corr_matrix(const stanet::Matrix& a, const stanet::Matrix& b) {
  stanet::Matrix c(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      c(i, j) = std::abs(row_corr(a.row(i).transpose(), b.row(j).transpose()));
    }
  }
  return c;
}

struct RowMatch {
  double mean_abs_corr = 0.0;
  std::vector<int> assignment;  // assignment[i] = truth row matched to row i
};

/// Exhaustive assignment search over all permutations (rows <= 8 keeps this
/// small) maximizing the mean matched |correlation|.
inline RowMatch best_row_match(const stanet::Matrix& got, const stanet::Matrix& truth) {
  const int n = static_cast<int>(got.rows());
  const stanet::Matrix c = abs_corr_matrix(got, truth);
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  RowMatch best;
  best.mean_abs_corr = -1.0;
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += c(i, perm[static_cast<std::size_t>(i)]);
    if (total / n > best.mean_abs_corr) {
      best.mean_abs_corr = total / n;
      best.assignment = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Rows with pairwise-disjoint supports and symmetric two-point values:
/// exactly zero-mean, exactly orthogonal, unit variance. Cross moments
/// E[z_j g(z_i)] vanish identically for i != j, making a signed permutation
/// an exact empirical fixed point of tanh-contrast estimation — the basis
/// for tight recovery assertions. Support sizes differ per row so the rows
/// are not identically distributed; with equal supports, constant-magnitude
/// rotations (Hadamard-like) would be exact fixed points too.
inline stanet::Matrix disjoint_sources(int k, int v) {
  // Support fractions stay small (<= 18% of columns) and distinct: a large
  // support makes the permutation point locally repelling under the tanh
  // contrast, and equal supports admit extra constant-magnitude fixed
  // points. Leftover columns are identically zero in every row, which is
  // harmless (they carry no variance and no cross moments).
  stanet::Matrix s = stanet::Matrix::Zero(k, v);
  int start = 0;
  for (int i = 0; i < k; ++i) {
    const double fraction = 0.06 + 0.04 * i;
    int block = static_cast<int>(fraction * v);
    block -= block % 2;
    if (block < 2) block = 2;
    const double amp = std::sqrt(static_cast<double>(v - 1) / block);
    for (int j = 0; j < block; ++j) {
      s(i, start + j) = (j % 2 == 0 ? amp : -amp);
    }
    start += block;
  }
  return s;
}

}  // namespace testutil
