#pragma once

#include "stanet/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stanet::rsn {

/// A bank of reference network maps used as regression targets.
struct RsnTemplate {
  Matrix maps;  // R x V, rows linearly independent
  std::vector<std::string> names;  // R labels
};

/// Ordinary-least-squares coefficients of each component row regressed on
/// the template rows: row i of the result solves min_c ||Y_i - c * M||.
/// Residuals are orthogonal to the template rows. Throws RankError when the
/// template rows are collinear.
Matrix spatial_regression(const Matrix& components, const RsnTemplate& tmpl);

/// Deterministic bank of smooth, near-orthogonal bump maps; with
/// identity=true (requires r == v) returns exactly orthonormal unit rows.
RsnTemplate synth_template(int r, int v, std::uint64_t seed, bool identity = false);

/// Pearson correlation matrix of the columns (regions) of a T x P signal.
/// Throws DegenerateSignalError naming the first constant column.
Matrix fc_matrix(const Matrix& region_timecourses);

void save_template(const std::filesystem::path& dir, const RsnTemplate& tmpl);
RsnTemplate load_template(const std::filesystem::path& dir);

}  // namespace stanet::rsn
