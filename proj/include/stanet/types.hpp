#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace stanet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Bad input that violates a documented precondition (names the offending field).
struct ValidationError : std::invalid_argument {
  explicit ValidationError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Requested more components than the data supports.
struct RankError : std::runtime_error {
  RankError(const std::string& msg, int rank_found, int rank_requested)
      : std::runtime_error(msg), rank(rank_found), requested(rank_requested) {}
  int rank;
  int requested;
};

/// Fixed-point iteration failed to converge; carries the best delta seen.
struct ConvergenceError : std::runtime_error {
  ConvergenceError(const std::string& msg, double delta)
      : std::runtime_error(msg), last_delta(delta) {}
  double last_delta;
};

/// A signal column is unusable (e.g. constant); carries the column index.
struct DegenerateSignalError : std::runtime_error {
  DegenerateSignalError(const std::string& msg, int col)
      : std::runtime_error(msg), column(col) {}
  int column;
};

/// Loss became non-finite during training; carries the epoch index.
struct TrainingError : std::runtime_error {
  TrainingError(const std::string& msg, int at_epoch)
      : std::runtime_error(msg), epoch(at_epoch) {}
  int epoch;
};

/// A single sample produced a non-finite value; carries the sample index.
struct NumericError : std::runtime_error {
  NumericError(const std::string& msg, int sample_index)
      : std::runtime_error(msg), sample(sample_index) {}
  int sample;
};

}  // namespace stanet
