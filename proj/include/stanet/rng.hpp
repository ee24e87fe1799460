#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string_view>

namespace stanet {

/// Derives a per-stage seed from the experiment root seed and a stage name,
/// so every pipeline stage draws from an independent, reproducible stream.
/// The derivation is FNV-1a over the stage name mixed into the root seed
/// with a splitmix64 finalizer.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage);
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage, std::uint64_t index);

/// Deterministic random source. All transforms (uniform, Box-Muller normal,
/// bounded ints) are implemented here rather than with std:: distributions,
/// whose output is not specified across standard libraries. Byte-identical
/// sequences for a given seed are a hard requirement of the report format.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal();

  /// Uniform integer in [0, n). n must be positive.
  int uniform_int(int n);

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);
  Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi);
  Eigen::VectorXd uniform_vector(Eigen::Index n, double lo, double hi);

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace stanet
