#pragma once

#include "stanet/types.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace stanet {
class Rng;
}

namespace stanet::stfa {

/// Zero-padded same-size cross-correlation of a single-channel image with an
/// odd square kernel, plus a scalar bias. Linear in input and kernel.
Matrix conv2d_same(const Matrix& input, const Matrix& kernel, double bias);

Matrix relu(const Matrix& m);

/// Non-overlapping window maximum with ragged (truncated) edge windows:
/// output is ceil(H/wr) x ceil(W/wc).
Matrix maxpool(const Matrix& input, int window_rows = 6, int window_cols = 6);

/// maxpool plus the flat (row-major, input-indexed) position of each
/// window's maximum, ties broken by scan order — the training code scatters
/// gradients through these positions.
struct PoolResult {
  Matrix pooled;
  std::vector<Eigen::Index> argmax;  // row-major over pooled cells; value = row*W + col of input
};
PoolResult maxpool_argmax(const Matrix& input, int window_rows = 6, int window_cols = 6);

enum class Branches { both, temporal_only, spatial_only };

struct StfaConfig {
  std::vector<int> kernel_sizes = {3, 5, 7, 9, 11};
  int filters_per_scale = 4;
  int pool_rows = 6;
  int pool_cols = 6;
  Branches branches = Branches::both;
  std::optional<int> single_scale_override;  // run exactly one kernel size

  void validate() const;
  std::vector<int> effective_scales() const;
};

/// One slice of the fused feature's column layout: which branch, kernel
/// size, and filter produced columns [offset, offset + width).
struct FeatureSlice {
  int branch = 0;  // 0 = temporal, 1 = spatial
  int kernel_size = 0;
  int filter = 0;
  int offset = 0;
  int width = 0;
};

struct FeatureLayout {
  int t_prime = 0;  // pooled time axis length
  int width = 0;    // total feature dimension D
  std::vector<FeatureSlice> slices;
};

/// Layout for scans of t timepoints, n components, and r template networks.
FeatureLayout feature_layout(const StfaConfig& cfg, int t, int n, int r);

/// One kernel and bias per layout slice, in slice order.
struct StfaParams {
  std::vector<Matrix> kernels;
  std::vector<double> biases;
};

/// Kernels uniform in +-1/sqrt(k*k), biases zero.
StfaParams init_params(const StfaConfig& cfg, Rng& rng);

/// The full front end: per branch and kernel scale, convolve, rectify, pool,
/// flatten non-time dims, and concatenate along the feature axis. Temporal
/// slices keep their pooled time rows; spatial slices (from the similarity
/// image) are flattened and repeated across the pooled time axis.
Matrix aggregate(const Matrix& timecourses, const Matrix& similarity, const StfaConfig& cfg,
                 const StfaParams& params);

}  // namespace stanet::stfa
