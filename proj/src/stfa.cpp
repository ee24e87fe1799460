#include "stanet/stfa.hpp"

#include "stanet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace stanet::stfa {
namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

void check_kernel(const Matrix& kernel) {
  if (kernel.rows() != kernel.cols()) {
    throw ValidationError("kernel: must be square, got " + std::to_string(kernel.rows()) + "x" +
                          std::to_string(kernel.cols()));
  }
  if (kernel.rows() % 2 == 0) {
    throw ValidationError("kernel: size must be odd, got " + std::to_string(kernel.rows()));
  }
}

}  // namespace

Matrix conv2d_same(const Matrix& input, const Matrix& kernel, double bias) {
  check_kernel(kernel);
  const auto h = input.rows();
  const auto w = input.cols();
  if (h < 1 || w < 1) throw ValidationError("input: must be nonempty");
  const auto k = kernel.rows();
  const auto c = k / 2;

  Matrix out = Matrix::Constant(h, w, bias);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b) {
      const double weight = kernel(a, b);
      if (weight == 0.0) continue;
      // Output cell (i, j) reads input (i + a - c, j + b - c); intersect the
      // shifted index ranges and add the overlapping block in one sweep.
      const Eigen::Index row_lo = std::max<Eigen::Index>(0, c - a);
      const Eigen::Index row_hi = std::min(h, h + c - a);
      const Eigen::Index col_lo = std::max<Eigen::Index>(0, c - b);
      const Eigen::Index col_hi = std::min(w, w + c - b);
      if (row_lo >= row_hi || col_lo >= col_hi) continue;
      out.block(row_lo, col_lo, row_hi - row_lo, col_hi - col_lo) +=
          weight * input.block(row_lo + a - c, col_lo + b - c, row_hi - row_lo, col_hi - col_lo);
    }
  }
  return out;
}

Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

PoolResult maxpool_argmax(const Matrix& input, int window_rows, int window_cols) {
  const auto h = input.rows();
  const auto w = input.cols();
  if (h < 1 || w < 1) throw ValidationError("input: must be nonempty");
  if (window_rows < 1 || window_cols < 1) throw ValidationError("window: must be >= 1");

  const int out_h = ceil_div(static_cast<int>(h), window_rows);
  const int out_w = ceil_div(static_cast<int>(w), window_cols);
  PoolResult res;
  res.pooled.resize(out_h, out_w);
  res.argmax.resize(static_cast<std::size_t>(out_h) * out_w);
  for (int i = 0; i < out_h; ++i) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(i) * window_rows;
    const Eigen::Index r1 = std::min<Eigen::Index>(r0 + window_rows, h);
    for (int j = 0; j < out_w; ++j) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(j) * window_cols;
      const Eigen::Index c1 = std::min<Eigen::Index>(c0 + window_cols, w);
      double best = input(r0, c0);
      Eigen::Index best_pos = r0 * w + c0;
      for (Eigen::Index r = r0; r < r1; ++r) {
        for (Eigen::Index c = c0; c < c1; ++c) {
          if (input(r, c) > best) {
            best = input(r, c);
            best_pos = r * w + c;
          }
        }
      }
      res.pooled(i, j) = best;
      res.argmax[static_cast<std::size_t>(i) * out_w + j] = best_pos;
    }
  }
  return res;
}

Matrix maxpool(const Matrix& input, int window_rows, int window_cols) {
  return maxpool_argmax(input, window_rows, window_cols).pooled;
}

void StfaConfig::validate() const {
  if (kernel_sizes.empty()) throw ValidationError("kernel_sizes: must be nonempty");
  for (int k : kernel_sizes) {
    if (k < 3 || k % 2 == 0) {
      throw ValidationError("kernel_sizes: entries must be odd and >= 3, got " +
                            std::to_string(k));
    }
  }
  if (filters_per_scale < 1) {
    throw ValidationError("filters_per_scale: must be >= 1, got " +
                          std::to_string(filters_per_scale));
  }
  if (pool_rows < 1 || pool_cols < 1) throw ValidationError("pool: window must be >= 1");
  if (single_scale_override) {
    const int k = *single_scale_override;
    if (k < 3 || k % 2 == 0) {
      throw ValidationError("single_scale_override: must be odd and >= 3, got " +
                            std::to_string(k));
    }
  }
}

std::vector<int> StfaConfig::effective_scales() const {
  if (single_scale_override) return {*single_scale_override};
  return kernel_sizes;
}

FeatureLayout feature_layout(const StfaConfig& cfg, int t, int n, int r) {
  cfg.validate();
  if (t < 1 || n < 1) throw ValidationError("layout: t and n must be >= 1");
  const bool temporal = cfg.branches != Branches::spatial_only;
  const bool spatial = cfg.branches != Branches::temporal_only;
  if (spatial && r < 1) throw ValidationError("layout: r must be >= 1 for the spatial branch");

  FeatureLayout layout;
  layout.t_prime = ceil_div(t, cfg.pool_rows);
  const int temporal_width = ceil_div(n, cfg.pool_cols);
  const int spatial_width = spatial ? ceil_div(n, cfg.pool_rows) * ceil_div(r, cfg.pool_cols) : 0;

  int offset = 0;
  for (int branch = 0; branch < 2; ++branch) {
    if (branch == 0 && !temporal) continue;
    if (branch == 1 && !spatial) continue;
    for (int k : cfg.effective_scales()) {
      for (int f = 0; f < cfg.filters_per_scale; ++f) {
        FeatureSlice slice;
        slice.branch = branch;
        slice.kernel_size = k;
        slice.filter = f;
        slice.offset = offset;
        slice.width = branch == 0 ? temporal_width : spatial_width;
        offset += slice.width;
        layout.slices.push_back(slice);
      }
    }
  }
  layout.width = offset;
  return layout;
}

StfaParams init_params(const StfaConfig& cfg, Rng& rng) {
  cfg.validate();
  StfaParams params;
  const bool temporal = cfg.branches != Branches::spatial_only;
  const bool spatial = cfg.branches != Branches::temporal_only;
  for (int branch = 0; branch < 2; ++branch) {
    if (branch == 0 && !temporal) continue;
    if (branch == 1 && !spatial) continue;
    for (int k : cfg.effective_scales()) {
      for (int f = 0; f < cfg.filters_per_scale; ++f) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(k) * k);
        params.kernels.push_back(rng.uniform_matrix(k, k, -bound, bound));
        params.biases.push_back(0.0);
      }
    }
  }
  return params;
}

Matrix aggregate(const Matrix& timecourses, const Matrix& similarity, const StfaConfig& cfg,
                 const StfaParams& params) {
  const FeatureLayout layout =
      feature_layout(cfg, static_cast<int>(timecourses.rows()),
                     static_cast<int>(timecourses.cols()), static_cast<int>(similarity.cols()));
  if (params.kernels.size() != layout.slices.size() ||
      params.biases.size() != layout.slices.size()) {
    throw ValidationError("params: expected " + std::to_string(layout.slices.size()) +
                          " kernels/biases, got " + std::to_string(params.kernels.size()));
  }
  if (cfg.branches != Branches::temporal_only && similarity.rows() != timecourses.cols()) {
    throw ValidationError("similarity: row count must equal component count");
  }

  Matrix fused(layout.t_prime, layout.width);
  for (std::size_t s = 0; s < layout.slices.size(); ++s) {
    const FeatureSlice& slice = layout.slices[s];
    if (static_cast<int>(params.kernels[s].rows()) != slice.kernel_size) {
      throw ValidationError("params: kernel " + std::to_string(s) + " has size " +
                            std::to_string(params.kernels[s].rows()) + ", layout expects " +
                            std::to_string(slice.kernel_size));
    }
    const Matrix& image = slice.branch == 0 ? timecourses : similarity;
    const Matrix pooled =
        maxpool(relu(conv2d_same(image, params.kernels[s], params.biases[s])), cfg.pool_rows,
                cfg.pool_cols);
    if (slice.branch == 0) {
      fused.middleCols(slice.offset, slice.width) = pooled;
    } else {
      // Flatten row-major and repeat across the pooled time axis.
      Eigen::RowVectorXd flat(slice.width);
      int pos = 0;
      for (Eigen::Index i = 0; i < pooled.rows(); ++i) {
        for (Eigen::Index j = 0; j < pooled.cols(); ++j) flat[pos++] = pooled(i, j);
      }
      fused.middleCols(slice.offset, slice.width) = flat.replicate(layout.t_prime, 1);
    }
  }
  return fused;
}

}  // namespace stanet::stfa
