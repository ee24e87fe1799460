#include <doctest.h>

#include "stanet/rng.hpp"
#include "stanet/stfa.hpp"
#include "stanet/types.hpp"

#include <cmath>
#include <vector>

using namespace stanet;
using namespace stanet::stfa;

namespace {

// Quadruple-loop zero-padded cross-correlation oracle.
Matrix naive_conv(const Matrix& in, const Matrix& k, double bias) {
  const auto h = in.rows(), w = in.cols(), n = k.rows(), c = n / 2;
  Matrix out(h, w);
  for (Eigen::Index i = 0; i < h; ++i) {
    for (Eigen::Index j = 0; j < w; ++j) {
      double acc = bias;
      for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = 0; b < n; ++b) {
          const Eigen::Index r = i + a - c;
          const Eigen::Index s = j + b - c;
          if (r >= 0 && r < h && s >= 0 && s < w) acc += in(r, s) * k(a, b);
        }
      }
      out(i, j) = acc;
    }
  }
  return out;
}

// Exhaustive window-max oracle.
Matrix naive_pool(const Matrix& in, int wr, int wc) {
  const int oh = static_cast<int>((in.rows() + wr - 1) / wr);
  const int ow = static_cast<int>((in.cols() + wc - 1) / wc);
  Matrix out(oh, ow);
  for (int i = 0; i < oh; ++i) {
    for (int j = 0; j < ow; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      for (Eigen::Index r = i * wr; r < std::min<Eigen::Index>((i + 1) * wr, in.rows()); ++r) {
        for (Eigen::Index c = j * wc; c < std::min<Eigen::Index>((j + 1) * wc, in.cols()); ++c) {
          best = std::max(best, in(r, c));
        }
      }
      out(i, j) = best;
    }
  }
  return out;
}

StfaConfig small_cfg() {
  StfaConfig cfg;
  cfg.kernel_sizes = {3, 5};
  cfg.filters_per_scale = 2;
  return cfg;
}

}  // namespace

TEST_CASE("constant field interior under an all-ones kernel") {
  const Matrix in = Matrix::Ones(8, 8);
  const Matrix k = Matrix::Ones(3, 3);
  const Matrix out = conv2d_same(in, k, 0.0);
  REQUIRE(out.rows() == 8);
  REQUIRE(out.cols() == 8);
  for (Eigen::Index i = 1; i < 7; ++i) {
    for (Eigen::Index j = 1; j < 7; ++j) CHECK(out(i, j) == 9.0);
  }
  CHECK(out(0, 0) == 4.0);  // corner sees a 2x2 patch
}

TEST_CASE("identity kernel returns input plus bias") {
  Rng rng(71);
  const Matrix in = rng.normal_matrix(6, 9);
  Matrix k = Matrix::Zero(3, 3);
  k(1, 1) = 1.0;
  const Matrix out = conv2d_same(in, k, 0.25);
  CHECK((out - (in.array() + 0.25).matrix()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("convolution matches the quadruple-loop oracle") {
  Rng rng(72);
  const Matrix in = rng.normal_matrix(7, 9);
  const Matrix k = rng.normal_matrix(5, 5);
  const Matrix out = conv2d_same(in, k, 0.5);
  CHECK((out - naive_conv(in, k, 0.5)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("convolution is linear in input and kernel") {
  Rng rng(73);
  const Matrix x = rng.normal_matrix(5, 6);
  const Matrix y = rng.normal_matrix(5, 6);
  const Matrix k1 = rng.normal_matrix(3, 3);
  const Matrix k2 = rng.normal_matrix(3, 3);
  const Matrix lhs = conv2d_same(2.0 * x + y, k1, 0.0);
  const Matrix rhs = 2.0 * conv2d_same(x, k1, 0.0) + conv2d_same(y, k1, 0.0);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
  const Matrix lhs2 = conv2d_same(x, k1 + k2, 0.0);
  const Matrix rhs2 = conv2d_same(x, k1, 0.0) + conv2d_same(x, k2, 0.0);
  CHECK((lhs2 - rhs2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("even or non-square kernels are rejected") {
  const Matrix in = Matrix::Ones(4, 4);
  CHECK_THROWS_AS((void)conv2d_same(in, Matrix::Ones(2, 2), 0.0), ValidationError);
  CHECK_THROWS_AS((void)conv2d_same(in, Matrix::Ones(3, 5), 0.0), ValidationError);
}

TEST_CASE("maxpool basics") {
  CHECK((maxpool(Matrix::Constant(12, 18, 2.5)) - Matrix::Constant(2, 3, 2.5))
            .cwiseAbs()
            .maxCoeff() == 0.0);

  Rng rng(74);
  Matrix in = rng.uniform_matrix(6, 6, 0.0, 1.0);
  in(3, 4) = 9.0;
  const Matrix out = maxpool(in);
  REQUIRE(out.rows() == 1);
  REQUIRE(out.cols() == 1);
  CHECK(out(0, 0) == 9.0);
}

TEST_CASE("maxpool matches the exhaustive oracle on ragged shapes") {
  Rng rng(75);
  const Matrix in = rng.normal_matrix(13, 14);
  const Matrix out = maxpool(in);
  REQUIRE(out.rows() == 3);
  REQUIRE(out.cols() == 3);
  CHECK((out - naive_pool(in, 6, 6)).cwiseAbs().maxCoeff() == 0.0);

  // A dimension shorter than the window forms a single window.
  const Matrix thin = rng.normal_matrix(4, 20);
  CHECK(maxpool(thin).rows() == 1);
}

TEST_CASE("maxpool argmax breaks ties by scan order") {
  const Matrix in = Matrix::Constant(7, 8, 1.0);
  const PoolResult res = maxpool_argmax(in);
  REQUIRE(res.pooled.rows() == 2);
  REQUIRE(res.pooled.cols() == 2);
  CHECK(res.argmax[0] == 0);          // (0,0)
  CHECK(res.argmax[1] == 6);          // (0,6)
  CHECK(res.argmax[2] == 6 * 8);      // (6,0)
  CHECK(res.argmax[3] == 6 * 8 + 6);  // (6,6)
}

TEST_CASE("feature layout arithmetic for the default configuration") {
  StfaConfig cfg;  // 5 scales, 4 filters, both branches
  const FeatureLayout layout = feature_layout(cfg, 95, 17, 10);
  CHECK(layout.t_prime == 16);
  // Hand-computed: temporal slices ceil(17/6)=3 wide, spatial slices
  // ceil(17/6)*ceil(10/6)=6 wide, 5*4 of each.
  CHECK(layout.slices.size() == 40);
  CHECK(layout.width == 5 * 4 * 3 + 5 * 4 * 6);
  int acc = 0;
  for (const auto& s : layout.slices) {
    CHECK(s.offset == acc);
    acc += s.width;
  }
  CHECK(acc == layout.width);
}

TEST_CASE("single-scale override restricts the layout to one kernel size") {
  StfaConfig cfg;
  cfg.single_scale_override = 7;
  const FeatureLayout layout = feature_layout(cfg, 95, 17, 10);
  CHECK(layout.slices.size() == 8);  // 2 branches x 1 scale x 4 filters
  for (const auto& s : layout.slices) CHECK(s.kernel_size == 7);
}

TEST_CASE("branch selection and broadcast behaviour") {
  Rng rng(76);
  StfaConfig cfg = small_cfg();
  cfg.branches = Branches::temporal_only;
  const FeatureLayout lt = feature_layout(cfg, 20, 8, 5);
  CHECK(lt.t_prime == 4);
  CHECK(lt.width == 2 * 2 * 2);  // scales x filters x ceil(8/6)

  cfg.branches = Branches::spatial_only;
  StfaParams p = init_params(cfg, rng);
  const Matrix tc = rng.normal_matrix(20, 8);
  const Matrix q = rng.normal_matrix(8, 5);
  const Matrix fused = aggregate(tc, q, cfg, p);
  REQUIRE(fused.rows() == 4);
  for (Eigen::Index r = 1; r < fused.rows(); ++r) {
    CHECK((fused.row(r) - fused.row(0)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("zero parameters give an all-zero fused feature") {
  Rng rng(77);
  const StfaConfig cfg = small_cfg();
  StfaParams p = init_params(cfg, rng);
  for (auto& k : p.kernels) k.setZero();
  const Matrix fused = aggregate(rng.normal_matrix(13, 7), rng.normal_matrix(7, 4), cfg, p);
  CHECK(fused.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("aggregate output is nonnegative and deterministic") {
  Rng rng(78);
  const StfaConfig cfg = small_cfg();
  const StfaParams p = init_params(cfg, rng);
  const Matrix tc = rng.normal_matrix(14, 9);
  const Matrix q = rng.normal_matrix(9, 4);
  const Matrix a = aggregate(tc, q, cfg, p);
  const Matrix b = aggregate(tc, q, cfg, p);
  CHECK(a == b);
  CHECK(a.minCoeff() >= 0.0);
  const FeatureLayout layout = feature_layout(cfg, 14, 9, 4);
  CHECK(a.rows() == layout.t_prime);
  CHECK(a.cols() == layout.width);
}

TEST_CASE("perturbing one kernel changes only its slice of the layout") {
  Rng rng(79);
  const StfaConfig cfg = small_cfg();
  StfaParams p = init_params(cfg, rng);
  const Matrix tc = rng.normal_matrix(14, 9);
  const Matrix q = rng.normal_matrix(9, 4);
  const Matrix before = aggregate(tc, q, cfg, p);
  const FeatureLayout layout = feature_layout(cfg, 14, 9, 4);

  const std::size_t target = 5;
  p.kernels[target] += Matrix::Constant(p.kernels[target].rows(), p.kernels[target].cols(), 0.3);
  const Matrix after = aggregate(tc, q, cfg, p);

  for (std::size_t s = 0; s < layout.slices.size(); ++s) {
    const auto& slice = layout.slices[s];
    const double diff = (after.middleCols(slice.offset, slice.width) -
                         before.middleCols(slice.offset, slice.width))
                            .cwiseAbs()
                            .maxCoeff();
    if (s == target) {
      CHECK(diff > 0.0);
    } else {
      CHECK(diff == 0.0);
    }
  }
}

TEST_CASE("aggregate validates parameter counts and shapes") {
  Rng rng(80);
  const StfaConfig cfg = small_cfg();
  StfaParams p = init_params(cfg, rng);
  p.kernels.pop_back();
  p.biases.pop_back();
  CHECK_THROWS_AS((void)aggregate(rng.normal_matrix(12, 6), rng.normal_matrix(6, 4), cfg, p),
                  ValidationError);
  CHECK_THROWS_AS(
      (void)aggregate(rng.normal_matrix(12, 6), rng.normal_matrix(5, 4), cfg,
                      init_params(cfg, rng)),
      ValidationError);

  StfaConfig bad;
  bad.kernel_sizes = {4};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad.kernel_sizes = {3};
  bad.filters_per_scale = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}
