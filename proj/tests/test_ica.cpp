#include <doctest.h>

#include "stanet/ica.hpp"
#include "stanet/rng.hpp"
#include "stanet/synthgen.hpp"
#include "stanet/types.hpp"

#include "test_helpers.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

namespace fs = std::filesystem;
using namespace stanet;
using namespace stanet::ica;

namespace {

Matrix row_covariance(const Matrix& z) {
  return z * z.transpose() / static_cast<double>(z.cols() - 1);
}

// Checks |c| is a signed permutation: per row and column exactly one entry
// near 1 in magnitude, everything else near 0.
void check_signed_permutation(const Matrix& c, double tol) {
  std::vector<bool> col_used(static_cast<std::size_t>(c.cols()), false);
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    int big = 0;
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      const double a = std::abs(c(i, j));
      if (a > 1.0 - tol) {
        ++big;
        CHECK(!col_used[static_cast<std::size_t>(j)]);
        col_used[static_cast<std::size_t>(j)] = true;
      } else {
        CHECK(a < tol);
      }
    }
    CHECK(big == 1);
  }
}

}  // namespace

TEST_CASE("center_whiten produces identity covariance on random data") {
  Rng rng(21);
  const Matrix x = rng.normal_matrix(6, 50) + Matrix::Constant(6, 50, 3.0);
  const WhitenResult w = center_whiten(x, 6);
  REQUIRE(w.whitened.rows() == 6);
  REQUIRE(w.whitened.cols() == 50);
  // Direct covariance computation as the oracle.
  const Matrix cov = row_covariance(w.whitened);
  CHECK((cov - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-10);
  for (Eigen::Index i = 0; i < 6; ++i) CHECK(std::abs(w.whitened.row(i).mean()) < 1e-10);
  // The transform reproduces the whitened rows from centered data.
  const Matrix centered = x.colwise() - w.row_means;
  CHECK((w.transform * centered - w.whitened).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("center_whiten handles wide matrices without a huge Gram") {
  Rng rng(22);
  const Matrix x = rng.normal_matrix(3, 20000);
  const WhitenResult w = center_whiten(x, 3);
  const Matrix cov = row_covariance(w.whitened);
  CHECK((cov - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("whitening already-white data is a rotation") {
  Rng rng(23);
  const Matrix z1 = center_whiten(rng.normal_matrix(5, 300), 5).whitened;
  const WhitenResult again = center_whiten(z1, 5);
  const Matrix cov = row_covariance(again.whitened);
  CHECK((cov - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-10);
  // again.whitened = R z1 for an orthogonal R.
  const Matrix r = again.whitened * z1.transpose() / static_cast<double>(z1.cols() - 1);
  CHECK((r * r.transpose() - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((r * z1 - again.whitened).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("center_whiten raises a rank error on collinear rows") {
  Matrix x(2, 4);
  x << 1, 1, -1, -1, 2, 2, -2, -2;
  try {
    (void)center_whiten(x, 2);
    FAIL_CHECK("expected RankError");
  } catch (const RankError& e) {
    CHECK(e.rank == 1);
    CHECK(e.requested == 2);
  }
  CHECK_NOTHROW((void)center_whiten(x, 1));
}

TEST_CASE("center_whiten validates its arguments") {
  Rng rng(24);
  const Matrix x = rng.normal_matrix(4, 30);
  CHECK_THROWS_AS((void)center_whiten(x, 0), ValidationError);
  CHECK_THROWS_AS((void)center_whiten(x, 5), ValidationError);
  Matrix bad = x;
  bad(1, 2) = std::nan("");
  CHECK_THROWS_AS((void)center_whiten(bad, 2), ValidationError);
}

TEST_CASE("fast_ica on independent unit-variance rows finds a signed permutation") {
  const Matrix z = testutil::disjoint_sources(4, 240);
  FastIcaConfig cfg;
  cfg.seed = 11;
  cfg.tol = 1e-12;  // the fixture is an exact fixed point; converge hard
  const FastIcaResult res = fast_ica(z, cfg);
  CHECK((res.rotation * res.rotation.transpose() - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() <
        1e-8);
  const Matrix y = res.rotation * z;
  const Matrix c = y * z.transpose() / static_cast<double>(z.cols() - 1);
  check_signed_permutation(c, 1e-6);
  CHECK(res.delta < cfg.tol);
}

TEST_CASE("fast_ica is deterministic in the seed") {
  const Matrix z = testutil::disjoint_sources(3, 120);
  FastIcaConfig cfg;
  cfg.seed = 5;
  const FastIcaResult a = fast_ica(z, cfg);
  const FastIcaResult b = fast_ica(z, cfg);
  CHECK(std::memcmp(a.rotation.data(), b.rotation.data(), sizeof(double) * 9) == 0);
  CHECK(a.iterations == b.iterations);
  cfg.seed = 6;
  const FastIcaResult c = fast_ica(z, cfg);
  CHECK((a.rotation - c.rotation).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("fast_ica unmixes two uniform sources through a random mixing") {
  Rng rng(31);
  const int v = 10000;
  Matrix s(2, v);
  const double half_width = std::sqrt(3.0);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < v; ++j) s(i, j) = rng.uniform(-half_width, half_width);
  }
  Matrix mix(2, 2);
  mix << 0.8, -0.4, 0.3, 0.9;
  const Matrix x = mix * s;

  const WhitenResult w = center_whiten(x, 2);
  FastIcaConfig cfg;
  cfg.seed = 12;
  const FastIcaResult res = fast_ica(w.whitened, cfg);
  const Matrix y = res.rotation * w.whitened;

  const auto match = testutil::best_row_match(y, s);
  for (int i = 0; i < 2; ++i) {
    const double corr = std::abs(testutil::row_corr(
        y.row(i).transpose(), s.row(match.assignment[static_cast<std::size_t>(i)]).transpose()));
    CHECK(corr >= 0.99);
  }
}

TEST_CASE("fast_ica reports non-convergence with the best delta") {
  Rng rng(32);
  const Matrix z = center_whiten(rng.normal_matrix(4, 500), 4).whitened;
  FastIcaConfig cfg;
  cfg.seed = 1;
  cfg.tol = 1e-18;  // unreachable for Gaussian data
  cfg.max_iter = 3;
  cfg.restarts = 2;
  try {
    (void)fast_ica(z, cfg);
    FAIL_CHECK("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(std::isfinite(e.last_delta));
    CHECK(e.last_delta > 0.0);
  }
}

TEST_CASE("group_decompose recovers synthetic sources on a noiseless cohort") {
  synthgen::CohortSpec spec;
  spec.n_patients = 4;
  spec.n_controls = 4;
  spec.timepoints = 50;
  spec.voxels = 400;
  spec.n_true_sources = 8;
  spec.noise_sigma = 0.0;
  spec.seed = 17;
  const synthgen::Cohort cohort = synthgen::generate_cohort(spec);
  std::vector<Matrix> scans;
  for (const auto& scan : cohort.scans) scans.push_back(scan.data);

  FastIcaConfig cfg;
  cfg.seed = 17;
  const GroupDecomposition d = group_decompose(scans, 8, cfg);

  REQUIRE(d.spatial_maps.rows() == 8);
  REQUIRE(d.spatial_maps.cols() == 400);
  REQUIRE(d.timecourses.size() == 8);
  CHECK(d.timecourses[0].rows() == 50);
  CHECK(d.timecourses[0].cols() == 8);

  const auto match = testutil::best_row_match(d.spatial_maps, cohort.truth.sources);
  CHECK(match.mean_abs_corr >= 0.95);

  // Unit variance, sign convention, explained-variance ordering.
  for (Eigen::Index i = 0; i < 8; ++i) {
    CHECK(std::abs(d.spatial_maps.row(i).squaredNorm() / 399.0 - 1.0) < 1e-9);
    Eigen::Index arg = 0;
    d.spatial_maps.row(i).cwiseAbs().maxCoeff(&arg);
    CHECK(d.spatial_maps(i, arg) > 0.0);
  }
  std::vector<double> energy;
  for (Eigen::Index i = 0; i < 8; ++i) {
    double e = 0.0;
    for (const auto& tc : d.timecourses) e += tc.col(i).squaredNorm();
    energy.push_back(e);
  }
  for (std::size_t i = 1; i < energy.size(); ++i) CHECK(energy[i] <= energy[i - 1] * (1 + 1e-9));

  // Noiseless full-order reconstruction through the recovered time courses.
  for (std::size_t s = 0; s < scans.size(); ++s) {
    const double rel = (d.timecourses[s] * d.spatial_maps - scans[s]).norm() / scans[s].norm();
    CHECK(rel < 1e-6);
  }

  // Subject-specific maps reconstruct equally well.
  const Matrix maps0 = subject_spatial_maps(scans[0], d.timecourses[0]);
  CHECK((d.timecourses[0] * maps0 - scans[0]).norm() / scans[0].norm() < 1e-9);
}

TEST_CASE("group_decompose on identity mixing returns signed-permutation time courses") {
  const Matrix s = testutil::disjoint_sources(4, 240);
  const std::vector<Matrix> scans{s};
  FastIcaConfig cfg;
  cfg.seed = 2;
  cfg.tol = 1e-12;
  const GroupDecomposition d = group_decompose(scans, 4, cfg);
  REQUIRE(d.timecourses.size() == 1);
  const Matrix& a = d.timecourses[0];
  check_signed_permutation(a, 1e-6);
  const auto match = testutil::best_row_match(d.spatial_maps, s);
  CHECK(match.mean_abs_corr > 1.0 - 1e-6);
}

TEST_CASE("group_decompose rejects mismatched subjects and excessive orders") {
  Rng rng(41);
  std::vector<Matrix> scans{rng.normal_matrix(10, 30), rng.normal_matrix(11, 30)};
  FastIcaConfig cfg;
  CHECK_THROWS_AS((void)group_decompose(scans, 2, cfg), ValidationError);

  // Noiseless rank limit: requesting more components than true sources.
  synthgen::CohortSpec spec;
  spec.n_patients = 3;
  spec.n_controls = 3;
  spec.timepoints = 40;
  spec.voxels = 120;
  spec.n_true_sources = 5;
  spec.noise_sigma = 0.0;
  spec.seed = 4;
  const synthgen::Cohort cohort = synthgen::generate_cohort(spec);
  std::vector<Matrix> clean;
  for (const auto& scan : cohort.scans) clean.push_back(scan.data);
  CHECK_THROWS_AS((void)group_decompose(clean, 7, cfg), RankError);
}

TEST_CASE("decomposition directory round trips exactly") {
  const Matrix s = testutil::disjoint_sources(3, 120);
  Rng rng(55);
  std::vector<Matrix> scans{Matrix(rng.normal_matrix(9, 3) * s),
                            Matrix(rng.normal_matrix(9, 3) * s)};
  FastIcaConfig cfg;
  cfg.seed = 9;
  const GroupDecomposition d = group_decompose(scans, 3, cfg);

  const fs::path dir =
      fs::temp_directory_path() / ("stanet_ica_rt_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  save_decomposition(dir, d);
  const GroupDecomposition back = load_decomposition(dir);
  fs::remove_all(dir);

  CHECK(back.n_components == d.n_components);
  CHECK(back.seed == d.seed);
  CHECK(back.iterations == d.iterations);
  CHECK(back.restart_index == d.restart_index);
  CHECK(back.spatial_maps == d.spatial_maps);
  CHECK(back.unmixing == d.unmixing);
  CHECK(back.whitening == d.whitening);
  CHECK(back.row_means == d.row_means);
  REQUIRE(back.timecourses.size() == d.timecourses.size());
  for (std::size_t i = 0; i < d.timecourses.size(); ++i) {
    CHECK(back.timecourses[i] == d.timecourses[i]);
  }
}
