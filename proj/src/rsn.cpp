#include "stanet/rsn.hpp"

#include "stanet/io.hpp"
#include "stanet/rng.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/QR>

#include <cmath>
#include <numbers>
#include <string>

namespace stanet::rsn {

Matrix spatial_regression(const Matrix& components, const RsnTemplate& tmpl) {
  if (components.cols() != tmpl.maps.cols()) {
    throw ValidationError("components: column count " + std::to_string(components.cols()) +
                          " does not match template columns " + std::to_string(tmpl.maps.cols()));
  }
  if (tmpl.maps.rows() < 1) throw ValidationError("template: needs at least one row");
  Eigen::ColPivHouseholderQR<Matrix> qr(tmpl.maps.transpose());
  if (qr.rank() < tmpl.maps.rows()) {
    throw RankError("template rows are collinear", static_cast<int>(qr.rank()),
                    static_cast<int>(tmpl.maps.rows()));
  }
  return qr.solve(components.transpose()).transpose();
}

RsnTemplate synth_template(int r, int v, std::uint64_t seed, bool identity) {
  if (r < 1) throw ValidationError("r: must be >= 1, got " + std::to_string(r));
  if (r > v) {
    throw ValidationError("r: must be <= v, got " + std::to_string(r) + " > " + std::to_string(v));
  }

  RsnTemplate tmpl;
  tmpl.names.reserve(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) tmpl.names.push_back("net" + std::to_string(i + 1));

  if (identity) {
    if (r != v) {
      throw ValidationError("identity: requires r == v, got " + std::to_string(r) + " x " +
                            std::to_string(v));
    }
    tmpl.maps = Matrix::Identity(r, v);
    return tmpl;
  }

  // One raised-cosine bump per row, centers spread evenly with seeded jitter,
  // widths slightly overlapping the neighbours: smooth and near-orthogonal.
  Rng rng(derive_seed(seed, "rsn_template"));
  tmpl.maps = Matrix::Zero(r, v);
  const double spacing = static_cast<double>(v) / r;
  for (int i = 0; i < r; ++i) {
    const double center = (i + 0.5) * spacing + rng.uniform(-0.1, 0.1) * spacing;
    const double half_width = 0.7 * spacing * (1.0 + 0.1 * rng.uniform(-1.0, 1.0));
    for (int x = 0; x < v; ++x) {
      const double u = (x - center) / half_width;
      if (std::abs(u) < 1.0) {
        const double c = std::cos(0.5 * std::numbers::pi * u);
        tmpl.maps(i, x) = c * c;
      }
    }
    const double norm = tmpl.maps.row(i).norm();
    if (norm <= 0.0) throw DegenerateSignalError("template bump vanished", i);
    tmpl.maps.row(i) /= norm;
  }
  return tmpl;
}

Matrix fc_matrix(const Matrix& region_timecourses) {
  const auto t_len = region_timecourses.rows();
  const auto p = region_timecourses.cols();
  if (t_len < 3) {
    throw ValidationError("region_timecourses: need at least 3 rows, got " +
                          std::to_string(t_len));
  }
  if (p < 1) throw ValidationError("region_timecourses: need at least 1 column");

  const Matrix centered = region_timecourses.rowwise() - region_timecourses.colwise().mean();
  Vector stddev(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    stddev[j] = centered.col(j).norm();
    if (stddev[j] <= 0.0) {
      throw DegenerateSignalError("column " + std::to_string(j) + " is constant",
                                  static_cast<int>(j));
    }
  }
  Matrix corr = centered.transpose() * centered;
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) corr(i, j) /= stddev[i] * stddev[j];
    corr(i, i) = 1.0;
  }
  return corr;
}

void save_template(const std::filesystem::path& dir, const RsnTemplate& tmpl) {
  std::filesystem::create_directories(dir);
  io::write_matrix(dir / "maps.bin", tmpl.maps);
  nlohmann::json header{
      {"kind", "template"},
      {"rows", tmpl.maps.rows()},
      {"cols", tmpl.maps.cols()},
      {"names", tmpl.names},
      {"file", "maps.bin"},
  };
  io::write_json_atomic(dir / "header.json", header);
}

RsnTemplate load_template(const std::filesystem::path& dir) {
  const nlohmann::json header = io::read_json(dir / "header.json");
  if (header.value("kind", std::string()) != "template") {
    throw ValidationError("template header: missing kind=\"template\" in " +
                          (dir / "header.json").string());
  }
  RsnTemplate tmpl;
  tmpl.maps = io::read_matrix(dir / header.at("file").get<std::string>(),
                              header.at("rows").get<Eigen::Index>(),
                              header.at("cols").get<Eigen::Index>());
  tmpl.names = header.at("names").get<std::vector<std::string>>();
  if (tmpl.names.size() != static_cast<std::size_t>(tmpl.maps.rows())) {
    throw ValidationError("template header: names count does not match rows");
  }
  // Same independence check as regression applies at load time.
  Eigen::ColPivHouseholderQR<Matrix> qr(tmpl.maps.transpose());
  if (qr.rank() < tmpl.maps.rows()) {
    throw RankError("template rows are collinear", static_cast<int>(qr.rank()),
                    static_cast<int>(tmpl.maps.rows()));
  }
  return tmpl;
}

}  // namespace stanet::rsn
