#include "stanet/synthgen.hpp"

#include "stanet/io.hpp"
#include "stanet/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace stanet::synthgen {
namespace {

// Generator constants. These are properties of the simulator, not knobs of
// the cohort contract, so they live here rather than in CohortSpec.
constexpr int kSmoothPasses = 2;
constexpr double kSmoothKernel[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
constexpr double kSupportQuantile = 0.78;   // zero out the 78% smallest |values|
constexpr double kMaxSourceCorr = 0.20;
constexpr double kMaxNuisanceCorr = 0.25;
constexpr int kMaxSourceDraws = 5000;
// The noise term is a cohort-shared bank of weak nuisance maps driven by
// per-subject AR(1) time courses with geometrically decaying variance, the
// desk-scale analog of physiological/motion nuisance networks. Unstructured
// iid noise is deliberately absent: blind separation needs every retained
// direction to stay non-Gaussian, and a flat iid floor would bury the weak
// nuisance directions under a featureless bulk.
constexpr int kMaxNuisanceSources = 40;
constexpr double kNuisanceDecay = 0.9;  // variance ratio between adjacent nuisance sources
constexpr int kBaseSinusoids = 2;
constexpr double kBaseFreqLow = 0.04;       // cycles per sample
constexpr double kBaseFreqHigh = 0.22;
constexpr double kBaseAmpLow = 0.7;
constexpr double kBaseAmpHigh = 1.3;
constexpr double kArCoeff = 0.5;
constexpr double kArSigma = 0.4;
constexpr double kEffectAmp = 1.5;          // extra sinusoid amplitude (both classes)
constexpr double kControlFreqLow = 0.05;    // controls' extra sinusoid band
constexpr double kControlFreqHigh = 0.18;
constexpr double kRegionFraction = 0.20;    // leading share of voxels forming the region
constexpr double kRegionScale = 1.6;        // patient amplitude gain inside the region

Vector smooth_reflect(const Vector& x) {
  const int n = static_cast<int>(x.size());
  Vector out(n);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = -2; k <= 2; ++k) {
      int j = i + k;
      if (j < 0) j = -j - 1;
      if (j >= n) j = 2 * n - 1 - j;
      acc += kSmoothKernel[k + 2] * x[j];
    }
    out[i] = acc;
  }
  return out;
}

// Smoothed, thresholded, zero-mean, unit-variance spatial map.
Vector draw_source_row(Rng& rng, int voxels) {
  Vector x(voxels);
  for (int v = 0; v < voxels; ++v) x[v] = rng.normal();
  for (int p = 0; p < kSmoothPasses; ++p) x = smooth_reflect(x);

  std::vector<double> mags(static_cast<std::size_t>(voxels));
  for (int v = 0; v < voxels; ++v) mags[static_cast<std::size_t>(v)] = std::abs(x[v]);
  auto cut_it = mags.begin() + static_cast<std::ptrdiff_t>(kSupportQuantile * voxels);
  std::nth_element(mags.begin(), cut_it, mags.end());
  const double cut = *cut_it;
  for (int v = 0; v < voxels; ++v) {
    if (std::abs(x[v]) < cut) x[v] = 0.0;
  }

  x.array() -= x.mean();
  const double sd = std::sqrt(x.squaredNorm() / (voxels - 1));
  if (sd <= 0.0) throw DegenerateSignalError("synthetic source collapsed to a constant", 0);
  x /= sd;
  return x;
}

double row_abs_corr(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::abs(a.dot(b)) / (na * nb);
}

// Draws n rows, each decorrelated (|corr| < max_corr) from all rows of
// `avoid` and from the rows already accepted in this call.
Matrix draw_rows(Rng& rng, int n, int voxels, double max_corr, const Matrix& avoid) {
  Matrix s(n, voxels);
  int accepted = 0;
  int draws = 0;
  while (accepted < n) {
    if (++draws > kMaxSourceDraws) {
      throw DegenerateSignalError("could not draw a source decorrelated from the others",
                                  accepted);
    }
    Vector cand = draw_source_row(rng, voxels);
    bool ok = true;
    for (int i = 0; ok && i < avoid.rows(); ++i) {
      ok = row_abs_corr(cand, Vector(avoid.row(i).transpose())) < max_corr;
    }
    for (int i = 0; ok && i < accepted; ++i) {
      ok = row_abs_corr(cand, Vector(s.row(i).transpose())) < max_corr;
    }
    if (ok) s.row(accepted++) = cand.transpose();
  }
  return s;
}

Matrix draw_sources(Rng& rng, int n_sources, int voxels) {
  return draw_rows(rng, n_sources, voxels, kMaxSourceCorr, Matrix(0, voxels));
}

int nuisance_count(const CohortSpec& spec) {
  if (spec.noise_sigma <= 0.0) return 0;
  return std::min(kMaxNuisanceSources, std::max(0, spec.voxels / 8 - spec.n_true_sources));
}

// Per-subject nuisance time courses: column j is a stationary AR(1) stream
// scaled so its variance follows the geometric profile, with the profile
// normalized to unit total power across columns.
Matrix draw_nuisance_timecourses(Rng& rng, int t_len, int n_nuisance) {
  Matrix tc(t_len, n_nuisance);
  const double w0 = (1.0 - kNuisanceDecay) / (1.0 - std::pow(kNuisanceDecay, n_nuisance));
  const double innovation = std::sqrt(1.0 - kArCoeff * kArCoeff);
  for (int j = 0; j < n_nuisance; ++j) {
    const double scale = std::sqrt(w0 * std::pow(kNuisanceDecay, j));
    double x = rng.normal();
    tc(0, j) = scale * x;
    for (int t = 1; t < t_len; ++t) {
      x = kArCoeff * x + innovation * rng.normal();
      tc(t, j) = scale * x;
    }
  }
  return tc;
}

// Two mid/low-band sinusoids plus an AR(1) stream, then one class-dependent
// extra sinusoid: patients in [kClassBandLow, kClassBandHigh), controls in a
// low band of the same amplitude, so total power stays comparable while the
// spectra separate.
Matrix draw_mixing(Rng& rng, const CohortSpec& spec, bool patient) {
  const int t_len = spec.timepoints;
  Matrix a = Matrix::Zero(t_len, spec.n_true_sources);
  const bool spectral = spec.class_effect != ClassEffect::spatial_amplitude;
  for (int c = 0; c < spec.n_true_sources; ++c) {
    for (int s = 0; s < kBaseSinusoids; ++s) {
      const double freq = rng.uniform(kBaseFreqLow, kBaseFreqHigh);
      const double amp = rng.uniform(kBaseAmpLow, kBaseAmpHigh);
      const double phase = rng.uniform(0.0, 1.0);
      for (int t = 0; t < t_len; ++t) {
        a(t, c) += amp * std::sin(2.0 * std::numbers::pi * (freq * t + phase));
      }
    }
    double ar = 0.0;
    for (int t = 0; t < t_len; ++t) {
      ar = kArCoeff * ar + kArSigma * rng.normal();
      a(t, c) += ar;
    }
    if (spectral) {
      const double freq = patient ? rng.uniform(kClassBandLow, kClassBandHigh)
                                  : rng.uniform(kControlFreqLow, kControlFreqHigh);
      const double phase = rng.uniform(0.0, 1.0);
      for (int t = 0; t < t_len; ++t) {
        a(t, c) += kEffectAmp * std::sin(2.0 * std::numbers::pi * (freq * t + phase));
      }
    }
  }
  return a;
}

}  // namespace

std::string to_string(ClassEffect e) {
  switch (e) {
    case ClassEffect::spatial_amplitude: return "spatial_amplitude";
    case ClassEffect::temporal_spectrum: return "temporal_spectrum";
    case ClassEffect::both: return "both";
  }
  throw ValidationError("class_effect: unknown enum value");
}

ClassEffect class_effect_from_string(const std::string& s) {
  if (s == "spatial_amplitude") return ClassEffect::spatial_amplitude;
  if (s == "temporal_spectrum") return ClassEffect::temporal_spectrum;
  if (s == "both") return ClassEffect::both;
  throw ValidationError("class_effect: expected spatial_amplitude|temporal_spectrum|both, got \"" + s + "\"");
}

void CohortSpec::validate() const {
  if (n_patients < 1) throw ValidationError("n_patients: must be >= 1, got " + std::to_string(n_patients));
  if (n_controls < 1) throw ValidationError("n_controls: must be >= 1, got " + std::to_string(n_controls));
  if (timepoints < 2) throw ValidationError("timepoints: must be >= 2, got " + std::to_string(timepoints));
  if (voxels < 2) throw ValidationError("voxels: must be >= 2, got " + std::to_string(voxels));
  if (n_true_sources < 1) {
    throw ValidationError("n_true_sources: must be >= 1, got " + std::to_string(n_true_sources));
  }
  if (n_true_sources > voxels) {
    throw ValidationError("n_true_sources: must be <= voxels, got " + std::to_string(n_true_sources) +
                          " > " + std::to_string(voxels));
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ValidationError("noise_sigma: must be finite and >= 0, got " + std::to_string(noise_sigma));
  }
}

Cohort generate_cohort(const CohortSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "synthgen"));

  Cohort cohort;
  cohort.truth.sources = draw_sources(rng, spec.n_true_sources, spec.voxels);

  // Cohort-shared nuisance maps, drawn like the real sources but kept out of
  // the ground truth. When the voxel grid is too small to host extra
  // decorrelated maps, the noise falls back to iid Gaussian below.
  const int n_nuisance = nuisance_count(spec);
  Matrix nuisance_maps;
  if (n_nuisance > 0) {
    nuisance_maps =
        draw_rows(rng, n_nuisance, spec.voxels, kMaxNuisanceCorr, cohort.truth.sources);
  }

  // Patient-side spatial modulation: amplitude gain on a fixed leading block
  // of voxels. The stored truth keeps the unmodulated sources.
  Matrix patient_sources = cohort.truth.sources;
  if (spec.class_effect != ClassEffect::temporal_spectrum) {
    const int region = std::max(1, static_cast<int>(kRegionFraction * spec.voxels));
    patient_sources.leftCols(region) *= kRegionScale;
  }

  const int n_total = spec.n_patients + spec.n_controls;
  cohort.scans.reserve(static_cast<std::size_t>(n_total));
  cohort.truth.mixings.reserve(static_cast<std::size_t>(n_total));
  for (int i = 0; i < n_total; ++i) {
    const bool patient = i < spec.n_patients;
    Matrix mixing = draw_mixing(rng, spec, patient);
    const Matrix& sources = patient ? patient_sources : cohort.truth.sources;
    Matrix data = mixing * sources;
    if (spec.noise_sigma > 0.0) {
      if (n_nuisance > 0) {
        data += spec.noise_sigma *
                (draw_nuisance_timecourses(rng, spec.timepoints, n_nuisance) * nuisance_maps);
      } else {
        data += spec.noise_sigma * rng.normal_matrix(spec.timepoints, spec.voxels);
      }
    }
    if (!data.allFinite()) throw DegenerateSignalError("non-finite values in generated scan", i);

    SubjectScan scan;
    scan.data = std::move(data);
    scan.label = patient ? 1 : 0;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "sub%03d", i + 1);
    scan.subject_id = buf;
    cohort.scans.push_back(std::move(scan));
    cohort.truth.mixings.push_back(std::move(mixing));
  }
  return cohort;
}

nlohmann::json spec_to_json(const CohortSpec& spec) {
  return nlohmann::json{
      {"n_patients", spec.n_patients},
      {"n_controls", spec.n_controls},
      {"timepoints", spec.timepoints},
      {"voxels", spec.voxels},
      {"n_true_sources", spec.n_true_sources},
      {"class_effect", to_string(spec.class_effect)},
      {"noise_sigma", spec.noise_sigma},
      {"seed", spec.seed},
  };
}

CohortSpec spec_from_json(const nlohmann::json& j) {
  CohortSpec spec;
  spec.n_patients = j.value("n_patients", spec.n_patients);
  spec.n_controls = j.value("n_controls", spec.n_controls);
  spec.timepoints = j.value("timepoints", spec.timepoints);
  spec.voxels = j.value("voxels", spec.voxels);
  spec.n_true_sources = j.value("n_true_sources", spec.n_true_sources);
  if (j.contains("class_effect")) {
    spec.class_effect = class_effect_from_string(j.at("class_effect").get<std::string>());
  }
  spec.noise_sigma = j.value("noise_sigma", spec.noise_sigma);
  spec.seed = j.value("seed", spec.seed);
  return spec;
}

void save_cohort(const std::filesystem::path& dir, const CohortSpec& spec,
                 const std::vector<SubjectScan>& scans) {
  std::filesystem::create_directories(dir);
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& scan : scans) {
    const std::string file = scan.subject_id + ".bin";
    subjects.push_back({
        {"id", scan.subject_id},
        {"label", scan.label},
        {"rows", scan.data.rows()},
        {"cols", scan.data.cols()},
        {"file", file},
    });
    io::write_matrix(dir / file, scan.data);
  }
  nlohmann::json header{
      {"kind", "cohort"},
      {"spec", spec_to_json(spec)},
      {"subjects", std::move(subjects)},
  };
  io::write_json_atomic(dir / "header.json", header);
}

LoadedCohort load_cohort(const std::filesystem::path& dir) {
  const nlohmann::json header = io::read_json(dir / "header.json");
  if (header.value("kind", std::string()) != "cohort") {
    throw ValidationError("cohort header: missing kind=\"cohort\" in " + (dir / "header.json").string());
  }
  LoadedCohort out;
  out.spec = header.contains("spec") ? spec_from_json(header.at("spec")) : CohortSpec{};
  if (!header.contains("subjects") || !header.at("subjects").is_array()) {
    throw ValidationError("cohort header: missing subjects array");
  }
  Eigen::Index rows = -1;
  Eigen::Index cols = -1;
  for (const auto& entry : header.at("subjects")) {
    SubjectScan scan;
    scan.subject_id = entry.at("id").get<std::string>();
    scan.label = entry.at("label").get<int>();
    if (scan.label != 0 && scan.label != 1) {
      throw ValidationError("cohort header: label for " + scan.subject_id + " must be 0 or 1");
    }
    const auto r = entry.at("rows").get<Eigen::Index>();
    const auto c = entry.at("cols").get<Eigen::Index>();
    if (rows < 0) {
      rows = r;
      cols = c;
    } else if (r != rows || c != cols) {
      throw ValidationError("cohort header: subject " + scan.subject_id +
                            " dimensions disagree with the rest of the cohort");
    }
    scan.data = io::read_matrix(dir / entry.at("file").get<std::string>(), r, c);
    out.scans.push_back(std::move(scan));
  }
  if (out.scans.empty()) throw ValidationError("cohort header: subjects array is empty");
  return out;
}

}  // namespace stanet::synthgen
