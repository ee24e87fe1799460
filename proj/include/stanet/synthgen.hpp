#pragma once

#include "stanet/types.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stanet::synthgen {

enum class ClassEffect { spatial_amplitude, temporal_spectrum, both };

std::string to_string(ClassEffect e);
ClassEffect class_effect_from_string(const std::string& s);

/// Frequency band (cycles per sample) carrying the class signal when
/// class_effect involves the temporal spectrum: the upper third of the
/// representable range [0, 1/2].
inline constexpr double kClassBandLow = 1.0 / 3.0;
inline constexpr double kClassBandHigh = 0.5;

struct CohortSpec {
  int n_patients = 51;
  int n_controls = 21;
  int timepoints = 95;
  int voxels = 400;
  int n_true_sources = 8;
  ClassEffect class_effect = ClassEffect::temporal_spectrum;
  double noise_sigma = 0.5;
  std::uint64_t seed = 0;

  /// Throws ValidationError naming the violated field.
  void validate() const;
};

struct SubjectScan {
  Matrix data;  // timepoints x voxels
  int label = 0;  // patient = 1, control = 0
  std::string subject_id;
};

/// Generation-time truth, kept as the oracle for decomposition tests.
struct GroundTruth {
  Matrix sources;                // n_true_sources x voxels, rows zero-mean unit-variance
  std::vector<Matrix> mixings;   // per subject, timepoints x n_true_sources
};

struct Cohort {
  std::vector<SubjectScan> scans;  // patients first, then controls
  GroundTruth truth;
};

/// Pure function of its CohortSpec: identical inputs give bit-identical cohorts.
/// Each scan is mixing * sources (class-modulated per spec.class_effect)
/// plus noise scaled by noise_sigma. The noise is a cohort-shared bank of
/// weak nuisance maps (sparse, class-independent, excluded from GroundTruth)
/// driven by per-subject AR(1) time courses; tiny voxel grids that cannot
/// host extra decorrelated maps fall back to iid Gaussian noise.
Cohort generate_cohort(const CohortSpec& spec);

nlohmann::json spec_to_json(const CohortSpec& spec);
CohortSpec spec_from_json(const nlohmann::json& j);

/// Directory format: header.json (spec, subject ids, labels, dimensions)
/// plus one row-major float64 little-endian file per subject. This is also
/// the ingestion format for externally preprocessed data.
void save_cohort(const std::filesystem::path& dir, const CohortSpec& spec,
                 const std::vector<SubjectScan>& scans);

struct LoadedCohort {
  CohortSpec spec;
  std::vector<SubjectScan> scans;
};

LoadedCohort load_cohort(const std::filesystem::path& dir);

}  // namespace stanet::synthgen
