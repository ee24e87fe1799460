// Command-line front end. All pipeline logic lives in the library; this file
// parses flags, moves artifacts on disk, and maps exceptions to stderr plus a
// nonzero exit status. Flag values override config-file values everywhere.

#include "CLI11.hpp"

#include <nlohmann/json.hpp>

#include "stanet/eval.hpp"
#include "stanet/ica.hpp"
#include "stanet/rng.hpp"
#include "stanet/types.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stanet;

namespace {

/// Flag bundle shared by the subcommands; unset members fall back to the
/// config file and then to the built-in defaults.
struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> n_ics;
  std::optional<std::string> sampler;
  std::optional<std::string> ablation;
  std::optional<std::string> classifier;
  std::optional<int> folds;
};

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("config: " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config: " + path + " must hold a JSON object");
  return j;
}

eval::ExperimentConfig resolve_config(const json& file, const Overrides& o) {
  eval::ExperimentConfig cfg = eval::experiment_config_from_json(file);
  if (o.seed) cfg.seed = *o.seed;
  if (o.n_ics) cfg.n_ics = *o.n_ics;
  if (o.sampler) cfg.sampler.strategy = sampling::strategy_from_string(*o.sampler);
  if (o.ablation) cfg.model.ablation = afgru::ablation_from_string(*o.ablation);
  if (o.classifier) cfg.classifier = *o.classifier;
  if (o.folds) cfg.k_folds = *o.folds;
  cfg.validate();
  return cfg;
}

fs::path resolve_out(const json& file, const Overrides& o, const char* fallback) {
  if (o.out) return *o.out;
  if (file.contains("out")) return file.at("out").get<std::string>();
  return fallback;
}

/// Either the ingestion directory named in the config ("cohort_dir") or a
/// cohort generated from the resolved spec. Generation is seed-deterministic,
/// so two runs with the same config see the same subjects.
std::vector<synthgen::SubjectScan> obtain_scans(const json& file,
                                                const eval::ExperimentConfig& cfg) {
  if (file.contains("cohort_dir")) {
    const auto dir = file.at("cohort_dir").get<std::string>();
    synthgen::LoadedCohort loaded = synthgen::load_cohort(dir);
    return std::move(loaded.scans);
  }
  return synthgen::generate_cohort(cfg.cohort).scans;
}

/// Write-then-rename so readers never observe a half-written file and a
/// parallel writer of the same cell cannot interleave.
void atomic_write(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw ValidationError("write: cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_report_files(const fs::path& dir, const eval::ExperimentReport& report) {
  atomic_write(dir / "report.json", eval::report_to_json_text(report));
  atomic_write(dir / "report.txt", eval::report_to_text(report));
}

int cmd_synth(const Overrides& o) {
  const json file = load_config_file(o.config_path);
  synthgen::CohortSpec spec =
      synthgen::spec_from_json(file.contains("cohort") ? file.at("cohort") : json::object());
  if (o.seed) spec.seed = *o.seed;
  spec.validate();
  const fs::path out = resolve_out(file, o, "cohort");
  const synthgen::Cohort cohort = synthgen::generate_cohort(spec);
  synthgen::save_cohort(out, spec, cohort.scans);
  std::printf("synth: wrote %zu subjects (%d patients, %d controls) to %s\n",
              cohort.scans.size(), spec.n_patients, spec.n_controls, out.string().c_str());
  return 0;
}

int cmd_decompose(const Overrides& o) {
  const json file = load_config_file(o.config_path);
  const eval::ExperimentConfig cfg = resolve_config(file, o);
  const std::vector<synthgen::SubjectScan> scans = obtain_scans(file, cfg);
  std::vector<Matrix> data;
  data.reserve(scans.size());
  for (const auto& s : scans) data.push_back(s.data);

  // Same stage-seed derivation the experiment harness uses, so a standalone
  // decomposition of a cohort matches the one inside `run`.
  ica::FastIcaConfig icfg;
  icfg.seed = derive_seed(cfg.seed, "ica");
  const ica::GroupDecomposition dec = ica::group_decompose(data, cfg.n_ics, icfg);

  const fs::path out = resolve_out(file, o, "decomposition");
  ica::save_decomposition(out, dec);
  std::printf("decompose: %d components over %zu subjects in %d iterations (restart %d) -> %s\n",
              dec.n_components, scans.size(), dec.iterations, dec.restart_index,
              out.string().c_str());
  return 0;
}

int cmd_run(const Overrides& o) {
  const json file = load_config_file(o.config_path);
  const eval::ExperimentConfig cfg = resolve_config(file, o);
  const std::vector<synthgen::SubjectScan> scans = obtain_scans(file, cfg);
  const eval::ExperimentReport report = eval::run_experiment(scans, cfg);
  const fs::path out = resolve_out(file, o, "results");
  write_report_files(out, report);
  std::fputs(eval::report_to_text(report).c_str(), stdout);
  std::printf("run: wrote %s and %s\n", (out / "report.json").string().c_str(),
              (out / "report.txt").string().c_str());
  return 0;
}

std::vector<std::string> default_axis_values(const std::string& axis) {
  if (axis == "n_ics") return {"15", "17", "21", "24", "27"};
  if (axis == "sampler")
    return {"random", "smote", "adasyn", "borderline", "smote_tomek", "svm_smote"};
  return {"stanet", "atfgru", "adfgru", "agru", "sgru", "dgru"};
}

/// Apply one axis value to a copy of the base config. Throws ValidationError
/// on unparseable values, so a bad cell fails before it burns any compute.
eval::ExperimentConfig cell_config(const eval::ExperimentConfig& base, const std::string& axis,
                                   const std::string& value) {
  eval::ExperimentConfig cfg = base;
  if (axis == "n_ics") {
    try {
      std::size_t used = 0;
      cfg.n_ics = std::stoi(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw ValidationError("sweep: n_ics value '" + value + "' is not an integer");
    }
  } else if (axis == "sampler") {
    cfg.sampler.strategy = sampling::strategy_from_string(value);
  } else {
    cfg.model.ablation = afgru::ablation_from_string(value);
  }
  cfg.validate();
  return cfg;
}

std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

int cmd_sweep(const Overrides& o, const std::string& axis, std::vector<std::string> values) {
  const json file = load_config_file(o.config_path);
  const eval::ExperimentConfig base = resolve_config(file, o);
  if (values.empty()) values = default_axis_values(axis);
  const fs::path out = resolve_out(file, o, "sweep");

  // One cohort shared by every cell: the axis mutates the pipeline, never the
  // subjects, so differences between rows are attributable to the axis alone.
  const std::vector<synthgen::SubjectScan> scans = obtain_scans(file, base);

  std::string csv = axis + ",acc,f1,recall,auc\n";
  bool any_failed = false;
  for (const std::string& value : values) {
    std::string row = value;
    try {
      const eval::ExperimentConfig cfg = cell_config(base, axis, value);
      const eval::ExperimentReport report = eval::run_experiment(scans, cfg);
      write_report_files(out / (axis + "_" + value), report);
      row += "," + format_metric(report.aggregated.acc);
      row += "," + format_metric(report.aggregated.f1);
      row += "," + format_metric(report.aggregated.recall);
      row += "," + format_metric(report.aggregated.auc);
      std::printf("sweep: %s=%s acc %.4f f1 %.4f recall %.4f auc %.4f\n", axis.c_str(),
                  value.c_str(), report.aggregated.acc, report.aggregated.f1,
                  report.aggregated.recall, report.aggregated.auc);
    } catch (const std::exception& e) {
      any_failed = true;
      row += ",FAILED,FAILED,FAILED,FAILED";
      std::fprintf(stderr, "sweep: %s=%s failed: %s\n", axis.c_str(), value.c_str(), e.what());
    }
    csv += row + "\n";
  }
  atomic_write(out / "grid.csv", csv);
  std::printf("sweep: wrote %s\n", (out / "grid.csv").string().c_str());
  return any_failed ? 1 : 0;
}

int cmd_inspect(const std::string& report_path) {
  std::ifstream in(report_path, std::ios::binary);
  if (!in) throw ValidationError("inspect: cannot open " + report_path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const eval::ExperimentReport report = eval::report_from_json_text(buf.str());
  std::fputs(eval::report_to_text(report).c_str(), stdout);
  return 0;
}

void add_common_flags(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config_path, "JSON config file; flags override its values");
  sub->add_option("--seed", o.seed, "experiment seed (synth: cohort seed)");
  sub->add_option("--out", o.out, "output directory");
}

void add_pipeline_flags(CLI::App* sub, Overrides& o) {
  sub->add_option("--n-ics", o.n_ics, "number of independent components");
  sub->add_option("--sampler", o.sampler, "balancing strategy name");
  sub->add_option("--ablation", o.ablation, "model variant name");
  sub->add_option("--classifier", o.classifier, "stanet | logistic | tree | plain_gru");
  sub->add_option("--folds", o.folds, "cross-validation fold count");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "stanet: synthetic-cohort depression-classification pipeline "
      "(group ICA, spatio-temporal aggregation, oversampling, gated recurrent classifier)"};
  app.require_subcommand(1);

  Overrides o;
  std::string axis;
  std::vector<std::string> values;
  std::string report_path;

  CLI::App* synth = app.add_subcommand("synth", "generate a cohort directory");
  add_common_flags(synth, o);

  CLI::App* decompose =
      app.add_subcommand("decompose", "group decomposition of a cohort to a directory");
  add_common_flags(decompose, o);
  decompose->add_option("--n-ics", o.n_ics, "number of independent components");

  CLI::App* run = app.add_subcommand("run", "cross-validated experiment; writes report files");
  add_common_flags(run, o);
  add_pipeline_flags(run, o);

  CLI::App* sweep = app.add_subcommand("sweep", "one run per axis value; writes grid.csv");
  add_common_flags(sweep, o);
  add_pipeline_flags(sweep, o);
  sweep->add_option("--axis", axis, "sweep axis")
      ->required()
      ->check(CLI::IsMember({"n_ics", "sampler", "ablation"}));
  sweep->add_option("--values", values, "axis values (default: the standard grid)")
      ->delimiter(',');

  CLI::App* inspect = app.add_subcommand("inspect", "print the table for a report.json");
  inspect->add_option("report", report_path, "path to report.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) return cmd_synth(o);
    if (decompose->parsed()) return cmd_decompose(o);
    if (run->parsed()) return cmd_run(o);
    if (sweep->parsed()) return cmd_sweep(o, axis, values);
    if (inspect->parsed()) return cmd_inspect(report_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "stanet: %s\n", e.what());
    return 1;
  }
  return 1;
}
