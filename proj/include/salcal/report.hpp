#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "salcal/pipeline.hpp"

namespace salcal {

std::string toolkit_version();

// %.9g; NaN becomes an empty field.
std::string format_double(double value);

// Files are written into a staging directory inside out_dir as they are
// added. commit() moves them into out_dir; a writer destroyed without commit
// moves the staging directory to out_dir/failed-<timestamp>.
class BundleWriter {
 public:
  explicit BundleWriter(std::filesystem::path out_dir);
  ~BundleWriter();
  BundleWriter(const BundleWriter&) = delete;
  BundleWriter& operator=(const BundleWriter&) = delete;

  const std::filesystem::path& out_dir() const { return out_dir_; }
  const std::filesystem::path& staging_dir() const { return staging_; }
  // `relative` may contain subdirectories.
  void add(const std::string& relative, const std::string& content);
  // Staged path for writers that produce files themselves; the file is
  // registered like add().
  std::filesystem::path add_path(const std::string& relative);
  const std::vector<std::string>& files() const { return files_; }

  void commit();
  // Returns the quarantine directory.
  std::filesystem::path quarantine();

 private:
  std::filesystem::path out_dir_;
  std::filesystem::path staging_;
  std::vector<std::string> files_;
  bool done_ = false;
};

// Fixed column order: sample_id, label, method, variant, explained_class,
// clean_score, ssim_vs_uncalibrated, deletion_area, random_area,
// random_curve_mad_vs_uncalibrated, otsu_threshold, otsu_tv.
std::string per_sample_csv(std::span<const EvalRecord> records);
std::vector<EvalRecord> parse_per_sample_csv(const std::string& text);

struct AggregateRow {
  std::string method;
  std::string variant;
  Index n = 0;
  double mean_deletion_area = 0.0;
  double btr = 0.0;
  double mean_otsu_tv = 0.0;
  FiveNumber ssim;
  double mean_ssim = 0.0;
  double mean_random_area = 0.0;
  double mean_random_curve_mad = 0.0;
};

// One row per (method, variant) in first-appearance order. NaN-valued
// metrics (disabled) are skipped in their means.
std::vector<AggregateRow> aggregate_records(std::span<const EvalRecord> records);
std::string aggregate_csv(std::span<const AggregateRow> rows);

// 20 equal bins on [0, 1], one row per (method, variant).
struct SsimHistogram {
  std::vector<double> edges;
  std::vector<std::string> method, variant;
  std::vector<std::vector<double>> counts;
};
SsimHistogram ssim_histogram(std::span<const EvalRecord> records);

nlohmann::json make_manifest(const ExperimentConfig& config, const Seeds& seeds, const std::string& command,
                             const std::vector<std::string>& files);

// Each writes its files into the bundle.
void write_model_outputs(const PreparedExperiment& px, BundleWriter& bundle);
void write_calibration_outputs(const PreparedExperiment& px, BundleWriter& bundle);
void write_experiment_outputs(const ExperimentResult& result, BundleWriter& bundle);
// Aggregates, histograms and bar charts recomputed from records alone.
void write_aggregate_outputs(std::span<const EvalRecord> records, BundleWriter& bundle);
void write_sweep_outputs(const SweepResult& sweep, BundleWriter& bundle);
void write_stability_outputs(const StabilityResult& stability, BundleWriter& bundle);
// Normalized maps of the first `count` evaluation samples as PGM + sidecar.
void write_explanations(const PreparedExperiment& px, Index count, BundleWriter& bundle);
void write_manifest(const ExperimentConfig& config, const Seeds& seeds, const std::string& command,
                    BundleWriter& bundle, const std::string& name = "manifest.json");

}  // namespace salcal
