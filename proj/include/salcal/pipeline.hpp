#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "salcal/config.hpp"
#include "salcal/ece.hpp"

namespace salcal {

// A pipeline stage failed; the message starts with the stage name.
class PipelineError : public Error {
 public:
  PipelineError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Runs `fn`, turning any failure other than a ConfigError into a
// PipelineError naming `stage`.
void run_stage(const std::string& stage, const std::function<void()>& fn);

// Runs fn(0..n-1) on `jobs` threads. Work items must be independent; the
// exception of the lowest failing index is rethrown.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

struct Seeds {
  std::uint64_t master = 0;
  std::uint64_t dataset = 0;
  std::uint64_t split = 0;
  std::uint64_t train = 0;

  static Seeds from_master(std::uint64_t master);
  // Stream of one (sample, method) work unit. The variant is deliberately not
  // part of the key: every variant of a sample sees the same random draws.
  std::uint64_t saliency(std::size_t sample, std::string_view method) const;
  std::uint64_t random_baseline(std::size_t sample) const;
  std::uint64_t stability_points() const;
  std::uint64_t lipschitz(std::size_t sample, std::string_view method) const;
};

struct NamedCalibrator {
  std::string name;  // uncalibrated | temperature | dirichlet | identity
  Calibrator calibrator;
};

struct VariantQuality {
  std::string variant;
  double accuracy = 0.0;
  double nll = 0.0;
  double ece_binned = 0.0;
  double ece_density = 0.0;
  ReliabilityCurve reliability;
};

// Dataset, splits, model and fitted calibrators shared by every subcommand.
struct PreparedExperiment {
  ExperimentConfig config;
  Seeds seeds;
  Dataset dataset;
  std::vector<std::size_t> train, calibration, evaluation;  // dataset indices
  std::shared_ptr<const ClassifierModel> model;
  bool model_trained = false;
  // uncalibrated first, then the configured calibrators, then identity.
  std::vector<NamedCalibrator> variants;
  std::vector<VariantQuality> quality;  // on the evaluation split, per variant
  std::string calibration_set_hash;

  const TemperatureScaler* fitted_temperature() const;
};

// Stages "dataset" and "model". Leaves variants empty.
PreparedExperiment prepare_model(const ExperimentConfig& config);
// Adds stage "calibration": fits the calibrators and measures every variant.
void fit_calibrators(PreparedExperiment& px);
PreparedExperiment prepare_experiment(const ExperimentConfig& config);

// Accuracy, NLL and both ECE estimates of calibrated scores [N, C].
VariantQuality measure_quality(const std::string& variant, const Tensor& scores, std::span<const Index> labels,
                               int ece_bins);

struct ExperimentResult {
  std::vector<std::string> variants;
  std::vector<Method> methods;
  // Ordered by evaluation sample, then method, then variant.
  std::vector<EvalRecord> records;
  std::vector<double> fractions;
  std::vector<std::vector<std::vector<double>>> mean_deletion;  // [method][variant][step]
  std::vector<std::vector<double>> mean_random;                 // [variant][step]
};

ExperimentResult run_experiment(const PreparedExperiment& px);

struct SweepRow {
  double temperature = 1.0;
  bool fitted = false;
  VariantQuality quality;
  std::vector<double> mean_area;  // per sweep method
};

struct SweepResult {
  std::vector<Method> methods;
  std::vector<SweepRow> rows;  // grid with the fitted temperature inserted, ascending
  SweepRow uncalibrated;       // reference through the same path
};

SweepResult temperature_sweep(const PreparedExperiment& px, std::span<const double> grid);

// A saliency method as seen by the stability experiment: normalized map of
// `image` for class `class_index` of base+calibrator.
struct StabilityMethod {
  std::string name;
  std::function<Tensor(const ClassifierModel&, const Calibrator&, Index class_index, const Tensor& image,
                       std::uint64_t seed)>
      saliency;
};

StabilityMethod builtin_stability_method(Method method, const SaliencyConfig& cfg);

struct StabilityPoint {
  Index sample_id = 0;
  std::string method;
  std::string variant;
  double lipschitz = 0.0;
};

struct FiveNumber {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};
// Quartiles by linear interpolation between order statistics.
FiveNumber five_number_summary(std::vector<double> values);

struct StabilitySummary {
  std::string method;
  std::string variant;
  Index n = 0;
  FiveNumber summary;
};

struct StabilityResult {
  std::vector<StabilityPoint> points;  // ordered by point, method, variant
  std::vector<StabilitySummary> summaries;
};

StabilityResult stability_experiment(const PreparedExperiment& px, std::span<const StabilityMethod> methods);

}  // namespace salcal
