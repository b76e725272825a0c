#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "salcal/calibration.hpp"
#include "salcal/dataset.hpp"
#include "salcal/error.hpp"
#include "salcal/evaluation.hpp"
#include "salcal/saliency.hpp"

namespace salcal {

// Invalid, unknown or inconsistent experiment settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::int64_t kConfigSchemaVersion = 1;

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | directory
  SynthSpec synthetic{.num_classes = 2, .per_class = {1500, 1500}, .noise = 0.3f};
  std::filesystem::path directory;
  std::filesystem::path labels_csv;
};

struct ModelConfig {
  std::filesystem::path path;        // load this model instead of training when set
  std::string architecture = "cnn";  // cnn | mlp
  Index conv1 = 8;
  Index conv2 = 16;
  Index hidden = 64;
  Index epochs = 20;
  Index batch_size = 32;
  double learning_rate = 3e-3;
};

struct SplitConfig {
  Index train = 2000;
  Index calibration = 500;
  Index evaluation = 500;
};

struct CalibrationConfig {
  std::vector<std::string> methods{"temperature", "dirichlet"};
  bool include_identity = false;
  int ece_bins = 15;
  DirichletFitOptions dirichlet;
};

struct MetricsConfig {
  Index deletion_steps = 100;
  RandomBaselineConfig random_baseline;
  bool ssim = true;
  bool otsu_tv = true;
};

struct SweepConfig {
  std::vector<double> temperatures{0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
  std::vector<Method> methods{Method::kSensitivity};
  Index samples = 100;  // first evaluation samples used for the deletion areas
};

struct StabilityConfig {
  Index points = 50;
  LipschitzConfig lipschitz;
  std::vector<Method> methods{Method::kSensitivity, Method::kIntegratedGradients};
  bool long_run = false;  // required for RISE and meaningful perturbation
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "salcal-out";
  int jobs = 1;
  DatasetConfig dataset;
  ModelConfig model;
  SplitConfig split;
  CalibrationConfig calibration;
  std::vector<Method> methods{Method::kSensitivity, Method::kIntegratedGradients, Method::kRise,
                              Method::kMeaningfulPerturbation};
  SaliencyConfig saliency{.sensitivity = {}, .integrated_gradients = {}, .rise = {.masks = 1000},
                          .meaningful_perturbation = {.steps = 300}, .lrp = {}};
  Index explain_samples = 10;  // evaluation samples whose maps `explain` writes
  MetricsConfig metrics;
  SweepConfig sweep;
  StabilityConfig stability;
};

// TOML, schema_version 1. Unknown keys, wrong types and inconsistent values
// raise ConfigError naming the key.
ExperimentConfig parse_config(const std::string& toml_text, const std::string& source_name = "config");
ExperimentConfig load_config(const std::filesystem::path& path);

// Checks value ranges and cross-field consistency.
void validate_config(const ExperimentConfig& config);

// Canonical JSON form of every setting (sorted keys); the basis of the hash.
nlohmann::json config_to_json(const ExperimentConfig& config);
// Hex FNV-1a of the compact canonical JSON.
std::string config_hash(const nlohmann::json& canonical);

}  // namespace salcal
