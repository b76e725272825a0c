#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "salcal/calibration.hpp"

namespace salcal {

enum class Method { kSensitivity, kIntegratedGradients, kRise, kMeaningfulPerturbation, kLrp };

std::string_view method_name(Method method);
Method parse_method(std::string_view name);

// H x W map in [0, 1] explaining one (sample, variant, class).
struct SaliencyMap {
  Tensor values;  // [H, W]
  Index explained_class = 0;
  std::string method;
  std::string variant;
};

struct SensitivityConfig {
  bool absolute = false;  // channel-sum of |gradient| instead of the signed sum
};

struct IgConfig {
  Index steps = 30;
  bool black_reference = true;
  bool white_reference = true;
};

struct RiseConfig {
  Index masks = 4000;
  Index grid = 8;  // low-resolution mask is grid x grid
  double keep_probability = 0.6;
};

struct MpConfig {
  double lambda = 0.1;  // weight of the mean of (1 - m)
  double beta = 0.4;    // weight of the mean absolute neighbour difference of m
  double learning_rate = 0.1;
  Index steps = 600;
  Index checkpoint_every = 50;
};

struct LrpConfig {
  double epsilon = 1e-6;
};

// (v - min) / (max - min); a constant map becomes all zeros.
Tensor normalize_minmax(const Tensor& raw);

// Several calibrations of one base model explained on the same input. Every
// method below evaluates the base model once per perturbed input and applies
// each calibrator to the shared logits. Entry v explains classes[v] of the
// model calibrated by *calibrators[v].
struct VariantSet {
  const ClassifierModel* base = nullptr;
  std::vector<const Calibrator*> calibrators;
  std::vector<Index> classes;

  std::size_t size() const { return calibrators.size(); }
};

VariantSet single_variant(const CalibratedModel& model, Index class_index);

// Raw (pre-normalization) maps, one [H, W] tensor per variant.
std::vector<Tensor> sensitivity_raw(const VariantSet& variants, const Tensor& image, const SensitivityConfig& cfg = {});

struct IgRaw {
  std::vector<Tensor> combined;                    // per variant, mean over references
  std::vector<std::vector<Tensor>> per_reference;  // [variant][reference], black first
};
IgRaw integrated_gradients_raw(const VariantSet& variants, const Tensor& image, const IgConfig& cfg = {});

std::vector<Tensor> rise_raw(const VariantSet& variants, const Tensor& image, const RiseConfig& cfg,
                             std::uint64_t seed);
// The masks (already upsampled, H x W) are supplied by the caller.
std::vector<Tensor> rise_with_masks(const VariantSet& variants, const Tensor& image, std::span<const Image2D> masks,
                                    double keep_probability);
// The upsampled and clipped masks rise_raw draws for `seed`.
std::vector<Image2D> rise_masks(Index height, Index width, const RiseConfig& cfg, std::uint64_t seed);

struct MpResult {
  Tensor raw;                       // 1 - m
  double objective = 0.0;           // at the returned mask
  std::vector<double> checkpoints;  // every cfg.checkpoint_every steps from step 0, then the final value
};
std::vector<MpResult> meaningful_perturbation_raw(const VariantSet& variants, const Tensor& image,
                                                  const MpConfig& cfg = {});

// Objective of a mask for one calibrated model: lambda * mean(1 - m) +
// beta * TV(m) + score of `class_index` on image * m.
double mp_objective(const ClassifierModel& base, const Calibrator& calibrator, const Tensor& image, const Image2D& mask,
                    Index class_index, const MpConfig& cfg);

std::vector<Tensor> lrp_raw(const VariantSet& variants, const Tensor& image, const LrpConfig& cfg = {});

// Relevance at the input, [H, W, C], before the channel sum.
std::vector<double> lrp_input_relevance(const ClassifierModel& base, const Tensor& image, Index class_index,
                                        double root_relevance, const LrpConfig& cfg = {});

// All settings of the five methods.
struct SaliencyConfig {
  SensitivityConfig sensitivity;
  IgConfig integrated_gradients;
  RiseConfig rise;
  MpConfig meaningful_perturbation;
  LrpConfig lrp;
};

// Normalized maps of one method for every variant. `seed` feeds RISE only.
std::vector<Tensor> explain(Method method, const VariantSet& variants, const Tensor& image,
                            const SaliencyConfig& cfg, std::uint64_t seed);

// Single-model convenience wrappers returning normalized maps.
SaliencyMap sensitivity(const CalibratedModel& model, const Tensor& image, Index class_index,
                        const SensitivityConfig& cfg = {});
SaliencyMap integrated_gradients(const CalibratedModel& model, const Tensor& image, Index class_index,
                                 const IgConfig& cfg = {});
SaliencyMap rise(const CalibratedModel& model, const Tensor& image, Index class_index, const RiseConfig& cfg,
                 std::uint64_t seed);
SaliencyMap meaningful_perturbation(const CalibratedModel& model, const Tensor& image, Index class_index,
                                    const MpConfig& cfg = {});
SaliencyMap lrp(const CalibratedModel& model, const Tensor& image, Index class_index, const LrpConfig& cfg = {});

// 16-bit binary PGM, value round(65535 v), plus a JSON sidecar next to it
// (same stem, .json).
struct SaliencyFileInfo {
  std::uint64_t seed = 0;
  std::string config_hash;
};
void save_saliency_pgm(const std::filesystem::path& path, const SaliencyMap& map, const SaliencyFileInfo& info);
Tensor load_saliency_pgm(const std::filesystem::path& path);

// Raw float maps: "CTSM", u32 height, u32 width, little-endian f32 values.
void save_raw_map(const std::filesystem::path& path, const Tensor& map);
Tensor load_raw_map(const std::filesystem::path& path);

}  // namespace salcal
