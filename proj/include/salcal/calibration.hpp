#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "salcal/model.hpp"

namespace salcal {

// softmax(L / T). T = 1 is the identity.
struct TemperatureScaler {
  double temperature = 1.0;
};

// softmax(W ln(max(F(x), log_floor)) + b) applied to the base scores F(x).
struct DirichletMap {
  Eigen::MatrixXf weights;
  Eigen::VectorXf bias;
  float log_floor = 1e-12f;

  static DirichletMap identity(Index classes);
};

struct IdentityCalibrator {};

using Calibrator = std::variant<IdentityCalibrator, TemperatureScaler, DirichletMap>;

std::string calibrator_kind(const Calibrator& calibrator);

// Calibrated logits (the pre-softmax output) from a base-logit node [N, C].
NodeId record_calibrated_logits(Tape& tape, const Calibrator& calibrator, NodeId logits);

// Calibrated scores for base logits [N, C] (or a single row [C]).
Tensor calibrated_scores(const Calibrator& calibrator, const Tensor& logits);

Tensor apply_temperature(const TemperatureScaler& scaler, const Tensor& logits);
Tensor apply_dirichlet(const DirichletMap& map, const Tensor& scores);

// Mean negative log-likelihood of softmax(L / T).
double temperature_nll(std::span<const Tensor> logits, std::span<const Index> labels, double temperature);

// Golden-section search for the NLL-minimizing temperature on [0.05, 20].
TemperatureScaler fit_temperature(std::span<const Tensor> logits, std::span<const Index> labels);

struct DirichletFitOptions {
  double lambda_off_diagonal = 1e-3;
  double lambda_bias = 1e-3;
  double learning_rate = 1e-2;
  Index max_steps = 2000;
  Index patience = 50;         // window of the relative-improvement test
  double min_improvement = 1e-7;
  float log_floor = 1e-12f;
};

// Mean NLL of the Dirichlet-calibrated scores (no regularization term).
double dirichlet_nll(const DirichletMap& map, std::span<const Tensor> scores, std::span<const Index> labels);

// Full-batch Adam from (I, 0) on mean NLL plus L2 penalties on the
// off-diagonal weights and the bias. Returns the best iterate seen, so the
// fitted objective never exceeds the one at the identity map.
DirichletMap fit_dirichlet(std::span<const Tensor> scores, std::span<const Index> labels,
                           const DirichletFitOptions& options = {});

// A base classifier seen through a calibration map. Gradients flow through
// the map.
class CalibratedModel {
 public:
  CalibratedModel(std::shared_ptr<const ClassifierModel> base, Calibrator calibrator, std::string tag);

  const ClassifierModel& base() const { return *base_; }
  const std::shared_ptr<const ClassifierModel>& base_ptr() const { return base_; }
  const Calibrator& calibrator() const { return calibrator_; }
  const std::string& tag() const { return tag_; }
  Index num_classes() const { return base_->num_classes; }

  // `logits` are the calibrated logits.
  Prediction predict(const Tensor& image) const;
  // Calibrated scores [N, C] for a batch [N, H, W, C].
  Tensor scores(const Tensor& batch) const;
  Tensor input_gradient(const Tensor& image, Index class_index, GradientTarget at) const;

 private:
  std::shared_ptr<const ClassifierModel> base_;
  Calibrator calibrator_;
  std::string tag_;
};

struct ScoresAndGradients {
  Tensor scores;     // [N, C], calibrated
  Tensor gradients;  // [N, H, W, C]
};

// For each row n of `batch`, the gradient of output `classes[n]` of the
// model calibrated by `*calibrators[n]`. Rows share one pass through the
// base model.
ScoresAndGradients score_gradients(const ClassifierModel& base, std::span<const Calibrator* const> calibrators,
                                   const Tensor& batch, std::span<const Index> classes, GradientTarget at);

struct CalibratorProvenance {
  std::uint64_t seed = 0;
  std::string calibration_set_hash;
};

// FNV-1a over the float bytes of the inputs and the labels, as hex.
std::string calibration_set_hash(std::span<const Tensor> inputs, std::span<const Index> labels);

std::string calibrator_to_json(const Calibrator& calibrator, const CalibratorProvenance& provenance);
Calibrator calibrator_from_json(const std::string& text, CalibratorProvenance* provenance = nullptr);
void save_calibrator(const std::filesystem::path& path, const Calibrator& calibrator,
                     const CalibratorProvenance& provenance);
Calibrator load_calibrator(const std::filesystem::path& path, CalibratorProvenance* provenance = nullptr);

}  // namespace salcal
