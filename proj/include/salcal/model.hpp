#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "salcal/autodiff.hpp"
#include "salcal/layers.hpp"
#include "salcal/tensor.hpp"

namespace salcal {

// Feed-forward image classifier. The last layer is a softmax over
// `num_classes`; everything before it produces the logits.
struct ClassifierModel {
  Shape input_shape;  // {H, W, C}
  Index num_classes = 0;
  std::vector<LayerSpec> layers;
  std::optional<double> train_accuracy;

  Index height() const { return input_shape.at(0); }
  Index width() const { return input_shape.at(1); }
  Index channels() const { return input_shape.at(2); }
};

// Checks the layer chain, the trailing softmax and C >= 2. Throws ShapeError
// or InvalidArgument.
void validate_model(const ClassifierModel& model);

// Index of the largest entry; ties go to the lowest index.
Index argmax(std::span<const float> values);

// Per-layer (weight, bias) node pairs when training; null entries for
// layers without weights.
using LayerParams = std::vector<std::array<NodeId, 2>>;

// Records the logit computation for a batch node [N, H, W, C].
NodeId record_logits(Tape& tape, const ClassifierModel& model, NodeId batch, const LayerParams* params = nullptr);

// Logits [N, C] for a batch [N, H, W, C]; evaluated in fixed-size chunks.
Tensor forward_logits(const ClassifierModel& model, const Tensor& batch);

struct Prediction {
  Tensor logits;  // [C]
  Tensor scores;  // [C]
  Index predicted_class = 0;
};

Prediction predict(const ClassifierModel& model, const Tensor& image);

enum class GradientTarget { kScore, kLogit };

// d(score or logit of `class_index`)/d(image), shaped like the image.
Tensor input_gradient(const ClassifierModel& model, const Tensor& image, Index class_index, GradientTarget at);

// conv(C->c1, 3x3) relu maxpool conv(c1->c2, 3x3) relu maxpool flatten dense softmax.
std::vector<LayerSpec> default_architecture(Index height, Index width, Index channels, Index classes,
                                            Index conv1 = 16, Index conv2 = 32);
// flatten dense relu dense softmax.
std::vector<LayerSpec> mlp_architecture(Index height, Index width, Index channels, Index classes, Index hidden);

// He-normal weights and zero biases, deterministic in `seed`.
void initialize_weights(ClassifierModel& model, std::uint64_t seed);

}  // namespace salcal
