#include "salcal/model.hpp"

#include <cmath>
#include <string>

#include "salcal/error.hpp"
#include "salcal/rng.hpp"

namespace salcal {

namespace {

constexpr Index kForwardChunk = 128;

Shape batched(const Shape& sample, Index n) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

void check_image(const ClassifierModel& model, const Tensor& image) {
  if (image.shape() != model.input_shape) {
    throw ShapeError("input shape " + shape_to_string(image.shape()) + " does not match model input " +
                     shape_to_string(model.input_shape));
  }
}

}  // namespace

void validate_model(const ClassifierModel& model) {
  if (model.input_shape.size() != 3) throw ShapeError("model input shape must be {H, W, C}");
  if (model.num_classes < 2) throw InvalidArgument("a classifier needs at least 2 classes");
  if (model.layers.empty()) throw InvalidArgument("a classifier needs at least one layer and a final softmax");
  if (model.layers.back().kind != LayerKind::kSoftmax) throw InvalidArgument("final layer must be softmax");
  if (model.layers.size() < 2) throw InvalidArgument("a classifier needs at least one layer before the softmax");
  Shape shape = batched(model.input_shape, 1);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    shape = layer_output_shape(l, shape, static_cast<int>(i));
    if (l.has_weights()) {
      Shape expected_w = l.kind == LayerKind::kConv2d ? Shape{l.kernel, l.kernel, l.in_features, l.out_features}
                         : l.kind == LayerKind::kDense ? Shape{l.in_features, l.out_features}
                                                       : Shape{l.out_features, l.in_features};
      if (l.weight.shape() != expected_w || l.bias.shape() != Shape{l.out_features}) {
        throw ShapeError("layer " + std::to_string(i) + ": weight " + shape_to_string(l.weight.shape()) +
                         " or bias " + shape_to_string(l.bias.shape()) + " inconsistent with expected " +
                         shape_to_string(expected_w));
      }
    }
  }
  if (shape != Shape{1, model.num_classes}) {
    throw ShapeError("model output " + shape_to_string(shape) + " is not [1, " + std::to_string(model.num_classes) +
                     "]");
  }
}

Index argmax(std::span<const float> values) {
  Index best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<Index>(i);
  }
  return best;
}

NodeId record_logits(Tape& tape, const ClassifierModel& model, NodeId batch, const LayerParams* params) {
  const Shape& in = tape.value(batch).shape();
  if (in.size() != 4 || Shape(in.begin() + 1, in.end()) != model.input_shape) {
    throw ShapeError("batch shape " + shape_to_string(in) + " does not match model input " +
                     shape_to_string(model.input_shape));
  }
  NodeId x = batch;
  for (std::size_t i = 0; i + 1 < model.layers.size(); ++i) {
    const NodeId* p = params && model.layers[i].has_weights() ? (*params)[i].data() : nullptr;
    x = record_layer(tape, model.layers[i], x, p, static_cast<int>(i));
  }
  return x;
}

Tensor forward_logits(const ClassifierModel& model, const Tensor& batch) {
  if (batch.rank() != 4) throw ShapeError("forward_logits expects [N, H, W, C], got " + shape_to_string(batch.shape()));
  const Index n = batch.dim(0);
  Tensor out({n, model.num_classes});
  for (Index begin = 0; begin < n; begin += kForwardChunk) {
    const Index count = std::min(kForwardChunk, n - begin);
    Tape tape;
    const NodeId x = tape.leaf(count == n ? batch : batch.slice_rows(begin, count));
    const Tensor& logits = tape.value(record_logits(tape, model, x));
    std::copy(logits.data(), logits.data() + logits.size(), out.data() + begin * model.num_classes);
  }
  return out;
}

Prediction predict(const ClassifierModel& model, const Tensor& image) {
  check_image(model, image);
  Prediction p;
  p.logits = forward_logits(model, image.reshaped(batched(model.input_shape, 1))).reshaped({model.num_classes});
  p.scores = apply_layer(model.layers.back(), p.logits);
  p.predicted_class = argmax(p.scores.values());
  return p;
}

Tensor input_gradient(const ClassifierModel& model, const Tensor& image, Index class_index, GradientTarget at) {
  check_image(model, image);
  if (class_index < 0 || class_index >= model.num_classes) {
    throw InvalidArgument("class index " + std::to_string(class_index) + " out of range [0, " +
                          std::to_string(model.num_classes) + ")");
  }
  Tape tape;
  const NodeId x = tape.leaf(image.reshaped(batched(model.input_shape, 1)), true);
  NodeId out = record_logits(tape, model, x);
  if (at == GradientTarget::kScore) out = ops::softmax(tape, out);
  out = ops::sum(tape, ops::pick(tape, out, {class_index}));
  return gradient(tape, out, x).reshaped(model.input_shape);
}

std::vector<LayerSpec> default_architecture(Index height, Index width, Index channels, Index classes, Index conv1,
                                            Index conv2) {
  return {LayerSpec::conv2d(channels, conv1, 3, 1, 1),
          LayerSpec::relu(),
          LayerSpec::max_pool2d(2, 2),
          LayerSpec::conv2d(conv1, conv2, 3, 1, 1),
          LayerSpec::relu(),
          LayerSpec::max_pool2d(2, 2),
          LayerSpec::flatten(),
          LayerSpec::dense(conv2 * (height / 4) * (width / 4), classes),
          LayerSpec::softmax()};
}

std::vector<LayerSpec> mlp_architecture(Index height, Index width, Index channels, Index classes, Index hidden) {
  return {LayerSpec::flatten(), LayerSpec::dense(height * width * channels, hidden), LayerSpec::relu(),
          LayerSpec::dense(hidden, classes), LayerSpec::softmax()};
}

void initialize_weights(ClassifierModel& model, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {hash_tag("init")}));
  for (LayerSpec& l : model.layers) {
    if (!l.has_weights()) continue;
    const Index fan_in = l.kind == LayerKind::kConv2d ? l.kernel * l.kernel * l.in_features : l.in_features;
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (float& w : l.weight.values()) w = static_cast<float>(normal(rng));
    l.bias = Tensor(l.bias.shape());
  }
}

}  // namespace salcal
