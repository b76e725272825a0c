#include "salcal/layers.hpp"

#include <array>

#include "salcal/error.hpp"

namespace salcal {

namespace {

constexpr std::array<std::string_view, 10> kKindNames = {"conv2d",  "dense",   "relu", "maxpool2d", "avgpool2d",
                                                         "flatten", "softmax", "log",  "affine",    "scale"};

[[noreturn]] void mismatch(const LayerSpec& layer, const Shape& input, const std::string& expected, int index) {
  std::string where = index >= 0 ? "layer " + std::to_string(index) + " (" : "layer (";
  throw ShapeError(where + std::string(layer_kind_name(layer.kind)) + "): input shape " + shape_to_string(input) +
                   " does not match expected " + expected);
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) { return kKindNames.at(static_cast<std::size_t>(kind)); }

LayerKind parse_layer_kind(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == name) return static_cast<LayerKind>(i);
  }
  throw FormatError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::conv2d(Index in_channels, Index out_channels, Index kernel, Index stride, Index padding) {
  LayerSpec l;
  l.kind = LayerKind::kConv2d;
  l.in_features = in_channels;
  l.out_features = out_channels;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.weight = Tensor({kernel, kernel, in_channels, out_channels});
  l.bias = Tensor({out_channels});
  return l;
}

LayerSpec LayerSpec::dense(Index in, Index out) {
  LayerSpec l;
  l.kind = LayerKind::kDense;
  l.in_features = in;
  l.out_features = out;
  l.weight = Tensor({in, out});
  l.bias = Tensor({out});
  return l;
}

LayerSpec LayerSpec::affine(Index in, Index out) {
  LayerSpec l;
  l.kind = LayerKind::kAffine;
  l.in_features = in;
  l.out_features = out;
  l.weight = Tensor({out, in});
  l.bias = Tensor({out});
  return l;
}

LayerSpec LayerSpec::max_pool2d(Index kernel, Index stride) {
  LayerSpec l;
  l.kind = LayerKind::kMaxPool2d;
  l.kernel = kernel;
  l.stride = stride;
  return l;
}

LayerSpec LayerSpec::avg_pool2d(Index kernel, Index stride) {
  LayerSpec l = max_pool2d(kernel, stride);
  l.kind = LayerKind::kAvgPool2d;
  return l;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = LayerKind::kFlatten;
  return l;
}

LayerSpec LayerSpec::softmax() {
  LayerSpec l;
  l.kind = LayerKind::kSoftmax;
  return l;
}

LayerSpec LayerSpec::log(float floor) {
  LayerSpec l;
  l.kind = LayerKind::kLog;
  l.floor = floor;
  return l;
}

LayerSpec LayerSpec::scale(float factor) {
  LayerSpec l;
  l.kind = LayerKind::kScale;
  l.factor = factor;
  return l;
}

Shape layer_output_shape(const LayerSpec& layer, const Shape& input, int layer_index) {
  switch (layer.kind) {
    case LayerKind::kConv2d: {
      if (input.size() != 4 || input[3] != layer.in_features) {
        mismatch(layer, input, "[N, H, W, " + std::to_string(layer.in_features) + "]", layer_index);
      }
      const Index h = input[1] + 2 * layer.padding - layer.kernel;
      const Index w = input[2] + 2 * layer.padding - layer.kernel;
      if (h < 0 || w < 0) mismatch(layer, input, "spatial size >= kernel " + std::to_string(layer.kernel), layer_index);
      return {input[0], h / layer.stride + 1, w / layer.stride + 1, layer.out_features};
    }
    case LayerKind::kDense:
    case LayerKind::kAffine:
      if (input.size() != 2 || input[1] != layer.in_features) {
        mismatch(layer, input, "[N, " + std::to_string(layer.in_features) + "]", layer_index);
      }
      return {input[0], layer.out_features};
    case LayerKind::kMaxPool2d:
    case LayerKind::kAvgPool2d:
      if (input.size() != 4 || input[1] < layer.kernel || input[2] < layer.kernel) {
        mismatch(layer, input, "[N, H, W, C] with H, W >= " + std::to_string(layer.kernel), layer_index);
      }
      return {input[0], (input[1] - layer.kernel) / layer.stride + 1, (input[2] - layer.kernel) / layer.stride + 1,
              input[3]};
    case LayerKind::kFlatten: {
      if (input.size() < 2) mismatch(layer, input, "[N, ...]", layer_index);
      Index f = 1;
      for (std::size_t i = 1; i < input.size(); ++i) f *= input[i];
      return {input[0], f};
    }
    case LayerKind::kRelu:
    case LayerKind::kSoftmax:
    case LayerKind::kLog:
    case LayerKind::kScale:
      if (input.empty()) mismatch(layer, input, "non-empty shape", layer_index);
      return input;
  }
  return input;
}

NodeId record_layer(Tape& tape, const LayerSpec& layer, NodeId x, const NodeId* params, int layer_index) {
  layer_output_shape(layer, tape.value(x).shape(), layer_index);
  auto weights = [&]() -> std::pair<NodeId, NodeId> {
    if (params) return {params[0], params[1]};
    return {tape.leaf(layer.weight), tape.leaf(layer.bias)};
  };
  switch (layer.kind) {
    case LayerKind::kConv2d: {
      auto [w, b] = weights();
      return ops::conv2d(tape, x, w, b, layer.stride, layer.padding);
    }
    case LayerKind::kDense: {
      auto [w, b] = weights();
      return ops::dense(tape, x, w, b);
    }
    case LayerKind::kAffine: {
      auto [w, b] = weights();
      return ops::affine(tape, x, w, b);
    }
    case LayerKind::kRelu: return ops::relu(tape, x);
    case LayerKind::kMaxPool2d: return ops::max_pool2d(tape, x, layer.kernel, layer.stride);
    case LayerKind::kAvgPool2d: return ops::avg_pool2d(tape, x, layer.kernel, layer.stride);
    case LayerKind::kFlatten:
      return ops::reshape(tape, x, layer_output_shape(layer, tape.value(x).shape(), layer_index));
    case LayerKind::kSoftmax: return ops::softmax(tape, x);
    case LayerKind::kLog: return ops::log(tape, x, layer.floor);
    case LayerKind::kScale: return ops::scale(tape, x, layer.factor);
  }
  throw InvalidArgument("unsupported layer kind");
}

Tensor apply_layer(const LayerSpec& layer, const Tensor& input) {
  const bool row_vector = input.rank() == 1 && (layer.kind == LayerKind::kDense || layer.kind == LayerKind::kAffine ||
                                                layer.kind == LayerKind::kSoftmax || layer.kind == LayerKind::kLog);
  Tape tape;
  const NodeId x = tape.leaf(row_vector ? input.reshaped({1, input.size()}) : input);
  const NodeId y = record_layer(tape, layer, x);
  Tensor out = tape.value(y);
  if (row_vector) out = out.reshaped({out.size()});
  return out;
}

}  // namespace salcal
