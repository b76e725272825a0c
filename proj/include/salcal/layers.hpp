#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "salcal/autodiff.hpp"
#include "salcal/tensor.hpp"

namespace salcal {

enum class LayerKind { kConv2d, kDense, kRelu, kMaxPool2d, kAvgPool2d, kFlatten, kSoftmax, kLog, kAffine, kScale };

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

// One layer of a feed-forward network, with its weights where the kind has
// any. Weight layouts:
//   conv2d  weight [K, K, in, out], bias [out]
//   dense   weight [in, out],       bias [out]
//   affine  weight [out, in],       bias [out]
struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  Index kernel = 0;
  Index stride = 1;
  Index padding = 0;
  Index in_features = 0;   // channels for conv2d
  Index out_features = 0;  // channels for conv2d
  float factor = 1.0f;     // scale
  float floor = 0.0f;      // log
  Tensor weight;
  Tensor bias;

  static LayerSpec conv2d(Index in_channels, Index out_channels, Index kernel, Index stride = 1, Index padding = 0);
  static LayerSpec dense(Index in, Index out);
  static LayerSpec affine(Index in, Index out);
  static LayerSpec relu() { return {}; }
  static LayerSpec max_pool2d(Index kernel, Index stride);
  static LayerSpec avg_pool2d(Index kernel, Index stride);
  static LayerSpec flatten();
  static LayerSpec softmax();
  static LayerSpec log(float floor);
  static LayerSpec scale(float factor);

  bool has_weights() const { return kind == LayerKind::kConv2d || kind == LayerKind::kDense || kind == LayerKind::kAffine; }
  bool operator==(const LayerSpec&) const = default;
};

// Output shape for a batched input ([N, H, W, C] images, [N, F] vectors).
// Throws ShapeError naming `layer_index` (when >= 0) and both shapes.
Shape layer_output_shape(const LayerSpec& layer, const Shape& input, int layer_index = -1);

// Records `layer` applied to node `x`. Weights enter the tape as constant
// leaves unless `params` supplies existing (weight, bias) nodes.
NodeId record_layer(Tape& tape, const LayerSpec& layer, NodeId x, const NodeId* params = nullptr,
                    int layer_index = -1);

// Pure forward evaluation of a single layer. The input carries a leading batch
// axis; for dense, affine, softmax and log a rank-1 input is treated as one
// row. Repeated calls on the same input are bit-identical.
Tensor apply_layer(const LayerSpec& layer, const Tensor& input);

}  // namespace salcal
