#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "salcal/tensor.hpp"

namespace salcal {

using NodeId = std::size_t;

enum class OpKind {
  kLeaf,
  kConv2d,
  kDense,
  kAffine,
  kRelu,
  kMaxPool2d,
  kAvgPool2d,
  kReshape,
  kSoftmax,
  kLog,
  kScale,
  kMul,
  kPick,
  kSum,
  kSoftmaxCrossEntropy,
};

const char* op_name(OpKind kind);

class Tape;

// One recorded operation. `backward` reads this node's gradient and
// accumulates into the gradients of its inputs.
struct TapeNode {
  OpKind kind = OpKind::kLeaf;
  std::vector<NodeId> inputs;
  Tensor value;
  bool requires_grad = false;
  std::function<void(Tape&, NodeId)> backward;
};

// Append-only record of a forward computation. Node ids are assigned in
// evaluation order, so the reverse of the insertion order is a valid
// topological order for the backward sweep.
//
// A tape is not thread safe; build one per concurrent computation.
class Tape {
 public:
  NodeId leaf(Tensor value, bool requires_grad = false);
  NodeId push(OpKind kind, std::vector<NodeId> inputs, Tensor value,
              std::function<void(Tape&, NodeId)> backward);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  const TapeNode& node(NodeId id) const { return nodes_.at(id); }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient accumulator of `id`, allocated (zero) on first use. Only valid
  // during a backward sweep.
  Tensor& grad(NodeId id);
  bool has_grad(NodeId id) const { return id < grads_.size() && !grads_[id].empty(); }

  // True when `target` is `from` or one of its ancestors.
  bool depends_on(NodeId from, NodeId target) const;

  // Vector-Jacobian product: seeds d(output) = `seed` and returns the
  // accumulated gradient of every node in `wrt`.
  std::vector<Tensor> backward(NodeId output, const Tensor& seed, std::span<const NodeId> wrt);

 private:
  std::vector<TapeNode> nodes_;
  std::vector<Tensor> grads_;
};

// d(output)/d(wrt) for a single-element output.
Tensor gradient(Tape& tape, NodeId output_scalar, NodeId wrt);

// Central differences. The actual float step x[i]±h is used as the
// denominator, so rounding of the perturbed coordinate does not bias the
// estimate.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h);

// Differentiable operations. Image tensors are channel-last [N, H, W, C],
// vectors are [N, F]. All accumulations are carried out in double precision
// and rounded to float on output.
namespace ops {

// w: [KH, KW, Cin, Cout], b: [Cout]; zero padding.
NodeId conv2d(Tape& tape, NodeId x, NodeId w, NodeId b, Index stride, Index padding);
// w: [F, O], b: [O]; y = x w + b.
NodeId dense(Tape& tape, NodeId x, NodeId w, NodeId b);
// w: [O, F], b: [O]; y = w x + b per row.
NodeId affine(Tape& tape, NodeId x, NodeId w, NodeId b);
NodeId relu(Tape& tape, NodeId x);
NodeId max_pool2d(Tape& tape, NodeId x, Index kernel, Index stride);
NodeId avg_pool2d(Tape& tape, NodeId x, Index kernel, Index stride);
NodeId reshape(Tape& tape, NodeId x, Shape shape);
// Softmax over the last axis.
NodeId softmax(Tape& tape, NodeId x);
// ln(max(x, floor)); gradient is zero where the floor is active.
NodeId log(Tape& tape, NodeId x, float floor);
NodeId scale(Tape& tape, NodeId x, float factor);
NodeId mul(Tape& tape, NodeId a, NodeId b);
// x: [N, C] -> [N], picking column classes[n] of row n.
NodeId pick(Tape& tape, NodeId x, std::vector<Index> classes);
NodeId sum(Tape& tape, NodeId x);
// Mean negative log-likelihood of softmax(logits) for the given labels.
NodeId softmax_cross_entropy(Tape& tape, NodeId logits, std::vector<Index> labels);

}  // namespace ops

}  // namespace salcal
