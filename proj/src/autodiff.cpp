#include "salcal/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "salcal/error.hpp"

namespace salcal {

namespace {

using MatD = RowMatrix<double>;
using MapF = Eigen::Map<const RowMatrix<float>>;

MatD to_double(const Tensor& t, Index rows, Index cols) { return MapF(t.data(), rows, cols).cast<double>(); }

// Adds a double matrix into a float accumulator of the same element count.
void add_into(Tensor& acc, const MatD& m) {
  Eigen::Map<RowMatrix<float>>(acc.data(), m.rows(), m.cols()) += m.cast<float>();
}

Tensor from_double(Shape shape, const MatD& m) {
  std::vector<float> data(static_cast<std::size_t>(m.size()));
  Eigen::Map<RowMatrix<float>>(data.data(), m.rows(), m.cols()) = m.cast<float>();
  return Tensor(std::move(shape), std::move(data));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " +
                     shape_to_string(t.shape()));
  }
}

struct ConvGeometry {
  Index n, h, w, cin, kh, kw, cout, stride, pad, ho, wo;
  Index rows() const { return n * ho * wo; }
  Index depth() const { return kh * kw * cin; }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, const Tensor& b, Index stride, Index pad) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d weights");
  if (stride < 1 || pad < 0) throw InvalidArgument("conv2d: stride must be >= 1 and padding >= 0");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(1), w.dim(3), stride, pad, 0, 0};
  if (w.dim(2) != g.cin) {
    throw ShapeError("conv2d: input " + shape_to_string(x.shape()) + " has " + std::to_string(g.cin) +
                     " channels but weights " + shape_to_string(w.shape()) + " expect " +
                     std::to_string(w.dim(2)));
  }
  if (b.size() != g.cout) throw ShapeError("conv2d: bias " + shape_to_string(b.shape()) + " does not match weights");
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) {
    throw ShapeError("conv2d: kernel larger than padded input " + shape_to_string(x.shape()));
  }
  return g;
}

MatD im2col(const Tensor& x, const ConvGeometry& g) {
  MatD cols = MatD::Zero(g.rows(), g.depth());
  const float* src = x.data();
  for (Index n = 0; n < g.n; ++n) {
    for (Index oy = 0; oy < g.ho; ++oy) {
      for (Index ox = 0; ox < g.wo; ++ox) {
        double* row = cols.row((n * g.ho + oy) * g.wo + ox).data();
        for (Index ky = 0; ky < g.kh; ++ky) {
          const Index iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (Index kx = 0; kx < g.kw; ++kx) {
            const Index ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            const float* px = src + ((n * g.h + iy) * g.w + ix) * g.cin;
            double* dst = row + (ky * g.kw + kx) * g.cin;
            for (Index c = 0; c < g.cin; ++c) dst[c] = px[c];
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const MatD& cols, const ConvGeometry& g, Tensor& dx) {
  std::vector<double> acc(static_cast<std::size_t>(dx.size()), 0.0);
  for (Index n = 0; n < g.n; ++n) {
    for (Index oy = 0; oy < g.ho; ++oy) {
      for (Index ox = 0; ox < g.wo; ++ox) {
        const double* row = cols.row((n * g.ho + oy) * g.wo + ox).data();
        for (Index ky = 0; ky < g.kh; ++ky) {
          const Index iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (Index kx = 0; kx < g.kw; ++kx) {
            const Index ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            double* px = acc.data() + ((n * g.h + iy) * g.w + ix) * g.cin;
            const double* srcp = row + (ky * g.kw + kx) * g.cin;
            for (Index c = 0; c < g.cin; ++c) px[c] += srcp[c];
          }
        }
      }
    }
  }
  float* out = dx.data();
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] += static_cast<float>(acc[i]);
}

struct PoolGeometry {
  Index n, h, w, c, k, stride, ho, wo;
};

PoolGeometry pool_geometry(const Tensor& x, Index kernel, Index stride, const char* op) {
  require_rank(x, 4, op);
  if (kernel < 1 || stride < 1) throw InvalidArgument(std::string(op) + ": kernel and stride must be >= 1");
  if (x.dim(1) < kernel || x.dim(2) < kernel) {
    throw ShapeError(std::string(op) + ": window " + std::to_string(kernel) + " larger than input " +
                     shape_to_string(x.shape()));
  }
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel, stride,
          (x.dim(1) - kernel) / stride + 1, (x.dim(2) - kernel) / stride + 1};
}

// Rows of a tensor whose last axis is the feature axis.
std::pair<Index, Index> rows_cols(const Tensor& t) {
  const Index cols = t.shape().back();
  return {t.size() / cols, cols};
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kDense: return "dense";
    case OpKind::kAffine: return "affine";
    case OpKind::kRelu: return "relu";
    case OpKind::kMaxPool2d: return "maxpool2d";
    case OpKind::kAvgPool2d: return "avgpool2d";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLog: return "log";
    case OpKind::kScale: return "scale";
    case OpKind::kMul: return "mul";
    case OpKind::kPick: return "pick";
    case OpKind::kSum: return "sum";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "?";
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
  value.check_finite("leaf");
  nodes_.push_back(TapeNode{OpKind::kLeaf, {}, std::move(value), requires_grad, {}});
  return nodes_.size() - 1;
}

NodeId Tape::push(OpKind kind, std::vector<NodeId> inputs, Tensor value,
                  std::function<void(Tape&, NodeId)> backward) {
  value.check_finite(op_name(kind));
  bool needs = false;
  for (NodeId in : inputs) {
    if (in >= nodes_.size()) throw InvalidArgument(std::string(op_name(kind)) + ": input node not on tape");
    needs = needs || nodes_[in].requires_grad;
  }
  nodes_.push_back(TapeNode{kind, std::move(inputs), std::move(value), needs,
                            needs ? std::move(backward) : std::function<void(Tape&, NodeId)>{}});
  return nodes_.size() - 1;
}

Tensor& Tape::grad(NodeId id) {
  if (grads_.size() != nodes_.size()) grads_.resize(nodes_.size());
  Tensor& g = grads_.at(id);
  if (g.empty()) g = Tensor(nodes_[id].value.shape());
  return g;
}

bool Tape::depends_on(NodeId from, NodeId target) const {
  if (from >= nodes_.size() || target >= nodes_.size() || target > from) return false;
  std::vector<char> seen(from + 1, 0);
  std::vector<NodeId> stack{from};
  while (!stack.empty()) {
    const NodeId id = stack.back();
    stack.pop_back();
    if (id == target) return true;
    if (seen[id]) continue;
    seen[id] = 1;
    for (NodeId in : nodes_[id].inputs) {
      if (in >= target) stack.push_back(in);
    }
  }
  return false;
}

std::vector<Tensor> Tape::backward(NodeId output, const Tensor& seed, std::span<const NodeId> wrt) {
  if (output >= nodes_.size()) throw InvalidArgument("backward: output node not on tape");
  if (seed.shape() != nodes_[output].value.shape()) {
    throw ShapeError("backward: seed " + shape_to_string(seed.shape()) + " does not match output " +
                     shape_to_string(nodes_[output].value.shape()));
  }
  grads_.assign(nodes_.size(), Tensor());
  grads_[output] = seed;
  for (NodeId id = output + 1; id-- > 0;) {
    const TapeNode& n = nodes_[id];
    if (n.requires_grad && n.backward && has_grad(id)) n.backward(*this, id);
  }
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (NodeId w : wrt) {
    if (w >= nodes_.size()) throw InvalidArgument("backward: wrt node not on tape");
    out.push_back(has_grad(w) ? std::move(grads_[w]) : Tensor(nodes_[w].value.shape()));
  }
  grads_.clear();
  for (const Tensor& g : out) g.check_finite("backward");
  return out;
}

Tensor gradient(Tape& tape, NodeId output_scalar, NodeId wrt) {
  if (output_scalar >= tape.size() || tape.value(output_scalar).size() != 1) {
    throw InvalidArgument("gradient: output must be a single scalar node on the tape");
  }
  if (wrt >= tape.size() || !tape.requires_grad(wrt) || !tape.depends_on(output_scalar, wrt)) {
    throw InvalidArgument("gradient: wrt is not a differentiable input of the output on this tape");
  }
  const NodeId ids[] = {wrt};
  Tensor seed = Tensor::filled(tape.value(output_scalar).shape(), 1.0f);
  return std::move(tape.backward(output_scalar, seed, ids).front());
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_difference_gradient: step must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const float original = x[i];
    const float up = static_cast<float>(original + h);
    const float down = static_cast<float>(original - h);
    const double step = static_cast<double>(up) - static_cast<double>(down);
    if (step == 0.0) throw InvalidArgument("finite_difference_gradient: step vanishes in float precision");
    probe[i] = up;
    const double fp = f(probe);
    probe[i] = down;
    const double fm = f(probe);
    probe[i] = original;
    g[i] = static_cast<float>((fp - fm) / step);
  }
  g.check_finite("finite_difference_gradient");
  return g;
}

namespace ops {

NodeId conv2d(Tape& tape, NodeId x, NodeId w, NodeId b, Index stride, Index padding) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  const Tensor& bv = tape.value(b);
  const ConvGeometry g = conv_geometry(xv, wv, bv, stride, padding);
  MatD cols = im2col(xv, g);
  const MatD wd = to_double(wv, g.depth(), g.cout);
  MatD y(g.rows(), g.cout);
  y.noalias() = cols * wd;
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bv.data(), g.cout).cast<double>();
  Tensor out = from_double({g.n, g.ho, g.wo, g.cout}, y);
  const bool keep = tape.requires_grad(x) || tape.requires_grad(w) || tape.requires_grad(b);
  auto cache = keep ? std::make_shared<MatD>(std::move(cols)) : nullptr;
  return tape.push(OpKind::kConv2d, {x, w, b}, std::move(out), [=](Tape& t, NodeId self) {
    const MatD dy = to_double(t.grad(self), g.rows(), g.cout);
    if (t.requires_grad(w)) add_into(t.grad(w), cache->transpose() * dy);
    if (t.requires_grad(b)) add_into(t.grad(b), dy.colwise().sum());
    if (t.requires_grad(x)) {
      const MatD wd2 = to_double(t.value(w), g.depth(), g.cout);
      const MatD dcols = dy * wd2.transpose();
      col2im_add(dcols, g, t.grad(x));
    }
  });
}

NodeId dense(Tape& tape, NodeId x, NodeId w, NodeId b) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  require_rank(xv, 2, "dense");
  require_rank(wv, 2, "dense weights");
  const Index n = xv.dim(0), f = xv.dim(1), o = wv.dim(1);
  if (wv.dim(0) != f || tape.value(b).size() != o) {
    throw ShapeError("dense: input " + shape_to_string(xv.shape()) + " incompatible with weights " +
                     shape_to_string(wv.shape()));
  }
  MatD y = to_double(xv, n, f) * to_double(wv, f, o);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(tape.value(b).data(), o).cast<double>();
  return tape.push(OpKind::kDense, {x, w, b}, from_double({n, o}, y), [=](Tape& t, NodeId self) {
    const MatD dy = to_double(t.grad(self), n, o);
    if (t.requires_grad(w)) add_into(t.grad(w), to_double(t.value(x), n, f).transpose() * dy);
    if (t.requires_grad(b)) add_into(t.grad(b), dy.colwise().sum());
    if (t.requires_grad(x)) add_into(t.grad(x), dy * to_double(t.value(w), f, o).transpose());
  });
}

NodeId affine(Tape& tape, NodeId x, NodeId w, NodeId b) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  require_rank(xv, 2, "affine");
  require_rank(wv, 2, "affine weights");
  const Index n = xv.dim(0), f = xv.dim(1), o = wv.dim(0);
  if (wv.dim(1) != f || tape.value(b).size() != o) {
    throw ShapeError("affine: input " + shape_to_string(xv.shape()) + " incompatible with matrix " +
                     shape_to_string(wv.shape()));
  }
  MatD y = to_double(xv, n, f) * to_double(wv, o, f).transpose();
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(tape.value(b).data(), o).cast<double>();
  return tape.push(OpKind::kAffine, {x, w, b}, from_double({n, o}, y), [=](Tape& t, NodeId self) {
    const MatD dy = to_double(t.grad(self), n, o);
    if (t.requires_grad(w)) add_into(t.grad(w), dy.transpose() * to_double(t.value(x), n, f));
    if (t.requires_grad(b)) add_into(t.grad(b), dy.colwise().sum());
    if (t.requires_grad(x)) add_into(t.grad(x), dy * to_double(t.value(w), o, f));
  });
}

NodeId relu(Tape& tape, NodeId x) {
  Tensor out = tape.value(x);
  out.array() = out.array().max(0.0f);
  return tape.push(OpKind::kRelu, {x}, std::move(out), [x](Tape& t, NodeId self) {
    if (!t.requires_grad(x)) return;
    // Subgradient at exactly zero is zero.
    t.grad(x).array() += (t.value(x).array() > 0.0f).select(t.grad(self).array(), 0.0f);
  });
}

NodeId max_pool2d(Tape& tape, NodeId x, Index kernel, Index stride) {
  const Tensor& xv = tape.value(x);
  const PoolGeometry g = pool_geometry(xv, kernel, stride, "maxpool2d");
  Tensor out({g.n, g.ho, g.wo, g.c});
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out.size()));
  Index o = 0;
  for (Index n = 0; n < g.n; ++n) {
    for (Index oy = 0; oy < g.ho; ++oy) {
      for (Index ox = 0; ox < g.wo; ++ox) {
        for (Index c = 0; c < g.c; ++c, ++o) {
          Index best = ((n * g.h + oy * g.stride) * g.w + ox * g.stride) * g.c + c;
          for (Index ky = 0; ky < g.k; ++ky) {
            for (Index kx = 0; kx < g.k; ++kx) {
              const Index idx = ((n * g.h + oy * g.stride + ky) * g.w + ox * g.stride + kx) * g.c + c;
              if (xv[idx] > xv[best]) best = idx;
            }
          }
          (*argmax)[static_cast<std::size_t>(o)] = best;
          out[o] = xv[best];
        }
      }
    }
  }
  return tape.push(OpKind::kMaxPool2d, {x}, std::move(out), [x, argmax](Tape& t, NodeId self) {
    if (!t.requires_grad(x)) return;
    Tensor& gx = t.grad(x);
    const Tensor& gy = t.grad(self);
    for (std::size_t i = 0; i < argmax->size(); ++i) gx[(*argmax)[i]] += gy[static_cast<Index>(i)];
  });
}

NodeId avg_pool2d(Tape& tape, NodeId x, Index kernel, Index stride) {
  const Tensor& xv = tape.value(x);
  const PoolGeometry g = pool_geometry(xv, kernel, stride, "avgpool2d");
  Tensor out({g.n, g.ho, g.wo, g.c});
  const double norm = 1.0 / static_cast<double>(g.k * g.k);
  Index o = 0;
  for (Index n = 0; n < g.n; ++n) {
    for (Index oy = 0; oy < g.ho; ++oy) {
      for (Index ox = 0; ox < g.wo; ++ox) {
        for (Index c = 0; c < g.c; ++c, ++o) {
          double acc = 0.0;
          for (Index ky = 0; ky < g.k; ++ky) {
            for (Index kx = 0; kx < g.k; ++kx) {
              acc += xv[((n * g.h + oy * g.stride + ky) * g.w + ox * g.stride + kx) * g.c + c];
            }
          }
          out[o] = static_cast<float>(acc * norm);
        }
      }
    }
  }
  return tape.push(OpKind::kAvgPool2d, {x}, std::move(out), [x, g, norm](Tape& t, NodeId self) {
    if (!t.requires_grad(x)) return;
    Tensor& gx = t.grad(x);
    const Tensor& gy = t.grad(self);
    Index o = 0;
    for (Index n = 0; n < g.n; ++n) {
      for (Index oy = 0; oy < g.ho; ++oy) {
        for (Index ox = 0; ox < g.wo; ++ox) {
          for (Index c = 0; c < g.c; ++c, ++o) {
            const float share = static_cast<float>(gy[o] * norm);
            for (Index ky = 0; ky < g.k; ++ky) {
              for (Index kx = 0; kx < g.k; ++kx) {
                gx[((n * g.h + oy * g.stride + ky) * g.w + ox * g.stride + kx) * g.c + c] += share;
              }
            }
          }
        }
      }
    }
  });
}

NodeId reshape(Tape& tape, NodeId x, Shape shape) {
  Tensor out = tape.value(x).reshaped(std::move(shape));
  return tape.push(OpKind::kReshape, {x}, std::move(out), [x](Tape& t, NodeId self) {
    if (t.requires_grad(x)) t.grad(x).array() += t.grad(self).array();
  });
}

NodeId softmax(Tape& tape, NodeId x) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() == 0) throw ShapeError("softmax: empty shape");
  const auto [rows, cols] = rows_cols(xv);
  MatD y = to_double(xv, rows, cols);
  for (Index r = 0; r < rows; ++r) {
    auto row = y.row(r);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  Tensor out = from_double(xv.shape(), y);
  // Keep every probability strictly positive after rounding to float.
  out.array() = out.array().max(std::numeric_limits<float>::min());
  return tape.push(OpKind::kSoftmax, {x}, std::move(out), [x, rows, cols](Tape& t, NodeId self) {
    if (!t.requires_grad(x)) return;
    const MatD yv = to_double(t.value(self), rows, cols);
    const MatD dy = to_double(t.grad(self), rows, cols);
    MatD dx(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      const double dot = yv.row(r).dot(dy.row(r));
      dx.row(r) = yv.row(r).array() * (dy.row(r).array() - dot);
    }
    add_into(t.grad(x), dx);
  });
}

NodeId log(Tape& tape, NodeId x, float floor) {
  Tensor out = tape.value(x);
  for (float& v : out.values()) v = static_cast<float>(std::log(static_cast<double>(std::max(v, floor))));
  return tape.push(OpKind::kLog, {x}, std::move(out), [x, floor](Tape& t, NodeId self) {
    if (!t.requires_grad(x)) return;
    const Tensor& xv = t.value(x);
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(x);
    for (Index i = 0; i < xv.size(); ++i) {
      if (xv[i] > floor) gx[i] += static_cast<float>(static_cast<double>(gy[i]) / xv[i]);
    }
  });
}

NodeId scale(Tape& tape, NodeId x, float factor) {
  Tensor out = tape.value(x);
  out.array() *= factor;
  return tape.push(OpKind::kScale, {x}, std::move(out), [x, factor](Tape& t, NodeId self) {
    if (t.requires_grad(x)) t.grad(x).array() += factor * t.grad(self).array();
  });
}

NodeId mul(Tape& tape, NodeId a, NodeId b) {
  if (tape.value(a).shape() != tape.value(b).shape()) {
    throw ShapeError("mul: shapes " + shape_to_string(tape.value(a).shape()) + " and " +
                     shape_to_string(tape.value(b).shape()) + " differ");
  }
  Tensor out = tape.value(a);
  out.array() *= tape.value(b).array();
  return tape.push(OpKind::kMul, {a, b}, std::move(out), [a, b](Tape& t, NodeId self) {
    if (t.requires_grad(a)) t.grad(a).array() += t.grad(self).array() * t.value(b).array();
    if (t.requires_grad(b)) t.grad(b).array() += t.grad(self).array() * t.value(a).array();
  });
}

NodeId pick(Tape& tape, NodeId x, std::vector<Index> classes) {
  const Tensor& xv = tape.value(x);
  require_rank(xv, 2, "pick");
  if (static_cast<Index>(classes.size()) != xv.dim(0)) throw ShapeError("pick: one class index per row required");
  Tensor out({xv.dim(0)});
  for (Index n = 0; n < xv.dim(0); ++n) {
    const Index c = classes[static_cast<std::size_t>(n)];
    if (c < 0 || c >= xv.dim(1)) throw InvalidArgument("pick: class index " + std::to_string(c) + " out of range");
    out[n] = xv[n * xv.dim(1) + c];
  }
  const Index cols = xv.dim(1);
  return tape.push(OpKind::kPick, {x}, std::move(out), [x, cols, classes = std::move(classes)](Tape& t, NodeId self) {
    if (!t.requires_grad(x)) return;
    Tensor& gx = t.grad(x);
    const Tensor& gy = t.grad(self);
    for (std::size_t n = 0; n < classes.size(); ++n) {
      gx[static_cast<Index>(n) * cols + classes[n]] += gy[static_cast<Index>(n)];
    }
  });
}

NodeId sum(Tape& tape, NodeId x) {
  double acc = 0.0;
  for (float v : tape.value(x).values()) acc += v;
  Tensor out({1}, {static_cast<float>(acc)});
  return tape.push(OpKind::kSum, {x}, std::move(out), [x](Tape& t, NodeId self) {
    if (t.requires_grad(x)) t.grad(x).array() += t.grad(self)[0];
  });
}

NodeId softmax_cross_entropy(Tape& tape, NodeId logits, std::vector<Index> labels) {
  const Tensor& lv = tape.value(logits);
  require_rank(lv, 2, "softmax_cross_entropy");
  const Index rows = lv.dim(0), cols = lv.dim(1);
  if (static_cast<Index>(labels.size()) != rows) throw ShapeError("softmax_cross_entropy: one label per row required");
  MatD p = to_double(lv, rows, cols);
  double loss = 0.0;
  for (Index r = 0; r < rows; ++r) {
    const Index y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= cols) throw InvalidArgument("softmax_cross_entropy: label out of range");
    auto row = p.row(r);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    loss += lse - row(y);
    row.array() = (row.array() - lse).exp();
  }
  loss /= static_cast<double>(rows);
  auto probs = std::make_shared<MatD>(std::move(p));
  return tape.push(OpKind::kSoftmaxCrossEntropy, {logits}, Tensor({1}, {static_cast<float>(loss)}),
                   [logits, probs, labels = std::move(labels), rows](Tape& t, NodeId self) {
                     if (!t.requires_grad(logits)) return;
                     MatD d = *probs;
                     for (Index r = 0; r < rows; ++r) d(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
                     d *= static_cast<double>(t.grad(self)[0]) / static_cast<double>(rows);
                     add_into(t.grad(logits), d);
                   });
}

}  // namespace ops

}  // namespace salcal
