#include "salcal/saliency.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "salcal/error.hpp"
#include "salcal/imaging.hpp"
#include "salcal/model_io.hpp"
#include "salcal/optim.hpp"
#include "salcal/rng.hpp"

namespace salcal {

namespace {

constexpr std::array<std::string_view, 5> kMethodNames = {"sensitivity", "integrated_gradients", "rise",
                                                          "meaningful_perturbation", "lrp"};
constexpr Index kRiseChunk = 128;

using MatD = RowMatrix<double>;

void check_variants(const VariantSet& variants, const Tensor& image) {
  if (!variants.base) throw InvalidArgument("variant set without a base model");
  if (variants.calibrators.empty() || variants.calibrators.size() != variants.classes.size()) {
    throw InvalidArgument("variant set needs one class per calibrator");
  }
  if (image.shape() != variants.base->input_shape) {
    throw ShapeError("image " + shape_to_string(image.shape()) + " does not match model input " +
                     shape_to_string(variants.base->input_shape));
  }
  for (Index c : variants.classes) {
    if (c < 0 || c >= variants.base->num_classes) throw InvalidArgument("explained class " + std::to_string(c) + " out of range");
  }
}

// [H, W, C] -> [H, W] channel sum.
template <typename T>
Tensor channel_sum(const T* data, Index h, Index w, Index c, bool absolute = false) {
  Tensor out({h, w});
  for (Index p = 0; p < h * w; ++p) {
    double acc = 0.0;
    for (Index ch = 0; ch < c; ++ch) acc += absolute ? std::abs(double(data[p * c + ch])) : double(data[p * c + ch]);
    out[p] = static_cast<float>(acc);
  }
  return out;
}

Tensor repeat_rows(const Tensor& image, Index count) {
  Shape s{count};
  s.insert(s.end(), image.shape().begin(), image.shape().end());
  Tensor out(std::move(s));
  for (Index r = 0; r < count; ++r) std::copy(image.data(), image.data() + image.size(), out.data() + r * image.size());
  return out;
}

double mean_tv(const Image2D& m) {
  const Index h = m.rows(), w = m.cols();
  const Index pairs = h * (w - 1) + (h - 1) * w;
  if (pairs == 0) return 0.0;
  double tv = 0.0;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      if (x + 1 < w) tv += std::abs(static_cast<double>(m(y, x + 1)) - m(y, x));
      if (y + 1 < h) tv += std::abs(static_cast<double>(m(y + 1, x)) - m(y, x));
    }
  return tv / static_cast<double>(pairs);
}

double mask_penalty(const Image2D& m, const MpConfig& cfg) {
  return cfg.lambda * (1.0 - m.cast<double>()).mean() + cfg.beta * mean_tv(m);
}

// d(penalty)/dm.
void add_penalty_gradient(const Image2D& m, const MpConfig& cfg, RowArray2<double>& grad) {
  const Index h = m.rows(), w = m.cols();
  grad -= cfg.lambda / static_cast<double>(h * w);
  const Index pairs = h * (w - 1) + (h - 1) * w;
  if (pairs == 0) return;
  const double tw = cfg.beta / static_cast<double>(pairs);
  auto sgn = [](double d) { return static_cast<double>((d > 0) - (d < 0)); };
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      if (x + 1 < w) {
        const double s = sgn(static_cast<double>(m(y, x + 1)) - m(y, x)) * tw;
        grad(y, x + 1) += s;
        grad(y, x) -= s;
      }
      if (y + 1 < h) {
        const double s = sgn(static_cast<double>(m(y + 1, x)) - m(y, x)) * tw;
        grad(y + 1, x) += s;
        grad(y, x) -= s;
      }
    }
}

Tensor masked(const Tensor& image, const Image2D& mask) {
  Tensor out(image.shape());
  const Index c = image.dim(2);
  for (Index p = 0; p < mask.size(); ++p) {
    const float m = mask.data()[p];
    for (Index ch = 0; ch < c; ++ch) out[p * c + ch] = image[p * c + ch] * m;
  }
  return out;
}

// Relevance stays in double between layers: epsilon-rule terms can exceed
// the root by 1e4 and cancel.
using Relevance = std::vector<double>;

// z / (z + eps sign(z)) style stabilizer, with sign(0) = +1.
double stabilize(double z, double eps) { return z + (z >= 0.0 ? eps : -eps); }

// Relevance of a conv input [H, W, Cin] given the relevance of its output.
Relevance lrp_conv(const LayerSpec& layer, const Tensor& a, const Tensor& out, const Relevance& r_out, double eps) {
  const Index h = a.dim(1), w = a.dim(2), cin = a.dim(3);
  const Index k = layer.kernel, s = layer.stride, pad = layer.padding, cout = layer.out_features;
  const Index ho = out.dim(1), wo = out.dim(2);
  const Index depth = k * k * cin;
  MatD patches = MatD::Zero(ho * wo, depth);
  for (Index oy = 0; oy < ho; ++oy)
    for (Index ox = 0; ox < wo; ++ox)
      for (Index ky = 0; ky < k; ++ky)
        for (Index kx = 0; kx < k; ++kx) {
          const Index iy = oy * s + ky - pad, ix = ox * s + kx - pad;
          if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
          for (Index ci = 0; ci < cin; ++ci) patches(oy * wo + ox, (ky * k + kx) * cin + ci) = a[(iy * w + ix) * cin + ci];
        }
  const MatD weights = Eigen::Map<const RowMatrix<float>>(layer.weight.data(), depth, cout).cast<double>();
  const MatD z = patches * weights;
  MatD ratio(ho * wo, cout);
  for (Index i = 0; i < z.size(); ++i)
    ratio.data()[i] = r_out[static_cast<std::size_t>(i)] / stabilize(z.data()[i], eps);
  const MatD back = (ratio * weights.transpose()).cwiseProduct(patches);
  Relevance r_in(static_cast<std::size_t>(a.size()), 0.0);
  for (Index oy = 0; oy < ho; ++oy)
    for (Index ox = 0; ox < wo; ++ox)
      for (Index ky = 0; ky < k; ++ky)
        for (Index kx = 0; kx < k; ++kx) {
          const Index iy = oy * s + ky - pad, ix = ox * s + kx - pad;
          if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
          for (Index ci = 0; ci < cin; ++ci) {
            r_in[static_cast<std::size_t>((iy * w + ix) * cin + ci)] += back(oy * wo + ox, (ky * k + kx) * cin + ci);
          }
        }
  return r_in;
}

Relevance lrp_dense(const LayerSpec& layer, const Tensor& a, const Relevance& r_out, double eps) {
  const Index f = layer.in_features, o = layer.out_features;
  const Eigen::VectorXd av = Eigen::Map<const Eigen::VectorXf>(a.data(), f).cast<double>();
  const MatD weights = Eigen::Map<const RowMatrix<float>>(layer.weight.data(), f, o).cast<double>();
  const Eigen::VectorXd z = weights.transpose() * av;
  Eigen::VectorXd ratio(o);
  for (Index i = 0; i < o; ++i) ratio(i) = r_out[static_cast<std::size_t>(i)] / stabilize(z(i), eps);
  const Eigen::VectorXd r_in = av.cwiseProduct(weights * ratio);
  return Relevance(r_in.data(), r_in.data() + f);
}

Relevance lrp_pool(const LayerSpec& layer, const Tensor& a, const Tensor& out, const Relevance& r_out) {
  const Index w = a.dim(2), c = a.dim(3);
  const Index ho = out.dim(1), wo = out.dim(2), k = layer.kernel, s = layer.stride;
  Relevance r_in(static_cast<std::size_t>(a.size()), 0.0);
  for (Index oy = 0; oy < ho; ++oy)
    for (Index ox = 0; ox < wo; ++ox)
      for (Index ch = 0; ch < c; ++ch) {
        const double r = r_out[static_cast<std::size_t>((oy * wo + ox) * c + ch)];
        if (layer.kind == LayerKind::kAvgPool2d) {
          for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx) {
              r_in[static_cast<std::size_t>(((oy * s + ky) * w + ox * s + kx) * c + ch)] += r / static_cast<double>(k * k);
            }
          continue;
        }
        Index best = (oy * s * w + ox * s) * c + ch;
        for (Index ky = 0; ky < k; ++ky)
          for (Index kx = 0; kx < k; ++kx) {
            const Index idx = ((oy * s + ky) * w + ox * s + kx) * c + ch;
            if (a[idx] > a[best]) best = idx;
          }
        r_in[static_cast<std::size_t>(best)] += r;
      }
  return r_in;
}

void write_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

std::string_view method_name(Method method) { return kMethodNames.at(static_cast<std::size_t>(method)); }

Method parse_method(std::string_view name) {
  for (std::size_t i = 0; i < kMethodNames.size(); ++i) {
    if (kMethodNames[i] == name) return static_cast<Method>(i);
  }
  throw InvalidArgument("unknown saliency method '" + std::string(name) + "'");
}

Tensor normalize_minmax(const Tensor& raw) {
  raw.check_finite("normalize_minmax");
  Tensor out(raw.shape());
  if (raw.empty()) return out;
  const float lo = raw.array().minCoeff(), hi = raw.array().maxCoeff();
  if (!(hi > lo)) return out;
  const double span = static_cast<double>(hi) - lo;
  for (Index i = 0; i < raw.size(); ++i) out[i] = static_cast<float>((static_cast<double>(raw[i]) - lo) / span);
  return out;
}

VariantSet single_variant(const CalibratedModel& model, Index class_index) {
  return VariantSet{&model.base(), {&model.calibrator()}, {class_index}};
}

std::vector<Tensor> sensitivity_raw(const VariantSet& variants, const Tensor& image, const SensitivityConfig& cfg) {
  check_variants(variants, image);
  const auto v = static_cast<Index>(variants.size());
  const auto g = score_gradients(*variants.base, variants.calibrators, repeat_rows(image, v), variants.classes,
                                 GradientTarget::kScore);
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2);
  std::vector<Tensor> out;
  for (Index i = 0; i < v; ++i) out.push_back(channel_sum(g.gradients.data() + i * image.size(), h, w, c, cfg.absolute));
  return out;
}

IgRaw integrated_gradients_raw(const VariantSet& variants, const Tensor& image, const IgConfig& cfg) {
  check_variants(variants, image);
  if (cfg.steps < 1) throw InvalidArgument("integrated gradients needs at least one step");
  std::vector<Tensor> refs;
  if (cfg.black_reference) refs.push_back(Tensor::filled(image.shape(), 0.0f));
  if (cfg.white_reference) refs.push_back(Tensor::filled(image.shape(), 1.0f));
  if (refs.empty()) throw InvalidArgument("integrated gradients needs a reference");
  const auto nv = static_cast<Index>(variants.size()), nr = static_cast<Index>(refs.size()), m = cfg.steps;
  const Index d = image.size();
  Shape s{nv * nr * m};
  s.insert(s.end(), image.shape().begin(), image.shape().end());
  Tensor batch(std::move(s));
  std::vector<const Calibrator*> cals;
  std::vector<Index> classes;
  for (Index v = 0; v < nv; ++v)
    for (Index r = 0; r < nr; ++r)
      for (Index k = 1; k <= m; ++k) {
        const double alpha = static_cast<double>(k) / static_cast<double>(m);
        float* row = batch.data() + ((v * nr + r) * m + k - 1) * d;
        for (Index i = 0; i < d; ++i) {
          const double ref = refs[static_cast<std::size_t>(r)][i];
          row[i] = static_cast<float>(ref + alpha * (image[i] - ref));
        }
        cals.push_back(variants.calibrators[static_cast<std::size_t>(v)]);
        classes.push_back(variants.classes[static_cast<std::size_t>(v)]);
      }
  const auto g = score_gradients(*variants.base, cals, batch, classes, GradientTarget::kScore);
  IgRaw out;
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2);
  for (Index v = 0; v < nv; ++v) {
    std::vector<Tensor> per_ref;
    RowArray2<double> combined = RowArray2<double>::Zero(h, w);
    for (Index r = 0; r < nr; ++r) {
      std::vector<float> attr(static_cast<std::size_t>(d));
      for (Index i = 0; i < d; ++i) {
        double mean = 0.0;
        for (Index k = 0; k < m; ++k) mean += g.gradients[((v * nr + r) * m + k) * d + i];
        mean /= static_cast<double>(m);
        attr[static_cast<std::size_t>(i)] =
            static_cast<float>((static_cast<double>(image[i]) - refs[static_cast<std::size_t>(r)][i]) * mean);
      }
      Tensor map = channel_sum(attr.data(), h, w, c);
      combined += map.image().cast<double>();
      per_ref.push_back(std::move(map));
    }
    combined /= static_cast<double>(nr);
    out.combined.push_back(Tensor::from_image(combined.cast<float>()));
    out.per_reference.push_back(std::move(per_ref));
  }
  return out;
}

std::vector<Image2D> rise_masks(Index height, Index width, const RiseConfig& cfg, std::uint64_t seed) {
  if (cfg.masks < 1 || cfg.grid < 1) throw InvalidArgument("RISE needs at least one mask and a positive grid");
  if (!(cfg.keep_probability > 0.0 && cfg.keep_probability < 1.0)) {
    throw InvalidArgument("RISE keep probability must lie in (0, 1)");
  }
  Rng rng(seed);
  std::vector<Image2D> masks;
  masks.reserve(static_cast<std::size_t>(cfg.masks));
  Image2D low(cfg.grid, cfg.grid);
  for (Index j = 0; j < cfg.masks; ++j) {
    for (Index i = 0; i < low.size(); ++i) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      low.data()[i] = u < cfg.keep_probability ? 1.0f : 0.0f;
    }
    masks.push_back(resize_bicubic(low, height, width).cwiseMax(0.0f).cwiseMin(1.0f));
  }
  return masks;
}

std::vector<Tensor> rise_with_masks(const VariantSet& variants, const Tensor& image, std::span<const Image2D> masks,
                                    double keep_probability) {
  check_variants(variants, image);
  if (masks.empty()) throw InvalidArgument("RISE needs at least one mask");
  const Index h = image.dim(0), w = image.dim(1), d = image.size();
  const auto nv = variants.size();
  std::vector<RowArray2<double>> acc(nv, RowArray2<double>::Zero(h, w));
  const auto n = static_cast<Index>(masks.size());
  for (Index begin = 0; begin < n; begin += kRiseChunk) {
    const Index count = std::min(kRiseChunk, n - begin);
    Tensor batch({count, h, w, image.dim(2)});
    for (Index j = 0; j < count; ++j) {
      const Image2D& m = masks[static_cast<std::size_t>(begin + j)];
      if (m.rows() != h || m.cols() != w) throw ShapeError("RISE mask does not match the image size");
      const Tensor x = masked(image, m);
      std::copy(x.data(), x.data() + d, batch.data() + j * d);
    }
    const Tensor logits = forward_logits(*variants.base, batch);
    for (std::size_t v = 0; v < nv; ++v) {
      const Tensor scores = calibrated_scores(*variants.calibrators[v], logits);
      const Index c = scores.dim(1);
      for (Index j = 0; j < count; ++j) {
        const double s = scores[j * c + variants.classes[v]];
        acc[v] += s * masks[static_cast<std::size_t>(begin + j)].cast<double>();
      }
    }
  }
  std::vector<Tensor> out;
  for (auto& a : acc) out.push_back(Tensor::from_image((a / (keep_probability * static_cast<double>(n))).cast<float>()));
  return out;
}

std::vector<Tensor> rise_raw(const VariantSet& variants, const Tensor& image, const RiseConfig& cfg,
                             std::uint64_t seed) {
  check_variants(variants, image);
  const auto masks = rise_masks(image.dim(0), image.dim(1), cfg, seed);
  return rise_with_masks(variants, image, masks, cfg.keep_probability);
}

double mp_objective(const ClassifierModel& base, const Calibrator& calibrator, const Tensor& image, const Image2D& mask,
                    Index class_index, const MpConfig& cfg) {
  const Tensor logits = forward_logits(base, as_batch(masked(image, mask)));
  return mask_penalty(mask, cfg) + calibrated_scores(calibrator, logits)[class_index];
}

std::vector<MpResult> meaningful_perturbation_raw(const VariantSet& variants, const Tensor& image,
                                                  const MpConfig& cfg) {
  check_variants(variants, image);
  if (cfg.steps < 0 || !(cfg.lambda > 0.0) || !(cfg.beta > 0.0) || !(cfg.learning_rate > 0.0)) {
    throw InvalidArgument("meaningful perturbation settings must be positive");
  }
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2), d = image.size();
  const auto nv = static_cast<Index>(variants.size());
  std::vector<Image2D> masks(static_cast<std::size_t>(nv), Image2D::Ones(h, w));
  std::vector<MpResult> results(static_cast<std::size_t>(nv));
  Adam adam({.learning_rate = cfg.learning_rate});
  Tensor batch({nv, h, w, c});
  for (Index step = 0;; ++step) {
    for (Index v = 0; v < nv; ++v) {
      const Tensor x = masked(image, masks[static_cast<std::size_t>(v)]);
      std::copy(x.data(), x.data() + d, batch.data() + v * d);
    }
    const auto g = score_gradients(*variants.base, variants.calibrators, batch, variants.classes, GradientTarget::kScore);
    const bool last = step == cfg.steps;
    if (!last) adam.begin_step();
    for (Index v = 0; v < nv; ++v) {
      Image2D& m = masks[static_cast<std::size_t>(v)];
      MpResult& res = results[static_cast<std::size_t>(v)];
      const double objective =
          mask_penalty(m, cfg) + g.scores[v * variants.base->num_classes + variants.classes[static_cast<std::size_t>(v)]];
      if (!std::isfinite(objective)) {
        throw NumericError("meaningful perturbation objective is not finite at step " + std::to_string(step));
      }
      res.objective = objective;
      if (step % std::max<Index>(1, cfg.checkpoint_every) == 0 || last) res.checkpoints.push_back(objective);
      if (last) continue;
      RowArray2<double> grad(h, w);
      const float* gx = g.gradients.data() + v * d;
      for (Index p = 0; p < h * w; ++p) {
        double acc = 0.0;
        for (Index ch = 0; ch < c; ++ch) acc += static_cast<double>(image[p * c + ch]) * gx[p * c + ch];
        grad.data()[p] = acc;
      }
      add_penalty_gradient(m, cfg, grad);
      const Image2D gf = grad.cast<float>();
      adam.update(static_cast<std::size_t>(v), {m.data(), static_cast<std::size_t>(m.size())},
                  {gf.data(), static_cast<std::size_t>(gf.size())});
      m = m.cwiseMax(0.0f).cwiseMin(1.0f);
    }
    if (last) break;
  }
  for (Index v = 0; v < nv; ++v) {
    results[static_cast<std::size_t>(v)].raw = Tensor::from_image(1.0f - masks[static_cast<std::size_t>(v)]);
  }
  return results;
}

std::vector<double> lrp_input_relevance(const ClassifierModel& base, const Tensor& image, Index class_index,
                                        double root_relevance, const LrpConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) throw InvalidArgument("LRP epsilon must be positive");
  if (class_index < 0 || class_index >= base.num_classes) throw InvalidArgument("explained class out of range");
  const std::size_t n_layers = base.layers.size() - 1;
  for (std::size_t i = 0; i < n_layers; ++i) {
    switch (base.layers[i].kind) {
      case LayerKind::kConv2d:
      case LayerKind::kDense:
      case LayerKind::kRelu:
      case LayerKind::kMaxPool2d:
      case LayerKind::kAvgPool2d:
      case LayerKind::kFlatten: break;
      default:
        throw InvalidArgument("LRP does not support layer " + std::to_string(i) + " (" +
                              std::string(layer_kind_name(base.layers[i].kind)) + ")");
    }
  }
  std::vector<Tensor> acts{as_batch(image)};
  for (std::size_t i = 0; i < n_layers; ++i) acts.push_back(apply_layer(base.layers[i], acts.back()));
  Relevance r(static_cast<std::size_t>(acts.back().size()), 0.0);
  r[static_cast<std::size_t>(class_index)] = root_relevance;
  for (std::size_t i = n_layers; i-- > 0;) {
    const LayerSpec& layer = base.layers[i];
    const Tensor& a = acts[i];
    switch (layer.kind) {
      case LayerKind::kConv2d: r = lrp_conv(layer, a, acts[i + 1], r, cfg.epsilon); break;
      case LayerKind::kDense: r = lrp_dense(layer, a, r, cfg.epsilon); break;
      case LayerKind::kMaxPool2d:
      case LayerKind::kAvgPool2d: r = lrp_pool(layer, a, acts[i + 1], r); break;
      default: break;  // relu and flatten pass relevance through
    }
  }
  return r;
}

std::vector<Tensor> lrp_raw(const VariantSet& variants, const Tensor& image, const LrpConfig& cfg) {
  check_variants(variants, image);
  const Tensor logits = forward_logits(*variants.base, as_batch(image));
  std::vector<Tensor> out;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const double root = calibrated_scores(*variants.calibrators[v], logits)[variants.classes[v]];
    const std::vector<double> rel = lrp_input_relevance(*variants.base, image, variants.classes[v], root, cfg);
    out.push_back(channel_sum(rel.data(), image.dim(0), image.dim(1), image.dim(2)));
  }
  return out;
}

std::vector<Tensor> explain(Method method, const VariantSet& variants, const Tensor& image,
                            const SaliencyConfig& cfg, std::uint64_t seed) {
  std::vector<Tensor> raw;
  switch (method) {
    case Method::kSensitivity: raw = sensitivity_raw(variants, image, cfg.sensitivity); break;
    case Method::kIntegratedGradients: raw = integrated_gradients_raw(variants, image, cfg.integrated_gradients).combined; break;
    case Method::kRise: raw = rise_raw(variants, image, cfg.rise, seed); break;
    case Method::kMeaningfulPerturbation:
      for (auto& r : meaningful_perturbation_raw(variants, image, cfg.meaningful_perturbation)) raw.push_back(std::move(r.raw));
      break;
    case Method::kLrp: raw = lrp_raw(variants, image, cfg.lrp); break;
  }
  for (Tensor& t : raw) t = normalize_minmax(t);
  return raw;
}

namespace {

SaliencyMap wrap(Tensor raw, const CalibratedModel& model, Index class_index, Method method) {
  return SaliencyMap{normalize_minmax(raw), class_index, std::string(method_name(method)), model.tag()};
}

}  // namespace

SaliencyMap sensitivity(const CalibratedModel& model, const Tensor& image, Index class_index,
                        const SensitivityConfig& cfg) {
  return wrap(sensitivity_raw(single_variant(model, class_index), image, cfg).front(), model, class_index,
              Method::kSensitivity);
}

SaliencyMap integrated_gradients(const CalibratedModel& model, const Tensor& image, Index class_index,
                                 const IgConfig& cfg) {
  return wrap(integrated_gradients_raw(single_variant(model, class_index), image, cfg).combined.front(), model,
              class_index, Method::kIntegratedGradients);
}

SaliencyMap rise(const CalibratedModel& model, const Tensor& image, Index class_index, const RiseConfig& cfg,
                 std::uint64_t seed) {
  return wrap(rise_raw(single_variant(model, class_index), image, cfg, seed).front(), model, class_index, Method::kRise);
}

SaliencyMap meaningful_perturbation(const CalibratedModel& model, const Tensor& image, Index class_index,
                                    const MpConfig& cfg) {
  return wrap(meaningful_perturbation_raw(single_variant(model, class_index), image, cfg).front().raw, model,
              class_index, Method::kMeaningfulPerturbation);
}

SaliencyMap lrp(const CalibratedModel& model, const Tensor& image, Index class_index, const LrpConfig& cfg) {
  return wrap(lrp_raw(single_variant(model, class_index), image, cfg).front(), model, class_index, Method::kLrp);
}

void save_saliency_pgm(const std::filesystem::path& path, const SaliencyMap& map, const SaliencyFileInfo& info) {
  const Tensor& v = map.values;
  if (v.rank() != 2) throw ShapeError("saliency map must be [H, W], got " + shape_to_string(v.shape()));
  std::string bytes = "P5\n" + std::to_string(v.dim(1)) + " " + std::to_string(v.dim(0)) + "\n65535\n";
  for (Index i = 0; i < v.size(); ++i) {
    if (!(v[i] >= 0.0f && v[i] <= 1.0f)) throw InvalidArgument("saliency values must lie in [0, 1]");
    const auto q = static_cast<std::uint16_t>(std::lround(65535.0 * v[i]));
    bytes.push_back(static_cast<char>(q >> 8));
    bytes.push_back(static_cast<char>(q & 0xff));
  }
  write_file_atomic(path, bytes);
  const nlohmann::json sidecar{{"method", map.method},     {"explained_class", map.explained_class},
                               {"variant", map.variant},   {"seed", info.seed},
                               {"config_hash", info.config_hash}};
  auto json_path = path;
  json_path.replace_extension(".json");
  write_file_atomic(json_path, sidecar.dump(2) + "\n");
}

Tensor load_saliency_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
    return std::string(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.begin() + static_cast<std::ptrdiff_t>(pos));
  };
  if (token() != "P5") throw FormatError(path.string() + ": not a binary PGM");
  Index w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(token());
    h = std::stoll(token());
    maxval = std::stoll(token());
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PGM header");
  }
  if (maxval != 65535 || w < 1 || h < 1) throw FormatError(path.string() + ": expected a 16-bit PGM");
  ++pos;
  if (bytes.size() - pos != static_cast<std::size_t>(2 * w * h)) {
    throw FormatError(path.string() + ": pixel data truncated at offset " + std::to_string(bytes.size()));
  }
  Tensor out({h, w});
  for (Index i = 0; i < w * h; ++i) {
    const unsigned q = (static_cast<unsigned>(bytes[pos + 2 * i]) << 8) | bytes[pos + 2 * i + 1];
    out[i] = static_cast<float>(q / 65535.0);
  }
  return out;
}

void save_raw_map(const std::filesystem::path& path, const Tensor& map) {
  static_assert(std::endian::native == std::endian::little);
  if (map.rank() != 2) throw ShapeError("raw map must be [H, W], got " + shape_to_string(map.shape()));
  std::string bytes = "CTSM";
  write_u32_le(bytes, static_cast<std::uint32_t>(map.dim(0)));
  write_u32_le(bytes, static_cast<std::uint32_t>(map.dim(1)));
  bytes.append(reinterpret_cast<const char*>(map.data()), static_cast<std::size_t>(map.size()) * sizeof(float));
  write_file_atomic(path, bytes);
}

Tensor load_raw_map(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "CTSM", 4) != 0) {
    throw FormatError(path.string() + ": bad magic at offset 0: expected 'CTSM'");
  }
  std::uint32_t h = 0, w = 0;
  std::memcpy(&h, bytes.data() + 4, 4);
  std::memcpy(&w, bytes.data() + 8, 4);
  const std::size_t expected = 12 + static_cast<std::size_t>(h) * w * sizeof(float);
  if (bytes.size() != expected) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(bytes.size()));
  }
  std::vector<float> values(static_cast<std::size_t>(h) * w);
  std::memcpy(values.data(), bytes.data() + 12, values.size() * sizeof(float));
  return Tensor({static_cast<Index>(h), static_cast<Index>(w)}, std::move(values));
}

}  // namespace salcal
