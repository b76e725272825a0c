#include "salcal/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include "salcal/error.hpp"
#include "salcal/imaging.hpp"
#include "salcal/rng.hpp"

namespace salcal {

namespace {

using ArrayD = RowArray2<double>;

void check_map(const Tensor& map, const char* where) {
  if (map.rank() != 2) throw ShapeError(std::string(where) + " expects an [H, W] map, got " + shape_to_string(map.shape()));
}

// "Valid" correlation of a 2-D array with the separable kernel k x k.
ArrayD filter_valid(const ArrayD& x, const std::vector<double>& k) {
  const auto n = static_cast<Index>(k.size());
  const Index h = x.rows() - n + 1, w = x.cols() - n + 1;
  ArrayD rows(x.rows(), w);
  for (Index y = 0; y < x.rows(); ++y)
    for (Index j = 0; j < w; ++j) {
      double acc = 0.0;
      for (Index t = 0; t < n; ++t) acc += k[static_cast<std::size_t>(t)] * x(y, j + t);
      rows(y, j) = acc;
    }
  ArrayD out(h, w);
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j) {
      double acc = 0.0;
      for (Index t = 0; t < n; ++t) acc += k[static_cast<std::size_t>(t)] * rows(i + t, j);
      out(i, j) = acc;
    }
  return out;
}

Index uniform_below(Rng& rng, Index n) { return static_cast<Index>(rng() % static_cast<std::uint64_t>(n)); }

// Normalized predicted-class scores of `images` for every variant.
std::vector<std::vector<double>> normalized_scores(const VariantSet& variants, const Tensor& images) {
  const Tensor logits = forward_logits(*variants.base, images);
  std::vector<std::vector<double>> out;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const Tensor s = calibrated_scores(*variants.calibrators[v], logits);
    const Index c = s.dim(1), cls = variants.classes[v];
    const double clean = s[cls];
    std::vector<double> row(static_cast<std::size_t>(s.dim(0)));
    for (Index i = 0; i < s.dim(0); ++i) row[static_cast<std::size_t>(i)] = s[i * c + cls] / clean;
    out.push_back(std::move(row));
  }
  return out;
}

void check_variant_image(const VariantSet& variants, const Tensor& image) {
  if (!variants.base || variants.calibrators.empty() || variants.calibrators.size() != variants.classes.size()) {
    throw InvalidArgument("variant set needs a base model and one class per calibrator");
  }
  if (image.shape() != variants.base->input_shape) {
    throw ShapeError("image " + shape_to_string(image.shape()) + " does not match model input " +
                     shape_to_string(variants.base->input_shape));
  }
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) { return ssim(a, b, SsimWindow{}); }

double ssim(const Tensor& a, const Tensor& b, const SsimWindow& window) {
  check_map(a, "ssim");
  if (a.shape() != b.shape()) {
    throw ShapeError("ssim: shapes " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()) + " differ");
  }
  if (a.dim(0) < window.size || a.dim(1) < window.size) {
    throw ShapeError("ssim: map " + shape_to_string(a.shape()) + " is smaller than the window");
  }
  const auto k = gaussian_kernel(window.size, window.sigma);
  const ArrayD x = a.image().cast<double>(), y = b.image().cast<double>();
  const ArrayD mx = filter_valid(x, k), my = filter_valid(y, k);
  const ArrayD sxx = filter_valid(x * x, k) - mx * mx;
  const ArrayD syy = filter_valid(y * y, k) - my * my;
  const ArrayD sxy = filter_valid(x * y, k) - mx * my;
  const double c1 = window.k1 * window.k1, c2 = window.k2 * window.k2;
  const ArrayD num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
  const ArrayD den = (mx * mx + my * my + c1) * (sxx + syy + c2);
  return (num / den).mean();
}

LabelMap slic_assign(const Tensor& lab, std::span<const SlicCenter> centers, double spacing, double compactness) {
  const Index h = lab.dim(0), w = lab.dim(1);
  LabelMap labels = LabelMap::Constant(h, w, -1);
  ArrayD best = ArrayD::Constant(h, w, std::numeric_limits<double>::infinity());
  const double scale = compactness * compactness / (spacing * spacing);
  auto distance = [&](const SlicCenter& c, Index y, Index x) {
    const float* p = lab.data() + (y * w + x) * 3;
    const double dl = p[0] - c.l, da = p[1] - c.a, db = p[2] - c.b;
    const double dy = static_cast<double>(y) - c.y, dx = static_cast<double>(x) - c.x;
    return dl * dl + da * da + db * db + (dy * dy + dx * dx) * scale;
  };
  for (std::size_t k = 0; k < centers.size(); ++k) {
    const SlicCenter& c = centers[k];
    const auto y0 = std::max<Index>(0, static_cast<Index>(std::ceil(c.y - spacing)));
    const auto y1 = std::min<Index>(h - 1, static_cast<Index>(std::floor(c.y + spacing)));
    const auto x0 = std::max<Index>(0, static_cast<Index>(std::ceil(c.x - spacing)));
    const auto x1 = std::min<Index>(w - 1, static_cast<Index>(std::floor(c.x + spacing)));
    for (Index y = y0; y <= y1; ++y)
      for (Index x = x0; x <= x1; ++x) {
        const double d = distance(c, y, x);
        if (d < best(y, x)) {
          best(y, x) = d;
          labels(y, x) = static_cast<std::int32_t>(k);
        }
      }
  }
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      if (labels(y, x) >= 0) continue;
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const double d = distance(centers[k], y, x);
        if (d < best(y, x)) {
          best(y, x) = d;
          labels(y, x) = static_cast<std::int32_t>(k);
        }
      }
    }
  return labels;
}

namespace {

// Merges every component that is not the largest piece of its label into the
// largest adjacent region, then numbers regions in row-major order of first
// appearance.
LabelMap enforce_connectivity(const LabelMap& labels, Index& count) {
  const Index h = labels.rows(), w = labels.cols(), n = h * w;
  std::vector<Index> comp(static_cast<std::size_t>(n), -1);
  std::vector<Index> comp_size, comp_label;
  constexpr std::array<std::array<Index, 2>, 4> kNeighbors = {{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
  for (Index start = 0; start < n; ++start) {
    if (comp[static_cast<std::size_t>(start)] >= 0) continue;
    const auto id = static_cast<Index>(comp_size.size());
    const std::int32_t label = labels.data()[start];
    std::deque<Index> queue{start};
    comp[static_cast<std::size_t>(start)] = id;
    Index size = 0;
    while (!queue.empty()) {
      const Index p = queue.front();
      queue.pop_front();
      ++size;
      for (const auto& [dy, dx] : kNeighbors) {
        const Index y = p / w + dy, x = p % w + dx;
        if (y < 0 || y >= h || x < 0 || x >= w) continue;
        const Index q = y * w + x;
        if (comp[static_cast<std::size_t>(q)] < 0 && labels.data()[q] == label) {
          comp[static_cast<std::size_t>(q)] = id;
          queue.push_back(q);
        }
      }
    }
    comp_size.push_back(size);
    comp_label.push_back(label);
  }
  const auto nc = static_cast<Index>(comp_size.size());
  // Largest component per label, ties to the earlier component.
  std::vector<Index> main_of_label;
  for (Index c = 0; c < nc; ++c) {
    const auto l = static_cast<std::size_t>(comp_label[static_cast<std::size_t>(c)]);
    if (main_of_label.size() <= l) main_of_label.resize(l + 1, -1);
    const Index cur = main_of_label[l];
    if (cur < 0 || comp_size[static_cast<std::size_t>(c)] > comp_size[static_cast<std::size_t>(cur)]) main_of_label[l] = c;
  }
  std::vector<Index> parent(static_cast<std::size_t>(nc));
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<Index> size = comp_size;
  auto find = [&](Index c) {
    while (parent[static_cast<std::size_t>(c)] != c) c = parent[static_cast<std::size_t>(c)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(c)])];
    return c;
  };
  for (Index c = 0; c < nc; ++c) {
    if (main_of_label[static_cast<std::size_t>(comp_label[static_cast<std::size_t>(c)])] == c) continue;
    const Index root = find(c);
    Index target = -1;
    for (Index p = 0; p < n; ++p) {
      if (find(comp[static_cast<std::size_t>(p)]) != root) continue;
      for (const auto& [dy, dx] : kNeighbors) {
        const Index y = p / w + dy, x = p % w + dx;
        if (y < 0 || y >= h || x < 0 || x >= w) continue;
        const Index r = find(comp[static_cast<std::size_t>(y * w + x)]);
        if (r == root) continue;
        if (target < 0 || size[static_cast<std::size_t>(r)] > size[static_cast<std::size_t>(target)] ||
            (size[static_cast<std::size_t>(r)] == size[static_cast<std::size_t>(target)] && r < target)) {
          target = r;
        }
      }
    }
    if (target < 0) continue;  // the region covers the whole image
    parent[static_cast<std::size_t>(root)] = target;
    size[static_cast<std::size_t>(target)] += size[static_cast<std::size_t>(root)];
  }
  std::vector<std::int32_t> relabel(static_cast<std::size_t>(nc), -1);
  LabelMap out(h, w);
  count = 0;
  for (Index p = 0; p < n; ++p) {
    const auto r = static_cast<std::size_t>(find(comp[static_cast<std::size_t>(p)]));
    if (relabel[r] < 0) relabel[r] = static_cast<std::int32_t>(count++);
    out.data()[p] = relabel[r];
  }
  return out;
}

}  // namespace

Segmentation slic_superpixels(const Tensor& image, const SlicConfig& cfg) {
  if (image.rank() != 3) throw ShapeError("slic expects [H, W, C], got " + shape_to_string(image.shape()));
  const Index h = image.dim(0), w = image.dim(1);
  if (cfg.target_segments < 2 || cfg.target_segments > h * w) {
    throw InvalidArgument("slic target segment count must lie in [2, H*W]");
  }
  if (!(cfg.compactness > 0.0) || cfg.iterations < 1) throw InvalidArgument("slic needs compactness > 0 and iterations >= 1");
  const Tensor lab = to_lab(image);
  auto px = [&](Index y, Index x) { return lab.data() + (y * w + x) * 3; };
  const double spacing = std::sqrt(static_cast<double>(h * w) / static_cast<double>(cfg.target_segments));
  const Index nx = std::max<Index>(1, std::llround(static_cast<double>(w) / spacing));
  const Index ny = std::max<Index>(1, std::llround(static_cast<double>(h) / spacing));
  auto gradient = [&](Index y, Index x) {
    const float* l = px(y, std::max<Index>(0, x - 1));
    const float* r = px(y, std::min<Index>(w - 1, x + 1));
    const float* u = px(std::max<Index>(0, y - 1), x);
    const float* d = px(std::min<Index>(h - 1, y + 1), x);
    double g = 0.0;
    for (int c = 0; c < 3; ++c) g += (r[c] - l[c]) * (r[c] - l[c]) + (d[c] - u[c]) * (d[c] - u[c]);
    return g;
  };
  std::vector<SlicCenter> centers;
  for (Index i = 0; i < ny; ++i)
    for (Index j = 0; j < nx; ++j) {
      Index cy = std::min<Index>(h - 1, static_cast<Index>((static_cast<double>(i) + 0.5) * static_cast<double>(h) / static_cast<double>(ny)));
      Index cx = std::min<Index>(w - 1, static_cast<Index>((static_cast<double>(j) + 0.5) * static_cast<double>(w) / static_cast<double>(nx)));
      Index by = cy, bx = cx;
      double best = gradient(cy, cx);
      for (Index dy = -1; dy <= 1; ++dy)
        for (Index dx = -1; dx <= 1; ++dx) {
          const Index y = cy + dy, x = cx + dx;
          if (y < 0 || y >= h || x < 0 || x >= w) continue;
          const double g = gradient(y, x);
          if (g < best) {
            best = g;
            by = y;
            bx = x;
          }
        }
      const float* p = px(by, bx);
      centers.push_back({p[0], p[1], p[2], static_cast<double>(by), static_cast<double>(bx)});
    }
  Segmentation seg;
  seg.spacing = spacing;
  for (int it = 0; it < cfg.iterations; ++it) {
    seg.assignment = slic_assign(lab, centers, spacing, cfg.compactness);
    seg.centers = centers;
    std::vector<std::array<double, 6>> sums(centers.size(), {0, 0, 0, 0, 0, 0});
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        auto& s = sums[static_cast<std::size_t>(seg.assignment(y, x))];
        const float* p = px(y, x);
        s[0] += p[0];
        s[1] += p[1];
        s[2] += p[2];
        s[3] += static_cast<double>(y);
        s[4] += static_cast<double>(x);
        s[5] += 1.0;
      }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const auto& s = sums[k];
      if (s[5] == 0.0) continue;
      centers[k] = {s[0] / s[5], s[1] / s[5], s[2] / s[5], s[3] / s[5], s[4] / s[5]};
    }
  }
  seg.labels = enforce_connectivity(seg.assignment, seg.count);
  return seg;
}

double deletion_area(std::span<const double> fractions, std::span<const double> scores) {
  if (fractions.size() != scores.size() || fractions.size() < 2) {
    throw InvalidArgument("deletion curve needs matching fraction and score lists of length >= 2");
  }
  double area = 0.0;
  for (std::size_t i = 1; i < fractions.size(); ++i) {
    area += 0.5 * (scores[i] + scores[i - 1]) * (fractions[i] - fractions[i - 1]);
  }
  return area;
}

double deletion_area(const DeletionCurve& curve) { return deletion_area(curve.fractions, curve.scores); }

std::vector<Index> deletion_order(const Tensor& saliency) {
  check_map(saliency, "deletion_order");
  std::vector<Index> order(static_cast<std::size_t>(saliency.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return saliency[a] > saliency[b]; });
  return order;
}

Tensor neutral_image(const Tensor& image) { return gaussian_blur(image, 11, 10.0); }

std::vector<DeletionCurve> deletion_curves(const VariantSet& variants, const Tensor& image,
                                           std::span<const Tensor> saliencies, Index steps) {
  check_variant_image(variants, image);
  if (saliencies.size() != variants.size()) throw InvalidArgument("one saliency map per variant required");
  if (steps < 1) throw InvalidArgument("deletion needs at least one step");
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2), hw = h * w;
  const Tensor neutral = neutral_image(image);
  std::vector<DeletionCurve> out;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    if (saliencies[v].shape() != Shape{h, w}) {
      throw ShapeError("saliency " + shape_to_string(saliencies[v].shape()) + " does not match image " +
                       shape_to_string(image.shape()));
    }
    const auto order = deletion_order(saliencies[v]);
    Tensor batch({steps + 1, h, w, c});
    Tensor current = image;
    Index removed = 0;
    for (Index t = 0; t <= steps; ++t) {
      const Index target = t * hw / steps;
      for (; removed < target; ++removed) {
        const Index p = order[static_cast<std::size_t>(removed)];
        for (Index ch = 0; ch < c; ++ch) current[p * c + ch] = neutral[p * c + ch];
      }
      std::copy(current.data(), current.data() + current.size(), batch.data() + t * current.size());
    }
    VariantSet one{variants.base, {variants.calibrators[v]}, {variants.classes[v]}};
    DeletionCurve curve;
    curve.scores = normalized_scores(one, batch).front();
    for (Index t = 0; t <= steps; ++t) curve.fractions.push_back(static_cast<double>(t) / static_cast<double>(steps));
    curve.area = deletion_area(curve);
    out.push_back(std::move(curve));
  }
  return out;
}

DeletionCurve deletion_curve(const CalibratedModel& model, const Tensor& image, const Tensor& saliency, Index steps) {
  const Index cls = model.predict(image).predicted_class;
  const Tensor maps[] = {saliency};
  return deletion_curves(single_variant(model, cls), image, maps, steps).front();
}

std::vector<DeletionCurve> random_baseline_curves(const VariantSet& variants, const Tensor& image,
                                                  const Segmentation& segments, const RandomBaselineConfig& cfg,
                                                  std::uint64_t seed) {
  check_variant_image(variants, image);
  if (cfg.orders < 1 || cfg.steps < 1) throw InvalidArgument("random baseline needs orders >= 1 and steps >= 1");
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2), hw = h * w;
  if (segments.labels.rows() != h || segments.labels.cols() != w) throw ShapeError("segmentation does not match image");
  const Tensor neutral = neutral_image(image);
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(segments.count));
  for (Index p = 0; p < hw; ++p) members[static_cast<std::size_t>(segments.labels.data()[p])].push_back(p);
  const Index k = segments.count;
  std::vector<std::vector<double>> sums(variants.size(), std::vector<double>(static_cast<std::size_t>(cfg.steps + 1), 0.0));
  for (Index o = 0; o < cfg.orders; ++o) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(o)}));
    std::vector<Index> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    for (Index i = k - 1; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(uniform_below(rng, i + 1))]);
    Tensor batch({k + 1, h, w, c});
    Tensor current = image;
    std::vector<double> fractions{0.0};
    std::copy(current.data(), current.data() + current.size(), batch.data());
    Index removed = 0;
    for (Index i = 0; i < k; ++i) {
      for (Index p : members[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]) {
        for (Index ch = 0; ch < c; ++ch) current[p * c + ch] = neutral[p * c + ch];
        ++removed;
      }
      fractions.push_back(static_cast<double>(removed) / static_cast<double>(hw));
      std::copy(current.data(), current.data() + current.size(), batch.data() + (i + 1) * current.size());
    }
    const auto scores = normalized_scores(variants, batch);
    for (std::size_t v = 0; v < variants.size(); ++v) {
      std::size_t seg = 0;
      for (Index t = 0; t <= cfg.steps; ++t) {
        const double f = static_cast<double>(t) / static_cast<double>(cfg.steps);
        while (seg + 1 < fractions.size() - 1 && fractions[seg + 1] < f) ++seg;
        const double f0 = fractions[seg], f1 = fractions[seg + 1];
        const double s0 = scores[v][seg], s1 = scores[v][seg + 1];
        const double value = f1 > f0 ? s0 + (s1 - s0) * (f - f0) / (f1 - f0) : s1;
        sums[v][static_cast<std::size_t>(t)] += value;
      }
    }
  }
  std::vector<DeletionCurve> out;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    DeletionCurve curve;
    for (Index t = 0; t <= cfg.steps; ++t) {
      curve.fractions.push_back(static_cast<double>(t) / static_cast<double>(cfg.steps));
      curve.scores.push_back(sums[v][static_cast<std::size_t>(t)] / static_cast<double>(cfg.orders));
    }
    curve.area = deletion_area(curve);
    out.push_back(std::move(curve));
  }
  return out;
}

DeletionCurve random_baseline_curve(const CalibratedModel& model, const Tensor& image, std::uint64_t seed,
                                    const RandomBaselineConfig& cfg) {
  const Index cls = model.predict(image).predicted_class;
  const Segmentation seg = slic_superpixels(image, cfg.slic);
  return random_baseline_curves(single_variant(model, cls), image, seg, cfg, seed).front();
}

double mean_absolute_difference(const DeletionCurve& a, const DeletionCurve& b) {
  if (a.scores.size() != b.scores.size() || a.scores.empty()) throw InvalidArgument("curves differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < a.scores.size(); ++i) total += std::abs(a.scores[i] - b.scores[i]);
  return total / static_cast<double>(a.scores.size());
}

double btr_ratio(std::span<const EvalRecord> records, std::string_view method, std::string_view variant) {
  Index selected = 0, better = 0;
  for (const EvalRecord& r : records) {
    if (r.method != method || r.variant != variant) continue;
    ++selected;
    if (r.deletion_area < r.random_area) ++better;
  }
  if (selected == 0) {
    throw InvalidArgument("no records for method '" + std::string(method) + "' and variant '" + std::string(variant) + "'");
  }
  return static_cast<double>(better) / static_cast<double>(selected);
}

double otsu_threshold(const Tensor& map) {
  check_map(map, "otsu_threshold");
  if (map.empty()) throw InvalidArgument("otsu_threshold of an empty map");
  std::array<double, 256> hist{};
  for (float v : map.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw InvalidArgument("otsu_threshold expects values in [0, 1]");
    hist[static_cast<std::size_t>(std::min(255, static_cast<int>(v * 256.0f)))] += 1.0;
  }
  const double n = static_cast<double>(map.size());
  double total_mean = 0.0;
  for (int b = 0; b < 256; ++b) total_mean += b * hist[static_cast<std::size_t>(b)];
  double w0 = 0.0, sum0 = 0.0, best = 0.0;
  int best_t = -1;
  for (int t = 0; t < 255; ++t) {
    w0 += hist[static_cast<std::size_t>(t)];
    sum0 += t * hist[static_cast<std::size_t>(t)];
    const double w1 = n - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double mu0 = sum0 / w0, mu1 = (total_mean - sum0) / w1;
    const double between = (w0 / n) * (w1 / n) * (mu0 - mu1) * (mu0 - mu1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return best_t < 0 ? 1.0 : static_cast<double>(best_t + 1) / 256.0;
}

std::int64_t binary_total_variation(const Tensor& map, double threshold) {
  check_map(map, "binary_total_variation");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidArgument("threshold must lie in [0, 1]");
  const Index h = map.dim(0), w = map.dim(1);
  auto fg = [&](Index y, Index x) { return static_cast<double>(map[y * w + x]) >= threshold; };
  std::int64_t tv = 0;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      if (x + 1 < w && fg(y, x) != fg(y, x + 1)) ++tv;
      if (y + 1 < h && fg(y, x) != fg(y + 1, x)) ++tv;
    }
  return tv;
}

double lipschitz_estimate(const SaliencyFunction& saliency, const Tensor& image, const LipschitzConfig& cfg,
                          std::uint64_t seed) {
  if (!(cfg.radius > 0.0) || cfg.neighbors < 1) throw InvalidArgument("lipschitz needs radius > 0 and neighbors >= 1");
  const Tensor base = saliency(image);
  const Index d = image.size();
  const double sigma = cfg.radius / std::sqrt(static_cast<double>(d));
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  double best = 0.0;
  for (Index k = 0; k < cfg.neighbors; ++k) {
    Tensor neighbor(image.shape());
    double input_dist = 0.0;
    while (true) {
      std::vector<double> delta(static_cast<std::size_t>(d));
      double norm = 0.0;
      for (double& v : delta) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      const double shrink = norm > cfg.radius ? cfg.radius / norm : 1.0;
      input_dist = 0.0;
      for (Index i = 0; i < d; ++i) {
        const float x = std::clamp(static_cast<float>(image[i] + shrink * delta[static_cast<std::size_t>(i)]), 0.0f, 1.0f);
        neighbor[i] = x;
        const double diff = static_cast<double>(x) - image[i];
        input_dist += diff * diff;
      }
      if (input_dist > 0.0) break;
    }
    const Tensor other = saliency(neighbor);
    if (other.shape() != base.shape()) throw ShapeError("saliency function changed its output shape");
    double out_dist = 0.0;
    for (Index i = 0; i < base.size(); ++i) {
      const double diff = static_cast<double>(other[i]) - base[i];
      out_dist += diff * diff;
    }
    best = std::max(best, std::sqrt(out_dist) / std::sqrt(input_dist));
  }
  return best;
}

}  // namespace salcal
