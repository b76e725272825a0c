#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>

#include "oracles.hpp"
#include "salcal/evaluation.hpp"
#include "salcal/imaging.hpp"

using namespace salcal;

namespace {

Tensor random_map(Index h, Index w, std::uint64_t seed) { return oracle::random_image(h, w, 1, seed).reshaped({h, w}); }

// Smooth blobs, closer to real saliency than white noise.
Tensor blob_map(Index h, Index w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor m({h, w});
  for (int k = 0; k < 3; ++k) {
    const double cy = u(rng) * h, cx = u(rng) * w, s = 2.0 + 4.0 * u(rng), a = u(rng);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        m[y * w + x] += static_cast<float>(a * std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (2 * s * s)));
  }
  return normalize_minmax(m);
}

ClassifierModel constant_model(Index h, Index w, Index c) {
  ClassifierModel m;
  m.input_shape = {h, w, c};
  m.num_classes = 2;
  m.layers = {LayerSpec::flatten(), LayerSpec::dense(h * w * c, 2), LayerSpec::softmax()};
  m.layers[1].bias = Tensor({2}, {0.4f, -0.1f});
  return m;
}

// Class 0 logit = 20 (mean over the square region - 0.7); class 1 logit = 0.
constexpr Index kSide = 32, kTop = 10, kLeft = 14, kSquare = 8;

bool in_square(Index y, Index x) { return y >= kTop && y < kTop + kSquare && x >= kLeft && x < kLeft + kSquare; }

ClassifierModel square_detector() {
  ClassifierModel m;
  m.input_shape = {kSide, kSide, 1};
  m.num_classes = 2;
  m.layers = {LayerSpec::flatten(), LayerSpec::dense(kSide * kSide, 2), LayerSpec::softmax()};
  for (Index y = 0; y < kSide; ++y)
    for (Index x = 0; x < kSide; ++x)
      if (in_square(y, x)) m.layers[1].weight[(y * kSide + x) * 2] = 20.0f / (kSquare * kSquare);
  m.layers[1].bias = Tensor({2}, {-14.0f, 0.0f});
  return m;
}

Tensor square_image() {
  Tensor x({kSide, kSide, 1});
  for (Index y = 0; y < kSide; ++y)
    for (Index xx = 0; xx < kSide; ++xx) x[y * kSide + xx] = in_square(y, xx) ? 1.0f : 0.0f;
  return x;
}

double first_fraction_below(const DeletionCurve& c, double level) {
  for (std::size_t i = 0; i < c.scores.size(); ++i)
    if (c.scores[i] < level) return c.fractions[i];
  return 2.0;
}

// 11 x 11 Gaussian blur with sigma 10 and replicated borders, in double.
std::vector<double> blur_oracle(const Tensor& image) {
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2);
  double k[11], ks = 0.0;
  for (int i = 0; i < 11; ++i) ks += k[i] = std::exp(-(i - 5) * (i - 5) / 200.0);
  std::vector<double> out(static_cast<std::size_t>(image.size()));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int a = 0; a < 11; ++a)
          for (int b = 0; b < 11; ++b) {
            const Index yy = std::clamp<Index>(y + a - 5, 0, h - 1), xx = std::clamp<Index>(x + b - 5, 0, w - 1);
            acc += k[a] * k[b] * image[(yy * w + xx) * c + ch];
          }
        out[static_cast<std::size_t>((y * w + x) * c + ch)] = acc / (ks * ks);
      }
  return out;
}

bool four_connected(const LabelMap& labels, Index count) {
  const Index h = labels.rows(), w = labels.cols();
  std::vector<Index> size(static_cast<std::size_t>(count), 0), reached(static_cast<std::size_t>(count), 0);
  std::vector<bool> seen(static_cast<std::size_t>(h * w), false), started(static_cast<std::size_t>(count), false);
  for (Index i = 0; i < h * w; ++i) ++size[static_cast<std::size_t>(labels(i / w, i % w))];
  for (Index i = 0; i < h * w; ++i) {
    const auto l = static_cast<std::size_t>(labels(i / w, i % w));
    if (started[l]) continue;
    started[l] = true;
    std::queue<Index> q;
    q.push(i);
    seen[static_cast<std::size_t>(i)] = true;
    while (!q.empty()) {
      const Index p = q.front();
      q.pop();
      ++reached[l];
      const Index y = p / w, x = p % w;
      const Index ny[] = {y - 1, y + 1, y, y}, nx[] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
        const Index n = ny[k] * w + nx[k];
        if (seen[static_cast<std::size_t>(n)] || static_cast<std::size_t>(labels(ny[k], nx[k])) != l) continue;
        seen[static_cast<std::size_t>(n)] = true;
        q.push(n);
      }
    }
  }
  return reached == size;
}

EvalRecord record(double area, double random) {
  EvalRecord r;
  r.method = "m";
  r.variant = "v";
  r.deletion_area = area;
  r.random_area = random;
  return r;
}

}  // namespace

TEST_CASE("SSIM is one on identical maps, symmetric and bounded") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Tensor a = blob_map(24, 20, seed), b = random_map(24, 20, seed + 10);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-9);
    CHECK(std::abs(ssim(a, b)) <= 1.0);
  }
  CHECK_THROWS_AS(ssim(Tensor({12, 12}), Tensor({12, 13})), ShapeError);
  CHECK_THROWS(ssim(Tensor({10, 12}), Tensor({10, 12})));
}

TEST_CASE("SSIM matches the per-window oracle") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const Tensor a = seed % 2 ? blob_map(20, 23, seed) : random_map(20, 23, seed);
    const Tensor b = blob_map(20, 23, seed + 50);
    CHECK(std::abs(ssim(a, b) - oracle::ssim(a, b)) <= 1e-6);
  }
  const Tensor zeros({16, 16}), ones = Tensor::filled({16, 16}, 1.0f);
  CHECK(std::abs(ssim(zeros, ones) - oracle::ssim(zeros, ones)) <= 1e-6);
  CHECK(ssim(zeros, ones) == doctest::Approx(1e-4 / (1.0 + 1e-4)).epsilon(1e-6));
}

TEST_CASE("Otsu threshold splits a bimodal map and matches exhaustive search") {
  Tensor bimodal({8, 8});
  for (Index i = 0; i < 64; ++i) bimodal[i] = i % 2 ? 0.9f : 0.1f;
  const double t = otsu_threshold(bimodal);
  CHECK(t > 0.1);
  CHECK(t <= 0.9);
  CHECK(binary_total_variation(bimodal, t) == oracle::binary_tv(bimodal, t));
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Tensor m = seed % 2 ? blob_map(16, 16, seed) : random_map(16, 16, seed);
    CHECK(otsu_threshold(m) == oracle::otsu(m));
  }
  CHECK(otsu_threshold(Tensor::filled({5, 5}, 0.3f)) == 1.0);
  CHECK(binary_total_variation(Tensor::filled({5, 5}, 0.3f), 1.0) == 0);
}

TEST_CASE("binary total variation counts differing neighbour pairs") {
  CHECK(binary_total_variation(Tensor::filled({6, 6}, 1.0f), 0.5) == 0);
  Tensor single({7, 7});
  single[3 * 7 + 3] = 1.0f;
  CHECK(binary_total_variation(single, 0.5) == 4);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Tensor m = random_map(13, 17, seed);
    for (double th : {0.2, 0.5, 0.77}) CHECK(binary_total_variation(m, th) == oracle::binary_tv(m, th));
  }
}

TEST_CASE("deletion area is the trapezoidal integral") {
  const std::vector<double> f{0.0, 0.5, 1.0};
  CHECK(deletion_area(f, std::vector<double>{1.0, 1.0, 1.0}) == 1.0);
  CHECK(std::abs(deletion_area(f, std::vector<double>{1.0, 0.5, 0.0}) - 0.5) <= 1e-12);
  const auto smooth = [](double t) { return std::exp(-3.0 * t) * (1.0 + 0.2 * std::sin(7.0 * t)); };
  const auto bump = [](double t) { return 1.0 / (1.0 + 25.0 * t * t); };
  for (const auto& g : {std::function<double(double)>(smooth), std::function<double(double)>(bump)}) {
    std::vector<double> x, y;
    for (int i = 0; i <= 100; ++i) {
      x.push_back(i / 100.0);
      y.push_back(g(i / 100.0));
    }
    CHECK(std::abs(deletion_area(x, y) - oracle::riemann(g, 1000)) <= 1e-3);
  }
}

TEST_CASE("deletion order is by descending saliency with row-major ties") {
  const Tensor m({2, 3}, {0.5f, 0.9f, 0.5f, 0.1f, 0.9f, 0.5f});
  CHECK(deletion_order(m) == std::vector<Index>{1, 4, 0, 2, 5, 3});
}

TEST_CASE("neutral image is the Gaussian blur with replicated borders") {
  const Tensor x = oracle::random_image(14, 12, 3, 4);
  const Tensor n = neutral_image(x);
  const auto want = blur_oracle(x);
  for (Index i = 0; i < x.size(); ++i) CHECK(std::abs(n[i] - want[static_cast<std::size_t>(i)]) <= 1e-5);
}

TEST_CASE("deletion curves start at one and stay flat for a constant model") {
  const ClassifierModel m = constant_model(16, 16, 3);
  const Calibrator id = IdentityCalibrator{};
  const Calibrator t = TemperatureScaler{2.0};
  const VariantSet vs{&m, {&id, &t}, {0, 0}};
  const Tensor x = oracle::random_image(16, 16, 3, 1);
  const Tensor maps[] = {random_map(16, 16, 2), random_map(16, 16, 3)};
  for (const DeletionCurve& c : deletion_curves(vs, x, maps, 100)) {
    REQUIRE(c.fractions.size() == 101);
    CHECK(c.fractions.front() == 0.0);
    CHECK(c.fractions.back() == 1.0);
    for (double s : c.scores) CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(c.area == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("deletion in saliency order beats the reversed order on a square detector") {
  const ClassifierModel m = square_detector();
  const Calibrator id = IdentityCalibrator{};
  const Tensor x = square_image();
  REQUIRE(predict(m, x).predicted_class == 0);
  Tensor aligned({kSide, kSide});
  for (Index y = 0; y < kSide; ++y)
    for (Index xx = 0; xx < kSide; ++xx) aligned[y * kSide + xx] = in_square(y, xx) ? 1.0f : 0.0f;
  Tensor reversed = aligned;
  for (float& v : reversed.values()) v = 1.0f - v;
  const Tensor maps[] = {aligned, reversed};
  const VariantSet vs{&m, {&id, &id}, {0, 0}};
  const auto curves = deletion_curves(vs, x, maps, 100);
  CHECK(curves[0].scores.front() == 1.0);
  CHECK(first_fraction_below(curves[0], 0.5) < 0.3);
  CHECK(first_fraction_below(curves[1], 0.5) >= 0.5);
  CHECK(curves[0].area < curves[1].area);
}

TEST_CASE("deleting every pixel leaves exactly the neutral image") {
  const ClassifierModel m = square_detector();
  const Calibrator id = IdentityCalibrator{};
  const Tensor x = square_image();
  const Tensor once = neutral_image(x);
  Tensor zero_map({kSide, kSide});
  const Tensor maps[] = {zero_map};
  const auto on_neutral = deletion_curves({&m, {&id}, {0}}, x, maps, 10);
  // The final step deletes everything, leaving exactly the blurred image.
  const double s_blur = calibrated_scores(id, forward_logits(m, as_batch(once)))[0];
  const double s_clean = calibrated_scores(id, forward_logits(m, as_batch(x)))[0];
  CHECK(on_neutral[0].scores.back() == doctest::Approx(s_blur / s_clean).epsilon(1e-6));
}

TEST_CASE("random baseline is deterministic and flat for a constant model") {
  const ClassifierModel m = constant_model(24, 24, 3);
  const Calibrator id = IdentityCalibrator{};
  const Tensor x = oracle::random_image(24, 24, 3, 8);
  const Segmentation seg = slic_superpixels(x);
  for (const DeletionCurve& c : random_baseline_curves({&m, {&id}, {0}}, x, seg, {}, 3))
    for (double s : c.scores) CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  const ClassifierModel net = oracle::random_cnn(24, 24, 3, 2, 5);
  const Calibrator t = TemperatureScaler{1.5};
  const VariantSet vs{&net, {&id, &t}, {0, 0}};
  const auto a = random_baseline_curves(vs, x, seg, {}, 3);
  const auto b = random_baseline_curves(vs, x, seg, {}, 3);
  const auto c = random_baseline_curves(vs, x, seg, {}, 4);
  CHECK(a[0].scores == b[0].scores);
  CHECK(a[1].scores == b[1].scores);
  CHECK(a[0].scores != c[0].scores);
  CHECK(a[0].fractions.size() == 101);
  CHECK(a[0].scores.front() == 1.0);
  CHECK(mean_absolute_difference(a[0], a[0]) == 0.0);
}

TEST_CASE("SLIC labels are in range, 4-connected and deterministic") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const Tensor x = oracle::random_image(32, 28, 3, seed);
    const Segmentation s = slic_superpixels(x);
    CHECK(s.labels.minCoeff() == 0);
    CHECK(s.labels.maxCoeff() == s.count - 1);
    CHECK(four_connected(s.labels, s.count));
    CHECK((slic_superpixels(x).labels == s.labels).all());
  }
  const Segmentation g = slic_superpixels(Tensor::filled({32, 32, 3}, 0.4f));
  CHECK(g.count >= 80);
  CHECK(g.count <= 120);
  CHECK(four_connected(g.labels, g.count));
  CHECK_THROWS(slic_superpixels(Tensor({4, 4, 3}), {.target_segments = 17}));
}

TEST_CASE("SLIC assignment picks the nearest center within the window") {
  const Tensor x = oracle::random_image(24, 24, 3, 9);
  const Segmentation s = slic_superpixels(x, {.target_segments = 36});
  const Tensor lab = to_lab(x);
  const double S = s.spacing, m = 10.0;
  Index mismatches = 0;
  for (Index y = 0; y < 24; ++y)
    for (Index xx = 0; xx < 24; ++xx) {
      const float* p = lab.data() + (y * 24 + xx) * 3;
      const auto dist = [&](const SlicCenter& c) {
        const double dl = p[0] - c.l, da = p[1] - c.a, db = p[2] - c.b, dy = y - c.y, dx = xx - c.x;
        return dl * dl + da * da + db * db + (dy * dy + dx * dx) / (S * S) * m * m;
      };
      Index best = -1;
      double best_d = INFINITY;
      for (std::size_t k = 0; k < s.centers.size(); ++k) {
        const SlicCenter& c = s.centers[k];
        if (std::abs(c.y - y) > S || std::abs(c.x - xx) > S) continue;
        const double d = dist(c);
        if (d < best_d) {
          best_d = d;
          best = static_cast<Index>(k);
        }
      }
      if (best < 0) {
        for (std::size_t k = 0; k < s.centers.size(); ++k) {
          const double d = dist(s.centers[k]);
          if (d < best_d) {
            best_d = d;
            best = static_cast<Index>(k);
          }
        }
      }
      mismatches += s.assignment(y, xx) != best ? 1 : 0;
    }
  CHECK(mismatches == 0);
}

TEST_CASE("BTR counts strictly smaller method areas") {
  const std::vector<EvalRecord> smaller{record(0.2, 0.5), record(0.1, 0.3)};
  CHECK(btr_ratio(smaller, "m", "v") == 1.0);
  const std::vector<EvalRecord> equal{record(0.4, 0.4), record(0.3, 0.3)};
  CHECK(btr_ratio(equal, "m", "v") == 0.0);
  const std::vector<EvalRecord> mixed{record(0.3, 0.5), record(0.6, 0.5)};
  CHECK(btr_ratio(mixed, "m", "v") == 0.5);
  CHECK_THROWS(btr_ratio(mixed, "m", "other"));
}

TEST_CASE("Lipschitz estimate is zero for a constant map and deterministic in the seed") {
  const Tensor x = oracle::random_image(12, 12, 3, 1);
  const SaliencyFunction constant = [](const Tensor&) { return Tensor({12, 12}); };
  CHECK(lipschitz_estimate(constant, x, {}, 7) == 0.0);
  const ClassifierModel net = oracle::random_cnn(12, 12, 3, 2, 3);
  const Calibrator id = IdentityCalibrator{};
  const SaliencyFunction sens = [&](const Tensor& img) {
    return explain(Method::kSensitivity, {&net, {&id}, {0}}, img, {}, 0).front();
  };
  const double a = lipschitz_estimate(sens, x, {.radius = 0.05, .neighbors = 10}, 7);
  CHECK(a > 0.0);
  CHECK(a == lipschitz_estimate(sens, x, {.radius = 0.05, .neighbors = 10}, 7));
  CHECK_THROWS(lipschitz_estimate(sens, x, {.radius = 0.0}, 7));
}

TEST_CASE("Lipschitz estimate equals the worst sampled ratio") {
  // Identity saliency on a one-channel image: every ratio is 1 up to clamping.
  const Tensor x = Tensor::filled({8, 8, 1}, 0.5f);
  const SaliencyFunction identity = [](const Tensor& img) { return img.reshaped({8, 8}); };
  CHECK(lipschitz_estimate(identity, x, {}, 3) == doctest::Approx(1.0).epsilon(1e-5));
}
