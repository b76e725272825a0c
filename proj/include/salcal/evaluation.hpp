#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "salcal/saliency.hpp"

namespace salcal {

// Mean local SSIM over all fully contained 11 x 11 Gaussian (sigma 1.5)
// windows, K1 = 0.01, K2 = 0.03, dynamic range 1.
double ssim(const Tensor& a, const Tensor& b);

struct SsimWindow {
  int size = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};
double ssim(const Tensor& a, const Tensor& b, const SsimWindow& window);

using LabelMap = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SlicConfig {
  Index target_segments = 100;
  double compactness = 10.0;
  int iterations = 10;
};

// A cluster center in (l, a, b, y, x).
struct SlicCenter {
  double l = 0, a = 0, b = 0, y = 0, x = 0;
};

struct Segmentation {
  LabelMap labels;  // in [0, count), every segment 4-connected
  Index count = 0;
  // State of the last k-means assignment, before connectivity enforcement.
  LabelMap assignment;
  std::vector<SlicCenter> centers;
  double spacing = 0.0;
};

Segmentation slic_superpixels(const Tensor& image, const SlicConfig& cfg = {});

// One k-means assignment: each pixel goes to the center minimizing
// dc^2 + (ds / S)^2 m^2 among centers within S in both y and x (lowest index on
// ties). Pixels no window reaches take the globally nearest center.
LabelMap slic_assign(const Tensor& lab, std::span<const SlicCenter> centers, double spacing, double compactness);

struct DeletionCurve {
  std::vector<double> fractions;
  std::vector<double> scores;  // normalized by the clean score
  double area = 0.0;
};

// Trapezoidal area under scores over fractions.
double deletion_area(std::span<const double> fractions, std::span<const double> scores);
double deletion_area(const DeletionCurve& curve);

// Pixel indices by descending saliency, ties by row-major index.
std::vector<Index> deletion_order(const Tensor& saliency);

// The image every deletion draws neutral values from: 11 x 11 Gaussian blur,
// sigma 10, replicated borders.
Tensor neutral_image(const Tensor& image);

// Deletion curve per variant, each removing pixels in the order of its own
// map and tracking its own class (variants.classes).
std::vector<DeletionCurve> deletion_curves(const VariantSet& variants, const Tensor& image,
                                           std::span<const Tensor> saliencies, Index steps = 100);
DeletionCurve deletion_curve(const CalibratedModel& model, const Tensor& image, const Tensor& saliency,
                             Index steps = 100);

struct RandomBaselineConfig {
  Index orders = 5;
  Index steps = 100;  // resolution of the common fraction grid
  SlicConfig slic;
};

// Superpixels deleted in random orders, each curve interpolated onto the
// common grid, then averaged. One curve per variant, all sharing the orders.
std::vector<DeletionCurve> random_baseline_curves(const VariantSet& variants, const Tensor& image,
                                                  const Segmentation& segments, const RandomBaselineConfig& cfg,
                                                  std::uint64_t seed);
DeletionCurve random_baseline_curve(const CalibratedModel& model, const Tensor& image, std::uint64_t seed,
                                    const RandomBaselineConfig& cfg = {});

// Mean absolute pointwise difference of two curves on the same grid.
double mean_absolute_difference(const DeletionCurve& a, const DeletionCurve& b);

// Per (sample, method, variant) metrics.
struct EvalRecord {
  Index sample_id = 0;
  Index label = 0;
  std::string method;
  std::string variant;
  Index explained_class = 0;
  double clean_score = 0.0;
  double ssim_vs_uncalibrated = 1.0;
  double deletion_area = 0.0;
  double random_area = 0.0;
  double random_curve_mad = 0.0;  // vs the uncalibrated variant's baseline
  double otsu_threshold = 1.0;
  std::int64_t otsu_tv = 0;
  std::optional<double> lipschitz;
};

// Fraction of the selected records whose method area is strictly below the
// random-baseline area.
double btr_ratio(std::span<const EvalRecord> records, std::string_view method, std::string_view variant);

// Otsu threshold over 256 bins (bin = floor(256 v), v = 1 in the last bin).
// Returns the upper edge of the last background bin; 1.0 for maps without
// two populated bins.
double otsu_threshold(const Tensor& map);

// Pixels with v >= threshold are foreground; counts differing 4-neighbour pairs.
std::int64_t binary_total_variation(const Tensor& map, double threshold);

struct LipschitzConfig {
  double radius = 0.05;
  Index neighbors = 40;
};

// Normalized saliency of an image; the explained class must be fixed by the
// caller.
using SaliencyFunction = std::function<Tensor(const Tensor&)>;

// max over sampled neighbours x' of ||S(x) - S(x')||_2 / ||x - x'||_2.
// Perturbations are Gaussian with per-coordinate sigma radius / sqrt(d),
// shrunk into the radius ball, and the neighbour is clamped to [0, 1].
double lipschitz_estimate(const SaliencyFunction& saliency, const Tensor& image, const LipschitzConfig& cfg,
                          std::uint64_t seed);

}  // namespace salcal
