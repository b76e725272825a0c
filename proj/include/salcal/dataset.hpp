#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "salcal/tensor.hpp"

namespace salcal {

// Inclusive-exclusive pixel rectangle.
struct BoundingBox {
  Index top = 0, left = 0, bottom = 0, right = 0;
  bool contains(Index y, Index x) const { return y >= top && y < bottom && x >= left && x < right; }
  bool operator==(const BoundingBox&) const = default;
};

struct Sample {
  std::string id;
  Tensor image;  // [H, W, C], values in [0, 1]
  Index label = 0;
  std::optional<BoundingBox> box;
};

struct Dataset {
  Shape image_shape;  // {H, W, C}
  Index num_classes = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

// Throws InvalidArgument when labels or shapes are inconsistent.
void validate_dataset(const Dataset& data);

// Images [N, H, W, C] of the given sample indices.
Tensor batch_images(const Dataset& data, std::span<const std::size_t> indices);

enum class ShapeKind { kSquare, kDisc, kCross, kHorizontalBars, kVerticalBars, kRing, kTriangle, kDiagonal, kFrame, kChecker };

struct SynthSpec {
  Index num_classes = 2;
  Index height = 32;
  Index width = 32;
  Index channels = 3;
  std::vector<Index> per_class{100, 100};
  // Amplitude of the uniform pixel noise; background pixels stay within
  // background +- noise.
  float noise = 0.2f;
  float background = 0.5f;
};

// One class-determined bright shape per image at a random position over
// noise. Records the tight bounding box of the shape.
Dataset generate_synthetic_dataset(const SynthSpec& spec, std::uint64_t seed);

// Binary 8-bit PPM (P6) or PGM (P5), scaled to [0, 1].
Tensor read_pnm(const std::filesystem::path& path);
// Writes P6 for 3 channels, P5 for 1; values clamped to [0, 1].
void write_pnm(const Tensor& image, const std::filesystem::path& path);

// Directory of .ppm/.pgm images plus a CSV with columns filename,label.
// Samples keep CSV order.
Dataset load_image_dataset(const std::filesystem::path& dir, const std::filesystem::path& labels_csv,
                           Index num_classes);

}  // namespace salcal
