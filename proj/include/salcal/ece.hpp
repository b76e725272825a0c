#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "salcal/tensor.hpp"

namespace salcal {

// Predicted-class confidence and correctness per sample.
struct ConfidenceData {
  std::vector<double> confidence;
  std::vector<std::uint8_t> correct;
};

// From scores [N, C] and labels.
ConfidenceData confidence_data(const Tensor& scores, std::span<const Index> labels);

// Equal-width bins on [0, 1]; empty bins contribute nothing.
double ece_binned(std::span<const double> confidences, std::span<const std::uint8_t> correct, int bins = 15);

struct ReliabilityCurve {
  std::vector<double> confidence;  // strictly increasing grid
  std::vector<double> accuracy;    // Nadaraya-Watson estimate of P(correct | confidence)
  std::vector<double> density;     // kernel density of the confidences
};

// Gaussian-kernel estimates with Silverman's bandwidth on a 1000-point grid
// over [min confidence, 1]. Requires n >= 10. With zero confidence variance
// the curve degenerates to a single point.
ReliabilityCurve reliability_curve(std::span<const double> confidences, std::span<const std::uint8_t> correct);

// Sum over the grid of |accuracy(s) - s| * density(s) * ds. Falls back to
// ece_binned (with a warning on stderr) when the confidences have zero variance.
double ece_density(std::span<const double> confidences, std::span<const std::uint8_t> correct);

}  // namespace salcal
