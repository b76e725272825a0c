#include "salcal/ece.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>

#include "salcal/error.hpp"
#include "salcal/model.hpp"

namespace salcal {

namespace {

constexpr int kGridPoints = 1000;

void check_inputs(std::span<const double> confidences, std::span<const std::uint8_t> correct) {
  if (confidences.empty()) throw InvalidArgument("calibration error of an empty sample");
  if (confidences.size() != correct.size()) throw InvalidArgument("confidences and correctness differ in length");
  for (double c : confidences) {
    if (!(c >= 0.0 && c <= 1.0)) throw InvalidArgument("confidences must lie in [0, 1]");
  }
}

double bandwidth(std::span<const double> x) {
  const auto n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  if (*lo == *hi) return 0.0;  // the summed mean may be off by an ulp
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (n - 1.0));
  return 1.06 * sd * std::pow(n, -0.2);
}

}  // namespace

ConfidenceData confidence_data(const Tensor& scores, std::span<const Index> labels) {
  if (scores.rank() != 2 || scores.dim(0) != static_cast<Index>(labels.size())) {
    throw ShapeError("confidence_data: scores " + shape_to_string(scores.shape()) + " do not match labels");
  }
  ConfidenceData d;
  const Index c = scores.dim(1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::span<const float> row(scores.data() + static_cast<Index>(i) * c, static_cast<std::size_t>(c));
    const Index z = argmax(row);
    d.confidence.push_back(row[static_cast<std::size_t>(z)]);
    d.correct.push_back(z == labels[i] ? 1 : 0);
  }
  return d;
}

double ece_binned(std::span<const double> confidences, std::span<const std::uint8_t> correct, int bins) {
  check_inputs(confidences, correct);
  if (bins < 1) throw InvalidArgument("ece_binned needs at least one bin");
  std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0), hits(static_cast<std::size_t>(bins), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const auto b = static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(confidences[i] * bins)));
    conf_sum[b] += confidences[i];
    hits[b] += correct[i] ? 1.0 : 0.0;
    ++count[b];
  }
  double ece = 0.0;
  const auto n = static_cast<double>(confidences.size());
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] == 0) continue;
    const auto nb = static_cast<double>(count[b]);
    ece += nb / n * std::abs(hits[b] / nb - conf_sum[b] / nb);
  }
  return ece;
}

ReliabilityCurve reliability_curve(std::span<const double> confidences, std::span<const std::uint8_t> correct) {
  check_inputs(confidences, correct);
  if (confidences.size() < 10) throw InvalidArgument("reliability estimates need at least 10 samples");
  ReliabilityCurve curve;
  const double h = bandwidth(confidences);
  const double lo = *std::min_element(confidences.begin(), confidences.end());
  if (!(h > 0.0) || lo >= 1.0) {
    double acc = 0.0;
    for (auto c : correct) acc += c;
    curve.confidence = {confidences[0]};
    curve.accuracy = {acc / static_cast<double>(correct.size())};
    curve.density = {1.0};
    return curve;
  }
  const auto n = static_cast<double>(confidences.size());
  const double norm = 1.0 / (n * h * std::sqrt(2.0 * std::numbers::pi));
  for (int g = 0; g < kGridPoints; ++g) {
    const double s = lo + (1.0 - lo) * g / (kGridPoints - 1);
    double k_sum = 0.0, k_hit = 0.0;
    for (std::size_t i = 0; i < confidences.size(); ++i) {
      const double u = (s - confidences[i]) / h;
      const double k = std::exp(-0.5 * u * u);
      k_sum += k;
      if (correct[i]) k_hit += k;
    }
    curve.confidence.push_back(s);
    curve.accuracy.push_back(k_sum > 0.0 ? k_hit / k_sum : s);
    curve.density.push_back(k_sum * norm);
  }
  return curve;
}

double ece_density(std::span<const double> confidences, std::span<const std::uint8_t> correct) {
  const ReliabilityCurve curve = reliability_curve(confidences, correct);
  if (curve.confidence.size() < 2) {
    std::cerr << "warning: confidences have zero variance, using the binned ECE estimator\n";
    return ece_binned(confidences, correct);
  }
  const double ds = curve.confidence[1] - curve.confidence[0];
  double ece = 0.0;
  for (std::size_t g = 0; g < curve.confidence.size(); ++g) {
    ece += std::abs(curve.accuracy[g] - curve.confidence[g]) * curve.density[g] * ds;
  }
  return std::clamp(ece, 0.0, 1.0);
}

}  // namespace salcal
