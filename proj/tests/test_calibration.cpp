#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "samplers.hpp"
#include "salcal/calibration.hpp"
#include "salcal/ece.hpp"
#include "salcal/imaging.hpp"

using namespace salcal;

namespace {

Tensor stack_rows(const std::vector<Tensor>& rows) {
  return stack(rows);
}

double binned_of(const Calibrator& cal, const sampler::Predictions& p) {
  const ConfidenceData cd = confidence_data(calibrated_scores(cal, stack_rows(p.logits)), p.labels);
  return ece_binned(cd.confidence, cd.correct, 15);
}

std::vector<Tensor> base_scores(const sampler::Predictions& p) {
  std::vector<Tensor> out;
  for (const Tensor& l : p.logits) out.push_back(calibrated_scores(IdentityCalibrator{}, l));
  return out;
}

// Straightforward binned ECE: for each of 15 bins, |mean accuracy - mean
// confidence| weighted by the bin share.
double ece_reference(const std::vector<double>& conf, const std::vector<std::uint8_t>& correct) {
  std::vector<double> n(15), s(15), a(15);
  for (std::size_t i = 0; i < conf.size(); ++i) {
    const int b = std::min(14, static_cast<int>(conf[i] * 15));
    n[static_cast<std::size_t>(b)] += 1;
    s[static_cast<std::size_t>(b)] += conf[i];
    a[static_cast<std::size_t>(b)] += correct[i];
  }
  double e = 0;
  for (int b = 0; b < 15; ++b)
    if (n[static_cast<std::size_t>(b)] > 0)
      e += std::abs(a[static_cast<std::size_t>(b)] - s[static_cast<std::size_t>(b)]) / static_cast<double>(conf.size());
  return e;
}

}  // namespace

TEST_CASE("binned ECE matches a direct per-bin computation") {
  const auto c = sampler::confidences(3000, 0.2, 1.0, [](double s) { return s * s; }, 3);
  CHECK(ece_binned(c.confidence, c.correct) == doctest::Approx(ece_reference(c.confidence, c.correct)).epsilon(1e-12));
  const std::vector<double> ones{1.0, 1.0};
  const std::vector<std::uint8_t> hit{1, 0};
  CHECK(ece_binned(ones, hit) == doctest::Approx(0.5));
}

TEST_CASE("both ECE estimators are near zero for a calibrated sampler") {
  const auto c = sampler::confidences(5000, 0.3, 1.0, [](double s) { return s; }, 4);
  CHECK(ece_binned(c.confidence, c.correct) <= 0.02);
  CHECK(ece_density(c.confidence, c.correct) <= 0.03);
}

TEST_CASE("ECE estimators agree on a smoothly miscalibrated sampler") {
  const auto c = sampler::confidences(2500, 0.4, 1.0, [](double s) { return 0.8 * s + 0.1 * std::sin(6 * s); }, 5);
  const double b = ece_binned(c.confidence, c.correct), d = ece_density(c.confidence, c.correct);
  CHECK(b > 0.05);
  CHECK(std::abs(b - d) <= 0.03);
}

TEST_CASE("reliability curve is defined on [min confidence, 1] and degenerates for constant confidence") {
  const auto c = sampler::confidences(500, 0.5, 0.9, [](double s) { return s; }, 6);
  const ReliabilityCurve r = reliability_curve(c.confidence, c.correct);
  CHECK(r.confidence.size() == 1000);
  CHECK(r.confidence.back() == doctest::Approx(1.0));
  CHECK(r.confidence.front() == doctest::Approx(*std::min_element(c.confidence.begin(), c.confidence.end())));
  for (double a : r.accuracy) CHECK((a >= 0.0 && a <= 1.0));
  const std::vector<double> same(20, 0.7);
  std::vector<std::uint8_t> hits(20, 0);
  for (int i = 0; i < 14; ++i) hits[static_cast<std::size_t>(i)] = 1;
  CHECK(reliability_curve(same, hits).confidence.size() == 1);
  CHECK(ece_density(same, hits) == doctest::Approx(ece_binned(same, hits)));
  CHECK_THROWS(reliability_curve(std::vector<double>(5, 0.5), std::vector<std::uint8_t>(5, 1)));
}

TEST_CASE("temperature fitting recovers injected sharpening") {
  for (double k : {0.5, 2.0, 4.0}) {
    const auto p = sampler::sharpened(5000, 4, k, 1.5, 10 + static_cast<std::uint64_t>(k * 10));
    const TemperatureScaler t = fit_temperature(p.logits, p.labels);
    CHECK(t.temperature == doctest::Approx(k).epsilon(0.1));
    CHECK(binned_of(t, p) * 5.0 <= binned_of(IdentityCalibrator{}, p));
  }
}

TEST_CASE("temperature scaling preserves the argmax and T = 1 is the identity") {
  const auto p = sampler::sharpened(200, 3, 2.0, 1.0, 21);
  const Tensor logits = stack_rows(p.logits);
  const Tensor base = calibrated_scores(IdentityCalibrator{}, logits);
  CHECK(calibrated_scores(TemperatureScaler{1.0}, logits) == base);
  const Tensor hot = calibrated_scores(TemperatureScaler{3.7}, logits);
  for (Index i = 0; i < 200; ++i)
    CHECK(argmax(hot.slice_rows(i, 1).values()) == argmax(base.slice_rows(i, 1).values()));
}

TEST_CASE("Dirichlet fit never ends above the identity map") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto p = sampler::sharpened(400, 3, 0.5 + 0.5 * static_cast<double>(seed), 1.2, seed);
    const auto s = base_scores(p);
    const DirichletMap fitted = fit_dirichlet(s, p.labels);
    CHECK(dirichlet_nll(fitted, s, p.labels) <= dirichlet_nll(DirichletMap::identity(3), s, p.labels) + 1e-12);
  }
}

TEST_CASE("Dirichlet calibration undoes a label permutation") {
  const auto p = sampler::permuted(3000, 3, 2.0, 8);
  const auto s = base_scores(p);
  const DirichletMap id = DirichletMap::identity(3);
  const DirichletMap fitted = fit_dirichlet(s, p.labels);
  CHECK(dirichlet_nll(fitted, s, p.labels) < dirichlet_nll(id, s, p.labels));
  const Tensor all = stack(s);
  const auto ece = [&](const DirichletMap& m) {
    const ConfidenceData cd = confidence_data(apply_dirichlet(m, all), p.labels);
    return ece_binned(cd.confidence, cd.correct);
  };
  CHECK(ece(fitted) < ece(id));
}

TEST_CASE("Dirichlet map at identity reproduces the base scores") {
  const auto p = sampler::sharpened(50, 4, 1.0, 1.0, 2);
  const Tensor scores = stack(base_scores(p));
  const Tensor mapped = apply_dirichlet(DirichletMap::identity(4), scores);
  for (Index i = 0; i < scores.size(); ++i) CHECK(mapped[i] == doctest::Approx(scores[i]).epsilon(1e-5));
}

TEST_CASE("calibrated model gradients match the reference through each map") {
  const auto base = std::make_shared<ClassifierModel>(oracle::random_cnn(6, 6, 3, 3, 17));
  const Tensor x = oracle::random_image(6, 6, 3, 18);
  const CalibratedModel cm(base, TemperatureScaler{0.7}, "t");
  const Tensor g = cm.input_gradient(x, 2, GradientTarget::kScore);
  const auto fd = oracle::finite_difference(
      [&](const oracle::Array& a) { return oracle::scores(*base, TemperatureScaler{0.7}, a)[2]; },
      oracle::from_tensor(x));
  CHECK(oracle::relative_error(oracle::from_tensor(g).v, fd) < 1e-3);
}

TEST_CASE("calibrators serialize with provenance") {
  DirichletMap d = DirichletMap::identity(2);
  d.weights(0, 1) = 0.25f;
  d.bias(1) = -0.5f;
  const CalibratorProvenance prov{42, "abc123"};
  for (const Calibrator& c : {Calibrator{TemperatureScaler{1.75}}, Calibrator{d}, Calibrator{IdentityCalibrator{}}}) {
    CalibratorProvenance back_prov;
    const Calibrator back = calibrator_from_json(calibrator_to_json(c, prov), &back_prov);
    CHECK(calibrator_kind(back) == calibrator_kind(c));
    CHECK(back_prov.seed == 42);
    CHECK(back_prov.calibration_set_hash == "abc123");
    const Tensor l({2}, {0.3f, -0.8f});
    CHECK(calibrated_scores(back, l) == calibrated_scores(c, l));
  }
  CHECK_THROWS_AS(calibrator_from_json("{\"kind\":\"platt\"}"), FormatError);
}

TEST_CASE("calibration set hash changes with the data") {
  const std::vector<Tensor> a{Tensor({2}, {0.1f, 0.2f})};
  const std::vector<Tensor> b{Tensor({2}, {0.1f, 0.3f})};
  const std::vector<Index> l{0};
  CHECK(calibration_set_hash(a, l) == calibration_set_hash(a, l));
  CHECK(calibration_set_hash(a, l) != calibration_set_hash(b, l));
}
