// Acceptance run: one PASS/FAIL line per criterion. Exit status 0 only when
// every criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "samplers.hpp"
#include "salcal/ece.hpp"
#include "salcal/imaging.hpp"
#include "salcal/pipeline.hpp"
#include "salcal/report.hpp"
#include "xml_check.hpp"

using namespace salcal;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Clock {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double sum_of(const Tensor& t) {
  double s = 0.0;
  for (float v : t.values()) s += v;
  return s;
}

double sum_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

Outcome gradient_correctness() {
  Clock clock;
  double worst = 0.0;
  int nets = 0;
  for (std::uint64_t seed = 1; seed <= 24; ++seed) {
    const Index h = 4 + 2 * static_cast<Index>(seed % 3), c = 1 + static_cast<Index>(seed % 3);
    const Index classes = 2 + static_cast<Index>(seed % 4);
    const ClassifierModel m = oracle::random_cnn(h, h, c, classes, 1000 + seed, seed % 2 == 0);
    const Tensor x = oracle::random_image(h, h, c, 2000 + seed);
    const Index cls = static_cast<Index>(seed) % classes;
    const Tensor g = input_gradient(m, x, cls, GradientTarget::kScore);
    const auto fd = oracle::finite_difference(
        [&](const oracle::Array& a) { return oracle::softmax(oracle::logits(m, a))[static_cast<std::size_t>(cls)]; },
        oracle::from_tensor(x), 1e-4);
    worst = std::max(worst, oracle::relative_error(oracle::from_tensor(g).v, fd));
    ++nets;
  }
  const double t = clock.seconds();
  return {worst < 1e-3 && t < 60.0, fmt("%d nets, max relative error %.3g, %.1f s", nets, worst, t)};
}

double binned(const Calibrator& cal, const sampler::Predictions& p) {
  const ConfidenceData cd = confidence_data(calibrated_scores(cal, stack(p.logits)), p.labels);
  return ece_binned(cd.confidence, cd.correct, 15);
}

Outcome temperature_recovery() {
  Clock clock;
  bool ok = true;
  std::string detail;
  for (double k : {0.5, 2.0, 4.0}) {
    const auto p = sampler::sharpened(5000, 4, k, 1.5, 77 + static_cast<std::uint64_t>(k * 4));
    const TemperatureScaler t = fit_temperature(p.logits, p.labels);
    const double before = binned(IdentityCalibrator{}, p), after = binned(t, p);
    ok = ok && std::abs(t.temperature - k) <= 0.1 * k && before >= 5.0 * after;
    detail += fmt("k=%.2g T=%.3f ECE %.4f->%.4f; ", k, t.temperature, before, after);
  }
  const double s = clock.seconds();
  return {ok && s < 60.0, detail + fmt("%.1f s", s)};
}

Outcome ece_estimators() {
  const auto cal = sampler::confidences(5000, 0.3, 1.0, [](double s) { return s; }, 31);
  const double b = ece_binned(cal.confidence, cal.correct), d = ece_density(cal.confidence, cal.correct);
  const auto smooth = sampler::confidences(2500, 0.4, 1.0, [](double s) { return 0.8 * s + 0.1 * std::sin(6 * s); }, 32);
  const double bs = ece_binned(smooth.confidence, smooth.correct), ds = ece_density(smooth.confidence, smooth.correct);
  return {b <= 0.02 && d <= 0.03 && std::abs(bs - ds) <= 0.03,
          fmt("calibrated binned %.4f density %.4f; smooth binned %.4f density %.4f", b, d, bs, ds)};
}

Outcome dirichlet_sanity() {
  bool ok = true;
  int runs = 0;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const auto p = sampler::sharpened(600, 3, 0.4 + 0.5 * static_cast<double>(seed), 1.2, 300 + seed);
    std::vector<Tensor> s;
    for (const Tensor& l : p.logits) s.push_back(calibrated_scores(IdentityCalibrator{}, l));
    const DirichletMap start = fit_dirichlet(s, p.labels, {.max_steps = 0});
    ok = ok && start.weights.isApprox(DirichletMap::identity(3).weights) && start.bias.isZero();
    ok = ok && dirichlet_nll(fit_dirichlet(s, p.labels), s, p.labels) <=
                   dirichlet_nll(DirichletMap::identity(3), s, p.labels) + 1e-12;
    ++runs;
  }
  const auto p = sampler::permuted(3000, 3, 2.0, 41);
  std::vector<Tensor> s;
  for (const Tensor& l : p.logits) s.push_back(calibrated_scores(IdentityCalibrator{}, l));
  const DirichletMap id = DirichletMap::identity(3), fitted = fit_dirichlet(s, p.labels);
  const Tensor all = stack(s);
  const auto ece = [&](const DirichletMap& m) {
    const ConfidenceData cd = confidence_data(apply_dirichlet(m, all), p.labels);
    return ece_binned(cd.confidence, cd.correct);
  };
  const double nll_id = dirichlet_nll(id, s, p.labels), nll_fit = dirichlet_nll(fitted, s, p.labels);
  ok = ok && nll_fit < nll_id && ece(fitted) < ece(id);
  return {ok, fmt("%d runs start at identity and end at or below it; permutation NLL %.4f->%.4f ECE %.4f->%.4f", runs,
                  nll_id, nll_fit, ece(id), ece(fitted))};
}

Outcome ig_completeness(const PreparedExperiment& px) {
  const Calibrator id = IdentityCalibrator{};
  int within = 0, total = 0;
  double worst = 0.0, worst_abs = 0.0, worst_diff = 0.0;
  const std::size_t n = std::min<std::size_t>(50, px.evaluation.size());
  for (std::size_t k = 0; k < n; ++k) {
    const Tensor& x = px.dataset.samples[px.evaluation[k]].image;
    const Index cls = predict(*px.model, x).predicted_class;
    const IgRaw ig = integrated_gradients_raw({px.model.get(), {&id}, {cls}}, x, {.steps = 300});
    const double fx = oracle::scores(*px.model, id, oracle::from_tensor(x))[static_cast<std::size_t>(cls)];
    for (int r = 0; r < 2; ++r) {
      const Tensor ref = Tensor::filled(x.shape(), r == 0 ? 0.0f : 1.0f);
      const double diff = fx - oracle::scores(*px.model, id, oracle::from_tensor(ref))[static_cast<std::size_t>(cls)];
      const double err = std::abs(sum_of(ig.per_reference[0][static_cast<std::size_t>(r)]) - diff) / std::abs(diff);
      if (err > worst) {
        worst = err;
        worst_abs = err * std::abs(diff);
        worst_diff = diff;
      }
      within += err <= 0.01 ? 1 : 0;
      ++total;
    }
  }
  return {n >= 50 && within == total,
          fmt("%zu samples, %d/%d references within 1%%, worst %.4f (error %.4f on score difference %.4f)", n, within,
              total, worst, worst_abs, worst_diff)};
}

Outcome lrp_conservation(const PreparedExperiment& px) {
  int within = 0, total = 0;
  double worst = 0.0;
  const std::size_t n = std::min<std::size_t>(50, px.evaluation.size());
  for (std::size_t k = 0; k < n; ++k) {
    const Tensor& x = px.dataset.samples[px.evaluation[k]].image;
    const Prediction p = predict(*px.model, x);
    const double root = p.scores[p.predicted_class];
    const std::vector<double> r = lrp_input_relevance(*px.model, x, p.predicted_class, root, {.epsilon = 1e-6});
    const double err = std::abs(sum_of(r) - root) / std::abs(root);
    worst = std::max(worst, err);
    within += err <= 0.05 ? 1 : 0;
    ++total;
  }
  return {within == total && total > 0, fmt("%d/%d samples within 5%%, worst %.2e", within, total, worst)};
}

Outcome metric_oracles() {
  double ssim_err = 0.0, area_err = 0.0;
  int otsu_bad = 0, tv_bad = 0;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const Tensor a = oracle::random_image(32, 32, 1, seed).reshaped({32, 32});
    Tensor b = oracle::random_image(32, 32, 1, seed + 100).reshaped({32, 32});
    for (Index i = 0; i < b.size(); ++i) b[i] = 0.5f * b[i] + 0.5f * a[i];
    ssim_err = std::max(ssim_err, std::abs(ssim(a, b) - oracle::ssim(a, b)));
    otsu_bad += otsu_threshold(b) == oracle::otsu(b) ? 0 : 1;
    for (double th : {0.25, 0.5, otsu_threshold(b)}) tv_bad += binary_total_variation(b, th) == oracle::binary_tv(b, th) ? 0 : 1;
    const double rate = 1.0 + 0.2 * static_cast<double>(seed);
    const auto f = [rate](double t) { return std::exp(-rate * t) * (1.0 + 0.1 * std::cos(5.0 * t)); };
    std::vector<double> xs, ys;
    for (int i = 0; i <= 100; ++i) {
      xs.push_back(i / 100.0);
      ys.push_back(f(i / 100.0));
    }
    area_err = std::max(area_err, std::abs(deletion_area(xs, ys) - oracle::riemann(f, 1000)));
  }
  return {ssim_err <= 1e-6 && otsu_bad == 0 && tv_bad == 0 && area_err <= 1e-3,
          fmt("SSIM max diff %.2e; Otsu mismatches %d/30; TV mismatches %d/90; area max diff %.2e", ssim_err, otsu_bad,
              tv_bad, area_err)};
}

struct ProtocolRun {
  PreparedExperiment px;
  ExperimentResult result;
  double seconds = 0.0;
  std::string per_sample;
};

ProtocolRun run_protocol(const ExperimentConfig& cfg) {
  Clock clock;
  ProtocolRun run;
  run.px = prepare_experiment(cfg);
  run.result = run_experiment(run.px);
  run.seconds = clock.seconds();
  run.per_sample = per_sample_csv(run.result.records);
  return run;
}

std::string five(const FiveNumber& f) {
  return fmt("[%.3f %.3f %.3f %.3f %.3f]", f.min, f.q1, f.median, f.q3, f.max);
}

Outcome protocol(const ProtocolRun& run, const fs::path& work) {
  const ExperimentResult& r = run.result;
  const auto rows = aggregate_records(r.records);
  const auto row = [&](std::string_view method, std::string_view variant) -> const AggregateRow* {
    for (const auto& a : rows)
      if (a.method == method && a.variant == variant) return &a;
    return nullptr;
  };
  std::string detail = fmt("(a) %.1f min for %zu eval samples; ", run.seconds / 60.0, run.px.evaluation.size());
  bool ok = run.seconds < 30.0 * 60.0 && run.px.evaluation.size() == 500;
  for (const char* m : {"meaningful_perturbation", "rise"}) {
    const AggregateRow* a = row(m, "uncalibrated");
    ok = ok && a && a->btr > 0.5;
    detail += fmt("(b) BTR %s %.3f; ", m, a ? a->btr : NAN);
  }
  for (const auto& v : run.px.variants) {
    if (v.name == "uncalibrated") continue;
    const AggregateRow* a = row(method_name(r.methods.front()), v.name);
    ok = ok && a && a->mean_random_curve_mad <= 0.05;
    detail += fmt("(c) baseline MAD %s %.4f; ", v.name.c_str(), a ? a->mean_random_curve_mad : NAN);
  }
  // Informational: difference of the averaged baseline curves, not thresholded.
  for (std::size_t v = 1; v < r.variants.size(); ++v) {
    double mad = 0.0;
    for (std::size_t k = 0; k < r.fractions.size(); ++k) mad += std::abs(r.mean_random[v][k] - r.mean_random[0][k]);
    std::cout << "  mean baseline curve difference " << r.variants[v]
              << fmt(" %.4f", mad / static_cast<double>(r.fractions.size())) << "\n";
  }
  bool identity_one = true, dirichlet_below = false, has_identity = false, has_dirichlet = false;
  for (const EvalRecord& e : r.records) {
    if (e.variant == "identity") {
      has_identity = true;
      identity_one = identity_one && e.ssim_vs_uncalibrated == 1.0;
    }
    if (e.variant == "dirichlet") {
      has_dirichlet = true;
      dirichlet_below = dirichlet_below || e.ssim_vs_uncalibrated < 1.0;
    }
  }
  ok = ok && has_identity && identity_one && has_dirichlet && dirichlet_below;
  detail += fmt("(d) identity SSIM all 1: %s, Dirichlet SSIM < 1 on some: %s", identity_one ? "yes" : "no",
                dirichlet_below ? "yes" : "no");
  for (const auto& a : rows)
    if (a.variant != "uncalibrated")
      std::cout << "  ssim " << a.method << "/" << a.variant << " five-number " << five(a.ssim) << "\n";
  for (const auto& a : rows)
    std::cout << "  " << a.method << "/" << a.variant << fmt(" area %.4f btr %.3f otsu_tv %.1f random %.4f",
                                                              a.mean_deletion_area, a.btr, a.mean_otsu_tv,
                                                              a.mean_random_area)
              << "\n";
  BundleWriter bundle(work / "protocol");
  write_calibration_outputs(run.px, bundle);
  write_experiment_outputs(r, bundle);
  write_manifest(run.px.config, run.px.seeds, "acceptance", bundle);
  bundle.commit();
  return {ok, detail};
}

Outcome sweep(const PreparedExperiment& px, const fs::path& work) {
  const std::vector<double> grid{0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
  const SweepResult s = temperature_sweep(px, grid);
  {
    BundleWriter bundle(work / "sweep");
    write_sweep_outputs(s, bundle);
    bundle.commit();
  }
  bool plots = fs::exists(work / "sweep" / "temperature_sweep.csv");
  int svgs = 0;
  for (const auto& e : fs::directory_iterator(work / "sweep"))
    if (e.path().extension() == ".svg") {
      plots = plots && xml_check::well_formed_svg(slurp(e.path()));
      ++svgs;
    }
  std::size_t best = 0, fitted = 0;
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    if (s.rows[i].quality.ece_binned < s.rows[best].quality.ece_binned) best = i;
    if (s.rows[i].fitted) fitted = i;
  }
  const double t_fit = s.rows[fitted].temperature;
  std::string table;
  for (const SweepRow& row : s.rows) {
    table += fmt("T=%.3g%s ECE %.4f", row.temperature, row.fitted ? "*" : "", row.quality.ece_binned);
    for (double a : row.mean_area) table += fmt(" area %.4f", a);
    table += "; ";
  }
  std::cout << "  sweep " << table << "\n";
  const bool ece_at_fit = best == fitted;
  return {plots && svgs >= 3 && s.rows.size() == grid.size() + 1 && ece_at_fit,
          fmt("%zu rows, %d SVGs, T_fit %.3f, ECE minimum at T=%.3g", s.rows.size(), svgs, t_fit,
              s.rows[best].temperature)};
}

Outcome stability(const PreparedExperiment& px, const fs::path& work) {
  const StabilityMethod constant{"constant", [](const ClassifierModel&, const Calibrator&, Index, const Tensor& image,
                                                std::uint64_t) { return Tensor({image.dim(0), image.dim(1)}); }};
  const StabilityMethod dummy[] = {constant};
  const StabilityResult zero = stability_experiment(px, dummy);
  bool all_zero = !zero.points.empty();
  for (const auto& p : zero.points) all_zero = all_zero && p.lipschitz == 0.0;

  Clock clock;
  const StabilityMethod methods[] = {builtin_stability_method(Method::kSensitivity, px.config.saliency),
                                     builtin_stability_method(Method::kIntegratedGradients, px.config.saliency)};
  const StabilityResult full = stability_experiment(px, methods);
  const double seconds = clock.seconds();
  {
    BundleWriter bundle(work / "stability");
    write_stability_outputs(full, bundle);
    bundle.commit();
  }
  const bool files = fs::exists(work / "stability" / "stability_points.csv") &&
                     fs::exists(work / "stability" / "stability_summary.csv");
  for (const auto& s : full.summaries)
    std::cout << "  lipschitz " << s.method << "/" << s.variant << " " << five(s.summary) << "\n";

  ExperimentConfig gated = px.config;
  gated.stability.methods = {Method::kRise};
  gated.stability.long_run = false;
  bool gate = false;
  try {
    validate_config(gated);
  } catch (const ConfigError&) {
    gate = true;
  }
  gated.stability.long_run = true;
  validate_config(gated);

  const std::size_t points = static_cast<std::size_t>(px.config.stability.points);
  const bool sized = full.points.size() == points * 2 * px.variants.size() && px.config.stability.lipschitz.neighbors == 40;
  return {all_zero && files && sized && seconds < 600.0 && gate,
          fmt("dummy L=0 on %zu points: %s; %zu points x 40 neighbours for sensitivity+IG in %.1f min; long-run gate: %s",
              zero.points.size(), all_zero ? "yes" : "no", points, seconds / 60.0, gate ? "enforced" : "missing")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string config = SALCAL_TOY_CONFIG;
  std::string work = "acceptance-work";
  app.add_option("--config", config, "desk-scale protocol config")->check(CLI::ExistingFile);
  app.add_option("--work", work, "directory for the bundles written on the way");
  CLI11_PARSE(app, argc, argv);
  fs::remove_all(work);
  fs::create_directories(work);

  int failures = 0;
  const auto report = [&](int id, const char* name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << name << ": " << o.detail << std::endl;
  };

  report(1, "gradient correctness", gradient_correctness);
  report(2, "temperature recovery", temperature_recovery);
  report(3, "ECE estimators", ece_estimators);
  report(4, "Dirichlet sanity", dirichlet_sanity);

  ExperimentConfig cfg;
  std::optional<ProtocolRun> first;
  std::string setup_error;
  try {
    cfg = load_config(config);
    cfg.jobs = 1;
    first = run_protocol(cfg);
  } catch (const std::exception& e) {
    setup_error = e.what();
  }
  const auto needs_run = [&](const std::function<Outcome(const ProtocolRun&)>& f) {
    return [&, f] {
      if (!first) return Outcome{false, "protocol run failed: " + setup_error};
      return f(*first);
    };
  };
  report(5, "IG completeness", needs_run([](const ProtocolRun& r) { return ig_completeness(r.px); }));
  report(6, "LRP conservation", needs_run([](const ProtocolRun& r) { return lrp_conservation(r.px); }));
  report(7, "metric oracles", metric_oracles);
  report(8, "desk-scale protocol", needs_run([&](const ProtocolRun& r) { return protocol(r, work); }));
  report(9, "temperature sweep", needs_run([&](const ProtocolRun& r) { return sweep(r.px, work); }));
  report(10, "stability", needs_run([&](const ProtocolRun& r) { return stability(r.px, work); }));
  report(11, "determinism", needs_run([&](const ProtocolRun& r) {
           const ProtocolRun again = run_protocol(cfg);
           const bool same = again.per_sample == r.per_sample;
           return Outcome{same, fmt("second run %s (%zu bytes, %.1f min)", same ? "byte-identical" : "differs",
                                    r.per_sample.size(), again.seconds / 60.0)};
         }));
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
