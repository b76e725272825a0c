#include "salcal/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <thread>

#include "salcal/imaging.hpp"
#include "salcal/model_io.hpp"
#include "salcal/rng.hpp"
#include "salcal/train.hpp"

namespace salcal {

void run_stage(const std::string& stage, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(stage, e.what());
  }
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i = next++; i < n && !failed; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Seeds Seeds::from_master(std::uint64_t master) {
  Seeds s;
  s.master = master;
  s.dataset = derive_seed(master, {hash_tag("dataset")});
  s.split = derive_seed(master, {hash_tag("split")});
  s.train = derive_seed(master, {hash_tag("train")});
  return s;
}

std::uint64_t Seeds::saliency(std::size_t sample, std::string_view method) const {
  return derive_seed(master, {hash_tag("saliency"), sample, hash_tag(method)});
}

std::uint64_t Seeds::random_baseline(std::size_t sample) const {
  return derive_seed(master, {hash_tag("random_baseline"), sample});
}

std::uint64_t Seeds::stability_points() const { return derive_seed(master, {hash_tag("stability")}); }

std::uint64_t Seeds::lipschitz(std::size_t sample, std::string_view method) const {
  return derive_seed(master, {hash_tag("lipschitz"), sample, hash_tag(method)});
}

const TemperatureScaler* PreparedExperiment::fitted_temperature() const {
  for (const auto& v : variants)
    if (v.name == "temperature") return std::get_if<TemperatureScaler>(&v.calibrator);
  return nullptr;
}

namespace {

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out{data.image_shape, data.num_classes, {}};
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) out.samples.push_back(data.samples[i]);
  return out;
}

std::vector<Index> labels_of(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<Index> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) labels.push_back(data.samples[i].label);
  return labels;
}

std::vector<Tensor> rows_of(const Tensor& matrix) {
  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(matrix.dim(0)));
  for (Index i = 0; i < matrix.dim(0); ++i) rows.push_back(matrix.slice_rows(i, 1).reshaped({matrix.dim(1)}));
  return rows;
}

VariantSet variant_set(const ClassifierModel& base, const std::vector<NamedCalibrator>& variants,
                       const Tensor& image) {
  VariantSet vs;
  vs.base = &base;
  const Tensor logits = forward_logits(base, as_batch(image));
  for (const auto& v : variants) {
    vs.calibrators.push_back(&v.calibrator);
    const Tensor scores = calibrated_scores(v.calibrator, logits);
    vs.classes.push_back(argmax(scores.values()));
  }
  return vs;
}

}  // namespace

VariantQuality measure_quality(const std::string& variant, const Tensor& scores, std::span<const Index> labels,
                               int ece_bins) {
  VariantQuality q;
  q.variant = variant;
  const ConfidenceData cd = confidence_data(scores, labels);
  const Index n = scores.dim(0), c = scores.dim(1);
  double nll = 0.0;
  std::size_t hits = 0;
  for (Index i = 0; i < n; ++i) {
    const double p = scores[i * c + labels[static_cast<std::size_t>(i)]];
    nll -= std::log(std::max(p, 1e-300));
    hits += cd.correct[static_cast<std::size_t>(i)];
  }
  q.accuracy = static_cast<double>(hits) / static_cast<double>(n);
  q.nll = nll / static_cast<double>(n);
  q.ece_binned = ece_binned(cd.confidence, cd.correct, ece_bins);
  q.ece_density = ece_density(cd.confidence, cd.correct);
  if (n >= 10) q.reliability = reliability_curve(cd.confidence, cd.correct);
  return q;
}

PreparedExperiment prepare_model(const ExperimentConfig& config) {
  validate_config(config);
  PreparedExperiment px;
  px.config = config;
  px.seeds = Seeds::from_master(config.seed);

  run_stage("dataset", [&] {
    const DatasetConfig& dc = config.dataset;
    if (dc.source == "synthetic") {
      px.dataset = generate_synthetic_dataset(dc.synthetic, px.seeds.dataset);
    } else {
      px.dataset = load_image_dataset(dc.directory, dc.labels_csv, dc.synthetic.num_classes);
    }
    validate_dataset(px.dataset);
    const SplitConfig& sc = config.split;
    const std::size_t need = static_cast<std::size_t>(sc.train + sc.calibration + sc.evaluation);
    if (need > px.dataset.size())
      throw ConfigError("split sizes need " + std::to_string(need) + " samples but the dataset has " +
                        std::to_string(px.dataset.size()));
    std::vector<std::size_t> order(px.dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(px.seeds.split);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    auto take = [&](std::size_t begin, Index count) {
      std::vector<std::size_t> part(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                    order.begin() + static_cast<std::ptrdiff_t>(begin + static_cast<std::size_t>(count)));
      return part;
    };
    px.train = take(0, sc.train);
    px.calibration = take(static_cast<std::size_t>(sc.train), sc.calibration);
    px.evaluation = take(static_cast<std::size_t>(sc.train + sc.calibration), sc.evaluation);
  });

  run_stage("model", [&] {
    const ModelConfig& mc = config.model;
    const Shape& s = px.dataset.image_shape;
    if (!mc.path.empty()) {
      auto model = std::make_shared<ClassifierModel>(load_model(mc.path));
      if (model->input_shape != s || model->num_classes != px.dataset.num_classes)
        throw ConfigError("model " + mc.path.string() + " expects " + shape_to_string(model->input_shape) + " with " +
                          std::to_string(model->num_classes) + " classes; the dataset has " + shape_to_string(s) +
                          " with " + std::to_string(px.dataset.num_classes));
      px.model = std::move(model);
      return;
    }
    TrainConfig tc;
    tc.architecture = mc.architecture == "mlp"
                          ? mlp_architecture(s[0], s[1], s[2], px.dataset.num_classes, mc.hidden)
                          : default_architecture(s[0], s[1], s[2], px.dataset.num_classes, mc.conv1, mc.conv2);
    tc.epochs = mc.epochs;
    tc.batch_size = mc.batch_size;
    tc.learning_rate = mc.learning_rate;
    tc.seed = px.seeds.train;
    px.model = std::make_shared<ClassifierModel>(train_classifier(tc, subset(px.dataset, px.train)));
    px.model_trained = true;
  });
  return px;
}

void fit_calibrators(PreparedExperiment& px) {
  run_stage("calibration", [&] {
    const CalibrationConfig& cc = px.config.calibration;
    const Tensor cal_inputs = batch_images(px.dataset, px.calibration);
    const std::vector<Index> cal_labels = labels_of(px.dataset, px.calibration);
    const std::vector<Tensor> cal_logits = rows_of(forward_logits(*px.model, cal_inputs));
    {
      std::vector<Tensor> images;
      images.reserve(px.calibration.size());
      for (std::size_t i : px.calibration) images.push_back(px.dataset.samples[i].image);
      px.calibration_set_hash = calibration_set_hash(images, cal_labels);
    }

    px.variants.clear();
    px.variants.push_back({"uncalibrated", IdentityCalibrator{}});
    for (const std::string& name : cc.methods) {
      if (name == "temperature") {
        px.variants.push_back({name, fit_temperature(cal_logits, cal_labels)});
      } else if (name == "dirichlet") {
        std::vector<Tensor> scores;
        scores.reserve(cal_logits.size());
        for (const Tensor& l : cal_logits) scores.push_back(calibrated_scores(IdentityCalibrator{}, l));
        px.variants.push_back({name, fit_dirichlet(scores, cal_labels, cc.dirichlet)});
      } else {
        throw ConfigError("unknown calibrator '" + name + "'");
      }
    }
    if (cc.include_identity) px.variants.push_back({"identity", IdentityCalibrator{}});

    const Tensor eval_logits = forward_logits(*px.model, batch_images(px.dataset, px.evaluation));
    const std::vector<Index> eval_labels = labels_of(px.dataset, px.evaluation);
    px.quality.clear();
    for (const auto& v : px.variants)
      px.quality.push_back(
          measure_quality(v.name, calibrated_scores(v.calibrator, eval_logits), eval_labels, cc.ece_bins));
  });
}

PreparedExperiment prepare_experiment(const ExperimentConfig& config) {
  PreparedExperiment px = prepare_model(config);
  fit_calibrators(px);
  return px;
}

namespace {

struct SampleOutput {
  std::vector<EvalRecord> records;
  std::vector<std::vector<std::vector<double>>> curves;  // [method][variant][step]
  std::vector<std::vector<double>> random;               // [variant][step]
};

SampleOutput process_sample(const PreparedExperiment& px, std::size_t eval_pos) {
  const ExperimentConfig& cfg = px.config;
  const std::size_t id = px.evaluation[eval_pos];
  const Sample& sample = px.dataset.samples[id];
  const Tensor& image = sample.image;
  const VariantSet vs = variant_set(*px.model, px.variants, image);
  const std::size_t nv = vs.size();

  std::vector<double> clean(nv);
  {
    const Tensor logits = forward_logits(*px.model, as_batch(image));
    for (std::size_t v = 0; v < nv; ++v)
      clean[v] = calibrated_scores(*vs.calibrators[v], logits)[vs.classes[v]];
  }

  SampleOutput out;
  const Segmentation segments = slic_superpixels(image, cfg.metrics.random_baseline.slic);
  const std::vector<DeletionCurve> random =
      random_baseline_curves(vs, image, segments, cfg.metrics.random_baseline, px.seeds.random_baseline(id));
  for (const auto& c : random) out.random.push_back(c.scores);

  for (Method method : cfg.methods) {
    const std::string name(method_name(method));
    const std::vector<Tensor> maps = explain(method, vs, image, cfg.saliency, px.seeds.saliency(id, name));
    const std::vector<DeletionCurve> curves = deletion_curves(vs, image, maps, cfg.metrics.deletion_steps);
    auto& per_variant = out.curves.emplace_back();
    for (std::size_t v = 0; v < nv; ++v) {
      per_variant.push_back(curves[v].scores);
      EvalRecord r;
      r.sample_id = static_cast<Index>(id);
      r.label = sample.label;
      r.method = name;
      r.variant = px.variants[v].name;
      r.explained_class = vs.classes[v];
      r.clean_score = clean[v];
      r.ssim_vs_uncalibrated = cfg.metrics.ssim ? ssim(maps[0], maps[v]) : std::numeric_limits<double>::quiet_NaN();
      r.deletion_area = curves[v].area;
      r.random_area = random[v].area;
      r.random_curve_mad = mean_absolute_difference(random[v], random[0]);
      if (cfg.metrics.otsu_tv) {
        r.otsu_threshold = otsu_threshold(maps[v]);
        r.otsu_tv = binary_total_variation(maps[v], r.otsu_threshold);
      } else {
        r.otsu_threshold = std::numeric_limits<double>::quiet_NaN();
        r.otsu_tv = -1;
      }
      out.records.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace

ExperimentResult run_experiment(const PreparedExperiment& px) {
  ExperimentResult result;
  for (const auto& v : px.variants) result.variants.push_back(v.name);
  result.methods = px.config.methods;
  const Index steps = px.config.metrics.deletion_steps;
  for (Index t = 0; t <= steps; ++t) result.fractions.push_back(static_cast<double>(t) / static_cast<double>(steps));

  std::vector<SampleOutput> outputs(px.evaluation.size());
  run_stage("evaluation", [&] {
    parallel_for(outputs.size(), px.config.jobs, [&](std::size_t i) { outputs[i] = process_sample(px, i); });
  });

  run_stage("aggregation", [&] {
    const std::size_t nm = result.methods.size(), nv = result.variants.size(), nt = result.fractions.size();
    result.mean_deletion.assign(nm, std::vector<std::vector<double>>(nv, std::vector<double>(nt, 0.0)));
    result.mean_random.assign(nv, std::vector<double>(nt, 0.0));
    const double n = static_cast<double>(std::max<std::size_t>(outputs.size(), 1));
    for (auto& o : outputs) {
      for (std::size_t m = 0; m < nm; ++m)
        for (std::size_t v = 0; v < nv; ++v)
          for (std::size_t t = 0; t < nt; ++t) result.mean_deletion[m][v][t] += o.curves[m][v][t] / n;
      for (std::size_t v = 0; v < nv; ++v)
        for (std::size_t t = 0; t < nt; ++t) result.mean_random[v][t] += o.random[v][t] / n;
      for (auto& r : o.records) result.records.push_back(std::move(r));
    }
  });
  return result;
}

SweepResult temperature_sweep(const PreparedExperiment& px, std::span<const double> grid) {
  SweepResult result;
  run_stage("sweep", [&] {
    const ExperimentConfig& cfg = px.config;
    const TemperatureScaler* fitted = px.fitted_temperature();
    if (fitted == nullptr) throw ConfigError("the temperature sweep needs 'temperature' among calibration.methods");
    for (double t : grid)
      if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("sweep temperatures must be positive and finite");

    std::vector<double> temperatures(grid.begin(), grid.end());
    temperatures.push_back(fitted->temperature);
    std::sort(temperatures.begin(), temperatures.end());

    // Row 0 is the uncalibrated reference, rows 1.. the grid.
    std::vector<NamedCalibrator> variants{{"uncalibrated", IdentityCalibrator{}}};
    for (double t : temperatures) variants.push_back({"temperature", TemperatureScaler{t}});
    const std::size_t nv = variants.size();
    result.methods = cfg.sweep.methods;

    const Tensor eval_logits = forward_logits(*px.model, batch_images(px.dataset, px.evaluation));
    const std::vector<Index> labels = labels_of(px.dataset, px.evaluation);
    std::vector<SweepRow> rows(nv);
    bool fitted_marked = false;
    for (std::size_t v = 0; v < nv; ++v) {
      rows[v].quality = measure_quality(variants[v].name, calibrated_scores(variants[v].calibrator, eval_logits),
                                        labels, cfg.calibration.ece_bins);
      if (v > 0) {
        rows[v].temperature = temperatures[v - 1];
        if (!fitted_marked && temperatures[v - 1] == fitted->temperature) rows[v].fitted = fitted_marked = true;
      }
    }

    const std::size_t n = std::min<std::size_t>(px.evaluation.size(), static_cast<std::size_t>(cfg.sweep.samples));
    const std::size_t nm = result.methods.size();
    std::vector<std::vector<double>> areas(n);  // [sample][method * nv + v]
    parallel_for(n, cfg.jobs, [&](std::size_t i) {
      const std::size_t id = px.evaluation[i];
      const Tensor& image = px.dataset.samples[id].image;
      const VariantSet vs = variant_set(*px.model, variants, image);
      auto& a = areas[i];
      for (Method method : result.methods) {
        const std::string name(method_name(method));
        const auto maps = explain(method, vs, image, cfg.saliency, px.seeds.saliency(id, name));
        for (const auto& c : deletion_curves(vs, image, maps, cfg.metrics.deletion_steps)) a.push_back(c.area);
      }
    });
    for (std::size_t v = 0; v < nv; ++v) {
      rows[v].mean_area.assign(nm, 0.0);
      for (std::size_t m = 0; m < nm; ++m) {
        double sum = 0.0;
        for (const auto& a : areas) sum += a[m * nv + v];
        rows[v].mean_area[m] = n > 0 ? sum / static_cast<double>(n) : 0.0;
      }
    }
    result.uncalibrated = rows[0];
    result.rows.assign(rows.begin() + 1, rows.end());
  });
  return result;
}

StabilityMethod builtin_stability_method(Method method, const SaliencyConfig& cfg) {
  return {std::string(method_name(method)),
          [method, cfg](const ClassifierModel& base, const Calibrator& cal, Index cls, const Tensor& image,
                        std::uint64_t seed) {
            VariantSet vs{&base, {&cal}, {cls}};
            return explain(method, vs, image, cfg, seed).front();
          }};
}

FiveNumber five_number_summary(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("five_number_summary: no values");
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  return {values.front(), quantile(0.25), quantile(0.5), quantile(0.75), values.back()};
}

StabilityResult stability_experiment(const PreparedExperiment& px, std::span<const StabilityMethod> methods) {
  StabilityResult result;
  run_stage("stability", [&] {
    const ExperimentConfig& cfg = px.config;
    const std::size_t n_points = static_cast<std::size_t>(cfg.stability.points);
    if (n_points > px.evaluation.size())
      throw ConfigError("stability.points exceeds the evaluation split (" + std::to_string(px.evaluation.size()) + ")");

    // Points: a seeded partial shuffle of the evaluation split, kept in
    // evaluation order.
    std::vector<std::size_t> pos(px.evaluation.size());
    std::iota(pos.begin(), pos.end(), std::size_t{0});
    Rng rng(px.seeds.stability_points());
    for (std::size_t i = 0; i < n_points; ++i) std::swap(pos[i], pos[i + rng() % (pos.size() - i)]);
    pos.resize(n_points);
    std::sort(pos.begin(), pos.end());

    const std::size_t nm = methods.size(), nv = px.variants.size();
    std::vector<std::vector<StabilityPoint>> per_point(n_points);
    parallel_for(n_points, cfg.jobs, [&](std::size_t p) {
      const std::size_t id = px.evaluation[pos[p]];
      const Tensor& image = px.dataset.samples[id].image;
      const VariantSet vs = variant_set(*px.model, px.variants, image);
      for (const StabilityMethod& m : methods) {
        const std::uint64_t saliency_seed = px.seeds.saliency(id, m.name);
        for (std::size_t v = 0; v < nv; ++v) {
          const SaliencyFunction fn = [&](const Tensor& x) {
            return m.saliency(*px.model, *vs.calibrators[v], vs.classes[v], x, saliency_seed);
          };
          const double l = lipschitz_estimate(fn, image, cfg.stability.lipschitz, px.seeds.lipschitz(id, m.name));
          per_point[p].push_back({static_cast<Index>(id), m.name, px.variants[v].name, l});
        }
      }
    });
    for (auto& pts : per_point)
      for (auto& pt : pts) result.points.push_back(std::move(pt));

    for (std::size_t m = 0; m < nm; ++m)
      for (std::size_t v = 0; v < nv; ++v) {
        std::vector<double> values;
        for (const auto& pt : result.points)
          if (pt.method == methods[m].name && pt.variant == px.variants[v].name) values.push_back(pt.lipschitz);
        if (values.empty()) continue;
        result.summaries.push_back({methods[m].name, px.variants[v].name, static_cast<Index>(values.size()),
                                    five_number_summary(std::move(values))});
      }
  });
  return result;
}

}  // namespace salcal
