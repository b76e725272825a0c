#include "salcal/report.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <limits>
#include <map>
#include <sstream>

#include "salcal/imaging.hpp"
#include "salcal/model_io.hpp"
#include "salcal/svg.hpp"

#ifndef SALCAL_VERSION
#define SALCAL_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;

namespace salcal {

std::string toolkit_version() { return SALCAL_VERSION; }

std::string format_double(double value) {
  if (std::isnan(value)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return buf;
}

namespace {

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double_field(const std::string& s) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw FormatError("bad number '" + s + "'");
  return v;
}

std::int64_t parse_int_field(const std::string& s) {
  std::size_t used = 0;
  const long long v = std::stoll(s, &used);
  if (used != s.size()) throw FormatError("bad integer '" + s + "'");
  return v;
}

double mean_of(const std::vector<double>& values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : values)
    if (!std::isnan(v)) {
      sum += v;
      ++n;
    }
  return n > 0 ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

BundleWriter::BundleWriter(fs::path out_dir) : out_dir_(std::move(out_dir)) {
  try {
    fs::create_directories(out_dir_);
    staging_ = out_dir_ / (".staging-" + std::to_string(::getpid()));
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  } catch (const std::exception& e) {
    throw PipelineError("report", "cannot write to " + out_dir_.string() + ": " + e.what());
  }
}

BundleWriter::~BundleWriter() {
  if (done_) return;
  try {
    quarantine();
  } catch (...) {
  }
}

fs::path BundleWriter::add_path(const std::string& relative) {
  const fs::path p = staging_ / relative;
  fs::create_directories(p.parent_path());
  if (std::find(files_.begin(), files_.end(), relative) == files_.end()) files_.push_back(relative);
  return p;
}

void BundleWriter::add(const std::string& relative, const std::string& content) {
  write_file_atomic(add_path(relative), content);
}

void BundleWriter::commit() {
  run_stage("report", [&] {
    for (const std::string& f : files_) {
      const fs::path target = out_dir_ / f;
      fs::create_directories(target.parent_path());
      fs::rename(staging_ / f, target);
    }
    fs::remove_all(staging_);
    done_ = true;
  });
}

fs::path BundleWriter::quarantine() {
  done_ = true;
  fs::path target = out_dir_ / ("failed-" + utc_stamp());
  for (int i = 1; fs::exists(target); ++i) target = out_dir_ / ("failed-" + utc_stamp() + "-" + std::to_string(i));
  fs::rename(staging_, target);
  return target;
}

std::string per_sample_csv(std::span<const EvalRecord> records) {
  std::string out =
      "sample_id,label,method,variant,explained_class,clean_score,ssim_vs_uncalibrated,deletion_area,random_area,"
      "random_curve_mad_vs_uncalibrated,otsu_threshold,otsu_tv\n";
  for (const EvalRecord& r : records) {
    out += std::to_string(r.sample_id) + "," + std::to_string(r.label) + "," + r.method + "," + r.variant + "," +
           std::to_string(r.explained_class) + "," + format_double(r.clean_score) + "," +
           format_double(r.ssim_vs_uncalibrated) + "," + format_double(r.deletion_area) + "," +
           format_double(r.random_area) + "," + format_double(r.random_curve_mad) + "," +
           format_double(r.otsu_threshold) + "," + (r.otsu_tv < 0 ? std::string() : std::to_string(r.otsu_tv)) +
           "\n";
  }
  return out;
}

std::vector<EvalRecord> parse_per_sample_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || split_fields(line).size() != 12 || split_fields(line)[0] != "sample_id")
    throw FormatError("per-sample CSV: unexpected header");
  std::vector<EvalRecord> records;
  Index line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 12) throw FormatError("per-sample CSV line " + std::to_string(line_no) + ": expected 12 fields");
    try {
      EvalRecord r;
      r.sample_id = parse_int_field(f[0]);
      r.label = parse_int_field(f[1]);
      r.method = f[2];
      r.variant = f[3];
      r.explained_class = parse_int_field(f[4]);
      r.clean_score = parse_double_field(f[5]);
      r.ssim_vs_uncalibrated = parse_double_field(f[6]);
      r.deletion_area = parse_double_field(f[7]);
      r.random_area = parse_double_field(f[8]);
      r.random_curve_mad = parse_double_field(f[9]);
      r.otsu_threshold = parse_double_field(f[10]);
      r.otsu_tv = f[11].empty() ? -1 : parse_int_field(f[11]);
      records.push_back(std::move(r));
    } catch (const std::logic_error& e) {
      throw FormatError("per-sample CSV line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

std::vector<AggregateRow> aggregate_records(std::span<const EvalRecord> records) {
  std::vector<std::pair<std::string, std::string>> keys;
  for (const EvalRecord& r : records) {
    const std::pair<std::string, std::string> k{r.method, r.variant};
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  std::vector<AggregateRow> rows;
  for (const auto& [method, variant] : keys) {
    std::vector<double> area, tv, ss, ra, mad;
    for (const EvalRecord& r : records) {
      if (r.method != method || r.variant != variant) continue;
      area.push_back(r.deletion_area);
      tv.push_back(r.otsu_tv < 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(r.otsu_tv));
      if (!std::isnan(r.ssim_vs_uncalibrated)) ss.push_back(r.ssim_vs_uncalibrated);
      ra.push_back(r.random_area);
      mad.push_back(r.random_curve_mad);
    }
    AggregateRow row;
    row.method = method;
    row.variant = variant;
    row.n = static_cast<Index>(area.size());
    row.mean_deletion_area = mean_of(area);
    row.btr = btr_ratio(records, method, variant);
    row.mean_otsu_tv = mean_of(tv);
    if (!ss.empty()) {
      row.ssim = five_number_summary(ss);
      row.mean_ssim = mean_of(ss);
    } else {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      row.ssim = {nan, nan, nan, nan, nan};
      row.mean_ssim = nan;
    }
    row.mean_random_area = mean_of(ra);
    row.mean_random_curve_mad = mean_of(mad);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string aggregate_csv(std::span<const AggregateRow> rows) {
  std::string out =
      "method,variant,n,mean_deletion_area,btr,mean_otsu_tv,ssim_min,ssim_q1,ssim_median,ssim_q3,ssim_max,ssim_mean,"
      "mean_random_area,mean_random_curve_mad_vs_uncalibrated\n";
  for (const AggregateRow& r : rows) {
    out += r.method + "," + r.variant + "," + std::to_string(r.n) + "," + format_double(r.mean_deletion_area) + "," +
           format_double(r.btr) + "," + format_double(r.mean_otsu_tv) + "," + format_double(r.ssim.min) + "," +
           format_double(r.ssim.q1) + "," + format_double(r.ssim.median) + "," + format_double(r.ssim.q3) + "," +
           format_double(r.ssim.max) + "," + format_double(r.mean_ssim) + "," + format_double(r.mean_random_area) +
           "," + format_double(r.mean_random_curve_mad) + "\n";
  }
  return out;
}

SsimHistogram ssim_histogram(std::span<const EvalRecord> records) {
  constexpr int kBins = 20;
  SsimHistogram h;
  for (int i = 0; i <= kBins; ++i) h.edges.push_back(static_cast<double>(i) / kBins);
  for (const EvalRecord& r : records) {
    if (std::isnan(r.ssim_vs_uncalibrated)) continue;
    std::size_t row = 0;
    while (row < h.method.size() && (h.method[row] != r.method || h.variant[row] != r.variant)) ++row;
    if (row == h.method.size()) {
      h.method.push_back(r.method);
      h.variant.push_back(r.variant);
      h.counts.emplace_back(kBins, 0.0);
    }
    // SSIM may dip below 0; such values land in the first bin.
    const double v = std::clamp(r.ssim_vs_uncalibrated, 0.0, 1.0);
    h.counts[row][static_cast<std::size_t>(std::min(kBins - 1, static_cast<int>(v * kBins)))] += 1.0;
  }
  return h;
}

nlohmann::json make_manifest(const ExperimentConfig& config, const Seeds& seeds, const std::string& command,
                             const std::vector<std::string>& files) {
  const nlohmann::json canonical = config_to_json(config);
  return {{"toolkit", "salcal"},
          {"version", toolkit_version()},
          {"command", command},
          {"config", canonical},
          {"config_hash", config_hash(canonical)},
          {"seeds", {{"master", seeds.master}, {"dataset", seeds.dataset}, {"split", seeds.split}, {"train", seeds.train}}},
          {"files", files}};
}

void write_manifest(const ExperimentConfig& config, const Seeds& seeds, const std::string& command,
                    BundleWriter& bundle, const std::string& name) {
  std::vector<std::string> files = bundle.files();
  files.push_back(name);
  bundle.add(name, make_manifest(config, seeds, command, files).dump(2) + "\n");
}

void write_model_outputs(const PreparedExperiment& px, BundleWriter& bundle) {
  save_model(*px.model, bundle.add_path("model.ctim"));
  nlohmann::json info{{"trained", px.model_trained},
                      {"train_samples", px.train.size()},
                      {"input_shape", px.model->input_shape},
                      {"num_classes", px.model->num_classes}};
  if (px.model->train_accuracy) info["train_accuracy"] = *px.model->train_accuracy;
  bundle.add("model.json", info.dump(2) + "\n");
}

void write_calibration_outputs(const PreparedExperiment& px, BundleWriter& bundle) {
  std::string csv = "variant,accuracy,nll,ece_binned,ece_density,temperature\n";
  for (std::size_t v = 0; v < px.variants.size(); ++v) {
    const VariantQuality& q = px.quality[v];
    const auto* t = std::get_if<TemperatureScaler>(&px.variants[v].calibrator);
    csv += q.variant + "," + format_double(q.accuracy) + "," + format_double(q.nll) + "," +
           format_double(q.ece_binned) + "," + format_double(q.ece_density) + "," +
           (t ? format_double(t->temperature) : std::string()) + "\n";
  }
  bundle.add("calibration.csv", csv);

  std::string rel = "variant,confidence,accuracy,density\n";
  svg::LinePlot plot{"Reliability (kernel estimate, evaluation split)", "confidence", "accuracy", {}, false, {}};
  plot.series.push_back({"ideal", {0.0, 1.0}, {0.0, 1.0}, false});
  for (const VariantQuality& q : px.quality) {
    const auto& c = q.reliability;
    for (std::size_t i = 0; i < c.confidence.size(); ++i)
      rel += q.variant + "," + format_double(c.confidence[i]) + "," + format_double(c.accuracy[i]) + "," +
             format_double(c.density[i]) + "\n";
    plot.series.push_back({q.variant, c.confidence, c.accuracy, c.confidence.size() == 1});
  }
  bundle.add("reliability.csv", rel);
  bundle.add("reliability.svg", svg::render(plot));

  for (const NamedCalibrator& v : px.variants) {
    if (v.name == "uncalibrated") continue;
    bundle.add("calibrators/" + v.name + ".json",
               calibrator_to_json(v.calibrator, {px.seeds.master, px.calibration_set_hash}));
  }
}

void write_experiment_outputs(const ExperimentResult& result, BundleWriter& bundle) {
  bundle.add("per_sample.csv", per_sample_csv(result.records));

  std::string curves = "method,variant,fraction,score\n";
  auto add_curve = [&](const std::string& method, const std::string& variant, const std::vector<double>& y) {
    for (std::size_t t = 0; t < y.size(); ++t)
      curves += method + "," + variant + "," + format_double(result.fractions[t]) + "," + format_double(y[t]) + "\n";
  };
  for (std::size_t m = 0; m < result.methods.size(); ++m) {
    const std::string name(method_name(result.methods[m]));
    svg::LinePlot plot{"Mean deletion curve: " + name, "fraction removed", "normalized score", {}, false, {}};
    for (std::size_t v = 0; v < result.variants.size(); ++v) {
      add_curve(name, result.variants[v], result.mean_deletion[m][v]);
      plot.series.push_back({result.variants[v], result.fractions, result.mean_deletion[m][v], false});
    }
    bundle.add("deletion_" + name + ".svg", svg::render(plot));
  }
  svg::LinePlot random{"Mean random-baseline curve", "fraction removed", "normalized score", {}, false, {}};
  for (std::size_t v = 0; v < result.variants.size(); ++v) {
    add_curve("random_baseline", result.variants[v], result.mean_random[v]);
    random.series.push_back({result.variants[v], result.fractions, result.mean_random[v], false});
  }
  bundle.add("deletion_random_baseline.svg", svg::render(random));
  bundle.add("mean_deletion_curves.csv", curves);

  write_aggregate_outputs(result.records, bundle);
}

void write_aggregate_outputs(std::span<const EvalRecord> records, BundleWriter& bundle) {
  const std::vector<AggregateRow> rows = aggregate_records(records);
  bundle.add("aggregate.csv", aggregate_csv(rows));

  const SsimHistogram h = ssim_histogram(records);
  std::string csv = "method,variant,bin_low,bin_high,count\n";
  std::map<std::string, svg::Histogram> plots;
  for (std::size_t r = 0; r < h.method.size(); ++r) {
    for (std::size_t b = 0; b + 1 < h.edges.size(); ++b)
      csv += h.method[r] + "," + h.variant[r] + "," + format_double(h.edges[b]) + "," +
             format_double(h.edges[b + 1]) + "," + format_double(h.counts[r][b]) + "\n";
    auto& plot = plots[h.method[r]];
    plot.title = "SSIM vs uncalibrated: " + h.method[r];
    plot.x_label = "SSIM";
    plot.edges = h.edges;
    plot.series.push_back(h.variant[r]);
    plot.counts.push_back(h.counts[r]);
  }
  bundle.add("ssim_histogram.csv", csv);
  for (const auto& [method, plot] : plots) bundle.add("ssim_" + method + ".svg", svg::render(plot));

  // Bar charts: methods along x, one bar per variant.
  std::vector<std::string> methods, variants;
  for (const AggregateRow& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
  }
  auto bars = [&](const std::string& title, const std::string& label, double AggregateRow::*field) {
    svg::BarChart chart{title, label, methods, variants, {}};
    for (const std::string& v : variants) {
      std::vector<double> vals;
      for (const std::string& m : methods) {
        double x = std::numeric_limits<double>::quiet_NaN();
        for (const AggregateRow& r : rows)
          if (r.method == m && r.variant == v) x = r.*field;
        vals.push_back(std::isnan(x) ? 0.0 : x);
      }
      chart.values.push_back(std::move(vals));
    }
    return svg::render(chart);
  };
  bundle.add("bars_btr.svg", bars("Better-than-random ratio", "BTR", &AggregateRow::btr));
  bundle.add("bars_otsu_tv.svg", bars("Mean Otsu total variation", "TV", &AggregateRow::mean_otsu_tv));
  bundle.add("bars_deletion_area.svg", bars("Mean deletion area", "area", &AggregateRow::mean_deletion_area));
}

void write_sweep_outputs(const SweepResult& sweep, BundleWriter& bundle) {
  std::string header = "temperature,fitted,accuracy,nll,ece_binned,ece_density";
  for (Method m : sweep.methods) header += ",mean_area_" + std::string(method_name(m));
  header += "\n";
  auto line = [&](const SweepRow& r) {
    std::string s = format_double(r.temperature) + "," + (r.fitted ? "1" : "0") + "," +
                    format_double(r.quality.accuracy) + "," + format_double(r.quality.nll) + "," +
                    format_double(r.quality.ece_binned) + "," + format_double(r.quality.ece_density);
    for (double a : r.mean_area) s += "," + format_double(a);
    return s + "\n";
  };
  std::string table = header;
  for (const SweepRow& r : sweep.rows) table += line(r);
  bundle.add("temperature_sweep.csv", table);
  bundle.add("temperature_sweep_reference.csv", header + line(sweep.uncalibrated));

  std::vector<double> ts, ece;
  for (const SweepRow& r : sweep.rows) {
    ts.push_back(r.temperature);
    ece.push_back(r.quality.ece_binned);
  }
  svg::LinePlot vs_t{"Mean deletion area vs temperature", "temperature", "mean deletion area", {}, true, {}};
  svg::LinePlot vs_ece{"Mean deletion area vs ECE", "ECE (binned)", "mean deletion area", {}, false, {}};
  for (std::size_t m = 0; m < sweep.methods.size(); ++m) {
    std::vector<double> area;
    for (const SweepRow& r : sweep.rows) area.push_back(r.mean_area[m]);
    const std::string name(method_name(sweep.methods[m]));
    vs_t.series.push_back({name, ts, area, true});
    vs_ece.series.push_back({name, ece, area, true});
    for (const SweepRow& r : sweep.rows)
      if (r.fitted) {
        vs_t.highlights.emplace_back(r.temperature, r.mean_area[m]);
        vs_ece.highlights.emplace_back(r.quality.ece_binned, r.mean_area[m]);
      }
  }
  svg::LinePlot ece_t{"ECE vs temperature", "temperature", "ECE (binned)", {{"ece_binned", ts, ece, true}}, true, {}};
  for (const SweepRow& r : sweep.rows)
    if (r.fitted) ece_t.highlights.emplace_back(r.temperature, r.quality.ece_binned);
  bundle.add("sweep_area_vs_temperature.svg", svg::render(vs_t));
  bundle.add("sweep_area_vs_ece.svg", svg::render(vs_ece));
  bundle.add("sweep_ece_vs_temperature.svg", svg::render(ece_t));
}

void write_stability_outputs(const StabilityResult& stability, BundleWriter& bundle) {
  std::string points = "sample_id,method,variant,lipschitz\n";
  for (const StabilityPoint& p : stability.points)
    points += std::to_string(p.sample_id) + "," + p.method + "," + p.variant + "," + format_double(p.lipschitz) + "\n";
  bundle.add("stability_points.csv", points);

  std::string summary = "method,variant,n,min,q1,median,q3,max\n";
  svg::BoxPlot plot{"Lipschitz estimate", "L", {}};
  for (const StabilitySummary& s : stability.summaries) {
    const FiveNumber& f = s.summary;
    summary += s.method + "," + s.variant + "," + std::to_string(s.n) + "," + format_double(f.min) + "," +
               format_double(f.q1) + "," + format_double(f.median) + "," + format_double(f.q3) + "," +
               format_double(f.max) + "\n";
    plot.boxes.push_back({s.method + "/" + s.variant, f.min, f.q1, f.median, f.q3, f.max});
  }
  bundle.add("stability_summary.csv", summary);
  bundle.add("stability.svg", svg::render(plot));
}

void write_explanations(const PreparedExperiment& px, Index count, BundleWriter& bundle) {
  const std::size_t n = std::min<std::size_t>(px.evaluation.size(), static_cast<std::size_t>(count));
  const std::string hash = config_hash(config_to_json(px.config));
  struct Item {
    std::size_t id;
    std::string method;
    std::vector<Tensor> maps;
    std::vector<Index> classes;
    std::uint64_t seed;
  };
  std::vector<std::vector<Item>> items(n);
  run_stage("explain", [&] {
    parallel_for(n, px.config.jobs, [&](std::size_t i) {
      const std::size_t id = px.evaluation[i];
      const Tensor& image = px.dataset.samples[id].image;
      VariantSet vs{px.model.get(), {}, {}};
      const Tensor logits = forward_logits(*px.model, as_batch(image));
      for (const auto& v : px.variants) {
        vs.calibrators.push_back(&v.calibrator);
        vs.classes.push_back(argmax(calibrated_scores(v.calibrator, logits).values()));
      }
      for (Method m : px.config.methods) {
        const std::string name(method_name(m));
        const std::uint64_t seed = px.seeds.saliency(id, name);
        items[i].push_back({id, name, explain(m, vs, image, px.config.saliency, seed), vs.classes, seed});
      }
    });
  });
  for (const auto& per_sample : items)
    for (const Item& it : per_sample)
      for (std::size_t v = 0; v < px.variants.size(); ++v) {
        const std::string stem =
            "maps/" + std::to_string(it.id) + "_" + it.method + "_" + px.variants[v].name;
        const SaliencyMap map{it.maps[v], it.classes[v], it.method, px.variants[v].name};
        const fs::path pgm = bundle.add_path(stem + ".pgm");
        bundle.add_path(stem + ".json");
        save_saliency_pgm(pgm, map, {it.seed, hash});
        save_raw_map(bundle.add_path(stem + ".ctsm"), it.maps[v]);
      }
}

}  // namespace salcal
