// Command-line driver: train, calibrate, explain, evaluate, sweep-temperature,
// stability, report.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "salcal/model_io.hpp"
#include "salcal/pipeline.hpp"
#include "salcal/report.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitPipeline = 3;

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> jobs;
};

void log(const std::string& message) { std::cerr << "salcal: " << message << "\n"; }

salcal::ExperimentConfig resolve_config(const GlobalOptions& g) {
  salcal::ExperimentConfig cfg = g.config.empty() ? salcal::ExperimentConfig{} : salcal::load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.output_dir = g.out;
  if (g.jobs) cfg.jobs = *g.jobs;
  salcal::validate_config(cfg);
  return cfg;
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void log_quality(const salcal::PreparedExperiment& px) {
  for (const auto& q : px.quality) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-12s accuracy %.4f  nll %.4f  ece %.4f  ece_density %.4f", q.variant.c_str(),
                  q.accuracy, q.nll, q.ece_binned, q.ece_density);
    log(buf);
  }
}

int run(const std::string& command, const GlobalOptions& g, bool long_run, const std::string& from) {
  salcal::ExperimentConfig cfg = resolve_config(g);
  if (long_run) cfg.stability.long_run = true;
  salcal::validate_config(cfg);
  const salcal::Seeds seeds = salcal::Seeds::from_master(cfg.seed);
  Timer timer;

  salcal::BundleWriter bundle(cfg.output_dir);
  if (command == "report") {
    const std::string path = from.empty() ? (cfg.output_dir / "per_sample.csv").string() : from;
    std::vector<salcal::EvalRecord> records;
    salcal::run_stage("report", [&] {
      const auto bytes = salcal::read_file_bytes(path);
      records = salcal::parse_per_sample_csv(std::string(bytes.begin(), bytes.end()));
      salcal::write_aggregate_outputs(records, bundle);
    });
    log("aggregated " + std::to_string(records.size()) + " rows from " + path);
  } else {
    log("preparing data and model");
    salcal::PreparedExperiment px = salcal::prepare_model(cfg);
    if (px.model_trained && px.model->train_accuracy)
      log("trained model, train accuracy " + std::to_string(*px.model->train_accuracy));
    if (command == "train") {
      salcal::run_stage("report", [&] { salcal::write_model_outputs(px, bundle); });
    } else {
      salcal::fit_calibrators(px);
      log_quality(px);
      salcal::run_stage("report", [&] {
        if (px.model_trained) salcal::write_model_outputs(px, bundle);
        salcal::write_calibration_outputs(px, bundle);
      });
      if (command == "explain") {
        salcal::write_explanations(px, cfg.explain_samples, bundle);
      } else if (command == "evaluate") {
        log("evaluating " + std::to_string(px.evaluation.size()) + " samples");
        const salcal::ExperimentResult result = salcal::run_experiment(px);
        salcal::run_stage("report", [&] { salcal::write_experiment_outputs(result, bundle); });
      } else if (command == "sweep-temperature") {
        const salcal::SweepResult sweep = salcal::temperature_sweep(px, cfg.sweep.temperatures);
        salcal::run_stage("report", [&] { salcal::write_sweep_outputs(sweep, bundle); });
      } else if (command == "stability") {
        std::vector<salcal::StabilityMethod> methods;
        for (salcal::Method m : cfg.stability.methods)
          methods.push_back(salcal::builtin_stability_method(m, cfg.saliency));
        const salcal::StabilityResult stability = salcal::stability_experiment(px, methods);
        salcal::run_stage("report", [&] { salcal::write_stability_outputs(stability, bundle); });
      }
    }
  }
  // `report` runs inside an existing bundle; keep its manifest intact.
  const std::string manifest = command == "report" ? "report_manifest.json" : "manifest.json";
  salcal::run_stage("report", [&] { salcal::write_manifest(cfg, seeds, command, bundle, manifest); });
  bundle.commit();
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f s", timer.seconds());
  log(command + " done in " + buf + "; outputs in " + cfg.output_dir.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibration and saliency evaluation toolkit"};
  app.set_version_flag("--version", salcal::toolkit_version());
  app.require_subcommand(1);
  GlobalOptions g;
  bool long_run = false;
  std::string from;
  app.add_option("--config", g.config, "Experiment TOML file (defaults apply when omitted)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed, overrides the config");
  app.add_option("--out", g.out, "Output directory, overrides the config");
  app.add_option("--jobs", g.jobs, "Worker threads, overrides the config")->check(CLI::PositiveNumber);

  const std::vector<std::pair<std::string, std::string>> commands{
      {"train", "Train the classifier and write model.ctim"},
      {"calibrate", "Fit calibrators and write ECE and reliability data"},
      {"explain", "Write saliency maps of the first evaluation samples"},
      {"evaluate", "Run the full per-sample protocol and write the report bundle"},
      {"sweep-temperature", "Deletion area and ECE over a temperature grid"},
      {"stability", "Lipschitz stability of the saliency methods"},
      {"report", "Recompute aggregates and plots from a per-sample CSV"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->fallthrough();
    if (name == "stability") sub->add_flag("--long-run", long_run, "Allow RISE and meaningful perturbation");
    if (name == "report") sub->add_option("--from", from, "per_sample.csv to aggregate (default <out>/per_sample.csv)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    return run(command, g, long_run, from);
  } catch (const salcal::ConfigError& e) {
    std::cerr << "salcal: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const salcal::PipelineError& e) {
    std::cerr << "salcal: " << e.what() << "\n";
    return kExitPipeline;
  } catch (const std::exception& e) {
    std::cerr << "salcal: pipeline failure: " << e.what() << "\n";
    return kExitPipeline;
  }
}
