#include "salcal/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "salcal/rng.hpp"

namespace salcal {

namespace {

// A TOML table whose keys are consumed one by one; whatever is left over at
// finish() is an unknown key.
class Section {
 public:
  Section(const toml::table* table, std::string path) : table_(table), path_(std::move(path)) {}

  bool has(const char* key) const { return table_ && table_->contains(key); }

  Section sub(const char* key) {
    seen_.insert(key);
    if (!has(key)) return Section(nullptr, qualified(key));
    const toml::table* t = (*table_)[key].as_table();
    if (!t) fail(key, "expected a table");
    return Section(t, qualified(key));
  }

  void get(const char* key, bool& out) { read<bool>(key, out, "a boolean"); }
  void get(const char* key, std::string& out) { read<std::string>(key, out, "a string"); }
  void get(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    read<std::string>(key, s, "a string");
    out = s;
  }
  template <typename Int>
    requires std::is_integral_v<Int>
  void get(const char* key, Int& out) {
    std::int64_t v = out;
    read<std::int64_t>(key, v, "an integer");
    out = static_cast<Int>(v);
  }
  void get(const char* key, std::uint64_t& out) {
    std::int64_t v = static_cast<std::int64_t>(out);
    read<std::int64_t>(key, v, "an integer");
    if (v < 0) fail(key, "must be non-negative");
    out = static_cast<std::uint64_t>(v);
  }
  void get(const char* key, double& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const auto node = (*table_)[key];
    if (auto d = node.value_exact<double>()) {
      out = *d;
    } else if (auto i = node.value_exact<std::int64_t>()) {
      out = static_cast<double>(*i);
    } else {
      fail(key, "expected a number");
    }
  }
  void get(const char* key, float& out) {
    double d = out;
    get(key, d);
    out = static_cast<float>(d);
  }
  template <typename T>
  void get(const char* key, std::vector<T>& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const toml::array* arr = (*table_)[key].as_array();
    if (!arr) fail(key, "expected an array");
    std::vector<T> values;
    for (const auto& item : *arr) {
      if constexpr (std::is_same_v<T, double>) {
        if (auto d = item.value_exact<double>()) values.push_back(*d);
        else if (auto i = item.value_exact<std::int64_t>()) values.push_back(static_cast<double>(*i));
        else fail(key, "expected an array of numbers");
      } else if constexpr (std::is_same_v<T, std::string>) {
        auto s = item.value_exact<std::string>();
        if (!s) fail(key, "expected an array of strings");
        values.push_back(*s);
      } else {
        auto i = item.value_exact<std::int64_t>();
        if (!i) fail(key, "expected an array of integers");
        values.push_back(static_cast<T>(*i));
      }
    }
    out = std::move(values);
  }
  void get(const char* key, std::vector<Method>& out) {
    std::vector<std::string> names;
    for (Method m : out) names.emplace_back(method_name(m));
    get(key, names);
    out.clear();
    for (const auto& n : names) {
      try {
        out.push_back(parse_method(n));
      } catch (const InvalidArgument&) {
        fail(key, "unknown method '" + n + "'");
      }
    }
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      if (!seen_.contains(std::string(k.str()))) throw ConfigError("unknown key '" + qualified(std::string(k.str())) + "'");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("'" + qualified(key) + "': " + what);
  }

 private:
  template <typename T, typename Out>
  void read(const char* key, Out& out, const char* expected) {
    seen_.insert(key);
    if (!has(key)) return;
    auto v = (*table_)[key].template value_exact<T>();
    if (!v) fail(key, std::string("expected ") + expected);
    out = *v;
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const toml::table* table_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

template <typename T>
bool has_duplicates(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  return std::adjacent_find(v.begin(), v.end()) != v.end();
}

nlohmann::json method_list(const std::vector<Method>& methods) {
  nlohmann::json a = nlohmann::json::array();
  for (Method m : methods) a.push_back(std::string(method_name(m)));
  return a;
}

}  // namespace

ExperimentConfig parse_config(const std::string& toml_text, const std::string& source_name) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source_name);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source_name << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(msg.str());
  }
  ExperimentConfig cfg;
  Section top(&root, "");
  std::int64_t version = -1;
  top.get("schema_version", version);
  require(version == kConfigSchemaVersion,
          "'schema_version' must be " + std::to_string(kConfigSchemaVersion) + (version < 0 ? " (missing)" : ""));
  top.get("seed", cfg.seed);
  top.get("output_dir", cfg.output_dir);
  top.get("jobs", cfg.jobs);
  top.get("explain_samples", cfg.explain_samples);

  Section ds = top.sub("dataset");
  ds.get("source", cfg.dataset.source);
  SynthSpec& sp = cfg.dataset.synthetic;
  ds.get("classes", sp.num_classes);
  ds.get("height", sp.height);
  ds.get("width", sp.width);
  ds.get("channels", sp.channels);
  if (!ds.has("per_class")) sp.per_class.assign(static_cast<std::size_t>(std::max<Index>(sp.num_classes, 0)), 1500);
  ds.get("per_class", sp.per_class);
  ds.get("noise", sp.noise);
  ds.get("background", sp.background);
  ds.get("directory", cfg.dataset.directory);
  ds.get("labels_csv", cfg.dataset.labels_csv);
  ds.finish();

  Section md = top.sub("model");
  md.get("path", cfg.model.path);
  md.get("architecture", cfg.model.architecture);
  md.get("conv1", cfg.model.conv1);
  md.get("conv2", cfg.model.conv2);
  md.get("hidden", cfg.model.hidden);
  md.get("epochs", cfg.model.epochs);
  md.get("batch_size", cfg.model.batch_size);
  md.get("learning_rate", cfg.model.learning_rate);
  md.finish();

  Section sl = top.sub("split");
  sl.get("train", cfg.split.train);
  sl.get("calibration", cfg.split.calibration);
  sl.get("evaluation", cfg.split.evaluation);
  sl.finish();

  Section cal = top.sub("calibration");
  cal.get("methods", cfg.calibration.methods);
  cal.get("include_identity", cfg.calibration.include_identity);
  cal.get("ece_bins", cfg.calibration.ece_bins);
  Section dir = cal.sub("dirichlet");
  DirichletFitOptions& d = cfg.calibration.dirichlet;
  dir.get("lambda_off_diagonal", d.lambda_off_diagonal);
  dir.get("lambda_bias", d.lambda_bias);
  dir.get("learning_rate", d.learning_rate);
  dir.get("max_steps", d.max_steps);
  dir.get("patience", d.patience);
  dir.get("min_improvement", d.min_improvement);
  dir.get("log_floor", d.log_floor);
  dir.finish();
  cal.finish();

  Section sal = top.sub("saliency");
  sal.get("methods", cfg.methods);
  sal.get("absolute_gradient", cfg.saliency.sensitivity.absolute);
  Section ig = sal.sub("integrated_gradients");
  ig.get("steps", cfg.saliency.integrated_gradients.steps);
  std::vector<std::string> refs{"black", "white"};
  ig.get("references", refs);
  for (const auto& r : refs) {
    if (r != "black" && r != "white") ig.fail("references", "unknown reference '" + r + "'");
  }
  cfg.saliency.integrated_gradients.black_reference = std::find(refs.begin(), refs.end(), "black") != refs.end();
  cfg.saliency.integrated_gradients.white_reference = std::find(refs.begin(), refs.end(), "white") != refs.end();
  ig.finish();
  Section rs = sal.sub("rise");
  rs.get("masks", cfg.saliency.rise.masks);
  rs.get("grid", cfg.saliency.rise.grid);
  rs.get("keep_probability", cfg.saliency.rise.keep_probability);
  rs.finish();
  Section mp = sal.sub("meaningful_perturbation");
  mp.get("lambda", cfg.saliency.meaningful_perturbation.lambda);
  mp.get("beta", cfg.saliency.meaningful_perturbation.beta);
  mp.get("learning_rate", cfg.saliency.meaningful_perturbation.learning_rate);
  mp.get("steps", cfg.saliency.meaningful_perturbation.steps);
  mp.get("checkpoint_every", cfg.saliency.meaningful_perturbation.checkpoint_every);
  mp.finish();
  Section lr = sal.sub("lrp");
  lr.get("epsilon", cfg.saliency.lrp.epsilon);
  lr.finish();
  sal.finish();

  Section mt = top.sub("metrics");
  mt.get("deletion_steps", cfg.metrics.deletion_steps);
  mt.get("random_orders", cfg.metrics.random_baseline.orders);
  mt.get("superpixels", cfg.metrics.random_baseline.slic.target_segments);
  mt.get("slic_compactness", cfg.metrics.random_baseline.slic.compactness);
  mt.get("slic_iterations", cfg.metrics.random_baseline.slic.iterations);
  mt.get("ssim", cfg.metrics.ssim);
  mt.get("otsu_tv", cfg.metrics.otsu_tv);
  mt.finish();
  cfg.metrics.random_baseline.steps = cfg.metrics.deletion_steps;

  Section sw = top.sub("sweep");
  sw.get("temperatures", cfg.sweep.temperatures);
  sw.get("methods", cfg.sweep.methods);
  sw.get("samples", cfg.sweep.samples);
  sw.finish();

  Section st = top.sub("stability");
  st.get("points", cfg.stability.points);
  st.get("neighbors", cfg.stability.lipschitz.neighbors);
  st.get("radius", cfg.stability.lipschitz.radius);
  st.get("methods", cfg.stability.methods);
  st.get("long_run", cfg.stability.long_run);
  st.finish();

  top.finish();
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  ExperimentConfig cfg = parse_config(text.str(), path.string());
  const auto base = path.parent_path();
  auto resolve = [&](std::filesystem::path& p) {
    if (!p.empty() && p.is_relative()) p = base / p;
  };
  resolve(cfg.model.path);
  resolve(cfg.dataset.directory);
  if (!cfg.dataset.labels_csv.empty() && cfg.dataset.labels_csv.is_relative()) {
    cfg.dataset.labels_csv = cfg.dataset.directory / cfg.dataset.labels_csv;
  }
  return cfg;
}

void validate_config(const ExperimentConfig& c) {
  require(c.jobs >= 1, "'jobs' must be >= 1");
  require(c.explain_samples >= 0, "'explain_samples' must be >= 0");
  const auto& sp = c.dataset.synthetic;
  require(c.dataset.source == "synthetic" || c.dataset.source == "directory",
          "'dataset.source' must be 'synthetic' or 'directory'");
  require(sp.num_classes >= 2 && sp.num_classes <= 10, "'dataset.classes' must lie in [2, 10]");
  if (c.dataset.source == "synthetic") {
    require(sp.height >= 11 && sp.width >= 11, "'dataset.height' and 'dataset.width' must be >= 11");
    require(sp.channels == 1 || sp.channels == 3, "'dataset.channels' must be 1 or 3");
    require(static_cast<Index>(sp.per_class.size()) == sp.num_classes, "'dataset.per_class' needs one count per class");
    require(std::all_of(sp.per_class.begin(), sp.per_class.end(), [](Index n) { return n >= 0; }),
            "'dataset.per_class' counts must be non-negative");
    require(sp.noise >= 0.0f && sp.background >= 0.0f && sp.background <= 1.0f,
            "'dataset.noise' must be >= 0 and 'dataset.background' in [0, 1]");
    Index total = 0;
    for (Index n : sp.per_class) total += n;
    require(c.split.train + c.split.calibration + c.split.evaluation <= total || !c.model.path.empty(),
            "split sizes exceed the " + std::to_string(total) + " synthetic samples");
    require(c.split.calibration + c.split.evaluation <= total, "split sizes exceed the synthetic sample count");
  } else {
    require(!c.dataset.directory.empty() && !c.dataset.labels_csv.empty(),
            "'dataset.directory' and 'dataset.labels_csv' are required for directory datasets");
  }
  require(c.model.architecture == "cnn" || c.model.architecture == "mlp", "'model.architecture' must be 'cnn' or 'mlp'");
  require(c.model.conv1 >= 1 && c.model.conv2 >= 1 && c.model.hidden >= 1, "model widths must be positive");
  require(c.model.epochs >= 0 && c.model.batch_size >= 1 && c.model.learning_rate > 0.0,
          "'model.epochs' >= 0, 'model.batch_size' >= 1 and 'model.learning_rate' > 0 required");
  require(c.split.train >= 0 && c.split.calibration >= 2 && c.split.evaluation >= 1,
          "split needs train >= 0, calibration >= 2, evaluation >= 1");
  require(c.model.path.empty() ? c.split.train >= 1 : true, "'split.train' must be >= 1 when training");
  for (const auto& m : c.calibration.methods) {
    require(m == "temperature" || m == "dirichlet", "unknown calibrator '" + m + "' in 'calibration.methods'");
  }
  require(!has_duplicates(c.calibration.methods), "'calibration.methods' lists a calibrator twice");
  require(c.calibration.ece_bins >= 1, "'calibration.ece_bins' must be >= 1");
  const auto& d = c.calibration.dirichlet;
  require(d.lambda_off_diagonal >= 0.0 && d.lambda_bias >= 0.0 && d.learning_rate > 0.0 && d.max_steps >= 0 &&
              d.patience >= 1 && d.min_improvement >= 0.0 && d.log_floor > 0.0f,
          "invalid 'calibration.dirichlet' settings");
  require(!c.methods.empty(), "'saliency.methods' is empty");
  require(!has_duplicates(c.methods), "'saliency.methods' lists a method twice");
  const auto& s = c.saliency;
  require(s.integrated_gradients.steps >= 1, "'saliency.integrated_gradients.steps' must be >= 1");
  require(s.integrated_gradients.black_reference || s.integrated_gradients.white_reference,
          "'saliency.integrated_gradients.references' is empty");
  require(s.rise.masks >= 1 && s.rise.grid >= 1, "'saliency.rise.masks' and 'saliency.rise.grid' must be >= 1");
  require(s.rise.keep_probability > 0.0 && s.rise.keep_probability < 1.0,
          "'saliency.rise.keep_probability' must lie in (0, 1)");
  const auto& mp = s.meaningful_perturbation;
  require(mp.lambda > 0.0 && mp.beta > 0.0 && mp.learning_rate > 0.0 && mp.steps >= 1 && mp.checkpoint_every >= 1,
          "'saliency.meaningful_perturbation' settings must be positive");
  require(s.lrp.epsilon > 0.0, "'saliency.lrp.epsilon' must be > 0");
  const auto& m = c.metrics;
  require(m.deletion_steps >= 1, "'metrics.deletion_steps' must be >= 1");
  require(m.random_baseline.orders >= 1, "'metrics.random_orders' must be >= 1");
  require(m.random_baseline.slic.target_segments >= 2, "'metrics.superpixels' must be >= 2");
  require(m.random_baseline.slic.compactness > 0.0 && m.random_baseline.slic.iterations >= 1,
          "'metrics.slic_compactness' must be > 0 and 'metrics.slic_iterations' >= 1");
  require(!c.sweep.temperatures.empty(), "'sweep.temperatures' is empty");
  require(std::all_of(c.sweep.temperatures.begin(), c.sweep.temperatures.end(), [](double t) { return t > 0.0; }),
          "'sweep.temperatures' must be positive");
  require(c.sweep.samples >= 1 && c.sweep.samples <= c.split.evaluation,
          "'sweep.samples' must lie in [1, split.evaluation]");
  require(!has_duplicates(c.sweep.methods), "'sweep.methods' lists a method twice");
  require(c.stability.points >= 1 && c.stability.points <= c.split.evaluation,
          "'stability.points' must lie in [1, split.evaluation]");
  require(c.stability.lipschitz.neighbors >= 1 && c.stability.lipschitz.radius > 0.0,
          "'stability.neighbors' >= 1 and 'stability.radius' > 0 required");
  require(!has_duplicates(c.stability.methods), "'stability.methods' lists a method twice");
  for (Method method : c.stability.methods) {
    require(c.stability.long_run || (method != Method::kRise && method != Method::kMeaningfulPerturbation),
            "stability runs of " + std::string(method_name(method)) + " need 'stability.long_run = true'");
  }
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  const auto& sp = c.dataset.synthetic;
  const auto& s = c.saliency;
  std::vector<std::string> refs;
  if (s.integrated_gradients.black_reference) refs.emplace_back("black");
  if (s.integrated_gradients.white_reference) refs.emplace_back("white");
  return json{
      {"schema_version", kConfigSchemaVersion},
      {"seed", c.seed},
      {"explain_samples", c.explain_samples},
      {"dataset",
       {{"source", c.dataset.source},
        {"classes", sp.num_classes},
        {"height", sp.height},
        {"width", sp.width},
        {"channels", sp.channels},
        {"per_class", sp.per_class},
        {"noise", sp.noise},
        {"background", sp.background},
        {"directory", c.dataset.directory.string()},
        {"labels_csv", c.dataset.labels_csv.string()}}},
      {"model",
       {{"path", c.model.path.string()},
        {"architecture", c.model.architecture},
        {"conv1", c.model.conv1},
        {"conv2", c.model.conv2},
        {"hidden", c.model.hidden},
        {"epochs", c.model.epochs},
        {"batch_size", c.model.batch_size},
        {"learning_rate", c.model.learning_rate}}},
      {"split", {{"train", c.split.train}, {"calibration", c.split.calibration}, {"evaluation", c.split.evaluation}}},
      {"calibration",
       {{"methods", c.calibration.methods},
        {"include_identity", c.calibration.include_identity},
        {"ece_bins", c.calibration.ece_bins},
        {"dirichlet",
         {{"lambda_off_diagonal", c.calibration.dirichlet.lambda_off_diagonal},
          {"lambda_bias", c.calibration.dirichlet.lambda_bias},
          {"learning_rate", c.calibration.dirichlet.learning_rate},
          {"max_steps", c.calibration.dirichlet.max_steps},
          {"patience", c.calibration.dirichlet.patience},
          {"min_improvement", c.calibration.dirichlet.min_improvement},
          {"log_floor", c.calibration.dirichlet.log_floor}}}}},
      {"saliency",
       {{"methods", method_list(c.methods)},
        {"absolute_gradient", s.sensitivity.absolute},
        {"integrated_gradients", {{"steps", s.integrated_gradients.steps}, {"references", refs}}},
        {"rise", {{"masks", s.rise.masks}, {"grid", s.rise.grid}, {"keep_probability", s.rise.keep_probability}}},
        {"meaningful_perturbation",
         {{"lambda", s.meaningful_perturbation.lambda},
          {"beta", s.meaningful_perturbation.beta},
          {"learning_rate", s.meaningful_perturbation.learning_rate},
          {"steps", s.meaningful_perturbation.steps},
          {"checkpoint_every", s.meaningful_perturbation.checkpoint_every}}},
        {"lrp", {{"epsilon", s.lrp.epsilon}}}}},
      {"metrics",
       {{"deletion_steps", c.metrics.deletion_steps},
        {"random_orders", c.metrics.random_baseline.orders},
        {"superpixels", c.metrics.random_baseline.slic.target_segments},
        {"slic_compactness", c.metrics.random_baseline.slic.compactness},
        {"slic_iterations", c.metrics.random_baseline.slic.iterations},
        {"ssim", c.metrics.ssim},
        {"otsu_tv", c.metrics.otsu_tv}}},
      {"sweep",
       {{"temperatures", c.sweep.temperatures}, {"methods", method_list(c.sweep.methods)}, {"samples", c.sweep.samples}}},
      {"stability",
       {{"points", c.stability.points},
        {"neighbors", c.stability.lipschitz.neighbors},
        {"radius", c.stability.lipschitz.radius},
        {"methods", method_list(c.stability.methods)},
        {"long_run", c.stability.long_run}}},
  };
}

std::string config_hash(const nlohmann::json& canonical) {
  const std::string text = canonical.dump();
  const std::uint64_t h = fnv1a({reinterpret_cast<const unsigned char*>(text.data()), text.size()});
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace salcal
