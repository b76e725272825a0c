#include "salcal/calibration.hpp"

#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <set>

#include "salcal/error.hpp"
#include "salcal/model_io.hpp"
#include "salcal/optim.hpp"
#include "salcal/rng.hpp"

namespace salcal {

namespace {

constexpr Index kGradientChunk = 64;

Tensor matrix_tensor(const Eigen::MatrixXf& m) {
  Tensor t({m.rows(), m.cols()});
  Eigen::Map<RowMatrix<float>>(t.data(), m.rows(), m.cols()) = m;
  return t;
}

Tensor vector_tensor(const Eigen::VectorXf& v) {
  Tensor t({v.size()});
  t.array() = v.array();
  return t;
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

void check_labelled(std::span<const Tensor> rows, std::span<const Index> labels, const char* what) {
  if (rows.size() != labels.size()) throw InvalidArgument(std::string(what) + ": one label per sample required");
  if (rows.size() < 2) throw InvalidArgument(std::string(what) + ": at least 2 samples required");
  std::set<Index> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) throw InvalidArgument(std::string(what) + ": degenerate holdout, only one class present");
  const Index c = rows[0].size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != c) throw ShapeError(std::string(what) + ": inconsistent class counts");
    if (labels[i] < 0 || labels[i] >= c) throw InvalidArgument(std::string(what) + ": label out of range");
  }
}

Tensor rows_to_matrix(std::span<const Tensor> rows) {
  const Index c = rows[0].size();
  Tensor m({static_cast<Index>(rows.size()), c});
  for (std::size_t i = 0; i < rows.size(); ++i) m.set_row(static_cast<Index>(i), rows[i].reshaped({c}));
  return m;
}

}  // namespace

DirichletMap DirichletMap::identity(Index classes) {
  return DirichletMap{Eigen::MatrixXf::Identity(classes, classes), Eigen::VectorXf::Zero(classes), 1e-12f};
}

std::string calibrator_kind(const Calibrator& calibrator) {
  return std::visit(Overloaded{[](const IdentityCalibrator&) { return std::string("identity"); },
                               [](const TemperatureScaler&) { return std::string("temperature"); },
                               [](const DirichletMap&) { return std::string("dirichlet"); }},
                    calibrator);
}

NodeId record_calibrated_logits(Tape& tape, const Calibrator& calibrator, NodeId logits) {
  return std::visit(
      Overloaded{[&](const IdentityCalibrator&) { return logits; },
                 [&](const TemperatureScaler& s) {
                   if (!(s.temperature > 0.0)) throw InvalidArgument("temperature must be positive");
                   return ops::scale(tape, logits, static_cast<float>(1.0 / s.temperature));
                 },
                 [&](const DirichletMap& d) {
                   const Index c = tape.value(logits).shape().back();
                   if (d.weights.rows() != c || d.weights.cols() != c || d.bias.size() != c) {
                     throw ShapeError("Dirichlet map size does not match " + std::to_string(c) + " classes");
                   }
                   const NodeId log_scores = ops::log(tape, ops::softmax(tape, logits), d.log_floor);
                   return ops::affine(tape, log_scores, tape.leaf(matrix_tensor(d.weights)),
                                      tape.leaf(vector_tensor(d.bias)));
                 }},
      calibrator);
}

Tensor calibrated_scores(const Calibrator& calibrator, const Tensor& logits) {
  const bool row = logits.rank() == 1;
  Tape tape;
  const NodeId l = tape.leaf(row ? logits.reshaped({1, logits.size()}) : logits);
  Tensor out = tape.value(ops::softmax(tape, record_calibrated_logits(tape, calibrator, l)));
  return row ? out.reshaped({logits.size()}) : out;
}

Tensor apply_temperature(const TemperatureScaler& scaler, const Tensor& logits) {
  return calibrated_scores(scaler, logits);
}

Tensor apply_dirichlet(const DirichletMap& map, const Tensor& scores) {
  const bool row = scores.rank() == 1;
  Tape tape;
  const NodeId s = tape.leaf(row ? scores.reshaped({1, scores.size()}) : scores);
  const NodeId z = ops::affine(tape, ops::log(tape, s, map.log_floor), tape.leaf(matrix_tensor(map.weights)),
                               tape.leaf(vector_tensor(map.bias)));
  Tensor out = tape.value(ops::softmax(tape, z));
  return row ? out.reshaped({scores.size()}) : out;
}

double temperature_nll(std::span<const Tensor> logits, std::span<const Index> labels, double temperature) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto z = logits[i].array().cast<double>() / temperature;
    const double m = z.maxCoeff();
    total += m + std::log((z - m).exp().sum()) - z(labels[i]);
  }
  return total / static_cast<double>(logits.size());
}

TemperatureScaler fit_temperature(std::span<const Tensor> logits, std::span<const Index> labels) {
  check_labelled(logits, labels, "fit_temperature");
  constexpr double kLow = 0.05, kHigh = 20.0, kTol = 1e-4;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = kLow, b = kHigh;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = temperature_nll(logits, labels, c), fd = temperature_nll(logits, labels, d);
  while (b - a > kTol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = temperature_nll(logits, labels, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = temperature_nll(logits, labels, d);
    }
  }
  double t = (a + b) / 2.0;
  if (temperature_nll(logits, labels, t) > temperature_nll(logits, labels, 1.0)) t = 1.0;
  return {t};
}

double dirichlet_nll(const DirichletMap& map, std::span<const Tensor> scores, std::span<const Index> labels) {
  Tape tape;
  const NodeId s = tape.leaf(rows_to_matrix(scores));
  const NodeId z = ops::affine(tape, ops::log(tape, s, map.log_floor), tape.leaf(matrix_tensor(map.weights)),
                               tape.leaf(vector_tensor(map.bias)));
  return tape.value(ops::softmax_cross_entropy(tape, z, {labels.begin(), labels.end()}))[0];
}

DirichletMap fit_dirichlet(std::span<const Tensor> scores, std::span<const Index> labels,
                           const DirichletFitOptions& options) {
  check_labelled(scores, labels, "fit_dirichlet");
  for (const Tensor& s : scores) {
    const double total = s.array().cast<double>().sum();
    if ((s.array() < 0.0f).any() || std::abs(total - 1.0) > 1e-4) {
      throw InvalidArgument("fit_dirichlet: inputs must be probability vectors");
    }
  }
  const Index c = scores[0].size();
  DirichletMap map = DirichletMap::identity(c);
  map.log_floor = options.log_floor;

  Tape base;
  const Tensor log_scores = base.value(ops::log(base, base.leaf(rows_to_matrix(scores)), options.log_floor));
  const std::vector<Index> label_vec(labels.begin(), labels.end());

  Tensor w = matrix_tensor(map.weights);
  Tensor b = vector_tensor(map.bias);
  Tensor best_w = w, best_b = b;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> history;
  Adam adam(AdamOptions{options.learning_rate});

  for (Index step = 0; step <= options.max_steps; ++step) {
    Tape tape;
    const NodeId wn = tape.leaf(w, true), bn = tape.leaf(b, true);
    const NodeId z = ops::affine(tape, tape.leaf(log_scores), wn, bn);
    const NodeId loss = ops::softmax_cross_entropy(tape, z, label_vec);
    double objective = tape.value(loss)[0];
    for (Index i = 0; i < c; ++i) {
      for (Index j = 0; j < c; ++j) {
        if (i != j) objective += options.lambda_off_diagonal * w[i * c + j] * w[i * c + j];
      }
      objective += options.lambda_bias * b[i] * b[i];
    }
    if (!std::isfinite(objective)) {
      throw NumericError("fit_dirichlet: non-finite loss at step " + std::to_string(step));
    }
    if (objective < best) {
      best = objective;
      best_w = w;
      best_b = b;
    }
    history.push_back(objective);
    const auto n = static_cast<Index>(history.size());
    if (n > options.patience) {
      const double before = history[static_cast<std::size_t>(n - 1 - options.patience)];
      if ((before - objective) / std::max(std::abs(before), 1e-300) < options.min_improvement) break;
    }
    if (step == options.max_steps) break;

    const NodeId wrt[] = {wn, bn};
    auto grads = tape.backward(loss, Tensor({1}, {1.0f}), wrt);
    for (Index i = 0; i < c; ++i) {
      for (Index j = 0; j < c; ++j) {
        if (i != j) grads[0][i * c + j] += static_cast<float>(2.0 * options.lambda_off_diagonal * w[i * c + j]);
      }
      grads[1][i] += static_cast<float>(2.0 * options.lambda_bias * b[i]);
    }
    adam.begin_step();
    adam.update(0, w.values(), grads[0].values());
    adam.update(1, b.values(), grads[1].values());
  }
  map.weights = Eigen::Map<const RowMatrix<float>>(best_w.data(), c, c);
  map.bias = Eigen::Map<const Eigen::VectorXf>(best_b.data(), c);
  return map;
}

CalibratedModel::CalibratedModel(std::shared_ptr<const ClassifierModel> base, Calibrator calibrator, std::string tag)
    : base_(std::move(base)), calibrator_(std::move(calibrator)), tag_(std::move(tag)) {
  if (!base_) throw InvalidArgument("CalibratedModel needs a base model");
}

Prediction CalibratedModel::predict(const Tensor& image) const {
  const Prediction raw = salcal::predict(*base_, image);
  Tape tape;
  const NodeId l = tape.leaf(raw.logits.reshaped({1, num_classes()}));
  const NodeId z = record_calibrated_logits(tape, calibrator_, l);
  Prediction p;
  p.logits = tape.value(z).reshaped({num_classes()});
  p.scores = tape.value(ops::softmax(tape, z)).reshaped({num_classes()});
  p.predicted_class = argmax(p.scores.values());
  return p;
}

Tensor CalibratedModel::scores(const Tensor& batch) const {
  return calibrated_scores(calibrator_, forward_logits(*base_, batch));
}

Tensor CalibratedModel::input_gradient(const Tensor& image, Index class_index, GradientTarget at) const {
  if (image.shape() != base_->input_shape) {
    throw ShapeError("input shape " + shape_to_string(image.shape()) + " does not match model input " +
                     shape_to_string(base_->input_shape));
  }
  const Calibrator* cal[] = {&calibrator_};
  const Index cls[] = {class_index};
  Shape batched{1};
  batched.insert(batched.end(), image.shape().begin(), image.shape().end());
  return score_gradients(*base_, cal, image.reshaped(batched), cls, at).gradients.reshaped(image.shape());
}

ScoresAndGradients score_gradients(const ClassifierModel& base, std::span<const Calibrator* const> calibrators,
                                   const Tensor& batch, std::span<const Index> classes, GradientTarget at) {
  const Index n = batch.dim(0);
  if (static_cast<Index>(calibrators.size()) != n || static_cast<Index>(classes.size()) != n) {
    throw InvalidArgument("score_gradients: one calibrator and class per row required");
  }
  const Index c = base.num_classes;
  for (Index cls : classes) {
    if (cls < 0 || cls >= c) throw InvalidArgument("class index " + std::to_string(cls) + " out of range");
  }
  ScoresAndGradients out{Tensor({n, c}), Tensor(batch.shape())};
  for (Index begin = 0; begin < n; begin += kGradientChunk) {
    const Index count = std::min(kGradientChunk, n - begin);
    Tape tape;
    const NodeId x = tape.leaf(count == n ? batch : batch.slice_rows(begin, count), true);
    const NodeId logits = record_logits(tape, base, x);
    const Tensor& lv = tape.value(logits);
    Tensor seed({count, c});
    for (Index r = 0; r < count; ++r) {
      Tape head;
      const NodeId l = head.leaf(lv.slice_rows(r, 1), true);
      const NodeId z = record_calibrated_logits(head, *calibrators[static_cast<std::size_t>(begin + r)], l);
      const NodeId s = ops::softmax(head, z);
      const NodeId target = at == GradientTarget::kScore ? s : z;
      const NodeId picked = ops::sum(head, ops::pick(head, target, {classes[static_cast<std::size_t>(begin + r)]}));
      out.scores.set_row(begin + r, head.value(s));
      seed.set_row(r, gradient(head, picked, l));
    }
    const NodeId wrt[] = {x};
    const Tensor g = std::move(tape.backward(logits, seed, wrt).front());
    std::copy(g.data(), g.data() + g.size(), out.gradients.data() + begin * (batch.size() / n));
  }
  return out;
}

std::string calibration_set_hash(std::span<const Tensor> inputs, std::span<const Index> labels) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& t : inputs) {
    h = fnv1a({reinterpret_cast<const unsigned char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(float)}, h);
  }
  h = fnv1a({reinterpret_cast<const unsigned char*>(labels.data()), labels.size() * sizeof(Index)}, h);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string calibrator_to_json(const Calibrator& calibrator, const CalibratorProvenance& provenance) {
  using nlohmann::json;
  json j{{"kind", calibrator_kind(calibrator)}};
  if (const auto* t = std::get_if<TemperatureScaler>(&calibrator)) j["temperature"] = t->temperature;
  if (const auto* d = std::get_if<DirichletMap>(&calibrator)) {
    json w = json::array();
    for (Index i = 0; i < d->weights.rows(); ++i) {
      json row = json::array();
      for (Index k = 0; k < d->weights.cols(); ++k) row.push_back(d->weights(i, k));
      w.push_back(row);
    }
    j["W"] = w;
    j["b"] = std::vector<float>(d->bias.data(), d->bias.data() + d->bias.size());
    j["eps_log"] = d->log_floor;
  }
  j["provenance"] = {{"seed", provenance.seed}, {"calibration_set_hash", provenance.calibration_set_hash}};
  return j.dump(2);
}

Calibrator calibrator_from_json(const std::string& text, CalibratorProvenance* provenance) {
  using nlohmann::json;
  try {
    const json j = json::parse(text);
    if (provenance && j.contains("provenance")) {
      provenance->seed = j["provenance"].value("seed", std::uint64_t{0});
      provenance->calibration_set_hash = j["provenance"].value("calibration_set_hash", std::string());
    }
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "identity") return IdentityCalibrator{};
    if (kind == "temperature") {
      const double t = j.at("temperature").get<double>();
      if (!(t > 0.0)) throw FormatError("calibrator temperature must be positive");
      return TemperatureScaler{t};
    }
    if (kind == "dirichlet") {
      const auto rows = j.at("W").get<std::vector<std::vector<float>>>();
      const auto bias = j.at("b").get<std::vector<float>>();
      const auto c = static_cast<Index>(bias.size());
      DirichletMap d{Eigen::MatrixXf(c, c), Eigen::VectorXf(c), j.value("eps_log", 1e-12f)};
      if (static_cast<Index>(rows.size()) != c) throw FormatError("Dirichlet W must be C x C");
      for (Index i = 0; i < c; ++i) {
        if (static_cast<Index>(rows[static_cast<std::size_t>(i)].size()) != c) throw FormatError("Dirichlet W must be C x C");
        for (Index k = 0; k < c; ++k) d.weights(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
        d.bias(i) = bias[static_cast<std::size_t>(i)];
      }
      if (!d.weights.allFinite() || !d.bias.allFinite()) throw FormatError("Dirichlet parameters must be finite");
      return d;
    }
    throw FormatError("unknown calibrator kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid calibrator file: ") + e.what());
  }
}

void save_calibrator(const std::filesystem::path& path, const Calibrator& calibrator,
                     const CalibratorProvenance& provenance) {
  write_file_atomic(path, calibrator_to_json(calibrator, provenance) + "\n");
}

Calibrator load_calibrator(const std::filesystem::path& path, CalibratorProvenance* provenance) {
  const auto bytes = read_file_bytes(path);
  return calibrator_from_json(std::string(bytes.begin(), bytes.end()), provenance);
}

}  // namespace salcal
