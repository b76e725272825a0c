#include "salcal/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>

#include "salcal/error.hpp"

namespace salcal {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

template <typename T>
void put(std::vector<unsigned char>& out, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError("truncated model file: " + std::string(what) + " at offset " + std::to_string(pos_) +
                        " needs " + std::to_string(n) + " bytes, " + std::to_string(bytes_.size() - pos_) +
                        " available");
    }
  }

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  Tensor tensor(Shape shape, const char* what) {
    const Index n = shape_numel(shape);
    need(static_cast<std::size_t>(n) * sizeof(float), what);
    std::vector<float> data(static_cast<std::size_t>(n));
    std::memcpy(data.data(), bytes_.data() + pos_, data.size() * sizeof(float));
    pos_ += data.size() * sizeof(float);
    return Tensor(std::move(shape), std::move(data));
  }

  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

json layer_header(const LayerSpec& l) {
  json j{{"kind", layer_kind_name(l.kind)}};
  switch (l.kind) {
    case LayerKind::kConv2d:
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      [[fallthrough]];
    case LayerKind::kDense:
    case LayerKind::kAffine:
      j["in"] = l.in_features;
      j["out"] = l.out_features;
      j["blobs"] = json::array({json{{"name", "weight"}, {"shape", l.weight.shape()}},
                                json{{"name", "bias"}, {"shape", l.bias.shape()}}});
      break;
    case LayerKind::kMaxPool2d:
    case LayerKind::kAvgPool2d:
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      break;
    case LayerKind::kLog: j["floor"] = l.floor; break;
    case LayerKind::kScale: j["factor"] = l.factor; break;
    default: break;
  }
  return j;
}

}  // namespace

std::vector<unsigned char> serialize_model(const ClassifierModel& model) {
  validate_model(model);
  json header{{"input_shape", model.input_shape}, {"num_classes", model.num_classes}};
  header["train_accuracy"] = model.train_accuracy ? json(*model.train_accuracy) : json(nullptr);
  header["layers"] = json::array();
  for (const LayerSpec& l : model.layers) header["layers"].push_back(layer_header(l));
  const std::string text = header.dump();

  std::vector<unsigned char> out(std::begin(kModelMagic), std::end(kModelMagic));
  put<std::uint16_t>(out, kModelVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const LayerSpec& l : model.layers) {
    if (!l.has_weights()) continue;
    for (const Tensor* t : {&l.weight, &l.bias}) {
      const auto* p = reinterpret_cast<const unsigned char*>(t->data());
      out.insert(out.end(), p, p + t->size() * static_cast<Index>(sizeof(float)));
    }
  }
  return out;
}

ClassifierModel deserialize_model(const std::vector<unsigned char>& bytes) {
  Reader in(bytes);
  const std::string magic = in.string(4, "magic");
  if (magic != std::string(kModelMagic, 4)) {
    throw FormatError("bad magic at offset 0: expected 'CTIM', found '" + magic + "'");
  }
  const auto version = in.get<std::uint16_t>("version");
  if (version != kModelVersion) {
    throw FormatError("unsupported model version " + std::to_string(version) + " at offset 4 (expected " +
                      std::to_string(kModelVersion) + ")");
  }
  const auto header_len = in.get<std::uint32_t>("header length");
  const std::size_t header_at = in.pos();
  json header;
  try {
    header = json::parse(in.string(header_len, "header"));
  } catch (const json::parse_error& e) {
    throw FormatError("malformed model header at offset " + std::to_string(header_at) + ": " + e.what());
  }

  ClassifierModel model;
  try {
    model.input_shape = header.at("input_shape").get<Shape>();
    model.num_classes = header.at("num_classes").get<Index>();
    if (!header.at("train_accuracy").is_null()) model.train_accuracy = header["train_accuracy"].get<double>();
    for (const json& j : header.at("layers")) {
      LayerSpec l;
      l.kind = parse_layer_kind(j.at("kind").get<std::string>());
      l.kernel = j.value("kernel", Index{0});
      l.stride = j.value("stride", Index{1});
      l.padding = j.value("padding", Index{0});
      l.in_features = j.value("in", Index{0});
      l.out_features = j.value("out", Index{0});
      l.floor = j.value("floor", 0.0f);
      l.factor = j.value("factor", 1.0f);
      if (l.has_weights()) {
        const json& blobs = j.at("blobs");
        if (blobs.size() != 2) throw FormatError("weighted layer must list weight and bias blobs");
        l.weight = in.tensor(blobs[0].at("shape").get<Shape>(), "weight blob");
        l.bias = in.tensor(blobs[1].at("shape").get<Shape>(), "bias blob");
      }
      model.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid model header: ") + e.what());
  }
  if (in.pos() != in.size()) {
    throw FormatError("trailing bytes after weight data at offset " + std::to_string(in.pos()));
  }
  validate_model(model);
  return model;
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_model(const ClassifierModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

ClassifierModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file_bytes(path)); }

}  // namespace salcal
