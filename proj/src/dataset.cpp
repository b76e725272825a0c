#include "salcal/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "salcal/error.hpp"
#include "salcal/rng.hpp"

namespace salcal {

namespace {

// Whether pixel (y, x) of an s-by-s cell belongs to the class shape.
bool shape_pixel(ShapeKind kind, Index y, Index x, Index s) {
  const double c = (s - 1) / 2.0;
  const double dy = y - c, dx = x - c;
  const double r = std::sqrt(dy * dy + dx * dx);
  const Index t = std::max<Index>(1, s / 4);  // stroke width
  switch (kind) {
    case ShapeKind::kSquare: return true;
    case ShapeKind::kDisc: return r <= s / 2.0;
    case ShapeKind::kCross: return std::abs(dy) < t / 2.0 + 0.5 || std::abs(dx) < t / 2.0 + 0.5;
    case ShapeKind::kHorizontalBars: return (y / t) % 2 == 0;
    case ShapeKind::kVerticalBars: return (x / t) % 2 == 0;
    case ShapeKind::kRing: return r <= s / 2.0 && r >= s / 2.0 - t;
    case ShapeKind::kTriangle: return std::abs(dx) <= y / 2.0;
    case ShapeKind::kDiagonal: return std::abs(y - x) < t;
    case ShapeKind::kFrame: return y < t || x < t || y >= s - t || x >= s - t;
    case ShapeKind::kChecker: return ((y / t) + (x / t)) % 2 == 0;
  }
  return false;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

void validate_dataset(const Dataset& data) {
  for (const Sample& s : data.samples) {
    if (s.image.shape() != data.image_shape) {
      throw InvalidArgument("sample '" + s.id + "' has shape " + shape_to_string(s.image.shape()) + ", expected " +
                            shape_to_string(data.image_shape));
    }
    if (s.label < 0 || s.label >= data.num_classes) {
      throw InvalidArgument("sample '" + s.id + "' label " + std::to_string(s.label) + " outside [0, " +
                            std::to_string(data.num_classes) + ")");
    }
  }
}

Tensor batch_images(const Dataset& data, std::span<const std::size_t> indices) {
  Shape shape{static_cast<Index>(indices.size())};
  shape.insert(shape.end(), data.image_shape.begin(), data.image_shape.end());
  Tensor out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) out.set_row(static_cast<Index>(i), data.samples.at(indices[i]).image);
  return out;
}

Dataset generate_synthetic_dataset(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 2 || spec.num_classes > 10) throw InvalidArgument("synthetic data supports 2..10 classes");
  if (static_cast<Index>(spec.per_class.size()) != spec.num_classes) {
    throw InvalidArgument("per_class must list one count per class");
  }
  if (spec.height < 8 || spec.width < 8 || (spec.channels != 1 && spec.channels != 3)) {
    throw InvalidArgument("synthetic images need H, W >= 8 and 1 or 3 channels");
  }
  Dataset data;
  data.image_shape = {spec.height, spec.width, spec.channels};
  data.num_classes = spec.num_classes;

  std::vector<Index> labels;
  for (Index c = 0; c < spec.num_classes; ++c) labels.insert(labels.end(), spec.per_class[c], c);
  Rng rng(derive_seed(seed, {hash_tag("synthetic")}));
  std::shuffle(labels.begin(), labels.end(), rng);

  const Index min_side = std::min(spec.height, spec.width);
  std::uniform_int_distribution<Index> size_dist(std::max<Index>(4, min_side * 3 / 10), std::max<Index>(4, min_side / 2));
  std::uniform_real_distribution<float> unit(-1.0f, 1.0f);
  std::uniform_real_distribution<float> color_dist(0.8f, 1.0f);

  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Index label = labels[i];
    const auto kind = static_cast<ShapeKind>(label);
    const Index s = size_dist(rng);
    const Index top = std::uniform_int_distribution<Index>(0, spec.height - s)(rng);
    const Index left = std::uniform_int_distribution<Index>(0, spec.width - s)(rng);
    std::vector<float> color(static_cast<std::size_t>(spec.channels));
    for (float& c : color) c = color_dist(rng);

    Sample sample;
    sample.id = "synth-" + std::to_string(i);
    sample.label = label;
    sample.image = Tensor(data.image_shape);
    BoundingBox box{spec.height, spec.width, 0, 0};
    for (Index y = 0; y < spec.height; ++y) {
      for (Index x = 0; x < spec.width; ++x) {
        const bool inside = y >= top && y < top + s && x >= left && x < left + s && shape_pixel(kind, y - top, x - left, s);
        if (inside) {
          box.top = std::min(box.top, y);
          box.left = std::min(box.left, x);
          box.bottom = std::max(box.bottom, y + 1);
          box.right = std::max(box.right, x + 1);
        }
        for (Index c = 0; c < spec.channels; ++c) {
          const float base = inside ? color[static_cast<std::size_t>(c)] : spec.background;
          const float v = base + spec.noise * unit(rng);
          sample.image[(y * spec.width + x) * spec.channels + c] = std::clamp(v, 0.0f, 1.0f);
        }
      }
    }
    sample.box = box;
    data.samples.push_back(std::move(sample));
  }
  return data;
}

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open image " + path.string());
  auto token = [&]() {
    std::string t;
    char ch;
    while (f.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(f, skip);
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
      } else {
        t.push_back(ch);
      }
    }
    return t;
  };
  const std::string magic = token();
  Index channels = 0;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw FormatError(path.string() + ": malformed header, expected P6 or P5 magic, found '" + magic + "'");
  Index width = 0, height = 0, maxval = 0;
  try {
    width = std::stoll(token());
    height = std::stoll(token());
    maxval = std::stoll(token());
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed header dimensions");
  }
  if (width <= 0 || height <= 0) throw FormatError(path.string() + ": malformed header dimensions");
  if (maxval != 255) throw FormatError(path.string() + ": only 8-bit images (maxval 255) are supported");
  std::vector<unsigned char> raw(static_cast<std::size_t>(width * height * channels));
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (f.gcount() != static_cast<std::streamsize>(raw.size())) throw FormatError(path.string() + ": truncated pixel data");
  Tensor img({height, width, channels});
  for (std::size_t i = 0; i < raw.size(); ++i) img[static_cast<Index>(i)] = raw[i] / 255.0f;
  return img;
}

void write_pnm(const Tensor& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
    throw ShapeError("write_pnm needs [H, W, 1|3], got " + shape_to_string(image.shape()));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write " + path.string());
  f << (image.dim(2) == 3 ? "P6" : "P5") << '\n' << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  for (float v : image.values()) {
    f.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
  }
}

Dataset load_image_dataset(const std::filesystem::path& dir, const std::filesystem::path& labels_csv,
                           Index num_classes) {
  std::ifstream csv(labels_csv);
  if (!csv) throw FormatError("cannot open labels file " + labels_csv.string());
  Dataset data;
  data.num_classes = num_classes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(csv, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(labels_csv.string() + ":" + std::to_string(line_no) + ": expected filename,label");
    const std::string name = trim(line.substr(0, comma));
    const std::string label_text = trim(line.substr(comma + 1));
    if (line_no == 1 && name == "filename") continue;
    Index label = 0;
    try {
      std::size_t used = 0;
      label = std::stoll(label_text, &used);
      if (used != label_text.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError(labels_csv.string() + ":" + std::to_string(line_no) + ": invalid label '" + label_text + "'");
    }
    if (label < 0 || label >= num_classes) {
      throw InvalidArgument(labels_csv.string() + ":" + std::to_string(line_no) + ": label " + std::to_string(label) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
    const std::filesystem::path file = dir / name;
    if (!std::filesystem::is_regular_file(file)) {
      throw FormatError(labels_csv.string() + ":" + std::to_string(line_no) + ": file '" + name + "' not found in " +
                        dir.string());
    }
    Sample s{name, read_pnm(file), label, std::nullopt};
    if (data.samples.empty()) data.image_shape = s.image.shape();
    if (s.image.shape() != data.image_shape) {
      throw ShapeError("image '" + name + "' has shape " + shape_to_string(s.image.shape()) + ", expected " +
                       shape_to_string(data.image_shape));
    }
    data.samples.push_back(std::move(s));
  }
  if (data.samples.empty()) throw FormatError("labels file " + labels_csv.string() + " lists no images");
  return data;
}

}  // namespace salcal
