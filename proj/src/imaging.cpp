#include "salcal/imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "salcal/error.hpp"

namespace salcal {

namespace {

double keys_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

void check_hwc(const Tensor& image, const char* where) {
  if (image.rank() != 3) throw ShapeError(std::string(where) + " expects [H, W, C], got " + shape_to_string(image.shape()));
}

}  // namespace

std::vector<double> gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0 || !(sigma > 0.0)) throw InvalidArgument("gaussian kernel needs odd size and sigma > 0");
  std::vector<double> k(static_cast<std::size_t>(size));
  const int r = size / 2;
  double total = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[static_cast<std::size_t>(i + r)];
  }
  for (double& v : k) v /= total;
  return k;
}

Tensor gaussian_blur(const Tensor& image, int size, double sigma) {
  check_hwc(image, "gaussian_blur");
  const auto k = gaussian_kernel(size, sigma);
  const int r = size / 2;
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2);
  std::vector<double> rows(static_cast<std::size_t>(image.size()));
  auto at = [&](Index y, Index x, Index ch) { return (y * w + x) * c + ch; };
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int d = -r; d <= r; ++d) {
          const Index xx = std::clamp<Index>(x + d, 0, w - 1);
          acc += k[static_cast<std::size_t>(d + r)] * image[at(y, xx, ch)];
        }
        rows[static_cast<std::size_t>(at(y, x, ch))] = acc;
      }
  Tensor out(image.shape());
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int d = -r; d <= r; ++d) {
          const Index yy = std::clamp<Index>(y + d, 0, h - 1);
          acc += k[static_cast<std::size_t>(d + r)] * rows[static_cast<std::size_t>(at(yy, x, ch))];
        }
        out[at(y, x, ch)] = static_cast<float>(acc);
      }
  return out;
}

Image2D resize_bicubic(const Image2D& source, Index height, Index width) {
  if (source.size() == 0 || height < 1 || width < 1) throw InvalidArgument("resize_bicubic: empty image");
  const Index sh = source.rows(), sw = source.cols();
  // Taps and weights along one axis.
  auto taps = [](Index out, Index in) {
    std::vector<std::array<std::pair<Index, double>, 4>> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (Index i = 0; i < out; ++i) {
      const double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      const auto base = static_cast<Index>(std::floor(src));
      for (int j = 0; j < 4; ++j) {
        const Index p = base - 1 + j;
        t[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = {std::clamp<Index>(p, 0, in - 1),
                                                                       keys_weight(src - static_cast<double>(p))};
      }
    }
    return t;
  };
  const auto ty = taps(height, sh), tx = taps(width, sw);
  RowArray2<double> horizontal(sh, width);
  for (Index y = 0; y < sh; ++y)
    for (Index x = 0; x < width; ++x) {
      double acc = 0.0;
      for (const auto& [p, wt] : tx[static_cast<std::size_t>(x)]) acc += wt * source(y, p);
      horizontal(y, x) = acc;
    }
  Image2D out(height, width);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      double acc = 0.0;
      for (const auto& [p, wt] : ty[static_cast<std::size_t>(y)]) acc += wt * horizontal(p, x);
      out(y, x) = static_cast<float>(acc);
    }
  return out;
}

Tensor to_lab(const Tensor& image) {
  check_hwc(image, "to_lab");
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (c != 1 && c != 3) throw ShapeError("to_lab expects 1 or 3 channels, got " + std::to_string(c));
  Tensor out({h, w, 3});
  auto linear = [](double v) { return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4); };
  auto f = [](double t) {
    constexpr double d = 6.0 / 29.0;
    return t > d * d * d ? std::cbrt(t) : t / (3.0 * d * d) + 4.0 / 29.0;
  };
  constexpr double xn = 0.95047, yn = 1.0, zn = 1.08883;
  for (Index p = 0; p < h * w; ++p) {
    double l = 0.0, a = 0.0, b = 0.0;
    if (c == 1) {
      l = 100.0 * image[p];
    } else {
      const double r = linear(image[3 * p]), g = linear(image[3 * p + 1]), bl = linear(image[3 * p + 2]);
      const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * bl;
      const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * bl;
      const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * bl;
      const double fx = f(x / xn), fy = f(y / yn), fz = f(z / zn);
      l = 116.0 * fy - 16.0;
      a = 500.0 * (fx - fy);
      b = 200.0 * (fy - fz);
    }
    out[3 * p] = static_cast<float>(l);
    out[3 * p + 1] = static_cast<float>(a);
    out[3 * p + 2] = static_cast<float>(b);
  }
  return out;
}

Tensor as_batch(const Tensor& image) {
  Shape s{1};
  s.insert(s.end(), image.shape().begin(), image.shape().end());
  return image.reshaped(std::move(s));
}

}  // namespace salcal
