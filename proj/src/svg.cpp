#include "salcal/svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>

namespace salcal::svg {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 170, kTop = 40, kBottom = 60;
constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!(lo <= hi)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  }
};

class Canvas {
 public:
  Canvas(const std::string& title, const Range& x, const Range& y, bool log_x)
      : x_(x), y_(y), log_x_(log_x) {
    out_ = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
           num(kWidth) + "\" height=\"" + num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) +
           "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    text(kWidth / 2 - kRight / 2 + kLeft / 2, 24, title, "middle", 15);
  }

  double px(double x) const {
    const double lo = log_x_ ? std::log10(x_.lo) : x_.lo, hi = log_x_ ? std::log10(x_.hi) : x_.hi;
    const double v = log_x_ ? std::log10(x) : x;
    return kLeft + (v - lo) / (hi - lo) * (kWidth - kLeft - kRight);
  }
  double py(double y) const { return kHeight - kBottom - (y - y_.lo) / (y_.hi - y_.lo) * (kHeight - kTop - kBottom); }

  void axes(const std::string& x_label, const std::string& y_label, bool x_ticks = true) {
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
    out_ += "<path d=\"M" + num(x0) + " " + num(y1) + " L" + num(x0) + " " + num(y0) + " L" + num(x1) + " " + num(y0) +
            "\" stroke=\"black\" fill=\"none\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double yv = y_.lo + (y_.hi - y_.lo) * i / 4.0;
      text(x0 - 6, py(yv) + 4, num(yv), "end", 11);
      if (!x_ticks) continue;
      const double xv = log_x_ ? std::pow(10.0, std::log10(x_.lo) + (std::log10(x_.hi) - std::log10(x_.lo)) * i / 4.0)
                               : x_.lo + (x_.hi - x_.lo) * i / 4.0;
      text(px(xv), y0 + 16, num(xv), "middle", 11);
    }
    text((x0 + x1) / 2, kHeight - 18, x_label, "middle", 12);
    out_ += "<text x=\"16\" y=\"" + num((y0 + y1) / 2) + "\" font-family=\"sans-serif\" font-size=\"12\" " +
            "text-anchor=\"middle\" transform=\"rotate(-90 16 " + num((y0 + y1) / 2) + ")\">" + escape(y_label) +
            "</text>\n";
  }

  void legend(std::size_t index, const std::string& name) {
    const double y = kTop + 14 + 18 * static_cast<double>(index);
    const double x = kWidth - kRight + 14;
    out_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y - 9) + "\" width=\"12\" height=\"10\" fill=\"" + color(index) +
            "\"/>\n";
    text(x + 18, y, name, "start", 11);
  }

  void text(double x, double y, const std::string& s, const char* anchor, int size) {
    out_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-family=\"sans-serif\" font-size=\"" +
            std::to_string(size) + "\" text-anchor=\"" + anchor + "\">" + escape(s) + "</text>\n";
  }

  static const char* color(std::size_t i) { return kPalette[i % kPalette.size()]; }

  std::string& body() { return out_; }
  std::string finish() { return out_ + "</svg>\n"; }

 private:
  Range x_, y_;
  bool log_x_;
  std::string out_;
};

}  // namespace

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string render(const LinePlot& plot) {
  Range xr, yr;
  for (const auto& s : plot.series) {
    for (double v : s.x) xr.add(plot.log_x && v <= 0 ? std::numeric_limits<double>::quiet_NaN() : v);
    for (double v : s.y) yr.add(v);
  }
  for (const auto& [x, y] : plot.highlights) xr.add(x), yr.add(y);
  xr.finish();
  yr.finish();
  Canvas cv(plot.title, xr, yr, plot.log_x);
  cv.axes(plot.x_label, plot.y_label);
  for (std::size_t i = 0; i < plot.series.size(); ++i) {
    const auto& s = plot.series[i];
    std::string d;
    for (std::size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k]) || (plot.log_x && s.x[k] <= 0)) continue;
      d += (d.empty() ? "M" : " L") + num(cv.px(s.x[k])) + " " + num(cv.py(s.y[k]));
      if (s.markers) {
        cv.body() += "<circle cx=\"" + num(cv.px(s.x[k])) + "\" cy=\"" + num(cv.py(s.y[k])) + "\" r=\"3\" fill=\"" +
                     Canvas::color(i) + "\"/>\n";
      }
    }
    if (!d.empty()) {
      cv.body() += "<path d=\"" + d + "\" stroke=\"" + Canvas::color(i) + "\" stroke-width=\"1.5\" fill=\"none\"/>\n";
    }
    cv.legend(i, s.name);
  }
  for (const auto& [x, y] : plot.highlights) {
    cv.body() += "<circle cx=\"" + num(cv.px(x)) + "\" cy=\"" + num(cv.py(y)) +
                 "\" r=\"7\" stroke=\"black\" stroke-width=\"2\" fill=\"none\"/>\n";
  }
  return cv.finish();
}

std::string render(const BarChart& chart) {
  Range yr;
  yr.add(0.0);
  for (const auto& row : chart.values)
    for (double v : row) yr.add(v);
  yr.finish();
  Range xr;
  xr.add(0.0);
  xr.add(static_cast<double>(std::max<std::size_t>(1, chart.categories.size())));
  Canvas cv(chart.title, xr, yr, false);
  cv.axes("", chart.y_label, false);
  const double group = cv.px(1.0) - cv.px(0.0);
  const double bar = group * 0.8 / static_cast<double>(std::max<std::size_t>(1, chart.series.size()));
  for (std::size_t c = 0; c < chart.categories.size(); ++c) {
    const double gx = cv.px(static_cast<double>(c)) + group * 0.1;
    for (std::size_t s = 0; s < chart.series.size(); ++s) {
      const double v = s < chart.values.size() && c < chart.values[s].size() ? chart.values[s][c] : 0.0;
      if (!std::isfinite(v)) continue;
      const double top = cv.py(std::max(v, 0.0)), base = cv.py(std::min(v, 0.0));
      cv.body() += "<rect x=\"" + num(gx + bar * static_cast<double>(s)) + "\" y=\"" + num(top) + "\" width=\"" +
                   num(bar * 0.9) + "\" height=\"" + num(base - top) + "\" fill=\"" + Canvas::color(s) + "\"/>\n";
    }
    cv.text(gx + group * 0.4, kHeight - kBottom + 16, chart.categories[c], "middle", 10);
  }
  for (std::size_t s = 0; s < chart.series.size(); ++s) cv.legend(s, chart.series[s]);
  return cv.finish();
}

std::string render(const Histogram& hist) {
  LinePlot plot{hist.title, hist.x_label, "count", {}, false, {}};
  for (std::size_t s = 0; s < hist.counts.size(); ++s) {
    Series line{s < hist.series.size() ? hist.series[s] : "", {}, {}, false};
    for (std::size_t b = 0; b + 1 < hist.edges.size() && b < hist.counts[s].size(); ++b) {
      line.x.insert(line.x.end(), {hist.edges[b], hist.edges[b + 1]});
      line.y.insert(line.y.end(), {hist.counts[s][b], hist.counts[s][b]});
    }
    plot.series.push_back(std::move(line));
  }
  return render(plot);
}

std::string render(const BoxPlot& plot) {
  Range yr, xr;
  for (const auto& b : plot.boxes) yr.add(b.min), yr.add(b.max);
  yr.finish();
  xr.add(0.0);
  xr.add(static_cast<double>(std::max<std::size_t>(1, plot.boxes.size())));
  Canvas cv(plot.title, xr, yr, false);
  cv.axes("", plot.y_label, false);
  const double slot = cv.px(1.0) - cv.px(0.0);
  for (std::size_t i = 0; i < plot.boxes.size(); ++i) {
    const Box& b = plot.boxes[i];
    const double cx = cv.px(static_cast<double>(i)) + slot / 2, half = slot * 0.3;
    const std::string stroke = std::string("\" stroke=\"") + Canvas::color(i) + "\" stroke-width=\"1.5\"";
    auto hline = [&](double y, double w) {
      cv.body() += "<line x1=\"" + num(cx - w) + "\" y1=\"" + num(cv.py(y)) + "\" x2=\"" + num(cx + w) + "\" y2=\"" +
                   num(cv.py(y)) + stroke + "/>\n";
    };
    cv.body() += "<line x1=\"" + num(cx) + "\" y1=\"" + num(cv.py(b.min)) + "\" x2=\"" + num(cx) + "\" y2=\"" +
                 num(cv.py(b.max)) + stroke + "/>\n";
    cv.body() += "<rect x=\"" + num(cx - half) + "\" y=\"" + num(cv.py(b.q3)) + "\" width=\"" + num(2 * half) +
                 "\" height=\"" + num(cv.py(b.q1) - cv.py(b.q3)) + "\" fill=\"white" + stroke + "/>\n";
    hline(b.median, half);
    hline(b.min, half / 2);
    hline(b.max, half / 2);
    cv.text(cx, kHeight - kBottom + 16, b.name, "middle", 9);
  }
  return cv.finish();
}

}  // namespace salcal::svg
