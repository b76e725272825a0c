#pragma once

#include <string>
#include <utility>
#include <vector>

namespace salcal::svg {

struct Series {
  std::string name;
  std::vector<double> x, y;
  bool markers = false;
};

struct LinePlot {
  std::string title, x_label, y_label;
  std::vector<Series> series;
  bool log_x = false;
  // Points drawn as large rings on top of the series.
  std::vector<std::pair<double, double>> highlights;
};

struct BarChart {
  std::string title, y_label;
  std::vector<std::string> categories;  // groups along the x axis
  std::vector<std::string> series;      // bars within a group
  std::vector<std::vector<double>> values;  // [series][category]
};

// Bin counts over shared edges, one row per series; drawn as step outlines.
struct Histogram {
  std::string title, x_label;
  std::vector<double> edges;
  std::vector<std::string> series;
  std::vector<std::vector<double>> counts;
};

struct Box {
  std::string name;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

struct BoxPlot {
  std::string title, y_label;
  std::vector<Box> boxes;
};

std::string render(const LinePlot& plot);
std::string render(const BarChart& chart);
std::string render(const Histogram& hist);
std::string render(const BoxPlot& plot);

std::string escape(const std::string& text);

}  // namespace salcal::svg
