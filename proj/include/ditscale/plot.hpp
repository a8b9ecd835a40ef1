#pragma once

// Static SVG figures. Every figure is written next to a CSV twin holding
// the exact plotted numbers (series, x, y).

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ditscale/csv.hpp"
#include "ditscale/scalelab.hpp"

namespace ditscale::plot {

enum class Mark { kPoints, kLine, kHollowPoints };

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  Mark mark = Mark::kPoints;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  std::vector<Series> series;
};

/// SVG 1.1 document. Throws ConfigError for an empty chart and DomainError
/// for non-positive values on a log axis.
std::string render_svg(const Chart& chart);

/// Long format: series, x, y.
csv::Table to_table(const Chart& chart);

/// Writes <stem>.svg and <stem>.csv into dir.
void write_chart(const Chart& chart, const std::filesystem::path& dir, const std::string& stem);

/// Loss against N (log x) per budget, with a fitted parabola for each
/// accepted budget; rejected budgets are drawn as points only.
Chart isoflop_chart(std::span<const scalelab::IsoFlopPoint> points,
                    const scalelab::ScalingReport& report, int curve_samples = 50);

enum class Law { kModel, kData, kLoss, kFrechet };

/// Fitted optima, the fitted line over [c_min, c_max] and hollow markers
/// at the extrapolation budgets. Throws ConfigError when the report has no
/// such law.
Chart law_chart(const scalelab::ScalingReport& report, Law law,
                std::span<const double> extrapolate = {});

std::string to_string(Law law);

}  // namespace ditscale::plot
