#include "ditscale/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "ditscale/error.hpp"
#include "ditscale/store.hpp"

namespace ditscale::plot {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 460.0;
constexpr double kLeft = 80.0;
constexpr double kRight = 190.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& text) {
  std::string out;
  for (char ch : text) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string fmt(double v, const char* spec = "%.2f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

struct Axis {
  bool log = false;
  double lo = 0.0, hi = 1.0;  // in transformed units
  double pixel_lo = 0.0, pixel_hi = 1.0;

  double transform(double v) const { return log ? std::log10(v) : v; }
  double to_pixel(double v) const {
    return pixel_lo + (transform(v) - lo) / (hi - lo) * (pixel_hi - pixel_lo);
  }
};

Axis make_axis(const Chart& chart, bool is_x, double pixel_lo, double pixel_hi) {
  Axis axis;
  axis.log = is_x ? chart.log_x : chart.log_y;
  axis.pixel_lo = pixel_lo;
  axis.pixel_hi = pixel_hi;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& s : chart.series) {
    for (double v : is_x ? s.x : s.y) {
      if (!std::isfinite(v)) throw DomainError("plot: non-finite value in series " + s.name);
      if (axis.log && v <= 0.0) {
        throw DomainError("plot: non-positive value on a log axis in series " + s.name);
      }
      lo = std::min(lo, axis.transform(v));
      hi = std::max(hi, axis.transform(v));
    }
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  axis.lo = lo - pad;
  axis.hi = hi + pad;
  return axis;
}

std::string tick_label(const Axis& axis, double t) {
  if (axis.log) return "1e" + fmt(t, std::abs(t - std::round(t)) < 1e-9 ? "%.0f" : "%.2f");
  return fmt(t, "%.4g");
}

void draw_axis(std::ostringstream& svg, const Axis& axis, bool is_x, const std::string& label) {
  const double plot_bottom = kHeight - kBottom;
  const double plot_right = kWidth - kRight;
  std::vector<double> ticks;
  if (axis.log && axis.hi - axis.lo >= 2.0) {
    for (double t = std::ceil(axis.lo); t <= axis.hi; t += 1.0) ticks.push_back(t);
  } else {
    for (int i = 0; i <= 4; ++i) ticks.push_back(axis.lo + (axis.hi - axis.lo) * (0.05 + 0.225 * i));
  }
  for (double t : ticks) {
    const double p = axis.pixel_lo + (t - axis.lo) / (axis.hi - axis.lo) * (axis.pixel_hi - axis.pixel_lo);
    if (is_x) {
      svg << "<line x1=\"" << fmt(p) << "\" y1=\"" << fmt(plot_bottom) << "\" x2=\"" << fmt(p)
          << "\" y2=\"" << fmt(plot_bottom + 5) << "\" stroke=\"black\"/>\n";
      svg << "<text x=\"" << fmt(p) << "\" y=\"" << fmt(plot_bottom + 20)
          << "\" text-anchor=\"middle\" font-size=\"11\">" << tick_label(axis, t) << "</text>\n";
    } else {
      svg << "<line x1=\"" << fmt(kLeft - 5) << "\" y1=\"" << fmt(p) << "\" x2=\"" << fmt(kLeft)
          << "\" y2=\"" << fmt(p) << "\" stroke=\"black\"/>\n";
      svg << "<text x=\"" << fmt(kLeft - 8) << "\" y=\"" << fmt(p + 4)
          << "\" text-anchor=\"end\" font-size=\"11\">" << tick_label(axis, t) << "</text>\n";
    }
  }
  if (is_x) {
    svg << "<text x=\"" << fmt((kLeft + plot_right) / 2) << "\" y=\"" << fmt(kHeight - 15)
        << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(label) << "</text>\n";
  } else {
    const double cy = (kTop + plot_bottom) / 2;
    svg << "<text x=\"18\" y=\"" << fmt(cy) << "\" text-anchor=\"middle\" font-size=\"13\" "
        << "transform=\"rotate(-90 18 " << fmt(cy) << ")\">" << escape(label) << "</text>\n";
  }
}

std::vector<double> log_space(double lo, double hi, int n) {
  std::vector<double> out;
  const double a = std::log10(lo), b = std::log10(hi);
  for (int i = 0; i < n; ++i) out.push_back(std::pow(10.0, n == 1 ? a : a + (b - a) * i / (n - 1)));
  return out;
}

}  // namespace

std::string render_svg(const Chart& chart) {
  std::size_t total = 0;
  for (const auto& s : chart.series) {
    if (s.x.size() != s.y.size()) throw DimensionError("plot: series " + s.name + " has ragged x/y");
    total += s.x.size();
  }
  if (total == 0) throw ConfigError("plot: nothing to draw");

  const Axis x = make_axis(chart, true, kLeft, kWidth - kRight);
  const Axis y = make_axis(chart, false, kHeight - kBottom, kTop);

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << fmt(kWidth / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
      << escape(chart.title) << "</text>\n"
      << "<rect x=\"" << fmt(kLeft) << "\" y=\"" << fmt(kTop) << "\" width=\""
      << fmt(kWidth - kRight - kLeft) << "\" height=\"" << fmt(kHeight - kBottom - kTop)
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  draw_axis(svg, x, true, chart.x_label + (chart.log_x ? " (log10)" : ""));
  draw_axis(svg, y, false, chart.y_label + (chart.log_y ? " (log10)" : ""));

  for (std::size_t i = 0; i < chart.series.size(); ++i) {
    const Series& s = chart.series[i];
    const char* color = kPalette[i % std::size(kPalette)];
    svg << "<g id=\"series-" << i << "\">\n";
    if (s.mark == Mark::kLine) {
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t k = 0; k < s.x.size(); ++k) {
        svg << (k ? " " : "") << fmt(x.to_pixel(s.x[k])) << "," << fmt(y.to_pixel(s.y[k]));
      }
      svg << "\"/>\n";
    } else {
      const bool hollow = s.mark == Mark::kHollowPoints;
      for (std::size_t k = 0; k < s.x.size(); ++k) {
        svg << "<circle cx=\"" << fmt(x.to_pixel(s.x[k])) << "\" cy=\"" << fmt(y.to_pixel(s.y[k]))
            << "\" r=\"" << (hollow ? "5" : "3.5") << "\" fill=\"" << (hollow ? "none" : color)
            << "\" stroke=\"" << color << "\"/>\n";
      }
    }
    const double ly = kTop + 10 + 18.0 * double(i);
    const double lx = kWidth - kRight + 14;
    if (s.mark == Mark::kLine) {
      svg << "<line x1=\"" << fmt(lx) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(lx + 18)
          << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n";
    } else {
      svg << "<circle cx=\"" << fmt(lx + 9) << "\" cy=\"" << fmt(ly) << "\" r=\"4\" fill=\""
          << (s.mark == Mark::kHollowPoints ? "none" : color) << "\" stroke=\"" << color << "\"/>\n";
    }
    svg << "<text x=\"" << fmt(lx + 24) << "\" y=\"" << fmt(ly + 4) << "\" font-size=\"11\">"
        << escape(s.name) << "</text>\n</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

csv::Table to_table(const Chart& chart) {
  csv::Table t;
  t.header = {"series", "x", "y"};
  for (const auto& s : chart.series) {
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      t.rows.push_back({s.name, csv::format_double(s.x[k]), csv::format_double(s.y[k])});
    }
  }
  return t;
}

void write_chart(const Chart& chart, const std::filesystem::path& dir, const std::string& stem) {
  const std::string svg = render_svg(chart);
  std::ostringstream table;
  csv::write(table, to_table(chart));
  store::write_atomic(dir / (stem + ".svg"), svg);
  store::write_atomic(dir / (stem + ".csv"), table.str());
}

Chart isoflop_chart(std::span<const scalelab::IsoFlopPoint> points,
                    const scalelab::ScalingReport& report, int curve_samples) {
  if (points.empty()) throw ConfigError("plot: no isoFLOP points to draw");
  if (curve_samples < 2) throw ConfigError("plot: curve_samples must be >= 2");
  Chart chart;
  chart.title = "IsoFLOP curves";
  chart.x_label = "parameters N";
  chart.y_label = "loss";
  chart.log_x = true;

  std::map<double, std::vector<scalelab::IsoFlopPoint>> by_budget;
  for (const auto& p : points) by_budget[p.C].push_back(p);
  for (auto& [C, group] : by_budget) {
    std::sort(group.begin(), group.end(), [](const auto& a, const auto& b) {
      return a.N != b.N ? a.N < b.N : a.loss < b.loss;
    });
    Series s;
    s.name = "C=" + scalelab::budget_label(C);
    for (const auto& p : group) {
      s.x.push_back(double(p.N));
      s.y.push_back(p.loss);
    }
    chart.series.push_back(std::move(s));
  }
  for (const auto& f : report.parabolas) {
    if (!f.accepted()) continue;
    Series s;
    s.name = "fit C=" + scalelab::budget_label(f.C);
    s.mark = Mark::kLine;
    for (int i = 0; i < curve_samples; ++i) {
      const double xv = f.x_min + (f.x_max - f.x_min) * i / (curve_samples - 1);
      const double yv = f.a * xv * xv + f.b * xv + f.c;
      s.x.push_back(std::pow(10.0, xv));
      s.y.push_back(report.options.space == scalelab::FitSpace::kLogLoss ? std::pow(10.0, yv) : yv);
    }
    chart.series.push_back(std::move(s));
  }
  return chart;
}

Chart law_chart(const scalelab::ScalingReport& report, Law law, std::span<const double> extrapolate) {
  Chart chart;
  chart.log_x = true;
  chart.log_y = true;
  chart.x_label = "compute C (FLOPs)";
  const scalelab::PowerLawFit* fit = nullptr;
  Series optima;
  optima.name = "optima";
  switch (law) {
    case Law::kModel:
      fit = &report.n_law;
      chart.y_label = "N_opt";
      for (const auto& o : report.optima) optima.y.push_back(o.n_opt);
      break;
    case Law::kData:
      fit = &report.d_law;
      chart.y_label = "D_opt";
      for (const auto& o : report.optima) optima.y.push_back(o.d_opt);
      break;
    case Law::kLoss:
      fit = &report.l_law;
      chart.y_label = "L_opt";
      for (const auto& o : report.optima) optima.y.push_back(o.l_opt);
      break;
    case Law::kFrechet:
      if (!report.fid_law) throw ConfigError("plot: the report has no Frechet law");
      fit = &*report.fid_law;
      chart.y_label = "Frechet distance";
      for (const auto& [c, v] : report.fid_points) {
        optima.x.push_back(c);
        optima.y.push_back(v);
      }
      break;
  }
  if (law != Law::kFrechet) {
    for (const auto& o : report.optima) optima.x.push_back(o.C);
  }
  if (optima.x.empty()) throw ConfigError("plot: the report has no optima");
  chart.title = chart.y_label + " = " + fmt(fit->k, "%.4g") + " C^" + fmt(fit->e, "%.4f");

  Series line;
  line.name = "fit";
  line.mark = Mark::kLine;
  for (double c : log_space(fit->c_min, fit->c_max, 20)) {
    line.x.push_back(c);
    line.y.push_back(fit->k * std::pow(c, fit->e));
  }
  chart.series.push_back(std::move(optima));
  chart.series.push_back(std::move(line));
  if (!extrapolate.empty()) {
    Series ext;
    ext.name = "extrapolated";
    ext.mark = Mark::kHollowPoints;
    for (double c : extrapolate) {
      ext.x.push_back(c);
      ext.y.push_back(scalelab::predict(*fit, c).value);
    }
    chart.series.push_back(std::move(ext));
  }
  return chart;
}

std::string to_string(Law law) {
  switch (law) {
    case Law::kModel: return "n_opt";
    case Law::kData: return "d_opt";
    case Law::kLoss: return "l_opt";
    case Law::kFrechet: return "frechet";
  }
  return "unknown";
}

}  // namespace ditscale::plot
