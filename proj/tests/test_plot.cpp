#include <doctest.h>

#include <cmath>

#include "ditscale/error.hpp"
#include "ditscale/plot.hpp"
#include "ditscale/store.hpp"
#include "support.hpp"

using namespace ditscale;
using namespace ditscale::plot;

namespace {

scalelab::ScalingReport fixture_report() {
  const auto fx = store::published_laws();
  std::vector<double> n, d, l, f;
  for (double c : store::published_budgets()) {
    n.push_back(fx.n_k * std::pow(c, fx.n_e));
    d.push_back(fx.d_k * std::pow(c, fx.d_e));
    l.push_back(fx.l_k * std::pow(c, fx.l_e));
    f.push_back(fx.fid->first * std::pow(c, fx.fid->second));
  }
  return scalelab::report_from_optima(store::published_budgets(), n, d, l, f);
}

// Points on y = (log10 N - centre)^2 + 1 for three budgets, plus one budget
// whose points are concave.
std::vector<scalelab::IsoFlopPoint> isoflop_points() {
  std::vector<scalelab::IsoFlopPoint> pts;
  for (double c : {1e9, 1e10, 1e11, 1e12}) {
    const double centre = std::log10(c) / 2.0;
    for (double x = centre - 1.0; x <= centre + 1.01; x += 0.5) {
      const auto n = std::int64_t(std::llround(std::pow(10.0, x)));
      const double y = c == 1e12 ? 2.0 - (x - centre) * (x - centre) : 1.0 + (x - centre) * (x - centre);
      pts.push_back({c, n, std::int64_t(c / (6.0 * double(n))), y, ""});
    }
  }
  return pts;
}

const Series* find(const Chart& c, const std::string& name) {
  for (const auto& s : c.series) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

}  // namespace

TEST_SUITE("plot") {

TEST_CASE("SVG documents are well formed") {
  Chart c;
  c.title = "a < b & c";
  c.x_label = "x";
  c.y_label = "y";
  c.log_x = true;
  c.series = {{"s", {1.0, 10.0, 100.0}, {3.0, 2.0, 1.0}, Mark::kLine},
              {"p", {2.0, 20.0}, {1.5, 2.5}, Mark::kHollowPoints}};
  const std::string svg = render_svg(c);
  CHECK(svg.rfind("<?xml", 0) == 0);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("a &lt; b &amp; c") != std::string::npos);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg.find("nan") == std::string::npos);

  const csv::Table t = to_table(c);
  CHECK(t.header == std::vector<std::string>{"series", "x", "y"});
  CHECK(t.rows.size() == 5);
}

TEST_CASE("invalid charts are rejected") {
  CHECK_THROWS_AS(render_svg(Chart{}), ConfigError);
  Chart c;
  c.series = {{"s", {1.0, 2.0}, {1.0}, Mark::kPoints}};
  CHECK_THROWS_AS(render_svg(c), DimensionError);
  c.series = {{"s", {0.0, 2.0}, {1.0, 1.0}, Mark::kPoints}};
  c.log_x = true;
  CHECK_THROWS_AS(render_svg(c), DomainError);
}

TEST_CASE("isoflop chart draws fits for accepted budgets only") {
  const auto pts = isoflop_points();
  const auto report = scalelab::build_report(pts);
  const Chart c = isoflop_chart(pts, report);
  CHECK(c.log_x);
  CHECK(find(c, "C=1e9") != nullptr);
  CHECK(find(c, "C=1e12") != nullptr);
  REQUIRE(find(c, "fit C=1e9") != nullptr);
  CHECK(find(c, "fit C=1e10") != nullptr);
  CHECK(find(c, "fit C=1e11") != nullptr);
  CHECK(find(c, "fit C=1e12") == nullptr);
  const Series& fit = *find(c, "fit C=1e9");
  CHECK(fit.mark == Mark::kLine);
  CHECK(fit.x.size() == 50);
  // The fitted curve bottoms out at the vertex value.
  double lo = fit.y.front();
  for (double y : fit.y) lo = std::min(lo, y);
  CHECK(lo == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("law charts hold the report values exactly") {
  const auto report = fixture_report();
  const std::vector<double> extra{1.5e21};
  const Chart c = law_chart(report, Law::kModel, extra);
  CHECK(c.log_x);
  CHECK(c.log_y);
  const Series* opt = find(c, "optima");
  REQUIRE(opt != nullptr);
  REQUIRE(opt->x.size() == report.optima.size());
  for (std::size_t i = 0; i < opt->x.size(); ++i) {
    CHECK(opt->x[i] == report.optima[i].C);
    CHECK(opt->y[i] == report.optima[i].n_opt);
  }
  const Series* fit = find(c, "fit");
  REQUIRE(fit != nullptr);
  const double slope = (std::log10(fit->y.back()) - std::log10(fit->y.front())) /
                       (std::log10(fit->x.back()) - std::log10(fit->x.front()));
  CHECK(slope == doctest::Approx(report.n_law.e).epsilon(1e-9));
  const Series* ext = find(c, "extrapolated");
  REQUIRE(ext != nullptr);
  CHECK(ext->mark == Mark::kHollowPoints);
  CHECK(ext->y[0] == doctest::Approx(report.n_law.k * std::pow(1.5e21, report.n_law.e)));

  const csv::Table t = to_table(c);
  const std::size_t cx = t.column("x"), cy = t.column("y"), cs = t.column("series");
  std::size_t i = 0;
  for (const auto& row : t.rows) {
    if (row[cs] != "optima") continue;
    CHECK(csv::parse_double(row[cx]) == report.optima[i].C);
    CHECK(csv::parse_double(row[cy]) == report.optima[i].n_opt);
    ++i;
  }
  CHECK(i == report.optima.size());

  CHECK_NOTHROW(law_chart(report, Law::kFrechet));
  scalelab::ScalingReport no_fid = report;
  no_fid.fid_law.reset();
  CHECK_THROWS_AS(law_chart(no_fid, Law::kFrechet), ConfigError);
}

TEST_CASE("charts are written as SVG and CSV twins") {
  testing::TempDir dir("plot");
  const auto report = fixture_report();
  write_chart(law_chart(report, Law::kLoss), dir.path(), "loss");
  CHECK(std::filesystem::exists(dir.path() / "loss.svg"));
  const csv::Table t = csv::read(dir.path() / "loss.csv");
  CHECK(t.rows.size() == to_table(law_chart(report, Law::kLoss)).rows.size());
  CHECK(to_string(Law::kData) == "d_opt");
}

}  // TEST_SUITE
