// ditscale: isoFLOP sweeps, scaling-law fits and evaluation from the shell.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ditscale/error.hpp"
#include "ditscale/evalkit.hpp"
#include "ditscale/flops.hpp"
#include "ditscale/plot.hpp"
#include "ditscale/scalelab.hpp"
#include "ditscale/store.hpp"

namespace fs = std::filesystem;
using namespace ditscale;

namespace {

struct Globals {
  std::string config;
  std::optional<std::string> store;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  bool force = false;
  std::optional<int> stop_after;
  std::optional<std::string> sweep;
  bool json = false;
};

std::string num(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Exponents at ten significant digits: exact fixture fits print as published.
std::string exponent(double e) { return num(e, "%.10g"); }

void print_law(const char* name, const scalelab::PowerLawFit& f) {
  std::printf("  %-6s = %-12s * C^%-14s R^2 = %.6f  (+/- %.2g, C in [%g, %g], %d points)\n", name,
              num(f.k, "%.6g").c_str(), exponent(f.e).c_str(), f.r_squared, f.exponent_std_error,
              f.c_min, f.c_max, f.n_points);
}

void print_report(const scalelab::ScalingReport& r) {
  if (!r.parabolas.empty()) {
    std::printf("%-10s %-14s %-6s %-12s %-12s %-10s %s\n", "budget", "status", "points", "N_opt",
                "D_opt", "L_opt", "note");
    for (const auto& p : r.parabolas) {
      std::printf("%-10s %-14s %-6d %-12s %-12s %-10s %s\n", scalelab::budget_label(p.C).c_str(),
                  scalelab::to_string(p.status).c_str(), p.n_points,
                  p.accepted() ? num(p.n_opt).c_str() : "-", p.accepted() ? num(p.d_opt).c_str() : "-",
                  p.accepted() ? num(p.l_opt).c_str() : "-", p.diagnostic.c_str());
    }
  } else {
    std::printf("%-10s %-12s %-12s %-10s\n", "budget", "N_opt", "D_opt", "L_opt");
    for (const auto& o : r.optima) {
      std::printf("%-10s %-12s %-12s %-10s\n", scalelab::budget_label(o.C).c_str(),
                  num(o.n_opt).c_str(), num(o.d_opt).c_str(), num(o.l_opt).c_str());
    }
  }
  std::printf("laws:\n");
  print_law("N_opt", r.n_law);
  print_law("D_opt", r.d_law);
  print_law("L_opt", r.l_law);
  if (r.fid_law) print_law("FID", *r.fid_law);
  const auto check = scalelab::exponent_sum_check(r);
  std::printf("  e_N + e_D = %.6f (%s), e_D / e_N = %.4f\n", check.sum,
              check.consistent ? "consistent with C = 6ND" : "inconsistent with C = 6ND",
              check.ratio);
}

store::RunStore open_store(const Globals& g, const std::string& config_dir = "") {
  return store::RunStore(store::resolve_root(g.store, config_dir));
}

// A report file path, or a sweep id whose fitted report lives in the store.
scalelab::ScalingReport report_arg(const Globals& g, const std::string& arg) {
  if (fs::is_regular_file(arg)) return store::load_report(arg);
  const auto st = open_store(g);
  const std::string id = st.resolve_sweep(arg.empty() ? g.sweep : std::optional(arg));
  const fs::path path = st.reports_dir(id) / "report.json";
  if (!fs::exists(path)) {
    throw StoreError("sweep '" + id + "' has no fitted report; run `ditscale fit --sweep " + id + "`");
  }
  return store::load_report(path);
}

int cmd_sweep(const Globals& g) {
  if (g.config.empty()) throw ConfigError("sweep: --config is required");
  store::SweepConfig config = store::load_sweep_config(g.config);
  if (g.seed) config.master_seed = *g.seed;
  if (g.workers) config.workers = *g.workers;
  store::validate(config);
  const auto st = open_store(g, config.output_dir);
  const auto out = store::execute_sweep(st, config, g.force, g.stop_after);
  const auto& res = out.result;

  std::printf("sweep %s: %d trained, %d reused%s\n", config.sweep_id.c_str(), res.trained,
              res.reused, res.interrupted ? ", interrupted" : "");
  std::printf("%-22s %-10s %-8s %-10s %-12s %s\n", "run", "N", "steps", "ema_loss", "val_loss",
              "status");
  for (const auto& r : res.records) {
    const std::string val = r.eval_in_domain && r.eval_in_domain->val_loss
                                ? num(r.eval_in_domain->val_loss->mean)
                                : "-";
    std::printf("%-22s %-10lld %-8lld %-10s %-12s %s\n", r.run_id.c_str(), (long long)r.n_params,
                (long long)r.steps, num(r.final_ema_loss).c_str(), val.c_str(),
                r.diverged ? "diverged" : "ok");
  }
  std::printf("store: %s\n", out.sweep_dir.string().c_str());
  if (res.interrupted) return 0;
  for (double C : config.budgets) {
    bool any = false;
    for (const auto& p : res.points) any = any || p.C == C;
    if (!any) {
      throw NumericalError("sweep: every run at budget " + scalelab::budget_label(C) + " diverged");
    }
  }
  return 0;
}

int cmd_fit(const Globals& g) {
  const auto st = open_store(g);
  const std::string id = st.resolve_sweep(g.sweep);
  const auto report = store::fit_store(st, id);
  if (g.json) {
    std::cout << store::to_json(report).dump(2) << "\n";
  } else {
    std::printf("sweep %s\n", id.c_str());
    print_report(report);
    std::printf("report: %s\n", (st.reports_dir(id) / "report.json").string().c_str());
  }
  return 0;
}

int cmd_predict(const Globals& g, const std::string& report_path, const std::vector<double>& at) {
  const auto report = report_arg(g, report_path);
  store::Json out = store::Json::array();
  for (double C : at) {
    if (!(C > 0.0) || !std::isfinite(C)) throw DomainError("predict: --at must be positive");
    const auto n = scalelab::predict(report.n_law, C);
    const auto d = scalelab::predict(report.d_law, C);
    const auto l = scalelab::predict(report.l_law, C);
    store::Json row = {{"C", C},
                       {"n_opt", n.value},
                       {"d_opt", d.value},
                       {"d_implied", C / (6.0 * n.value)},
                       {"l_opt", l.value},
                       {"extrapolated", n.extrapolated}};
    if (report.fid_law) row["fid"] = scalelab::predict(*report.fid_law, C).value;
    out.push_back(row);
    if (!g.json) {
      std::printf("C = %g%s\n", C, n.extrapolated ? "  (extrapolated beyond the fitted range)" : "");
      std::printf("  N_opt     = %s\n", num(n.value).c_str());
      std::printf("  D_opt     = %s  (law), %s  (C / 6N)\n", num(d.value).c_str(),
                  num(C / (6.0 * n.value)).c_str());
      std::printf("  L_opt     = %s\n", num(l.value).c_str());
      if (report.fid_law) {
        std::printf("  FID       = %s\n", num(scalelab::predict(*report.fid_law, C).value).c_str());
      }
    }
  }
  if (g.json) std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_compare(const Globals& g, const std::string& a, const std::string& b, std::string label_a,
                std::string label_b) {
  const auto ra = report_arg(g, a);
  const auto rb = report_arg(g, b);
  if (label_a.empty()) label_a = a;
  if (label_b.empty()) label_b = b;
  const auto cmp = scalelab::compare_configs(ra, label_a, rb, label_b);
  if (g.json) {
    store::Json j;
    for (const auto* row : {&cmp.a, &cmp.b}) {
      j["rows"].push_back({{"label", row->label},
                           {"model", row->model_exponent},
                           {"data", row->data_exponent},
                           {"loss", row->loss_exponent}});
    }
    j["delta"] = {{"model", cmp.delta_model}, {"data", cmp.delta_data}, {"loss", cmp.delta_loss}};
    j["verdicts"] = cmp.verdicts;
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::printf("%-28s %-10s %-10s %-10s\n", "", "model", "data", "loss");
  for (const auto* row : {&cmp.a, &cmp.b}) {
    std::printf("%-28s %-10s %-10s %-10s\n", row->label.c_str(), exponent(row->model_exponent).c_str(),
                exponent(row->data_exponent).c_str(), exponent(row->loss_exponent).c_str());
  }
  std::printf("%-28s %-10s %-10s %-10s\n", "delta (b - a)", num(cmp.delta_model, "%+.4f").c_str(),
              num(cmp.delta_data, "%+.4f").c_str(), num(cmp.delta_loss, "%+.4f").c_str());
  for (const auto& v : cmp.verdicts) std::printf("- %s\n", v.c_str());
  return 0;
}

void print_metrics(const char* name, const evalkit::EvalMetrics& m) {
  auto est = [](const std::optional<evalkit::Estimate>& e) {
    return e ? num(e->mean) + " +/- " + num(e->std_error, "%.2g") : std::string("-");
  };
  std::printf("%s:\n  val_loss   %s\n  offset_vlb %s  (t in [%g, %g])\n  offset_nll %s\n", name,
              est(m.val_loss).c_str(), est(m.offset_vlb).c_str(), m.vlb_clamp, 1.0 - m.vlb_clamp,
              est(m.offset_nll).c_str());
  std::printf("  frechet    %s%s\n",
              m.frechet_distance ? num(*m.frechet_distance).c_str() : "-",
              m.frechet_ridge ? "  (ridge added to a singular covariance)" : "");
}

int cmd_eval(const Globals& g, const std::string& run, const std::string& metrics, bool ood) {
  const auto st = open_store(g);
  const std::string id = st.resolve_sweep(g.sweep);
  const auto set = evalkit::parse_metric_set(metrics);
  store::SweepLock lock(st.sweep_dir(id));
  const store::SweepConfig config = st.load_config(id);
  evalkit::EvalConfig eval = config.eval;
  if (g.seed) eval.seed = *g.seed;

  std::vector<std::string> runs;
  if (run == "all") {
    for (const auto& e : st.manifest(id)) {
      if (e.status == "complete") runs.push_back(e.run_id);
    }
  } else {
    runs.push_back(run);
  }
  const auto in_domain = store::eval_set(config, false);
  const auto shifted = store::eval_set(config, true);
  for (const auto& run_id : runs) {
    trainer::RunRecord rec = st.load_run(id, run_id, false);
    if (rec.diverged) throw NumericalError("eval: run " + run_id + " diverged");
    const auto params = st.load_params(id, run_id);
    auto [m_in, m_ood] = evalkit::evaluate(params, in_domain, shifted, rec.config.sampler, eval, set);
    rec.eval_in_domain = m_in;
    if (ood) rec.eval_ood = m_ood;
    st.update_run(id, rec);
    std::printf("run %s\n", run_id.c_str());
    print_metrics("in-domain", m_in);
    if (ood) print_metrics("ood", m_ood);
  }
  st.write_summary_csv(id);
  return 0;
}

int cmd_flops(const Globals& g, const std::string& arch, const flops::TransformerShape& shape,
              bool as_csv) {
  flops::FlopsBreakdown table;
  std::optional<flops::Count> simplified;
  const bool square = shape.attn() == shape.d_model && shape.ff() == 4 * shape.d_model;
  if (arch == "incontext") {
    table = flops::incontext_itemized(shape);
    if (square) simplified = flops::incontext_flops(shape);
  } else if (arch == "crossattn") {
    table = flops::crossattn_itemized(shape);
    if (square) simplified = flops::crossattn_flops(shape);
  } else if (arch == "lm") {
    table = flops::language_model_reference(shape);
  } else {
    throw ConfigError("flops: --arch must be incontext, crossattn or lm");
  }
  if (as_csv) {
    csv::Table t;
    t.header = {"operation", "flops"};
    for (const auto& r : table.rows) t.rows.push_back({r.operation, flops::to_string(r.flops)});
    t.rows.push_back({"Total", flops::to_string(table.total)});
    csv::write(std::cout, t);
    return 0;
  }
  if (g.json) {
    store::Json j;
    for (const auto& r : table.rows) j["rows"].push_back({{"operation", r.operation}, {"flops", flops::to_string(r.flops)}});
    j["total"] = flops::to_string(table.total);
    if (simplified) j["simplified"] = flops::to_string(*simplified);
    j["kaplan_6n"] = flops::to_string(flops::kaplan_count(shape));
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::printf("%-28s %s\n", "operation", "FLOPs (forward + backward)");
  for (const auto& r : table.rows) std::printf("%-28s %s\n", r.operation.c_str(), flops::to_string(r.flops).c_str());
  std::printf("%-28s %s\n", "Total", flops::to_string(table.total).c_str());
  if (simplified) std::printf("%-28s %s\n", "simplified formula", flops::to_string(*simplified).c_str());
  std::printf("%-28s %s\n", "12 d n (2 d_attn + d_ff)", flops::to_string(flops::kaplan_count(shape)).c_str());
  return 0;
}

int cmd_plot(const Globals& g, const std::string& kind, const std::vector<double>& extrapolate) {
  const auto st = open_store(g);
  const std::string id = st.resolve_sweep(g.sweep);
  const fs::path out = st.reports_dir(id);
  const fs::path report_path = out / "report.json";
  if (!fs::exists(report_path)) {
    throw StoreError("sweep '" + id + "' has no fitted report; run `ditscale fit` first");
  }
  const auto report = store::load_report(report_path);
  std::vector<std::string> written;
  if (kind == "isoflop" || kind == "all") {
    if (kind == "isoflop" || fs::exists(st.sweep_dir(id) / "manifest.json")) {
      const auto config = st.load_config(id);
      std::vector<scalelab::IsoFlopPoint> points;
      for (const auto& rec : st.load_runs(id)) {
        if (auto p = scalelab::point_from_record(rec, config.point_metric)) points.push_back(*p);
      }
      plot::write_chart(plot::isoflop_chart(points, report), out, "isoflop");
      written.push_back("isoflop");
    }
  }
  if (kind == "laws" || kind == "all") {
    std::vector<plot::Law> laws = {plot::Law::kModel, plot::Law::kData, plot::Law::kLoss};
    if (report.fid_law) laws.push_back(plot::Law::kFrechet);
    for (auto law : laws) {
      plot::write_chart(plot::law_chart(report, law, extrapolate), out, "law_" + plot::to_string(law));
      written.push_back("law_" + plot::to_string(law));
    }
  }
  if (written.empty()) throw ConfigError("plot: --kind must be isoflop, laws or all");
  for (const auto& w : written) {
    std::printf("%s\n%s\n", (out / (w + ".svg")).string().c_str(), (out / (w + ".csv")).string().c_str());
  }
  return 0;
}

int cmd_fixtures(const Globals& g, const std::string& which) {
  const auto st = open_store(g);
  std::vector<std::string> ids;
  if (which == "emit-paper-laws") {
    const std::string id = g.sweep.value_or("paper-laws");
    store::write_law_fixture(st, id, store::published_laws(), store::published_budgets());
    ids.push_back(id);
  } else {
    const auto [in_context, cross] = store::benchmark_laws();
    store::write_law_fixture(st, "bench-incontext", in_context, store::published_budgets());
    store::write_law_fixture(st, "bench-crossattn", cross, store::published_budgets());
    ids = {"bench-incontext", "bench-crossattn"};
  }
  for (const auto& id : ids) std::printf("%s\n", (st.sweep_dir(id) / "optima.json").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scaling-law sweeps for small rectified-flow models"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Sweep config document (JSON)");
  app.add_option("--store", g.store, "Run store directory (default: $DITSCALE_STORE or ./store)");
  app.add_option("--seed", g.seed, "Master seed override");
  app.add_option("--workers", g.workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "Retrain completed runs and replace a different config");
  app.add_option("--sweep", g.sweep, "Sweep id inside the store");
  app.add_flag("--json", g.json, "Machine-readable output");
  app.add_option("--stop-after", g.stop_after)->group("");

  auto* sweep = app.add_subcommand("sweep", "Train every (budget, model) pair of a sweep config");
  auto* fit = app.add_subcommand("fit", "Fit isoFLOP parabolas and power laws");

  auto* predict = app.add_subcommand("predict", "Evaluate fitted laws at new budgets");
  std::vector<double> at;
  std::string report_path;
  predict->add_option("--at", at, "Budgets in FLOPs")->required();
  predict->add_option("--report", report_path, "Report file or sweep id");

  auto* compare = app.add_subcommand("compare", "Compare the exponents of two fitted sweeps");
  std::string a, b, label_a, label_b;
  compare->add_option("a", a, "Report file or sweep id")->required();
  compare->add_option("b", b, "Report file or sweep id")->required();
  compare->add_option("--label-a", label_a);
  compare->add_option("--label-b", label_b);

  auto* eval = app.add_subcommand("eval", "Evaluate stored checkpoints");
  std::string run = "all", metrics = "loss,vlb,nll,frechet";
  bool ood = false;
  eval->add_option("--run", run, "Run id, or all");
  eval->add_option("--metrics", metrics, "Comma list of loss, vlb, nll, frechet");
  eval->add_flag("--ood", ood, "Also evaluate on the shifted distribution");

  auto* fl = app.add_subcommand("flops", "Itemized transformer FLOPs");
  std::string arch = "incontext";
  flops::TransformerShape shape;
  bool as_csv = false;
  fl->add_option("--arch", arch, "incontext, crossattn or lm")->capture_default_str();
  fl->add_option("--layers", shape.n_layer)->capture_default_str();
  fl->add_option("--d-model", shape.d_model)->capture_default_str();
  fl->add_option("--d-attn", shape.d_attn, "0 means d_model")->capture_default_str();
  fl->add_option("--d-ff", shape.d_ff, "0 means 4 d_model")->capture_default_str();
  fl->add_option("--l-img", shape.l_img)->capture_default_str();
  fl->add_option("--l-text", shape.l_text)->capture_default_str();
  fl->add_option("--l-time", shape.l_time)->capture_default_str();
  fl->add_option("--heads", shape.n_head)->capture_default_str();
  fl->add_option("--vocab", shape.n_voc)->capture_default_str();
  fl->add_flag("--csv", as_csv, "CSV output");

  auto* pl = app.add_subcommand("plot", "Write SVG figures with CSV twins");
  std::string kind = "all";
  std::vector<double> extrapolate;
  pl->add_option("--kind", kind, "isoflop, laws or all")->capture_default_str();
  pl->add_option("--extrapolate", extrapolate, "Budgets to mark on the law plots");

  auto* fx = app.add_subcommand("fixtures", "Write law-fixture stores from the published fits");
  std::string which;
  fx->add_option("which", which, "emit-paper-laws or emit-benchmark")
      ->required()
      ->check(CLI::IsMember({"emit-paper-laws", "emit-benchmark"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : int(ExitCode::kUsage);
  }

  try {
    if (*sweep) return cmd_sweep(g);
    if (*fit) return cmd_fit(g);
    if (*predict) return cmd_predict(g, report_path, at);
    if (*compare) return cmd_compare(g, a, b, label_a, label_b);
    if (*eval) return cmd_eval(g, run, metrics, ood);
    if (*fl) return cmd_flops(g, arch, shape, as_csv);
    if (*pl) return cmd_plot(g, kind, extrapolate);
    if (*fx) return cmd_fixtures(g, which);
  } catch (const Error& e) {
    std::cerr << "ditscale: " << e.what() << "\n";
    return int(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "ditscale: " << e.what() << "\n";
    return int(ExitCode::kData);
  }
  return int(ExitCode::kUsage);
}
