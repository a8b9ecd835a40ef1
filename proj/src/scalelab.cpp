#include "ditscale/scalelab.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <Eigen/Dense>

#include "ditscale/error.hpp"

namespace ditscale::scalelab {

namespace {

constexpr double kSameTolerance = 1e-12;

bool nearly_equal(double a, double b, double rel) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b));
}

ParabolaFit flagged(double C, FitStatus status, std::string why, int n_points) {
  ParabolaFit f;
  f.C = C;
  f.status = status;
  f.diagnostic = std::move(why);
  f.n_points = n_points;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  f.a = f.b = f.c = f.x_star = f.y_star = f.n_opt = f.d_opt = f.l_opt = nan;
  return f;
}

std::string format_value(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

ParabolaFit fit_parabola(std::span<const IsoFlopPoint> points, const ParabolaOptions& options) {
  if (points.empty()) throw DomainError("fit_parabola: no points");
  const double C = points.front().C;
  std::vector<IsoFlopPoint> sorted(points.begin(), points.end());
  for (const auto& p : sorted) {
    if (p.C != C) throw DomainError("fit_parabola: points span more than one budget");
    if (p.N <= 0) throw DomainError("fit_parabola: parameter counts must be positive");
    if (!std::isfinite(p.loss) || p.loss < 0.0) {
      throw DomainError("fit_parabola: losses must be finite and non-negative");
    }
    if (p.loss <= 0.0 && (options.space == FitSpace::kLogLoss ||
                          options.weighting == Weighting::kInverseSquare)) {
      throw DomainError("fit_parabola: log space and inverse weighting need positive losses");
    }
  }
  // A canonical order makes the result independent of the input order.
  std::sort(sorted.begin(), sorted.end(), [](const IsoFlopPoint& a, const IsoFlopPoint& b) {
    return a.N != b.N ? a.N < b.N : a.loss < b.loss;
  });
  std::set<std::int64_t> distinct;
  for (const auto& p : sorted) distinct.insert(p.N);
  if (distinct.size() < 3) {
    throw DomainError("fit_parabola: need at least 3 distinct model sizes, got " +
                      std::to_string(distinct.size()));
  }

  const auto n = Eigen::Index(sorted.size());
  Eigen::MatrixXd A(n, 3);
  Eigen::VectorXd y(n), w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = std::log10(double(sorted[i].N));
    const double loss = sorted[i].loss;
    y[i] = options.space == FitSpace::kLogLoss ? std::log10(loss) : loss;
    w[i] = options.weighting == Weighting::kInverseSquare ? 1.0 / (loss * loss) : 1.0;
    A(i, 0) = x * x;
    A(i, 1) = x;
    A(i, 2) = 1.0;
  }
  const Eigen::VectorXd sw = w.cwiseSqrt();
  const Eigen::Vector3d coef =
      (sw.asDiagonal() * A).colPivHouseholderQr().solve(sw.asDiagonal() * y);

  ParabolaFit f;
  f.C = C;
  f.a = coef[0];
  f.b = coef[1];
  f.c = coef[2];
  f.n_points = int(n);
  f.x_min = A.col(1).minCoeff();
  f.x_max = A.col(1).maxCoeff();
  f.residual_rms = std::sqrt((A * coef - y).squaredNorm() / double(n));

  // a counts as zero when its curvature is negligible against the data.
  const double span = f.x_max - f.x_min;
  const double scale = y.cwiseAbs().maxCoeff() / (span * span);
  if (!(f.a > 1e-10 * scale)) {
    ParabolaFit out = flagged(C, FitStatus::kConcave,
                              "concave or flat fit (a = " + format_value(f.a) + ")", f.n_points);
    out.x_min = f.x_min;
    out.x_max = f.x_max;
    out.residual_rms = f.residual_rms;
    out.a = f.a;
    out.b = f.b;
    out.c = f.c;
    return out;
  }
  f.x_star = -f.b / (2.0 * f.a);
  f.y_star = f.c - f.b * f.b / (4.0 * f.a);
  f.n_opt = std::pow(10.0, f.x_star);
  f.d_opt = C / (6.0 * f.n_opt);
  f.l_opt = options.space == FitSpace::kLogLoss ? std::pow(10.0, f.y_star) : f.y_star;
  if (f.x_star < f.x_min - options.guard_decades || f.x_star > f.x_max + options.guard_decades) {
    f.status = FitStatus::kOutsideGuard;
    f.diagnostic = "vertex log10 N = " + format_value(f.x_star) + " lies outside [" +
                   format_value(f.x_min) + ", " + format_value(f.x_max) + "] widened by " +
                   format_value(options.guard_decades) + " decades";
  }
  return f;
}

PowerLawFit fit_power_law(std::span<const double> C, std::span<const double> y) {
  if (C.size() != y.size()) throw DimensionError("fit_power_law: C and y differ in length");
  if (C.size() < 3) throw DomainError("fit_power_law: need at least 3 pairs");
  const std::size_t n = C.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(C[i] > 0.0) || !(y[i] > 0.0) || !std::isfinite(C[i]) || !std::isfinite(y[i])) {
      throw DomainError("fit_power_law: values must be positive and finite");
    }
    lx[i] = std::log10(C[i]);
    ly[i] = std::log10(y[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw DomainError("fit_power_law: budgets must not all be equal");

  PowerLawFit fit;
  fit.e = sxy / sxx;
  fit.k = std::pow(10.0, my - fit.e * mx);
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ly[i] - (my + fit.e * (lx[i] - mx));
    ss_res += r * r;
  }
  fit.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
  fit.exponent_std_error = n > 2 ? std::sqrt(ss_res / double(n - 2) / sxx) : 0.0;
  fit.c_min = *std::min_element(C.begin(), C.end());
  fit.c_max = *std::max_element(C.begin(), C.end());
  fit.n_points = int(n);
  return fit;
}

Prediction predict(const PowerLawFit& fit, double C) {
  if (!(C > 0.0)) throw DomainError("predict: C must be positive");
  return {fit.k * std::pow(C, fit.e), C < fit.c_min || C > fit.c_max};
}

ScalingReport report_from_optima(std::span<const double> C, std::span<const double> n_opt,
                                 std::span<const double> d_opt, std::span<const double> l_opt,
                                 std::span<const double> fid, const std::string& fingerprint) {
  if (C.size() != n_opt.size() || C.size() != d_opt.size() || C.size() != l_opt.size() ||
      (!fid.empty() && fid.size() != C.size())) {
    throw DimensionError("report_from_optima: series differ in length");
  }
  ScalingReport r;
  for (std::size_t i = 0; i < C.size(); ++i) r.optima.push_back({C[i], n_opt[i], d_opt[i], l_opt[i]});
  r.n_law = fit_power_law(C, n_opt);
  r.d_law = fit_power_law(C, d_opt);
  r.l_law = fit_power_law(C, l_opt);
  if (!fid.empty()) {
    for (std::size_t i = 0; i < C.size(); ++i) r.fid_points.emplace_back(C[i], fid[i]);
    r.fid_law = fit_power_law(C, fid);
  }
  r.fingerprint = fingerprint;
  return r;
}

ScalingReport build_report(std::span<const IsoFlopPoint> points, const ParabolaOptions& options,
                           std::span<const std::pair<double, double>> fid,
                           const std::string& fingerprint) {
  std::map<double, std::vector<IsoFlopPoint>> by_budget;
  for (const auto& p : points) by_budget[p.C].push_back(p);

  ScalingReport r;
  r.options = options;
  r.fingerprint = fingerprint;
  std::vector<double> cs, ns, ds, ls;
  for (const auto& [C, group] : by_budget) {
    std::set<std::int64_t> distinct;
    for (const auto& p : group) distinct.insert(p.N);
    ParabolaFit f = distinct.size() < 3
                        ? flagged(C, FitStatus::kTooFewPoints,
                                  std::to_string(distinct.size()) + " surviving model sizes",
                                  int(group.size()))
                        : fit_parabola(group, options);
    if (f.accepted()) {
      cs.push_back(C);
      ns.push_back(f.n_opt);
      ds.push_back(f.d_opt);
      ls.push_back(f.l_opt);
      r.optima.push_back({C, f.n_opt, f.d_opt, f.l_opt});
    }
    r.parabolas.push_back(std::move(f));
  }
  if (cs.size() < 3) {
    throw NumericalError("build_report: only " + std::to_string(cs.size()) +
                         " budgets have accepted parabolas; at least 3 are needed");
  }
  r.n_law = fit_power_law(cs, ns);
  r.d_law = fit_power_law(cs, ds);
  r.l_law = fit_power_law(cs, ls);
  if (!fid.empty()) {
    std::vector<double> fc, fv;
    for (const auto& [c, v] : fid) {
      if (std::find(cs.begin(), cs.end(), c) != cs.end()) {
        fc.push_back(c);
        fv.push_back(v);
      }
    }
    if (fc.size() >= 3) {
      for (std::size_t i = 0; i < fc.size(); ++i) r.fid_points.emplace_back(fc[i], fv[i]);
      r.fid_law = fit_power_law(fc, fv);
    }
  }
  return r;
}

ExponentCheck exponent_sum_check(const ScalingReport& report, double tolerance) {
  ExponentCheck c;
  c.sum = report.n_law.e + report.d_law.e;
  c.ratio = report.d_law.e / report.n_law.e;
  c.consistent = std::abs(c.sum - 1.0) <= tolerance;
  return c;
}

Comparison compare_configs(const ScalingReport& a, const std::string& label_a,
                           const ScalingReport& b, const std::string& label_b) {
  const PowerLawFit& la = a.l_law;
  const PowerLawFit& lb = b.l_law;
  if (la.n_points != lb.n_points || !nearly_equal(la.c_min, lb.c_min, 1e-9) ||
      !nearly_equal(la.c_max, lb.c_max, 1e-9)) {
    throw ConfigError("compare: the reports were fitted over different budget sets");
  }
  Comparison cmp;
  cmp.a = {label_a, a.n_law.e, a.d_law.e, la.e};
  cmp.b = {label_b, b.n_law.e, b.d_law.e, lb.e};
  cmp.delta_model = b.n_law.e - a.n_law.e;
  cmp.delta_data = b.d_law.e - a.d_law.e;
  cmp.delta_loss = lb.e - la.e;

  const bool identical = std::abs(cmp.delta_model) <= kSameTolerance &&
                         std::abs(cmp.delta_data) <= kSameTolerance &&
                         std::abs(cmp.delta_loss) <= kSameTolerance;
  if (identical) {
    cmp.verdicts.push_back("indistinguishable");
    return cmp;
  }
  const double loss_band = std::hypot(la.exponent_std_error, lb.exponent_std_error);
  if (std::abs(cmp.delta_loss) <= std::max(loss_band, kSameTolerance)) {
    cmp.verdicts.push_back("loss exponents indistinguishable within fit uncertainty");
  } else {
    const bool b_better = lb.e < la.e;
    const ExponentRow& win = b_better ? cmp.b : cmp.a;
    const ExponentRow& lose = b_better ? cmp.a : cmp.b;
    cmp.verdicts.push_back("favors " + win.label + ": loss falls faster with compute (" +
                           format_value(win.loss_exponent) + " vs " +
                           format_value(lose.loss_exponent) + ")");
  }
  if (std::abs(cmp.delta_model) > kSameTolerance) {
    const bool b_more = cmp.delta_model > 0.0;
    const ExponentRow& more = b_more ? cmp.b : cmp.a;
    const ExponentRow& less = b_more ? cmp.a : cmp.b;
    cmp.verdicts.push_back(more.label + " should spend extra compute on model size (model exponent " +
                           format_value(more.model_exponent) + " vs " +
                           format_value(less.model_exponent) + ")");
  }
  if (std::abs(cmp.delta_data) > kSameTolerance) {
    const bool b_more = cmp.delta_data > 0.0;
    const ExponentRow& more = b_more ? cmp.b : cmp.a;
    const ExponentRow& less = b_more ? cmp.a : cmp.b;
    cmp.verdicts.push_back(more.label + " should spend extra compute on data (data exponent " +
                           format_value(more.data_exponent) + " vs " +
                           format_value(less.data_exponent) + ")");
  }
  return cmp;
}

std::string budget_label(double C) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, C, std::chars_format::scientific);
  std::string s(buf, res.ptr);
  const auto e = s.find('e');
  std::string mantissa = s.substr(0, e);
  std::string exponent = s.substr(e + 1);
  if (!exponent.empty() && exponent[0] == '+') exponent.erase(0, 1);
  const bool negative = !exponent.empty() && exponent[0] == '-';
  if (negative) exponent.erase(0, 1);
  exponent.erase(0, std::min(exponent.find_first_not_of('0'), exponent.size() - 1));
  return mantissa + "e" + (negative ? "-" : "") + exponent;
}

std::string run_id(double C, const netcore::ModelConfig& model) {
  return budget_label(C) + "-d" + std::to_string(model.depth) + "-w" + std::to_string(model.width);
}

std::uint64_t run_seed(std::uint64_t master_seed, const std::string& id) {
  return datagen::mix_seed(master_seed, fnv1a(id));
}

std::optional<IsoFlopPoint> point_from_record(const trainer::RunRecord& record, PointMetric metric) {
  if (record.diverged) return std::nullopt;
  IsoFlopPoint p;
  p.C = record.config.budget_flops;
  p.N = record.n_params;
  p.D = record.d_samples;
  p.run_id = record.run_id;
  if (metric == PointMetric::kFinalEmaLoss) {
    p.loss = record.final_ema_loss;
  } else {
    if (!record.eval_in_domain || !record.eval_in_domain->val_loss) {
      throw ConfigError("run " + record.run_id + " has no validation loss for the isoFLOP point");
    }
    p.loss = record.eval_in_domain->val_loss->mean;
  }
  if (!std::isfinite(p.loss)) return std::nullopt;
  return p;
}

SweepResult run_sweep(std::span<const double> budgets, std::span<const netcore::ModelConfig> grid,
                      const trainer::TrainConfig& base, const SweepOptions& options) {
  if (budgets.empty() || grid.empty()) throw ConfigError("sweep: budgets and grid must be non-empty");
  if (grid.size() < 3) throw ConfigError("sweep: the model grid needs at least 3 sizes");
  if (options.workers < 1) throw ConfigError("sweep: workers must be >= 1");
  if (options.point_metric == PointMetric::kValLoss && !options.in_domain) {
    throw ConfigError("sweep: the validation-loss point metric needs an in-domain set");
  }

  struct Task {
    trainer::TrainConfig config;
    std::string id;
  };
  std::vector<Task> tasks;
  for (double C : budgets) {
    for (const auto& model : grid) {
      Task t{base, run_id(C, model)};
      t.config.budget_flops = C;
      t.config.model = model;
      t.config.seed = run_seed(options.master_seed, t.id);
      trainer::validate(t.config);
      trainer::derive_steps(C, netcore::param_count(model), t.config.batch_size);
      tasks.push_back(std::move(t));
    }
  }

  std::vector<std::optional<trainer::RunRecord>> records(tasks.size());
  std::atomic<std::size_t> next{0};
  std::atomic<int> trained{0};
  std::atomic<int> reused{0};
  std::atomic<bool> stopped{false};
  std::mutex persist_mutex;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const evalkit::MetricSet loss_only{true, false, false, false};

  auto work = [&] {
    for (;;) {
      if (stopped.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        const Task& task = tasks[i];
        if (options.lookup) {
          if (auto existing = options.lookup(task.id)) {
            records[i] = std::move(*existing);
            ++reused;
            continue;
          }
        }
        if (options.stop_after && trained.fetch_add(1) >= *options.stop_after) {
          stopped = true;
          return;
        }
        trainer::TrainResult result = trainer::train(task.config);
        result.record.run_id = task.id;
        if (!result.record.diverged && options.in_domain) {
          const evalkit::NetworkField field(result.params);
          if (options.ood) {
            auto [in, out] = evalkit::evaluate(result.params, *options.in_domain, *options.ood,
                                               task.config.sampler, options.eval, loss_only);
            result.record.eval_in_domain = std::move(in);
            result.record.eval_ood = std::move(out);
          } else {
            evalkit::EvalMetrics in;
            in.val_loss = evalkit::val_loss(field, *options.in_domain, task.config.sampler,
                                            options.eval);
            result.record.eval_in_domain = std::move(in);
          }
        }
        if (!options.stop_after) ++trained;
        if (options.persist) {
          std::lock_guard lock(persist_mutex);
          options.persist(result.record, result.params);
        }
        records[i] = std::move(result.record);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        stopped = true;
        return;
      }
    }
  };

  const int n_workers = std::min<int>(options.workers, int(tasks.size()));
  if (n_workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);

  SweepResult out;
  out.reused = reused.load();
  for (auto& r : records) {
    if (!r) {
      out.interrupted = true;
      continue;
    }
    if (auto p = point_from_record(*r, options.point_metric)) out.points.push_back(*p);
    out.records.push_back(std::move(*r));
  }
  out.trained = int(out.records.size()) - out.reused;
  return out;
}

std::string to_string(FitStatus s) {
  switch (s) {
    case FitStatus::kAccepted: return "accepted";
    case FitStatus::kConcave: return "concave";
    case FitStatus::kOutsideGuard: return "outside_guard";
    case FitStatus::kTooFewPoints: return "too_few_points";
  }
  return "unknown";
}

std::string to_string(FitSpace s) { return s == FitSpace::kLoss ? "loss" : "log_loss"; }

std::string to_string(Weighting w) {
  return w == Weighting::kUniform ? "uniform" : "inverse_square";
}

std::string to_string(PointMetric m) {
  return m == PointMetric::kFinalEmaLoss ? "final_ema_loss" : "val_loss";
}

}  // namespace ditscale::scalelab
