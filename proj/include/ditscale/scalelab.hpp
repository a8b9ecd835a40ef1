#pragma once

// IsoFLOP sweeps and the two-stage fit: a parabola of loss against log10 N
// per budget, then power laws of the per-budget optima against C.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ditscale/datagen.hpp"
#include "ditscale/evalkit.hpp"
#include "ditscale/netcore.hpp"
#include "ditscale/trainer.hpp"

namespace ditscale::scalelab {

struct IsoFlopPoint {
  double C = 0.0;
  std::int64_t N = 0;
  std::int64_t D = 0;
  double loss = 0.0;
  std::string run_id;
  bool operator==(const IsoFlopPoint&) const = default;
};

// The loss axis of the parabola fit. kLogLoss fits log10(loss).
enum class FitSpace { kLoss, kLogLoss };

// kInverseSquare weights each point by 1 / loss^2 (relative residuals).
enum class Weighting { kUniform, kInverseSquare };

struct ParabolaOptions {
  FitSpace space = FitSpace::kLoss;
  Weighting weighting = Weighting::kUniform;
  double guard_decades = 0.5;
};

enum class FitStatus { kAccepted, kConcave, kOutsideGuard, kTooFewPoints };

struct ParabolaFit {
  double C = 0.0;
  double a = 0.0, b = 0.0, c = 0.0;  // y = a x^2 + b x + c, x = log10 N
  double x_star = 0.0;
  double y_star = 0.0;
  double n_opt = 0.0;
  double d_opt = 0.0;  // C / (6 n_opt)
  double l_opt = 0.0;  // y_star mapped back to loss units
  double residual_rms = 0.0;
  int n_points = 0;
  double x_min = 0.0, x_max = 0.0;
  FitStatus status = FitStatus::kAccepted;
  std::string diagnostic;

  bool accepted() const { return status == FitStatus::kAccepted; }
};

/// Weighted least squares on (log10 N, loss). Throws DomainError for fewer
/// than three distinct N or non-positive values; concave fits and vertices
/// more than guard_decades outside the sampled range come back flagged.
/// For points lying exactly on a parabola the vertex is unchanged by
/// reordering or duplicating points.
ParabolaFit fit_parabola(std::span<const IsoFlopPoint> points, const ParabolaOptions& options = {});

struct PowerLawFit {
  double k = 0.0;
  double e = 0.0;
  double r_squared = 0.0;
  double exponent_std_error = 0.0;
  double c_min = 0.0, c_max = 0.0;
  int n_points = 0;
  bool operator==(const PowerLawFit&) const = default;
};

/// Least squares of log10 y on log10 C.
PowerLawFit fit_power_law(std::span<const double> C, std::span<const double> y);

struct Prediction {
  double value = 0.0;
  bool extrapolated = false;  // C outside [c_min, c_max]
};

Prediction predict(const PowerLawFit& fit, double C);

struct Optimum {
  double C = 0.0;
  double n_opt = 0.0;
  double d_opt = 0.0;
  double l_opt = 0.0;
  bool operator==(const Optimum&) const = default;
};

struct ScalingReport {
  std::vector<Optimum> optima;  // the points the laws were fitted to
  PowerLawFit n_law;
  PowerLawFit d_law;
  PowerLawFit l_law;
  std::optional<PowerLawFit> fid_law;
  std::vector<std::pair<double, double>> fid_points;  // (C, distance) behind fid_law
  std::vector<ParabolaFit> parabolas;  // one per budget, accepted or not
  ParabolaOptions options;
  std::string fingerprint;
};

/// Power laws fitted directly to per-budget optima, with D given
/// explicitly rather than derived from C = 6ND. No parabolas.
ScalingReport report_from_optima(std::span<const double> C, std::span<const double> n_opt,
                                 std::span<const double> d_opt, std::span<const double> l_opt,
                                 std::span<const double> fid = {},
                                 const std::string& fingerprint = "");

/// Groups points by budget, fits a parabola per budget and power laws over
/// the accepted optima. fid pairs (C, distance) are optional. Throws
/// NumericalError when fewer than three budgets survive.
ScalingReport build_report(std::span<const IsoFlopPoint> points, const ParabolaOptions& options = {},
                           std::span<const std::pair<double, double>> fid = {},
                           const std::string& fingerprint = "");

struct ExponentCheck {
  double sum = 0.0;
  double ratio = 0.0;  // e_D / e_N
  bool consistent = false;
};

/// |e_N + e_D - 1| <= tolerance.
ExponentCheck exponent_sum_check(const ScalingReport& report, double tolerance = 0.02);

struct ExponentRow {
  std::string label;
  double model_exponent = 0.0;
  double data_exponent = 0.0;
  double loss_exponent = 0.0;
};

struct Comparison {
  ExponentRow a;
  ExponentRow b;
  double delta_model = 0.0;  // b - a
  double delta_data = 0.0;
  double delta_loss = 0.0;
  std::vector<std::string> verdicts;
};

/// Table of model, data and loss exponents with textual verdicts. A more
/// negative loss exponent is the better pipeline; differences within the
/// combined exponent standard errors are reported as indistinguishable.
/// Throws ConfigError when the reports cover different budgets.
Comparison compare_configs(const ScalingReport& a, const std::string& label_a,
                           const ScalingReport& b, const std::string& label_b);

// What becomes the loss coordinate of an isoFLOP point.
enum class PointMetric { kFinalEmaLoss, kValLoss };

struct SweepOptions {
  int workers = 1;
  std::uint64_t master_seed = 0;
  PointMetric point_metric = PointMetric::kFinalEmaLoss;
  // Validation losses on these sets are attached to every record when
  // set; kValLoss requires in_domain.
  std::optional<datagen::Dataset> in_domain;
  std::optional<datagen::Dataset> ood;
  evalkit::EvalConfig eval;
  // Returns a previously persisted record to skip training.
  std::function<std::optional<trainer::RunRecord>(const std::string& run_id)> lookup;
  // Called from worker threads once per trained run, never concurrently.
  std::function<void(const trainer::RunRecord&, const netcore::ParamSet&)> persist;
  // Stops scheduling new runs once this many have been trained.
  std::optional<int> stop_after;
};

struct SweepResult {
  std::vector<IsoFlopPoint> points;  // non-diverged runs, grid order
  std::vector<trainer::RunRecord> records;
  int trained = 0;
  int reused = 0;
  bool interrupted = false;
};

/// Shortest exponent form: 1e9, 3e10, 1.5e21.
std::string budget_label(double C);

/// "<budget>-d<depth>-w<width>".
std::string run_id(double C, const netcore::ModelConfig& model);

/// Per-run seed from the master seed and a hash of the run id.
std::uint64_t run_seed(std::uint64_t master_seed, const std::string& run_id);

/// Trains every (budget, model) pair. Runs are independent and seeded from
/// their ids, so results do not depend on the worker count or order.
SweepResult run_sweep(std::span<const double> budgets, std::span<const netcore::ModelConfig> grid,
                      const trainer::TrainConfig& base, const SweepOptions& options);

/// The isoFLOP coordinate of a finished record under the given metric.
std::optional<IsoFlopPoint> point_from_record(const trainer::RunRecord& record, PointMetric metric);

std::string to_string(FitStatus s);
std::string to_string(FitSpace s);
std::string to_string(Weighting w);
std::string to_string(PointMetric m);

}  // namespace ditscale::scalelab
