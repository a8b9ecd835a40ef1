#pragma once

// Evaluation of trained velocity fields: validation loss, offset VLB,
// exact likelihood through the probability-flow ODE, guided Euler
// sampling and Fréchet distance on raw coordinates.

#include <optional>
#include <span>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "ditscale/datagen.hpp"
#include "ditscale/formulations.hpp"
#include "ditscale/netcore.hpp"

namespace ditscale::evalkit {

using formulations::Rng;
using formulations::Vec;
using netcore::Mat;

struct EvalConfig {
  int n_points = 2000;
  int timesteps_per_point = 100;
  int nll_steps = 500;
  int nll_points = 200;  // data points used for the exact likelihood
  int sampling_steps = 25;
  double cfg_scale = 1.0;
  double vlb_clamp = 1e-3;
  double escape_radius = 1e6;
  std::uint64_t seed = 0;
};

void validate(const EvalConfig& config);


/// A (possibly conditional) velocity field v(x, t, c) over data_dim
/// coordinates. cond == null_class() means unconditional.
class VelocityField {
 public:
  virtual ~VelocityField() = default;
  virtual int dim() const = 0;
  virtual int null_class() const = 0;
  /// x is dim x B.
  virtual Mat velocity(const Mat& x, std::span<const double> t, std::span<const int> cond) const = 0;
  /// d v / d x at one point, dim x dim.
  virtual Mat jacobian(const Vec& x, double t, int cond) const = 0;
};

class NetworkField final : public VelocityField {
 public:
  explicit NetworkField(const netcore::ParamSet& params) : params_(params) {}
  int dim() const override { return params_.config().data_dim; }
  int null_class() const override { return params_.config().null_class(); }
  Mat velocity(const Mat& x, std::span<const double> t, std::span<const int> cond) const override;
  Mat jacobian(const Vec& x, double t, int cond) const override;

 private:
  const netcore::ParamSet& params_;
};

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
  bool operator==(const Estimate&) const = default;
};

/// Which metrics evaluate() computes.
struct MetricSet {
  bool loss = true;
  bool vlb = true;
  bool nll = true;
  bool frechet = true;
};

/// Parses a comma-separated list of loss, vlb, nll, frechet.
MetricSet parse_metric_set(const std::string& list);

/// Unrequested metrics stay empty.
struct EvalMetrics {
  std::optional<Estimate> val_loss;
  std::optional<Estimate> offset_vlb;
  std::optional<Estimate> offset_nll;
  std::optional<double> frechet_distance;
  bool frechet_ridge = false;
  double vlb_clamp = 0.0;  // VLB integrates over [vlb_clamp, 1 - vlb_clamp]
  bool operator==(const EvalMetrics&) const = default;
};

/// Monte Carlo rf_loss with logit-normal timesteps and true labels.
Estimate val_loss(const VelocityField& field, const datagen::Dataset& data,
                  const formulations::TimestepSampler& sampler, const EvalConfig& config);

/// -1/2 * integral of SNR'(t) ||x0 - x0_hat||^2 over stratified uniform
/// t in [clamp, 1 - clamp], per data point, in nats. Prior and decoder
/// terms are omitted.
Estimate offset_vlb(const VelocityField& field, const datagen::Dataset& data,
                    const EvalConfig& config);

/// Trace of the input Jacobian.
double divergence(const VelocityField& field, const Vec& x, double t, int cond);
double divergence(const netcore::ParamSet& params, const Vec& x, double t, std::optional<int> cond);

/// Negative log-likelihood in nats, integrating data (t = 0) to noise
/// (t = 1) with nll_steps Euler steps. Velocity and divergence are taken
/// at the midpoint time of each step; the divergence integral is the
/// matching midpoint sum.
double exact_nll(const VelocityField& field, const Vec& x, const EvalConfig& config,
                 std::optional<int> cond = std::nullopt);

Estimate mean_nll(const VelocityField& field, const datagen::Dataset& data,
                  const EvalConfig& config);

/// Integrates from x_1 ~ N(0, I) at t = 1 to t = 0 with guided velocity
/// v_null + cfg_scale * (v_cond - v_null). labels has length n; a label
/// equal to null_class() samples unconditionally.
Mat euler_sample(const VelocityField& field, std::span<const int> labels,
                 const EvalConfig& config, Rng& rng);

struct FrechetResult {
  double distance = 0.0;
  bool ridge_added = false;
};

/// Closed form between two Gaussians.
FrechetResult frechet_from_moments(const Vec& mu_a, const Mat& cov_a, const Vec& mu_b,
                                   const Mat& cov_b);

/// Gaussian fits of two sample sets (columns are samples).
FrechetResult frechet_distance(const Mat& set_a, const Mat& set_b);

/// All metrics on both sets. Fréchet distance compares samples generated
/// with the in-domain labels against each reference set.
std::pair<EvalMetrics, EvalMetrics> evaluate(const netcore::ParamSet& params,
                                             const datagen::Dataset& in_domain,
                                             const datagen::Dataset& ood,
                                             const formulations::TimestepSampler& sampler,
                                             const EvalConfig& config,
                                             const MetricSet& metrics = {});

struct GuidancePoint {
  double cfg_scale;
  int sampling_steps;
  double frechet_distance;
};

/// Fréchet distance of generated samples for each (scale, steps) pair.
std::vector<GuidancePoint> guidance_sweep(const netcore::ParamSet& params,
                                          const datagen::Dataset& reference,
                                          std::span<const double> scales,
                                          std::span<const int> steps, const EvalConfig& config);

}  // namespace ditscale::evalkit
