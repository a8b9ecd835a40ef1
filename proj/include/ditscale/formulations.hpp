#pragma once

// Noise schedules, prediction targets, timestep samplers and the
// rectified-flow training objective.

#include <cstdint>
#include <random>
#include <string>
#include <variant>

#include <Eigen/Dense>

namespace ditscale::formulations {

using Vec = Eigen::VectorXd;
using Rng = std::mt19937_64;

// Discrete schedules carry a sigma sequence over t_steps indices.
struct Ddpm {
  double sigma_0 = 1e-4;
  double sigma_t = 0.02;
  int t_steps = 1000;
};

struct Ldm {
  double sigma_0 = 0.00085;
  double sigma_t = 0.012;
  int t_steps = 1000;
};

struct Vp {
  double sigma_const = 1.0;
};

struct Rf {};

using ScheduleSpec = std::variant<Ddpm, Ldm, Vp, Rf>;

struct NoiseCoeffs {
  double alpha = 1.0;
  double beta = 0.0;
  double alpha_prime = 0.0;
  double beta_prime = 0.0;
  double t = 0.0;
};

enum class PredictionType { kEpsilon, kVelocity, kScore };

struct UniformSampler {};

struct LogitNormalSampler {
  double m = 0.0;
  double s = 1.0;
};

using TimestepSampler = std::variant<UniformSampler, LogitNormalSampler>;

// Sampled timesteps are kept inside [kTimestepClamp, 1 - kTimestepClamp].
inline constexpr double kTimestepClamp = 1e-5;

// Step used for central differences over interpolated discrete schedules.
inline constexpr double kScheduleFdStep = 1e-4;

/// Throws ConfigError if the schedule parameters violate their invariants.
void validate(const ScheduleSpec& spec);
void validate(const TimestepSampler& sampler);

/// Coefficients of x_t = alpha * x0 + beta * eps at timestep t in [0, 1].
///
/// Discrete schedules report alpha and beta at index round(t * (T - 1)),
/// while their derivatives are central differences over the piecewise-linear
/// interpolation of log(alpha^2) between indices.
NoiseCoeffs coeffs(const ScheduleSpec& spec, double t);

Vec make_noisy(const Vec& x0, const Vec& eps, const NoiseCoeffs& c);

Vec target(PredictionType p, const Vec& x0, const Vec& eps, const NoiseCoeffs& c);

/// Squared Euclidean norm of v_pred + x0 - eps.
double rf_loss(const Vec& v_pred, const Vec& x0, const Vec& eps);

double sample_timestep(const TimestepSampler& sampler, Rng& rng);

/// Maps a standard-normal draw through the sampler; exposed so the
/// logistic transform can be checked on chosen draws.
double logit_normal_from_normal(const LogitNormalSampler& s, double z);

double ln_density(double t, double m, double s);

double snr(const NoiseCoeffs& c);

/// d/dt of (1-t)^2 / t^2.
double snr_prime_rf(double t);

/// Clean-sample estimate x_t - t * v for rectified flow.
Vec v_to_x0(const Vec& x_t, const Vec& v, double t);

std::string to_string(const ScheduleSpec& spec);
std::string to_string(PredictionType p);

}  // namespace ditscale::formulations
