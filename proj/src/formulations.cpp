#include "ditscale/formulations.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "ditscale/error.hpp"

namespace ditscale::formulations {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_discrete(double sigma_0, double sigma_t, int t_steps, const char* name) {
  if (!(sigma_0 > 0.0 && sigma_0 <= sigma_t && sigma_t < 1.0)) {
    std::ostringstream os;
    os << name << " schedule requires 0 < sigma_0 <= sigma_T < 1 (got " << sigma_0 << ", "
       << sigma_t << ")";
    throw ConfigError(os.str());
  }
  if (t_steps < 1) {
    throw ConfigError(std::string(name) + " schedule requires t_steps >= 1");
  }
}

// Per-index noise level of a discrete schedule.
double discrete_sigma(const ScheduleSpec& spec, int i) {
  return std::visit(
      Overloaded{
          [&](const Ddpm& d) {
            const double frac = d.t_steps > 1 ? double(i) / double(d.t_steps - 1) : 0.0;
            return d.sigma_0 + frac * (d.sigma_t - d.sigma_0);
          },
          [&](const Ldm& d) {
            const double frac = d.t_steps > 1 ? double(i) / double(d.t_steps - 1) : 0.0;
            const double root =
                std::sqrt(d.sigma_0) + frac * (std::sqrt(d.sigma_t) - std::sqrt(d.sigma_0));
            return root * root;
          },
          [](const auto&) -> double { throw ConfigError("not a discrete schedule"); },
      },
      spec);
}

int discrete_steps(const ScheduleSpec& spec) {
  if (const auto* d = std::get_if<Ddpm>(&spec)) return d->t_steps;
  return std::get<Ldm>(spec).t_steps;
}

// log(alpha^2) at continuous index u, linear between integer nodes where
// log(alpha_i^2) = sum_{s<=i} log(1 - sigma_s).
double discrete_log_alpha_sq(const ScheduleSpec& spec, double u) {
  const int last = discrete_steps(spec) - 1;
  u = std::clamp(u, 0.0, double(last));
  const int lo = int(std::floor(u));
  double acc = 0.0;
  for (int s = 0; s <= lo; ++s) acc += std::log1p(-discrete_sigma(spec, s));
  if (lo < last) {
    const double frac = u - lo;
    acc += frac * std::log1p(-discrete_sigma(spec, lo + 1));
  }
  return acc;
}

struct AlphaBeta {
  double alpha;
  double beta;
};

AlphaBeta discrete_continuous(const ScheduleSpec& spec, double t) {
  const int last = discrete_steps(spec) - 1;
  const double alpha_sq = std::exp(discrete_log_alpha_sq(spec, t * last));
  return {std::sqrt(alpha_sq), std::sqrt(std::max(0.0, 1.0 - alpha_sq))};
}

NoiseCoeffs discrete_coeffs(const ScheduleSpec& spec, double t) {
  const int last = discrete_steps(spec) - 1;
  const double index = std::round(t * last);
  const double alpha_sq = std::exp(discrete_log_alpha_sq(spec, index));

  const double lo = std::max(0.0, t - kScheduleFdStep);
  const double hi = std::min(1.0, t + kScheduleFdStep);
  const AlphaBeta a = discrete_continuous(spec, lo);
  const AlphaBeta b = discrete_continuous(spec, hi);

  NoiseCoeffs c;
  c.t = t;
  c.alpha = std::sqrt(alpha_sq);
  c.beta = std::sqrt(std::max(0.0, 1.0 - alpha_sq));
  c.alpha_prime = (b.alpha - a.alpha) / (hi - lo);
  c.beta_prime = (b.beta - a.beta) / (hi - lo);
  return c;
}

void check_same_size(const Vec& a, const Vec& b, const char* what) {
  if (a.size() != b.size()) {
    std::ostringstream os;
    os << what << ": dimension mismatch (" << a.size() << " vs " << b.size() << ")";
    throw DimensionError(os.str());
  }
}

}  // namespace

void validate(const ScheduleSpec& spec) {
  std::visit(Overloaded{
                 [](const Ddpm& d) { check_discrete(d.sigma_0, d.sigma_t, d.t_steps, "DDPM"); },
                 [](const Ldm& d) { check_discrete(d.sigma_0, d.sigma_t, d.t_steps, "LDM"); },
                 [](const Vp& v) {
                   if (!(v.sigma_const > 0.0)) throw ConfigError("VP schedule requires sigma > 0");
                 },
                 [](const Rf&) {},
             },
             spec);
}

void validate(const TimestepSampler& sampler) {
  if (const auto* ln = std::get_if<LogitNormalSampler>(&sampler)) {
    if (!(ln->s > 0.0)) throw ConfigError("logit-normal sampler requires s > 0");
  }
}

NoiseCoeffs coeffs(const ScheduleSpec& spec, double t) {
  validate(spec);
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError("timestep must lie in [0, 1], got " + std::to_string(t));
  }
  return std::visit(Overloaded{
                        [&](const Rf&) {
                          NoiseCoeffs c;
                          c.t = t;
                          c.alpha = 1.0 - t;
                          c.beta = t;
                          c.alpha_prime = -1.0;
                          c.beta_prime = 1.0;
                          return c;
                        },
                        [&](const Vp& v) {
                          // alpha = exp(-sigma t / 2), beta = sqrt(1 - exp(-sigma t)).
                          const double decay = std::exp(-v.sigma_const * t);
                          NoiseCoeffs c;
                          c.t = t;
                          c.alpha = std::exp(-0.5 * v.sigma_const * t);
                          c.beta = std::sqrt(-std::expm1(-v.sigma_const * t));
                          c.alpha_prime = -0.5 * v.sigma_const * c.alpha;
                          c.beta_prime = c.beta > 0.0
                                             ? 0.5 * v.sigma_const * decay / c.beta
                                             : std::numeric_limits<double>::infinity();
                          return c;
                        },
                        [&](const auto&) { return discrete_coeffs(spec, t); },
                    },
                    spec);
}

Vec make_noisy(const Vec& x0, const Vec& eps, const NoiseCoeffs& c) {
  check_same_size(x0, eps, "make_noisy");
  return c.alpha * x0 + c.beta * eps;
}

Vec target(PredictionType p, const Vec& x0, const Vec& eps, const NoiseCoeffs& c) {
  check_same_size(x0, eps, "target");
  switch (p) {
    case PredictionType::kEpsilon:
      return eps;
    case PredictionType::kVelocity:
      return c.alpha_prime * x0 + c.beta_prime * eps;
    case PredictionType::kScore:
      if (!(c.beta > 0.0)) {
        throw NumericalError("score target is singular at beta = 0 (t = " +
                             std::to_string(c.t) + ")");
      }
      return -eps / c.beta;
  }
  throw ConfigError("unknown prediction type");
}

double rf_loss(const Vec& v_pred, const Vec& x0, const Vec& eps) {
  check_same_size(v_pred, x0, "rf_loss");
  check_same_size(x0, eps, "rf_loss");
  return (v_pred + x0 - eps).squaredNorm();
}

double logit_normal_from_normal(const LogitNormalSampler& s, double z) {
  const double u = s.m + s.s * z;
  return 1.0 / (1.0 + std::exp(-u));
}

double sample_timestep(const TimestepSampler& sampler, Rng& rng) {
  const double t = std::visit(Overloaded{
                                  [&](const UniformSampler&) {
                                    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
                                  },
                                  [&](const LogitNormalSampler& s) {
                                    const double z = std::normal_distribution<double>(0.0, 1.0)(rng);
                                    return logit_normal_from_normal(s, z);
                                  },
                              },
                              sampler);
  return std::clamp(t, kTimestepClamp, 1.0 - kTimestepClamp);
}

double ln_density(double t, double m, double s) {
  if (!(t > 0.0 && t < 1.0)) {
    throw DomainError("logit-normal density is defined on (0, 1), got t = " + std::to_string(t));
  }
  if (!(s > 0.0)) throw DomainError("logit-normal density requires s > 0");
  const double logit = std::log(t / (1.0 - t));
  const double z = (logit - m) / s;
  return std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * std::numbers::pi) * t * (1.0 - t));
}

double snr(const NoiseCoeffs& c) {
  if (!(c.beta > 0.0)) throw NumericalError("SNR is singular at beta = 0");
  return (c.alpha * c.alpha) / (c.beta * c.beta);
}

double snr_prime_rf(double t) {
  if (!(t > 0.0 && t < 1.0)) {
    throw DomainError("SNR derivative requires 0 < t < 1, got " + std::to_string(t));
  }
  return -2.0 * (1.0 - t) / (t * t * t);
}

Vec v_to_x0(const Vec& x_t, const Vec& v, double t) {
  check_same_size(x_t, v, "v_to_x0");
  return x_t - t * v;
}

std::string to_string(const ScheduleSpec& spec) {
  return std::visit(Overloaded{
                        [](const Ddpm&) { return std::string("ddpm"); },
                        [](const Ldm&) { return std::string("ldm"); },
                        [](const Vp&) { return std::string("vp"); },
                        [](const Rf&) { return std::string("rf"); },
                    },
                    spec);
}

std::string to_string(PredictionType p) {
  switch (p) {
    case PredictionType::kEpsilon:
      return "epsilon";
    case PredictionType::kVelocity:
      return "velocity";
    case PredictionType::kScore:
      return "score";
  }
  return "unknown";
}

}  // namespace ditscale::formulations
