#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "ditscale/error.hpp"
#include "ditscale/formulations.hpp"

using namespace ditscale;
using namespace ditscale::formulations;

TEST_SUITE("formulations") {

TEST_CASE("rectified flow interpolates linearly and regresses eps - x0") {
  const Vec x0 = (Vec(3) << 1.0, -2.0, 0.5).finished();
  const Vec eps = (Vec(3) << 0.3, 0.7, -1.1).finished();
  for (double t : {0.0, 0.25, 0.5, 0.9, 1.0}) {
    const NoiseCoeffs c = coeffs(Rf{}, t);
    CHECK(c.alpha == doctest::Approx(1.0 - t));
    CHECK(c.beta == doctest::Approx(t));
    const Vec xt = make_noisy(x0, eps, c);
    CHECK((xt - ((1.0 - t) * x0 + t * eps)).norm() < 1e-15);
    CHECK((target(PredictionType::kVelocity, x0, eps, c) - (eps - x0)).norm() < 1e-15);
  }
  CHECK(rf_loss(eps - x0, x0, eps) < 1e-28);
  const Vec off = eps - x0 + Vec::Constant(3, 0.5);
  CHECK(rf_loss(off, x0, eps) == doctest::Approx(0.75));
}

TEST_CASE("velocity target is the time derivative of x_t") {
  const Vec x0 = (Vec(2) << 0.8, -0.4).finished();
  const Vec eps = (Vec(2) << -0.2, 1.3).finished();
  const double h = 1e-6;
  for (const ScheduleSpec& spec : {ScheduleSpec{Rf{}}, ScheduleSpec{Vp{0.7}}, ScheduleSpec{Vp{3.0}}}) {
    for (double t : {0.1, 0.4, 0.8}) {
      const Vec fd = (make_noisy(x0, eps, coeffs(spec, t + h)) - make_noisy(x0, eps, coeffs(spec, t - h))) /
                     (2 * h);
      const Vec v = target(PredictionType::kVelocity, x0, eps, coeffs(spec, t));
      CHECK((fd - v).norm() < 1e-6);
    }
  }
}

TEST_CASE("variance-preserving schedules keep alpha^2 + beta^2 = 1") {
  for (const ScheduleSpec& spec : {ScheduleSpec{Vp{}}, ScheduleSpec{Vp{5.0}}, ScheduleSpec{Ddpm{}},
                                   ScheduleSpec{Ldm{}}}) {
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const NoiseCoeffs c = coeffs(spec, double(i) / 999.0);
      worst = std::max(worst, std::abs(c.alpha * c.alpha + c.beta * c.beta - 1.0));
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("discrete schedules follow the cumulative product of 1 - sigma") {
  const Ddpm d{1e-4, 0.02, 1000};
  double log_alpha_sq = 0.0;
  for (int i = 0; i <= 10; ++i) log_alpha_sq += std::log1p(-(d.sigma_0 + i / 999.0 * (d.sigma_t - d.sigma_0)));
  const NoiseCoeffs c = coeffs(d, 10.0 / 999.0);
  CHECK(c.alpha * c.alpha == doctest::Approx(std::exp(log_alpha_sq)).epsilon(1e-12));
  // alpha decays and beta grows along the schedule.
  double prev_alpha = 2.0;
  for (double t = 0.05; t < 1.0; t += 0.1) {
    const NoiseCoeffs k = coeffs(Ldm{}, t);
    CHECK(k.alpha < prev_alpha);
    CHECK(k.alpha_prime < 0.0);
    CHECK(k.beta_prime > 0.0);
    prev_alpha = k.alpha;
  }
}

TEST_CASE("score target and SNR") {
  const Vec x0 = Vec::Ones(2);
  const Vec eps = (Vec(2) << 0.5, -1.0).finished();
  const NoiseCoeffs c = coeffs(Rf{}, 0.25);
  CHECK((target(PredictionType::kScore, x0, eps, c) + eps / 0.25).norm() < 1e-15);
  CHECK(target(PredictionType::kEpsilon, x0, eps, c) == eps);
  CHECK_THROWS_AS(target(PredictionType::kScore, x0, eps, coeffs(Rf{}, 0.0)), NumericalError);
  CHECK(snr(c) == doctest::Approx(9.0));
  CHECK_THROWS_AS(snr(coeffs(Rf{}, 0.0)), NumericalError);
}

TEST_CASE("SNR derivative matches finite differences of the RF SNR") {
  const double h = 1e-6;
  for (double t : {0.05, 0.3, 0.5, 0.77, 0.95}) {
    const double fd = (snr(coeffs(Rf{}, t + h)) - snr(coeffs(Rf{}, t - h))) / (2 * h);
    CHECK(snr_prime_rf(t) == doctest::Approx(fd).epsilon(1e-6));
  }
  CHECK_THROWS_AS(snr_prime_rf(0.0), DomainError);
  CHECK_THROWS_AS(snr_prime_rf(1.0), DomainError);
}

TEST_CASE("x0 estimate inverts the exact velocity") {
  const Vec x0 = (Vec(2) << 2.0, -1.0).finished();
  const Vec eps = (Vec(2) << 0.1, 0.4).finished();
  const double t = 0.6;
  const Vec xt = make_noisy(x0, eps, coeffs(Rf{}, t));
  CHECK((v_to_x0(xt, eps - x0, t) - x0).norm() < 1e-14);
}

TEST_CASE("logit-normal sampler") {
  const LogitNormalSampler ln{0.3, 0.8};
  CHECK(logit_normal_from_normal(ln, 0.0) == doctest::Approx(1.0 / (1.0 + std::exp(-0.3))));
  CHECK(logit_normal_from_normal(ln, 1.0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.1))));

  // The density integrates to one: midpoint rule in t.
  for (auto [m, s] : {std::pair{0.0, 1.0}, std::pair{0.5, 0.8}, std::pair{-1.0, 1.5}}) {
    const int n = 2'000'000;
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += ln_density((i + 0.5) / n, m, s) / n;
    CHECK(std::abs(total - 1.0) < 1e-6);
  }

  // Histogram of draws against the density, bin masses by Simpson's rule.
  Rng rng(42);
  const int draws = 1'000'000, bins = 100;
  std::vector<int> hist(bins, 0);
  for (int i = 0; i < draws; ++i) {
    const double t = sample_timestep(LogitNormalSampler{}, rng);
    REQUIRE(t >= kTimestepClamp);
    REQUIRE(t <= 1.0 - kTimestepClamp);
    hist[std::min(bins - 1, int(t * bins))]++;
  }
  double worst = 0.0;
  for (int b = 0; b < bins; ++b) {
    const double lo = std::max(double(b) / bins, 1e-12), hi = std::min(double(b + 1) / bins, 1 - 1e-12);
    const int k = 64;
    double mass = 0.0;
    for (int j = 0; j <= k; ++j) {
      const double w = (j == 0 || j == k) ? 1.0 : (j % 2 ? 4.0 : 2.0);
      mass += w * ln_density(lo + (hi - lo) * j / k, 0.0, 1.0);
    }
    mass *= (hi - lo) / (3.0 * k);
    worst = std::max(worst, std::abs(double(hist[b]) / draws - mass));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("uniform sampler stays inside the clamp") {
  Rng rng(1);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double t = sample_timestep(UniformSampler{}, rng);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  CHECK(lo >= kTimestepClamp);
  CHECK(hi <= 1.0 - kTimestepClamp);
  CHECK(lo < 0.001);
  CHECK(hi > 0.999);
}

TEST_CASE("invalid specs and inputs are rejected") {
  CHECK_THROWS_AS(validate(ScheduleSpec{Ddpm{0.0, 0.02, 1000}}), ConfigError);
  CHECK_THROWS_AS(validate(ScheduleSpec{Ddpm{0.03, 0.02, 1000}}), ConfigError);
  CHECK_THROWS_AS(validate(ScheduleSpec{Ldm{1e-4, 0.012, 0}}), ConfigError);
  CHECK_THROWS_AS(validate(ScheduleSpec{Vp{0.0}}), ConfigError);
  CHECK_THROWS_AS(validate(TimestepSampler{LogitNormalSampler{0.0, 0.0}}), ConfigError);
  CHECK_THROWS_AS(coeffs(Rf{}, 1.5), DomainError);
  CHECK_THROWS_AS(ln_density(0.0, 0.0, 1.0), DomainError);
  CHECK_THROWS_AS(make_noisy(Vec::Zero(2), Vec::Zero(3), coeffs(Rf{}, 0.5)), DimensionError);
  CHECK_THROWS_AS(rf_loss(Vec::Zero(2), Vec::Zero(2), Vec::Zero(1)), DimensionError);
  CHECK(to_string(ScheduleSpec{Ldm{}}) == "ldm");
  CHECK(to_string(PredictionType::kScore) == "score");
}

}  // TEST_SUITE
