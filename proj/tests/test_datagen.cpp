#include <doctest.h>

#include <set>

#include "ditscale/datagen.hpp"
#include "ditscale/error.hpp"
#include "support.hpp"

using namespace ditscale;
using namespace ditscale::datagen;

TEST_SUITE("datagen") {

TEST_CASE("default mixture moments") {
  const DistributionSpec spec = default_mixture();
  CHECK(spec.num_classes() == 4);
  CHECK(mean(spec).norm() < 1e-15);
  const Eigen::Matrix2d cov = covariance(spec);
  CHECK(cov(0, 0) == doctest::Approx(4.25));
  CHECK(cov(1, 1) == doctest::Approx(4.25));
  CHECK(std::abs(cov(0, 1)) < 1e-15);

  Rng rng(1);
  const Dataset d = sample(spec, 200000, rng);
  const Eigen::Vector2d m = d.x0.rowwise().mean();
  const Eigen::MatrixXd centered = d.x0.colwise() - m;
  const Eigen::Matrix2d emp = centered * centered.transpose() / double(d.size() - 1);
  CHECK(m.norm() < 0.03);
  CHECK((emp - cov).cwiseAbs().maxCoeff() < 0.06);
}

TEST_CASE("OOD set is the default mixture shifted by (3, 3)") {
  const DistributionSpec ood = default_ood();
  CHECK((mean(ood) - Eigen::Vector2d(3.0, 3.0)).norm() < 1e-15);
  CHECK((covariance(ood) - covariance(default_mixture())).norm() < 1e-15);
  Rng a(5), b(5);
  const Dataset in = sample(default_mixture(), 100, a);
  const Dataset out = sample(ood, 100, b);
  CHECK(in.labels == out.labels);
  CHECK(((out.x0.colwise() - Eigen::Vector2d(3.0, 3.0)) - in.x0).norm() < 1e-12);
}

TEST_CASE("labels identify mixture components") {
  Rng rng(2);
  const Dataset d = sample(default_mixture(), 5000, rng);
  const DistributionSpec spec = default_mixture();
  const auto& means = std::get<GaussianMixture>(spec.kind).means;
  int far = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    REQUIRE(d.labels[i] >= 0);
    REQUIRE(d.labels[i] < 4);
    if ((d.x0.col(Eigen::Index(i)) - means[std::size_t(d.labels[i])]).norm() > 2.5) ++far;
  }
  CHECK(far == 0);
}

TEST_CASE("checkerboard samples lie in dark cells") {
  DistributionSpec spec{Checkerboard{4, 1.0}, Eigen::Vector2d::Zero()};
  CHECK(spec.num_classes() == 8);
  Rng rng(3);
  const Dataset d = sample(spec, 4000, rng);
  std::set<int> seen;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x = d.x0(0, Eigen::Index(i)), y = d.x0(1, Eigen::Index(i));
    CHECK(std::abs(x) <= 2.0);
    CHECK(std::abs(y) <= 2.0);
    const int col = int(std::floor(x + 2.0)), row = int(std::floor(2.0 - y));
    CHECK((row + col) % 2 == 0);
    seen.insert(d.labels[i]);
  }
  CHECK(seen.size() == 8);
  CHECK(mean(spec).norm() < 1e-12);
}

TEST_CASE("sampling is deterministic in the seed") {
  Rng a(7), b(7), c(8);
  const Dataset x = sample(default_mixture(), 64, a), y = sample(default_mixture(), 64, b),
                z = sample(default_mixture(), 64, c);
  CHECK(x.x0 == y.x0);
  CHECK(x.labels == y.labels);
  CHECK(x.x0 != z.x0);
  const auto [train, val] = split(default_mixture(), 50, 20, 9);
  const auto [train2, val2] = split(default_mixture(), 50, 20, 9);
  CHECK(train.x0 == train2.x0);
  CHECK(val.x0 == val2.x0);
  CHECK(train.x0.leftCols(20) != val.x0);
}

TEST_CASE("seed mixing separates streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 50; ++s) {
    for (std::uint64_t k = 0; k < 50; ++k) seen.insert(mix_seed(s, k));
  }
  CHECK(seen.size() == 2500);
  CHECK(mix_seed(1, 2) == mix_seed(1, 2));
}

TEST_CASE("CSV round-trip is exact") {
  testing::TempDir dir("data");
  Rng rng(4);
  const Dataset d = sample(default_ood(), 257, rng);
  write_csv(d, dir.path() / "d.csv");
  const Dataset back = read_csv(dir.path() / "d.csv");
  CHECK(back.x0 == d.x0);
  CHECK(back.labels == d.labels);
}

TEST_CASE("invalid distributions are rejected") {
  CHECK_THROWS_AS(validate(DistributionSpec{GaussianMixture{{}, 0.5}, {}}), ConfigError);
  CHECK_THROWS_AS(validate(DistributionSpec{GaussianMixture{{{0.0, 0.0}}, 0.0}, {}}), ConfigError);
  CHECK_THROWS_AS(validate(DistributionSpec{Checkerboard{0, 1.0}, {}}), ConfigError);
  Rng rng(0);
  CHECK_THROWS_AS(sample(default_mixture(), 0, rng), ConfigError);
}

}  // TEST_SUITE
