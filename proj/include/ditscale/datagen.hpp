#pragma once

// Synthetic labelled 2-D distributions. Component (or cell) index is the
// class label.

#include <cstdint>
#include <filesystem>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ditscale/formulations.hpp"

namespace ditscale::datagen {

using formulations::Rng;

struct GaussianMixture {
  std::vector<Eigen::Vector2d> means;
  double std_dev = 0.5;
};

// Uniform density over the "dark" cells of a grid x grid board centred at
// the origin, each cell cell_extent wide. Dark cells are those with even
// row + column; their enumeration order is row-major.
struct Checkerboard {
  int grid = 4;
  double cell_extent = 1.0;
};

struct DistributionSpec {
  std::variant<GaussianMixture, Checkerboard> kind;
  Eigen::Vector2d shift = Eigen::Vector2d::Zero();

  int num_classes() const;
};

void validate(const DistributionSpec& spec);

/// Four unit-weight components at (+-2, +-2), std 0.5.
DistributionSpec default_mixture();

/// The default mixture translated by (3, 3).
DistributionSpec default_ood();

/// Data as columns (2 x n) plus labels.
struct Dataset {
  Eigen::MatrixXd x0;
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

Dataset sample(const DistributionSpec& spec, std::size_t n, Rng& rng);

/// Independent train and validation draws from sub-seeds of seed.
std::pair<Dataset, Dataset> split(const DistributionSpec& spec, std::size_t n_train,
                                  std::size_t n_val, std::uint64_t seed);

/// Analytic mean and covariance of the distribution.
Eigen::Vector2d mean(const DistributionSpec& spec);
Eigen::Matrix2d covariance(const DistributionSpec& spec);

/// CSV with header x0_0,x0_1,label.
void write_csv(const Dataset& data, const std::filesystem::path& path);
Dataset read_csv(const std::filesystem::path& path);

/// Deterministic 64-bit mixing used to derive sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace ditscale::datagen
