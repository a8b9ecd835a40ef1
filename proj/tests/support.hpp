#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "ditscale/evalkit.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("ditscale-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Marginal rectified-flow velocity for standard-normal data in `dim`
// independent coordinates: x_t ~ N(0, s^2), s^2 = (1-t)^2 + t^2, and
// E[eps - x0 | x_t = x] = (2t - 1) / s^2 * x.
class GaussianRfField final : public ditscale::evalkit::VelocityField {
 public:
  explicit GaussianRfField(int dim = 1) : dim_(dim) {}
  static double gain(double t) { return (2.0 * t - 1.0) / ((1.0 - t) * (1.0 - t) + t * t); }
  int dim() const override { return dim_; }
  int null_class() const override { return 0; }
  ditscale::evalkit::Mat velocity(const ditscale::evalkit::Mat& x, std::span<const double> t,
                                  std::span<const int>) const override {
    ditscale::evalkit::Mat v = x;
    for (Eigen::Index j = 0; j < x.cols(); ++j) v.col(j) *= gain(t[std::size_t(j)]);
    return v;
  }
  ditscale::evalkit::Mat jacobian(const ditscale::evalkit::Vec&, double t, int) const override {
    return gain(t) * ditscale::evalkit::Mat::Identity(dim_, dim_);
  }

 private:
  int dim_;
};

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

}  // namespace testing
