#include "ditscale/datagen.hpp"

#include "ditscale/csv.hpp"
#include "ditscale/error.hpp"

namespace ditscale::datagen {

namespace {

std::vector<Eigen::Vector2d> dark_cell_centres(const Checkerboard& board) {
  std::vector<Eigen::Vector2d> centres;
  const double half = 0.5 * board.grid;
  for (int r = 0; r < board.grid; ++r) {
    for (int c = 0; c < board.grid; ++c) {
      if ((r + c) % 2 != 0) continue;
      centres.emplace_back((c + 0.5 - half) * board.cell_extent,
                           (half - r - 0.5) * board.cell_extent);
    }
  }
  return centres;
}

}  // namespace

int DistributionSpec::num_classes() const {
  if (const auto* gm = std::get_if<GaussianMixture>(&kind)) return int(gm->means.size());
  const auto& board = std::get<Checkerboard>(kind);
  return (board.grid * board.grid + 1) / 2;
}

void validate(const DistributionSpec& spec) {
  if (const auto* gm = std::get_if<GaussianMixture>(&spec.kind)) {
    if (gm->means.empty()) throw ConfigError("gaussian mixture needs at least one component");
    if (!(gm->std_dev > 0.0)) throw ConfigError("gaussian mixture std must be positive");
  } else {
    const auto& board = std::get<Checkerboard>(spec.kind);
    if (board.grid < 1) throw ConfigError("checkerboard grid must be >= 1");
    if (!(board.cell_extent > 0.0)) throw ConfigError("checkerboard cell extent must be positive");
  }
}

DistributionSpec default_mixture() {
  GaussianMixture gm;
  gm.means = {{2.0, 2.0}, {-2.0, 2.0}, {-2.0, -2.0}, {2.0, -2.0}};
  gm.std_dev = 0.5;
  return DistributionSpec{gm, Eigen::Vector2d::Zero()};
}

DistributionSpec default_ood() {
  DistributionSpec spec = default_mixture();
  spec.shift = {3.0, 3.0};
  return spec;
}

Dataset sample(const DistributionSpec& spec, std::size_t n, Rng& rng) {
  validate(spec);
  if (n == 0) throw ConfigError("sample: n must be >= 1");
  const int k = spec.num_classes();
  std::uniform_int_distribution<int> pick(0, k - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-0.5, 0.5);

  Dataset out;
  out.x0.resize(2, Eigen::Index(n));
  out.labels.resize(n);
  if (const auto* gm = std::get_if<GaussianMixture>(&spec.kind)) {
    for (std::size_t i = 0; i < n; ++i) {
      const int label = pick(rng);
      const double a = normal(rng);
      const double b = normal(rng);
      out.x0.col(Eigen::Index(i)) = gm->means[label] + gm->std_dev * Eigen::Vector2d(a, b) + spec.shift;
      out.labels[i] = label;
    }
  } else {
    const auto& board = std::get<Checkerboard>(spec.kind);
    const auto centres = dark_cell_centres(board);
    for (std::size_t i = 0; i < n; ++i) {
      const int label = pick(rng);
      const double a = unit(rng);
      const double b = unit(rng);
      out.x0.col(Eigen::Index(i)) =
          centres[label] + board.cell_extent * Eigen::Vector2d(a, b) + spec.shift;
      out.labels[i] = label;
    }
  }
  return out;
}

std::pair<Dataset, Dataset> split(const DistributionSpec& spec, std::size_t n_train,
                                  std::size_t n_val, std::uint64_t seed) {
  Rng train_rng(mix_seed(seed, 1));
  Rng val_rng(mix_seed(seed, 2));
  return {sample(spec, n_train, train_rng), sample(spec, n_val, val_rng)};
}

Eigen::Vector2d mean(const DistributionSpec& spec) {
  validate(spec);
  Eigen::Vector2d mu = Eigen::Vector2d::Zero();
  if (const auto* gm = std::get_if<GaussianMixture>(&spec.kind)) {
    for (const auto& m : gm->means) mu += m;
    mu /= double(gm->means.size());
  } else {
    const auto centres = dark_cell_centres(std::get<Checkerboard>(spec.kind));
    for (const auto& c : centres) mu += c;
    mu /= double(centres.size());
  }
  return mu + spec.shift;
}

Eigen::Matrix2d covariance(const DistributionSpec& spec) {
  const Eigen::Vector2d mu = mean(spec) - spec.shift;
  Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
  double within = 0.0;
  std::vector<Eigen::Vector2d> centres;
  if (const auto* gm = std::get_if<GaussianMixture>(&spec.kind)) {
    centres = gm->means;
    within = gm->std_dev * gm->std_dev;
  } else {
    const auto& board = std::get<Checkerboard>(spec.kind);
    centres = dark_cell_centres(board);
    within = board.cell_extent * board.cell_extent / 12.0;
  }
  for (const auto& c : centres) second += (c - mu) * (c - mu).transpose();
  second /= double(centres.size());
  return second + within * Eigen::Matrix2d::Identity();
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  csv::Table table;
  table.header = {"x0_0", "x0_1", "label"};
  for (std::size_t i = 0; i < data.size(); ++i) {
    table.rows.push_back({csv::format_double(data.x0(0, Eigen::Index(i))),
                          csv::format_double(data.x0(1, Eigen::Index(i))),
                          std::to_string(data.labels[i])});
  }
  csv::write(path, table);
}

Dataset read_csv(const std::filesystem::path& path) {
  const csv::Table table = csv::read(path);
  const std::size_t c0 = table.column("x0_0");
  const std::size_t c1 = table.column("x0_1");
  const std::size_t cl = table.column("label");
  Dataset data;
  data.x0.resize(2, Eigen::Index(table.rows.size()));
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    data.x0(0, Eigen::Index(i)) = csv::parse_double(table.rows[i][c0]);
    data.x0(1, Eigen::Index(i)) = csv::parse_double(table.rows[i][c1]);
    data.labels.push_back(std::stoi(table.rows[i][cl]));
  }
  return data;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over the combined words
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace ditscale::datagen
