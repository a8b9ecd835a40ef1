#include "ditscale/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "ditscale/error.hpp"

namespace ditscale::evalkit {

namespace {

// Independent RNG streams per metric so that adding one metric does not
// perturb the others.
enum Stream : std::uint64_t { kValLoss = 11, kVlb = 12, kSampling = 13 };

Rng stream_rng(const EvalConfig& config, Stream s) {
  return Rng(datagen::mix_seed(config.seed, s));
}

Estimate summarize(const std::vector<double>& per_point) {
  Estimate e;
  const double n = double(per_point.size());
  for (double v : per_point) e.mean += v;
  e.mean /= n;
  if (per_point.size() > 1) {
    double ss = 0.0;
    for (double v : per_point) ss += (v - e.mean) * (v - e.mean);
    e.std_error = std::sqrt(ss / (n - 1.0) / n);
  }
  return e;
}

std::size_t point_count(int requested, const datagen::Dataset& data) {
  if (data.size() == 0) throw ConfigError("evaluation set is empty");
  return std::min<std::size_t>(std::size_t(requested), data.size());
}

double log_standard_normal(const Vec& x) {
  return -0.5 * x.squaredNorm() - 0.5 * double(x.size()) * std::log(2.0 * std::numbers::pi);
}

std::pair<Vec, Mat> moments(const Mat& samples) {
  const double n = double(samples.cols());
  const Vec mu = samples.rowwise().sum() / n;
  const Mat centred = samples.colwise() - mu;
  return {mu, centred * centred.transpose() / (n - 1.0)};
}

Mat psd_sqrt(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  const Vec roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

bool singular(const Mat& cov) {
  Eigen::SelfAdjointEigenSolver<Mat> es(cov, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() <= 1e-12;
}

}  // namespace

void validate(const EvalConfig& c) {
  if (c.n_points < 1 || c.timesteps_per_point < 1 || c.nll_steps < 1 || c.nll_points < 1 ||
      c.sampling_steps < 1) {
    throw ConfigError("eval config: counts must be positive");
  }
  if (!(c.cfg_scale >= 0.0)) throw ConfigError("eval config: cfg_scale must be >= 0");
  if (!(c.vlb_clamp > 0.0 && c.vlb_clamp < 0.5)) {
    throw ConfigError("eval config: vlb_clamp must lie in (0, 0.5)");
  }
}

Mat NetworkField::velocity(const Mat& x, std::span<const double> t,
                           std::span<const int> cond) const {
  return netcore::forward_batch(params_, x, t, cond);
}

Mat NetworkField::jacobian(const Vec& x, double t, int cond) const {
  return netcore::input_jacobian(params_, x, t, cond);
}

Estimate val_loss(const VelocityField& field, const datagen::Dataset& data,
                  const formulations::TimestepSampler& sampler, const EvalConfig& config) {
  validate(config);
  const std::size_t n = point_count(config.n_points, data);
  const int k = config.timesteps_per_point;
  Rng rng = stream_rng(config, kValLoss);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> per_point(n);
  std::vector<double> ts(k);
  std::vector<int> cond(k);
  Mat eps(field.dim(), k);
  Mat x_t(field.dim(), k);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec x0 = data.x0.col(Eigen::Index(i));
    std::fill(cond.begin(), cond.end(), data.labels[i]);
    for (int j = 0; j < k; ++j) {
      ts[j] = formulations::sample_timestep(sampler, rng);
      for (int d = 0; d < field.dim(); ++d) eps(d, j) = normal(rng);
      x_t.col(j) = (1.0 - ts[j]) * x0 + ts[j] * eps.col(j);
    }
    const Mat v = field.velocity(x_t, ts, cond);
    per_point[i] = ((v - eps).colwise() + x0).colwise().squaredNorm().mean();
  }
  return summarize(per_point);
}

Estimate offset_vlb(const VelocityField& field, const datagen::Dataset& data,
                    const EvalConfig& config) {
  validate(config);
  const std::size_t n = point_count(config.n_points, data);
  const int k = config.timesteps_per_point;
  const double lo = config.vlb_clamp;
  const double span = 1.0 - 2.0 * config.vlb_clamp;
  Rng rng = stream_rng(config, kVlb);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<double> per_point(n);
  std::vector<double> ts(k);
  std::vector<int> cond(k);
  Mat eps(field.dim(), k);
  Mat x_t(field.dim(), k);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec x0 = data.x0.col(Eigen::Index(i));
    std::fill(cond.begin(), cond.end(), data.labels[i]);
    for (int j = 0; j < k; ++j) {
      ts[j] = lo + span * (double(j) + unit(rng)) / double(k);
      for (int d = 0; d < field.dim(); ++d) eps(d, j) = normal(rng);
      x_t.col(j) = (1.0 - ts[j]) * x0 + ts[j] * eps.col(j);
    }
    const Mat v = field.velocity(x_t, ts, cond);
    double acc = 0.0;
    for (int j = 0; j < k; ++j) {
      const Vec x0_hat = formulations::v_to_x0(x_t.col(j), v.col(j), ts[j]);
      acc += -0.5 * formulations::snr_prime_rf(ts[j]) * (x0 - x0_hat).squaredNorm();
    }
    per_point[i] = span * acc / double(k);
  }
  return summarize(per_point);
}

double divergence(const VelocityField& field, const Vec& x, double t, int cond) {
  return field.jacobian(x, t, cond).trace();
}

double divergence(const netcore::ParamSet& params, const Vec& x, double t,
                  std::optional<int> cond) {
  return netcore::input_jacobian(params, x, t, cond).trace();
}

double exact_nll(const VelocityField& field, const Vec& x, const EvalConfig& config,
                 std::optional<int> cond) {
  validate(config);
  if (x.size() != field.dim()) throw DimensionError("exact_nll: point dimension mismatch");
  const int c = cond.value_or(field.null_class());
  const int cs[1] = {c};
  const double h = 1.0 / double(config.nll_steps);
  Vec state = x;
  double div_integral = 0.0;
  for (int k = 0; k < config.nll_steps; ++k) {
    const double t[1] = {(double(k) + 0.5) * h};
    const Vec v = field.velocity(Mat(state), t, cs).col(0);
    div_integral += h * field.jacobian(state, t[0], c).trace();
    state += h * v;
    if (!state.allFinite() || state.norm() > config.escape_radius) {
      throw NumericalError("exact_nll: trajectory escaped radius " +
                           std::to_string(config.escape_radius) + " at step " +
                           std::to_string(k));
    }
  }
  // log p_0(x) = log p_1(x_1) + integral of div v along the path.
  return -(log_standard_normal(state) + div_integral);
}

Estimate mean_nll(const VelocityField& field, const datagen::Dataset& data,
                  const EvalConfig& config) {
  const std::size_t n = point_count(config.nll_points, data);
  std::vector<double> per_point(n);
  for (std::size_t i = 0; i < n; ++i) {
    per_point[i] = exact_nll(field, data.x0.col(Eigen::Index(i)), config);
  }
  return summarize(per_point);
}

Mat euler_sample(const VelocityField& field, std::span<const int> labels,
                 const EvalConfig& config, Rng& rng) {
  validate(config);
  const auto n = Eigen::Index(labels.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat x(field.dim(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (int d = 0; d < field.dim(); ++d) x(d, j) = normal(rng);
  }
  const std::vector<int> nulls(labels.size(), field.null_class());
  const bool guided = config.cfg_scale != 1.0;
  const double h = 1.0 / double(config.sampling_steps);
  std::vector<double> ts(labels.size());
  for (int k = 0; k < config.sampling_steps; ++k) {
    std::fill(ts.begin(), ts.end(), 1.0 - double(k) * h);
    Mat v = field.velocity(x, ts, labels);
    if (guided) {
      const Mat v_null = field.velocity(x, ts, nulls);
      v = v_null + config.cfg_scale * (v - v_null);
    }
    x -= h * v;
    if (!x.allFinite()) {
      throw NumericalError("euler_sample: non-finite state at step " + std::to_string(k));
    }
  }
  return x;
}

FrechetResult frechet_from_moments(const Vec& mu_a, const Mat& cov_a, const Vec& mu_b,
                                   const Mat& cov_b) {
  if (mu_a.size() != mu_b.size() || cov_a.rows() != mu_a.size() || cov_b.rows() != mu_b.size()) {
    throw DimensionError("frechet: moment dimensions differ");
  }
  FrechetResult out;
  Mat a = cov_a;
  Mat b = cov_b;
  const Mat ridge = 1e-6 * Mat::Identity(a.rows(), a.cols());
  if (singular(a)) {
    a += ridge;
    out.ridge_added = true;
  }
  if (singular(b)) {
    b += ridge;
    out.ridge_added = true;
  }
  // Tr((A B)^{1/2}) = Tr((A^{1/2} B A^{1/2})^{1/2}), the inner matrix is symmetric PSD.
  const Mat root_a = psd_sqrt(a);
  const Mat inner = root_a * b * root_a;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double trace_root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  double d = (mu_a - mu_b).squaredNorm() + a.trace() + b.trace() - 2.0 * trace_root;
  if (d < 0.0) {
    if (d < -1e-10) throw NumericalError("frechet: negative distance " + std::to_string(d));
    d = 0.0;
  }
  out.distance = d;
  return out;
}

FrechetResult frechet_distance(const Mat& set_a, const Mat& set_b) {
  if (set_a.rows() != set_b.rows()) throw DimensionError("frechet: sample dimensions differ");
  const auto need = set_a.rows() + 1;
  if (set_a.cols() < need || set_b.cols() < need) {
    throw ConfigError("frechet: each set needs at least dim + 1 samples");
  }
  const auto [mu_a, cov_a] = moments(set_a);
  const auto [mu_b, cov_b] = moments(set_b);
  return frechet_from_moments(mu_a, cov_a, mu_b, cov_b);
}

MetricSet parse_metric_set(const std::string& list) {
  MetricSet m{false, false, false, false};
  std::size_t start = 0;
  while (start <= list.size()) {
    const std::size_t end = std::min(list.find(',', start), list.size());
    const std::string name = list.substr(start, end - start);
    if (name == "loss") {
      m.loss = true;
    } else if (name == "vlb") {
      m.vlb = true;
    } else if (name == "nll") {
      m.nll = true;
    } else if (name == "frechet") {
      m.frechet = true;
    } else {
      throw ConfigError("unknown metric '" + name + "' (expected loss, vlb, nll or frechet)");
    }
    start = end + 1;
  }
  return m;
}

std::pair<EvalMetrics, EvalMetrics> evaluate(const netcore::ParamSet& params,
                                             const datagen::Dataset& in_domain,
                                             const datagen::Dataset& ood,
                                             const formulations::TimestepSampler& sampler,
                                             const EvalConfig& config, const MetricSet& metrics) {
  validate(config);
  const NetworkField field(params);
  Mat generated;
  if (metrics.frechet) {
    const std::size_t n_gen = point_count(config.n_points, in_domain);
    Rng rng = stream_rng(config, kSampling);
    const std::vector<int> labels(in_domain.labels.begin(), in_domain.labels.begin() + n_gen);
    generated = euler_sample(field, labels, config, rng);
  }

  auto metrics_on = [&](const datagen::Dataset& data) {
    EvalMetrics m;
    if (metrics.loss) m.val_loss = val_loss(field, data, sampler, config);
    if (metrics.vlb) {
      m.offset_vlb = offset_vlb(field, data, config);
      m.vlb_clamp = config.vlb_clamp;
    }
    if (metrics.nll) m.offset_nll = mean_nll(field, data, config);
    if (metrics.frechet) {
      const std::size_t n_ref = point_count(config.n_points, data);
      const FrechetResult fd = frechet_distance(generated, data.x0.leftCols(Eigen::Index(n_ref)));
      m.frechet_distance = fd.distance;
      m.frechet_ridge = fd.ridge_added;
    }
    return m;
  };
  return {metrics_on(in_domain), metrics_on(ood)};
}

std::vector<GuidancePoint> guidance_sweep(const netcore::ParamSet& params,
                                          const datagen::Dataset& reference,
                                          std::span<const double> scales,
                                          std::span<const int> steps, const EvalConfig& config) {
  const NetworkField field(params);
  const std::size_t n = point_count(config.n_points, reference);
  const std::vector<int> labels(reference.labels.begin(), reference.labels.begin() + n);
  const Mat ref = reference.x0.leftCols(Eigen::Index(n));
  std::vector<GuidancePoint> out;
  for (int s : steps) {
    for (double scale : scales) {
      EvalConfig c = config;
      c.sampling_steps = s;
      c.cfg_scale = scale;
      Rng rng = stream_rng(config, kSampling);
      const Mat generated = euler_sample(field, labels, c, rng);
      out.push_back({scale, s, frechet_distance(generated, ref).distance});
    }
  }
  return out;
}

}  // namespace ditscale::evalkit
