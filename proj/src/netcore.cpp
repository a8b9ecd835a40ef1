#include "ditscale/netcore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ditscale/error.hpp"

namespace ditscale::netcore {

namespace {

constexpr char kMagic[8] = {'D', 'I', 'T', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void require_positive(int value, const char* name) {
  if (value <= 0) {
    std::ostringstream os;
    os << "model config: " << name << " must be positive (got " << value << ")";
    throw ConfigError(os.str());
  }
}

// Input features for every column: x_t, time features, class embedding.
Mat build_inputs(const ParamSet& params, const Mat& x_t, std::span<const double> t,
                 std::span<const int> cond) {
  const ModelConfig& cfg = params.config();
  const auto batch = static_cast<Eigen::Index>(t.size());
  if (x_t.rows() != cfg.data_dim || x_t.cols() != batch ||
      cond.size() != static_cast<std::size_t>(batch)) {
    throw DimensionError("forward: batch shapes do not match the model config");
  }
  Mat inputs(cfg.in_dim(), batch);
  inputs.topRows(cfg.data_dim) = x_t;
  const auto embed = params.embedding();
  for (Eigen::Index j = 0; j < batch; ++j) {
    const int c = cond[j];
    if (c < 0 || c > cfg.num_classes) {
      throw DimensionError("forward: condition index " + std::to_string(c) + " out of range [0, " +
                           std::to_string(cfg.num_classes) + "]");
    }
    inputs.col(j).segment(cfg.data_dim, cfg.time_embed_dim) = time_features(t[j], cfg.time_embed_dim);
    inputs.col(j).tail(cfg.cond_embed_dim) = embed.row(c).transpose();
  }
  return inputs;
}

struct Activations {
  Mat inputs;
  std::vector<Mat> slope;   // GELU derivative at each hidden pre-activation
  std::vector<Mat> hidden;  // GELU outputs
  Mat output;
};

// GELU and its derivative from one erf/exp evaluation per entry.
void gelu_with_slope(const Mat& z, Mat& value, Mat& slope) {
  value.resize(z.rows(), z.cols());
  slope.resize(z.rows(), z.cols());
  const double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  const Eigen::Index n = z.size();
  const double* in = z.data();
  double* out = value.data();
  double* d = slope.data();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = in[i];
    const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
    out[i] = x * cdf;
    d[i] = cdf + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
  }
}

Activations run_forward(const ParamSet& params, const Mat& x_t, std::span<const double> t,
                        std::span<const int> cond) {
  Activations act;
  act.inputs = build_inputs(params, x_t, t, cond);
  const int depth = params.config().depth;
  act.slope.resize(depth);
  act.hidden.resize(depth);
  Mat z;
  for (int l = 0; l < depth; ++l) {
    const Mat& below = l == 0 ? act.inputs : act.hidden[l - 1];
    z.noalias() = params.weight(l) * below;
    z.colwise() += params.bias(l);
    gelu_with_slope(z, act.hidden[l], act.slope[l]);
  }
  act.output = params.weight(depth) * act.hidden.back();
  act.output.colwise() += params.bias(depth);
  return act;
}

template <class T>
void write_le(std::ostream& out, T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
  } else {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
}

template <class T>
T read_le(std::istream& in) {
  std::array<char, sizeof(T)> bytes{};
  in.read(bytes.data(), sizeof(T));
  if (!in) throw StoreError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  return std::bit_cast<T>(bytes);
}

}  // namespace

void validate(const ModelConfig& config) {
  require_positive(config.depth, "depth");
  require_positive(config.width, "width");
  require_positive(config.data_dim, "data_dim");
  require_positive(config.num_classes, "num_classes");
  require_positive(config.time_embed_dim, "time_embed_dim");
  require_positive(config.cond_embed_dim, "cond_embed_dim");
  if (config.time_embed_dim % 2 != 0) {
    throw ConfigError("model config: time_embed_dim must be even");
  }
}

ModelConfig family_member(int depth, int aspect_ratio, const ModelConfig& base) {
  ModelConfig cfg = base;
  cfg.depth = depth;
  cfg.width = aspect_ratio * depth;
  validate(cfg);
  return cfg;
}

std::int64_t param_count(const ModelConfig& c) {
  validate(c);
  const std::int64_t width = c.width;
  const std::int64_t input_layer = std::int64_t(c.in_dim()) * width + width;
  const std::int64_t hidden = std::int64_t(c.depth - 1) * (width * width + width);
  const std::int64_t output = width * c.data_dim + c.data_dim;
  const std::int64_t table = std::int64_t(c.num_classes + 1) * c.cond_embed_dim;
  return input_layer + hidden + output + table;
}

std::int64_t train_flops_per_sample(const ModelConfig& config) {
  return 6 * param_count(config);
}

ParamSet::ParamSet(const ModelConfig& config) : config_(config) {
  validate(config);
  std::size_t offset = 0;
  for (int l = 0; l <= config.depth; ++l) {
    const int rows = l == config.depth ? config.data_dim : config.width;
    const int cols = l == 0 ? config.in_dim() : config.width;
    layers_.push_back({offset, offset + std::size_t(rows) * cols, rows, cols});
    offset += std::size_t(rows) * cols + rows;
  }
  embedding_offset_ = offset;
  offset += std::size_t(config.num_classes + 1) * config.cond_embed_dim;
  values_.assign(offset, 0.0);
}

Eigen::Map<Mat> ParamSet::weight(int layer) {
  const LayerSlot& s = layers_.at(layer);
  return {values_.data() + s.weight_offset, s.rows, s.cols};
}

Eigen::Map<const Mat> ParamSet::weight(int layer) const {
  const LayerSlot& s = layers_.at(layer);
  return {values_.data() + s.weight_offset, s.rows, s.cols};
}

Eigen::Map<Vec> ParamSet::bias(int layer) {
  const LayerSlot& s = layers_.at(layer);
  return {values_.data() + s.bias_offset, s.rows};
}

Eigen::Map<const Vec> ParamSet::bias(int layer) const {
  const LayerSlot& s = layers_.at(layer);
  return {values_.data() + s.bias_offset, s.rows};
}

Eigen::Map<Mat> ParamSet::embedding() {
  return {values_.data() + embedding_offset_, config_.num_classes + 1, config_.cond_embed_dim};
}

Eigen::Map<const Mat> ParamSet::embedding() const {
  return {values_.data() + embedding_offset_, config_.num_classes + 1, config_.cond_embed_dim};
}

bool ParamSet::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double ParamSet::l2_norm() const {
  return Eigen::Map<const Vec>(values_.data(), Eigen::Index(values_.size())).norm();
}

ParamSet init(const ModelConfig& config, Rng& rng) {
  ParamSet params(config);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int l = 0; l < params.num_layers(); ++l) {
    auto w = params.weight(l);
    const double std_dev = std::sqrt(2.0 / double(w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = std_dev * normal(rng);
    }
  }
  auto embed = params.embedding();
  for (Eigen::Index j = 0; j < embed.cols(); ++j) {
    for (Eigen::Index i = 0; i < embed.rows(); ++i) embed(i, j) = 0.02 * normal(rng);
  }
  return params;
}

Vec time_features(double t, int dim) {
  Vec f(dim);
  double sin_k = std::sin(std::numbers::pi * t);
  double cos_k = std::cos(std::numbers::pi * t);
  for (int k = 0; k < dim / 2; ++k) {
    f[2 * k] = sin_k;
    f[2 * k + 1] = cos_k;
    // Angle doubling: frequency 2^(k+1) * pi.
    const double s2 = 2.0 * sin_k * cos_k;
    cos_k = cos_k * cos_k - sin_k * sin_k;
    sin_k = s2;
  }
  return f;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Mat forward_batch(const ParamSet& params, const Mat& x_t, std::span<const double> t,
                  std::span<const int> cond) {
  return run_forward(params, x_t, t, cond).output;
}

Vec forward(const ParamSet& params, const Vec& x_t, double t, std::optional<int> cond) {
  const int c = cond.value_or(params.config().null_class());
  const double ts[1] = {t};
  const int cs[1] = {c};
  return forward_batch(params, Mat(x_t), ts, cs).col(0);
}

Mat input_jacobian(const ParamSet& params, const Vec& x_t, double t, std::optional<int> cond) {
  const ModelConfig& cfg = params.config();
  const double ts[1] = {t};
  const int cs[1] = {cond.value_or(cfg.null_class())};
  const Mat inputs = build_inputs(params, Mat(x_t), ts, cs);

  // Tangents of the hidden state along each input coordinate of x_t.
  Vec z = params.weight(0) * inputs.col(0) + params.bias(0);
  Mat tangent = z.unaryExpr(&gelu_derivative).asDiagonal() *
                params.weight(0).leftCols(cfg.data_dim);
  Vec h = z.unaryExpr(&gelu);
  for (int l = 1; l < cfg.depth; ++l) {
    z = params.weight(l) * h + params.bias(l);
    tangent = z.unaryExpr(&gelu_derivative).asDiagonal() * (params.weight(l) * tangent);
    h = z.unaryExpr(&gelu);
  }
  return params.weight(cfg.depth) * tangent;
}

LossAndGrads loss_and_grads(const ParamSet& params, const FrozenBatch& batch) {
  const ModelConfig& cfg = params.config();
  if (batch.size() == 0) throw ConfigError("loss_and_grads: empty batch");
  if (batch.target.rows() != cfg.data_dim || batch.target.cols() != Eigen::Index(batch.size())) {
    throw DimensionError("loss_and_grads: target shape does not match the batch");
  }
  const Activations act = run_forward(params, batch.x_t, batch.t, batch.cond);
  const double inv_batch = 1.0 / double(batch.size());

  const Mat residual = act.output - batch.target;
  LossAndGrads out{residual.squaredNorm() * inv_batch, ParamSet(cfg)};
  if (!std::isfinite(out.loss)) {
    throw NumericalError("training diverged: non-finite loss");
  }

  ParamSet& g = out.grads;
  const int depth = cfg.depth;
  Mat delta = (2.0 * inv_batch) * residual;
  g.weight(depth).noalias() = delta * act.hidden[depth - 1].transpose();
  g.bias(depth) = delta.rowwise().sum();
  Mat upstream = params.weight(depth).transpose() * delta;

  for (int l = depth - 1; l >= 0; --l) {
    delta = upstream.cwiseProduct(act.slope[l]);
    const Mat& below = l == 0 ? act.inputs : act.hidden[l - 1];
    g.weight(l).noalias() = delta * below.transpose();
    g.bias(l) = delta.rowwise().sum();
    if (l > 0) upstream = params.weight(l).transpose() * delta;
  }

  // Only the embedding slice of the input carries trainable parameters.
  const Mat embed_grad = params.weight(0).rightCols(cfg.cond_embed_dim).transpose() * delta;
  auto table = g.embedding();
  for (std::size_t j = 0; j < batch.size(); ++j) {
    table.row(batch.cond[j]) += embed_grad.col(Eigen::Index(j)).transpose();
  }
  return out;
}

FrozenBatch draw_batch(const ModelConfig& config, const Mat& x0, std::span<const int> labels,
                       const formulations::ScheduleSpec& schedule,
                       const formulations::TimestepSampler& sampler, double label_drop_prob,
                       Rng& rng) {
  const auto batch = x0.cols();
  if (batch == 0) throw ConfigError("loss_and_grads: empty batch");
  if (x0.rows() != config.data_dim || labels.size() != std::size_t(batch)) {
    throw DimensionError("loss_and_grads: data shape does not match the model config");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution drop(label_drop_prob);
  const bool is_rf = std::holds_alternative<formulations::Rf>(schedule);

  FrozenBatch fb;
  fb.x_t.resize(config.data_dim, batch);
  fb.target.resize(config.data_dim, batch);
  fb.t.resize(batch);
  fb.cond.resize(batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    const double t = formulations::sample_timestep(sampler, rng);
    Vec eps(config.data_dim);
    for (int d = 0; d < config.data_dim; ++d) eps[d] = normal(rng);
    fb.t[j] = t;
    fb.cond[j] = drop(rng) ? config.null_class() : labels[j];
    if (is_rf) {
      fb.x_t.col(j) = (1.0 - t) * x0.col(j) + t * eps;
      fb.target.col(j) = eps - x0.col(j);
    } else {
      const auto c = formulations::coeffs(schedule, t);
      fb.x_t.col(j) = c.alpha * x0.col(j) + c.beta * eps;
      fb.target.col(j) = c.alpha_prime * x0.col(j) + c.beta_prime * eps;
    }
  }
  return fb;
}

LossAndGrads loss_and_grads(const ParamSet& params, const Mat& x0, std::span<const int> labels,
                            const formulations::ScheduleSpec& schedule,
                            const formulations::TimestepSampler& sampler, double label_drop_prob,
                            Rng& rng) {
  return loss_and_grads(
      params, draw_batch(params.config(), x0, labels, schedule, sampler, label_drop_prob, rng));
}

OptimizerState::OptimizerState(const ParamSet& params, AdamWConfig h)
    : hyper(h), m(params.size(), 0.0), v(params.size(), 0.0) {}

void adamw_step(OptimizerState& state, ParamSet& params, const ParamSet& grads, double lr) {
  if (state.m.size() != params.size() || grads.size() != params.size()) {
    throw DimensionError("adamw_step: optimizer state, params and grads differ in shape");
  }
  ++state.step;
  const AdamWConfig& h = state.hyper;
  const double correction1 = 1.0 - std::pow(h.beta1, double(state.step));
  const double correction2 = 1.0 - std::pow(h.beta2, double(state.step));
  auto p = params.values();
  auto g = grads.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] -= lr * h.weight_decay * p[i];
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g[i];
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g[i] * g[i];
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    p[i] -= lr * m_hat / (std::sqrt(v_hat) + h.eps);
  }
}

double clip_grad_norm(ParamSet& grads, double max_norm) {
  const double norm = grads.l2_norm();
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& v : grads.values()) v *= scale;
  }
  return norm;
}

void save_checkpoint(const ParamSet& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError("cannot write checkpoint " + path.string());
  const ModelConfig& c = params.config();
  out.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(out, kCheckpointVersion);
  for (int field : {c.depth, c.width, c.data_dim, c.num_classes, c.time_embed_dim,
                    c.cond_embed_dim}) {
    write_le<std::int32_t>(out, field);
  }
  write_le<std::uint64_t>(out, params.size());
  for (double v : params.values()) write_le<double>(out, v);
  if (!out) throw StoreError("failed writing checkpoint " + path.string());
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw StoreError("not a checkpoint file: " + path.string());
  }
  if (read_le<std::uint32_t>(in) != kCheckpointVersion) {
    throw StoreError("unsupported checkpoint version in " + path.string());
  }
  ModelConfig c;
  c.depth = read_le<std::int32_t>(in);
  c.width = read_le<std::int32_t>(in);
  c.data_dim = read_le<std::int32_t>(in);
  c.num_classes = read_le<std::int32_t>(in);
  c.time_embed_dim = read_le<std::int32_t>(in);
  c.cond_embed_dim = read_le<std::int32_t>(in);
  ParamSet params(c);
  if (read_le<std::uint64_t>(in) != params.size()) {
    throw StoreError("checkpoint scalar count disagrees with its config header");
  }
  for (double& v : params.values()) v = read_le<double>(in);
  return params;
}

}  // namespace ditscale::netcore
