#pragma once

// Dense time- and class-conditioned velocity network with hand-written
// reverse-mode and forward-mode differentiation, AdamW, and the parameter
// accounting used for C = 6ND budgets.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ditscale/formulations.hpp"

namespace ditscale::netcore {

using formulations::Rng;
using formulations::Vec;
using Mat = Eigen::MatrixXd;

struct ModelConfig {
  int depth = 1;  // number of hidden layers
  int width = 16;
  int data_dim = 2;
  int num_classes = 4;
  int time_embed_dim = 8;
  int cond_embed_dim = 4;

  int in_dim() const { return data_dim + time_embed_dim + cond_embed_dim; }
  double aspect_ratio() const { return double(width) / double(depth); }
  int null_class() const { return num_classes; }

  bool operator==(const ModelConfig&) const = default;
};

/// Throws ConfigError on non-positive sizes or an odd time embedding.
void validate(const ModelConfig& config);

/// Model of the family width = aspect_ratio * depth.
ModelConfig family_member(int depth, int aspect_ratio, const ModelConfig& base);

std::int64_t param_count(const ModelConfig& config);

/// Six FLOPs per parameter per training sample.
std::int64_t train_flops_per_sample(const ModelConfig& config);

/// All trainable scalars in one contiguous buffer. Layout, in order:
/// for each of the depth + 1 linear layers its weight matrix (out x in,
/// column-major) followed by its bias; then the class embedding table
/// ((num_classes + 1) x cond_embed_dim, column-major, last row = null class).
/// Gradients use the same type.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(const ModelConfig& config);  // zero-filled

  const ModelConfig& config() const { return config_; }
  int num_layers() const { return config_.depth + 1; }

  Eigen::Map<Mat> weight(int layer);
  Eigen::Map<const Mat> weight(int layer) const;
  Eigen::Map<Vec> bias(int layer);
  Eigen::Map<const Vec> bias(int layer) const;
  Eigen::Map<Mat> embedding();
  Eigen::Map<const Mat> embedding() const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  bool all_finite() const;
  double l2_norm() const;

  bool operator==(const ParamSet& other) const {
    return config_ == other.config_ && values_ == other.values_;
  }

 private:
  struct LayerSlot {
    std::size_t weight_offset;
    std::size_t bias_offset;
    int rows;
    int cols;
  };

  ModelConfig config_;
  std::vector<LayerSlot> layers_;
  std::size_t embedding_offset_ = 0;
  // Aligned so Eigen's vectorized loops peel identically on every run;
  // with a plain vector the last bits of reductions follow the heap address.
  std::vector<double, Eigen::aligned_allocator<double>> values_;
};

/// He-normal weights, zero biases, N(0, 0.02^2) embeddings.
ParamSet init(const ModelConfig& config, Rng& rng);

/// Sinusoidal features sin/cos(2^k * pi * t), k = 0 .. dim/2 - 1.
Vec time_features(double t, int dim);

double gelu(double x);
double gelu_derivative(double x);

/// Batched forward pass. x_t is data_dim x B; t and cond have length B;
/// cond == num_classes selects the null embedding.
Mat forward_batch(const ParamSet& params, const Mat& x_t, std::span<const double> t,
                  std::span<const int> cond);

/// Single-sample forward pass; std::nullopt selects the null embedding.
Vec forward(const ParamSet& params, const Vec& x_t, double t, std::optional<int> cond);

/// Jacobian of the output with respect to x_t, one forward-mode tangent
/// per input coordinate. Returns data_dim x data_dim.
Mat input_jacobian(const ParamSet& params, const Vec& x_t, double t, std::optional<int> cond);

/// A batch whose randomness (timesteps, noise, dropped labels) is already drawn.
struct FrozenBatch {
  Mat x_t;                  // data_dim x B
  Mat target;               // velocity target, data_dim x B
  std::vector<double> t;    // B
  std::vector<int> cond;    // B, num_classes = null
  std::size_t size() const { return t.size(); }
};

struct LossAndGrads {
  double loss = 0.0;  // mean over the batch of the summed squared error
  ParamSet grads;
};

/// Exact gradients of mean ||f(x_t, t, c) - target||^2.
LossAndGrads loss_and_grads(const ParamSet& params, const FrozenBatch& batch);

/// Draws t from the sampler, eps ~ N(0, I), drops labels with the given
/// probability, builds x_t and the velocity target from the schedule.
/// x0 is data_dim x B. Throws NumericalError on a non-finite loss.
FrozenBatch draw_batch(const ModelConfig& config, const Mat& x0, std::span<const int> labels,
                       const formulations::ScheduleSpec& schedule,
                       const formulations::TimestepSampler& sampler, double label_drop_prob,
                       Rng& rng);

LossAndGrads loss_and_grads(const ParamSet& params, const Mat& x0, std::span<const int> labels,
                            const formulations::ScheduleSpec& schedule,
                            const formulations::TimestepSampler& sampler, double label_drop_prob,
                            Rng& rng);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-15;
  double weight_decay = 0.01;
};

struct OptimizerState {
  AdamWConfig hyper;
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  OptimizerState() = default;
  OptimizerState(const ParamSet& params, AdamWConfig hyper);
};

/// Decoupled weight decay, then a bias-corrected Adam update.
void adamw_step(OptimizerState& state, ParamSet& params, const ParamSet& grads, double lr);

/// Scales grads in place when their global L2 norm exceeds max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ParamSet& grads, double max_norm = 1.0);

// Checkpoint: 8-byte magic "DITSCKPT", u32 format version, six i32 config
// fields (depth, width, data_dim, num_classes, time_embed_dim,
// cond_embed_dim), u64 scalar count, then the ParamSet buffer as f64.
// All fields little-endian.
void save_checkpoint(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_checkpoint(const std::filesystem::path& path);

}  // namespace ditscale::netcore
