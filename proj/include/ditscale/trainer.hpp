#pragma once

// Budget-driven training: the step count follows from C = 6ND, labels are
// dropped for classifier-free guidance, and the final smoothed loss is the
// scaling metric.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ditscale/datagen.hpp"
#include "ditscale/evalkit.hpp"
#include "ditscale/formulations.hpp"
#include "ditscale/netcore.hpp"

namespace ditscale::trainer {

struct ConstantLr {
  double lr = 1e-4;
};

// Piecewise constant: peak for the first 80% of steps, mid for the next
// 10%, final for the last 10%.
struct DecayedLargeLr {
  double peak = 1e-4;
  double mid = 3.16e-5;
  double final = 1e-5;
};

using LrSchedule = std::variant<ConstantLr, DecayedLargeLr>;

// kNewest is the recurrence l = (1 - a) l + a v, where a weights the newest
// loss. kHistory swaps the roles: l = a l + (1 - a) v.
enum class EmaConvention { kNewest, kHistory };

struct TrainConfig {
  double budget_flops = 1e9;
  netcore::ModelConfig model;
  int batch_size = 256;
  LrSchedule lr_schedule = ConstantLr{};
  double label_drop_prob = 0.1;
  double ema_alpha = 0.9;
  EmaConvention ema_convention = EmaConvention::kNewest;
  double clip_norm = 1.0;
  netcore::AdamWConfig adamw;
  formulations::ScheduleSpec schedule = formulations::Rf{};
  formulations::TimestepSampler sampler = formulations::LogitNormalSampler{};
  datagen::DistributionSpec dataset = datagen::default_mixture();
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& config);

struct RunRecord {
  std::string run_id;
  TrainConfig config;
  std::int64_t n_params = 0;
  std::int64_t d_samples = 0;
  std::int64_t steps = 0;
  std::vector<double> raw_losses;
  std::vector<double> ema_losses;
  std::vector<double> grad_norms;  // before clipping
  double final_ema_loss = 0.0;
  bool diverged = false;
  double wall_time_seconds = 0.0;
  std::optional<evalkit::EvalMetrics> eval_in_domain;
  std::optional<evalkit::EvalMetrics> eval_ood;
};

struct StepPlan {
  std::int64_t steps = 0;
  std::int64_t d_samples = 0;
};

/// steps = floor(C / (6 N batch)), D = steps * batch. Throws ConfigError
/// naming the minimum budget when not even one step fits.
StepPlan derive_steps(double budget_flops, std::int64_t n_params, int batch_size);

double lr_at(std::int64_t step, std::int64_t total_steps, const LrSchedule& schedule);

/// (1 - alpha) * l_prev + alpha * v_new.
double ema_update(double l_prev, double v_new, double alpha);

/// Smoothed loss tracker initialised to the first raw value.
class EmaTracker {
 public:
  EmaTracker(double alpha, EmaConvention convention);
  double push(double raw);
  std::optional<double> value() const { return value_; }

 private:
  double newest_weight_;
  std::optional<double> value_;
};

/// Replays the tracker over stored raw losses.
std::vector<double> replay_ema(const std::vector<double>& raw, double alpha,
                               EmaConvention convention);

struct TrainResult {
  RunRecord record;
  netcore::ParamSet params;
};

/// Runs derive_steps() iterations. A non-finite loss stops the run and
/// marks the record diverged.
TrainResult train(const TrainConfig& config);

std::string to_string(EmaConvention c);

}  // namespace ditscale::trainer
