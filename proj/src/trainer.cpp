#include "ditscale/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "ditscale/error.hpp"

namespace ditscale::trainer {

void validate(const TrainConfig& config) {
  if (!(config.budget_flops > 0.0)) throw ConfigError("train config: budget must be positive");
  if (config.batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (!(config.label_drop_prob >= 0.0 && config.label_drop_prob <= 1.0)) {
    throw ConfigError("train config: label_drop_prob must lie in [0, 1]");
  }
  if (!(config.ema_alpha > 0.0 && config.ema_alpha <= 1.0)) {
    throw ConfigError("train config: ema_alpha must lie in (0, 1]");
  }
  if (!(config.clip_norm > 0.0)) throw ConfigError("train config: clip_norm must be positive");
  netcore::validate(config.model);
  formulations::validate(config.schedule);
  formulations::validate(config.sampler);
  datagen::validate(config.dataset);
  if (config.dataset.num_classes() != config.model.num_classes) {
    throw ConfigError("train config: dataset has " + std::to_string(config.dataset.num_classes()) +
                      " classes but the model expects " +
                      std::to_string(config.model.num_classes));
  }
  if (config.model.data_dim != 2) throw ConfigError("train config: datasets are two-dimensional");
}

StepPlan derive_steps(double budget_flops, std::int64_t n_params, int batch_size) {
  if (n_params <= 0 || batch_size <= 0) {
    throw ConfigError("derive_steps: parameter count and batch size must be positive");
  }
  const double per_step = 6.0 * double(n_params) * double(batch_size);
  if (!(budget_flops >= per_step)) {
    std::ostringstream os;
    os << "budget " << budget_flops << " FLOPs cannot pay for one step; the minimum is 6*N*batch = "
       << per_step << " FLOPs";
    throw ConfigError(os.str());
  }
  StepPlan plan;
  plan.steps = static_cast<std::int64_t>(std::floor(budget_flops / per_step));
  // Guard floor() against a quotient that rounds up past the true value.
  while (6.0 * double(n_params) * double(plan.steps * batch_size) > budget_flops) --plan.steps;
  plan.d_samples = plan.steps * batch_size;
  return plan;
}

double lr_at(std::int64_t step, std::int64_t total_steps, const LrSchedule& schedule) {
  if (const auto* c = std::get_if<ConstantLr>(&schedule)) return c->lr;
  const auto& d = std::get<DecayedLargeLr>(schedule);
  const auto first = static_cast<std::int64_t>(std::floor(0.8 * double(total_steps)));
  const auto second = static_cast<std::int64_t>(std::floor(0.9 * double(total_steps)));
  if (step < first) return d.peak;
  if (step < second) return d.mid;
  return d.final;
}

double ema_update(double l_prev, double v_new, double alpha) {
  return (1.0 - alpha) * l_prev + alpha * v_new;
}

EmaTracker::EmaTracker(double alpha, EmaConvention convention)
    : newest_weight_(convention == EmaConvention::kNewest ? alpha : 1.0 - alpha) {}

double EmaTracker::push(double raw) {
  value_ = value_ ? ema_update(*value_, raw, newest_weight_) : raw;
  return *value_;
}

std::vector<double> replay_ema(const std::vector<double>& raw, double alpha,
                               EmaConvention convention) {
  EmaTracker tracker(alpha, convention);
  std::vector<double> out;
  out.reserve(raw.size());
  for (double v : raw) out.push_back(tracker.push(v));
  return out;
}

TrainResult train(const TrainConfig& config) {
  validate(config);
  const auto start = std::chrono::steady_clock::now();

  formulations::Rng init_rng(datagen::mix_seed(config.seed, 0));
  formulations::Rng data_rng(datagen::mix_seed(config.seed, 1));
  formulations::Rng noise_rng(datagen::mix_seed(config.seed, 2));

  TrainResult result{RunRecord{}, netcore::init(config.model, init_rng)};
  RunRecord& rec = result.record;
  rec.config = config;
  rec.n_params = netcore::param_count(config.model);
  const StepPlan plan = derive_steps(config.budget_flops, rec.n_params, config.batch_size);
  rec.steps = plan.steps;
  rec.d_samples = plan.d_samples;
  rec.raw_losses.reserve(plan.steps);
  rec.ema_losses.reserve(plan.steps);
  rec.grad_norms.reserve(plan.steps);

  netcore::ParamSet& params = result.params;
  netcore::OptimizerState opt(params, config.adamw);
  EmaTracker ema(config.ema_alpha, config.ema_convention);

  for (std::int64_t step = 0; step < plan.steps; ++step) {
    const datagen::Dataset batch = datagen::sample(config.dataset, config.batch_size, data_rng);
    netcore::LossAndGrads lg;
    try {
      lg = netcore::loss_and_grads(params, batch.x0, batch.labels, config.schedule, config.sampler,
                                   config.label_drop_prob, noise_rng);
    } catch (const NumericalError&) {
      rec.diverged = true;
      break;
    }
    const double norm = netcore::clip_grad_norm(lg.grads, config.clip_norm);
    if (!std::isfinite(norm)) {
      rec.diverged = true;
      break;
    }
    netcore::adamw_step(opt, params, lg.grads, lr_at(step, plan.steps, config.lr_schedule));
    rec.raw_losses.push_back(lg.loss);
    rec.ema_losses.push_back(ema.push(lg.loss));
    rec.grad_norms.push_back(norm);
  }
  if (rec.diverged) {
    // Keep the budget fields consistent with what was actually consumed.
    rec.steps = std::int64_t(rec.raw_losses.size());
    rec.d_samples = rec.steps * config.batch_size;
    rec.final_ema_loss = std::numeric_limits<double>::quiet_NaN();
  } else {
    rec.final_ema_loss = rec.ema_losses.empty() ? 0.0 : rec.ema_losses.back();
  }
  rec.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string to_string(EmaConvention c) {
  return c == EmaConvention::kNewest ? "newest" : "history";
}

}  // namespace ditscale::trainer
