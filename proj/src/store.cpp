#include "ditscale/store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "ditscale/error.hpp"

namespace ditscale::store {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kEvalStream = 0xE1D;
constexpr std::uint64_t kOodStream = 0xE0D;

[[noreturn]] void fail(bool config_doc, const std::string& msg) {
  if (config_doc) throw ConfigError(msg);
  throw StoreError(msg);
}

// Reads one JSON object, remembering which keys were consumed so that
// unknown keys can be rejected.
class Reader {
 public:
  Reader(const Json& j, std::string where, bool config_doc)
      : j_(j), where_(std::move(where)), config_(config_doc) {
    if (!j_.is_object()) fail(config_, where_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const Json& at(const char* key) {
    used_.insert(key);
    if (!j_.contains(key)) fail(config_, where_ + ": missing key '" + key + "'");
    return j_.at(key);
  }

  double number(const char* key) {
    const Json& v = at(key);
    if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (!v.is_number()) fail(config_, where_ + "." + key + ": expected a number");
    return v.get<double>();
  }
  double number(const char* key, double fallback) {
    used_.insert(key);
    return j_.contains(key) ? number(key) : fallback;
  }

  std::int64_t integer(const char* key) {
    const Json& v = at(key);
    if (!v.is_number_integer()) fail(config_, where_ + "." + key + ": expected an integer");
    return v.get<std::int64_t>();
  }
  std::int64_t integer(const char* key, std::int64_t fallback) {
    used_.insert(key);
    return j_.contains(key) ? integer(key) : fallback;
  }

  std::uint64_t unsigned_integer(const char* key, std::uint64_t fallback) {
    used_.insert(key);
    if (!j_.contains(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      fail(config_, where_ + "." + key + ": expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  bool boolean(const char* key) {
    const Json& v = at(key);
    if (!v.is_boolean()) fail(config_, where_ + "." + key + ": expected true or false");
    return v.get<bool>();
  }
  bool boolean(const char* key, bool fallback) {
    used_.insert(key);
    return j_.contains(key) ? boolean(key) : fallback;
  }

  std::string string(const char* key) {
    const Json& v = at(key);
    if (!v.is_string()) fail(config_, where_ + "." + key + ": expected a string");
    return v.get<std::string>();
  }
  std::string string(const char* key, const std::string& fallback) {
    used_.insert(key);
    return j_.contains(key) ? string(key) : fallback;
  }

  std::vector<double> numbers(const char* key) {
    const Json& v = at(key);
    if (!v.is_array()) fail(config_, where_ + "." + key + ": expected an array");
    std::vector<double> out;
    for (const auto& x : v) {
      if (x.is_null()) {
        out.push_back(std::numeric_limits<double>::quiet_NaN());
      } else if (x.is_number()) {
        out.push_back(x.get<double>());
      } else {
        fail(config_, where_ + "." + key + ": expected numbers");
      }
    }
    return out;
  }

  std::optional<Json> optional(const char* key) {
    used_.insert(key);
    if (!has(key)) return std::nullopt;
    return j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.contains(item.key())) {
        fail(config_, where_ + ": unknown key '" + item.key() + "'");
      }
    }
  }

  std::string child(const char* key) const { return where_ + "." + key; }
  bool config_doc() const { return config_; }

 private:
  const Json& j_;
  std::string where_;
  bool config_;
  std::set<std::string> used_;
};

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

void check_schema(Reader& r) {
  const std::int64_t v = r.integer("schema_version", kSchemaVersion);
  if (v != kSchemaVersion) {
    fail(r.config_doc(), "unsupported schema_version " + std::to_string(v) + " (expected " +
                             std::to_string(kSchemaVersion) + ")");
  }
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Json model_to_json(const netcore::ModelConfig& m) {
  return {{"depth", m.depth},
          {"width", m.width},
          {"data_dim", m.data_dim},
          {"num_classes", m.num_classes},
          {"time_embed_dim", m.time_embed_dim},
          {"cond_embed_dim", m.cond_embed_dim}};
}

netcore::ModelConfig model_from_json(const Json& j, const std::string& where, bool config_doc) {
  Reader r(j, where, config_doc);
  netcore::ModelConfig m;
  m.depth = int(r.integer("depth", m.depth));
  m.width = int(r.integer("width", m.width));
  m.data_dim = int(r.integer("data_dim", m.data_dim));
  m.num_classes = int(r.integer("num_classes", m.num_classes));
  m.time_embed_dim = int(r.integer("time_embed_dim", m.time_embed_dim));
  m.cond_embed_dim = int(r.integer("cond_embed_dim", m.cond_embed_dim));
  r.finish();
  return m;
}

Json schedule_to_json(const formulations::ScheduleSpec& s) {
  return std::visit(
      [](const auto& v) -> Json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, formulations::Ddpm>) {
          return {{"kind", "ddpm"}, {"sigma_0", v.sigma_0}, {"sigma_t", v.sigma_t},
                  {"t_steps", v.t_steps}};
        } else if constexpr (std::is_same_v<T, formulations::Ldm>) {
          return {{"kind", "ldm"}, {"sigma_0", v.sigma_0}, {"sigma_t", v.sigma_t},
                  {"t_steps", v.t_steps}};
        } else if constexpr (std::is_same_v<T, formulations::Vp>) {
          return {{"kind", "vp"}, {"sigma_const", v.sigma_const}};
        } else {
          return {{"kind", "rf"}};
        }
      },
      s);
}

formulations::ScheduleSpec schedule_from_json(const Json& j, const std::string& where, bool cfg) {
  if (j.is_string()) return schedule_from_json(Json{{"kind", j}}, where, cfg);
  Reader r(j, where, cfg);
  const std::string kind = r.string("kind");
  formulations::ScheduleSpec out;
  if (kind == "ddpm" || kind == "ldm") {
    auto fill = [&](auto v) {
      v.sigma_0 = r.number("sigma_0", v.sigma_0);
      v.sigma_t = r.number("sigma_t", v.sigma_t);
      v.t_steps = int(r.integer("t_steps", v.t_steps));
      return v;
    };
    if (kind == "ddpm") {
      out = fill(formulations::Ddpm{});
    } else {
      out = fill(formulations::Ldm{});
    }
  } else if (kind == "vp") {
    formulations::Vp v;
    v.sigma_const = r.number("sigma_const", v.sigma_const);
    out = v;
  } else if (kind == "rf") {
    out = formulations::Rf{};
  } else {
    fail(cfg, where + ".kind: unknown schedule '" + kind + "'");
  }
  r.finish();
  return out;
}

Json sampler_to_json(const formulations::TimestepSampler& s) {
  if (const auto* ln = std::get_if<formulations::LogitNormalSampler>(&s)) {
    return {{"kind", "logit_normal"}, {"m", ln->m}, {"s", ln->s}};
  }
  return {{"kind", "uniform"}};
}

formulations::TimestepSampler sampler_from_json(const Json& j, const std::string& where, bool cfg) {
  Reader r(j, where, cfg);
  const std::string kind = r.string("kind");
  formulations::TimestepSampler out;
  if (kind == "logit_normal") {
    formulations::LogitNormalSampler ln;
    ln.m = r.number("m", ln.m);
    ln.s = r.number("s", ln.s);
    out = ln;
  } else if (kind == "uniform") {
    out = formulations::UniformSampler{};
  } else {
    fail(cfg, where + ".kind: unknown sampler '" + kind + "'");
  }
  r.finish();
  return out;
}

Json lr_to_json(const trainer::LrSchedule& s) {
  if (const auto* c = std::get_if<trainer::ConstantLr>(&s)) {
    return {{"kind", "constant"}, {"lr", c->lr}};
  }
  const auto& d = std::get<trainer::DecayedLargeLr>(s);
  return {{"kind", "decayed_large"}, {"peak", d.peak}, {"mid", d.mid}, {"final", d.final}};
}

trainer::LrSchedule lr_from_json(const Json& j, const std::string& where, bool cfg) {
  Reader r(j, where, cfg);
  const std::string kind = r.string("kind");
  trainer::LrSchedule out;
  if (kind == "constant") {
    trainer::ConstantLr c;
    c.lr = r.number("lr", c.lr);
    out = c;
  } else if (kind == "decayed_large") {
    trainer::DecayedLargeLr d;
    d.peak = r.number("peak", d.peak);
    d.mid = r.number("mid", d.mid);
    d.final = r.number("final", d.final);
    out = d;
  } else {
    fail(cfg, where + ".kind: unknown learning-rate schedule '" + kind + "'");
  }
  r.finish();
  return out;
}

Json vec2(const Eigen::Vector2d& v) { return Json::array({v.x(), v.y()}); }

Eigen::Vector2d vec2_from(const Json& j, const std::string& where, bool cfg) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    fail(cfg, where + ": expected a pair of numbers");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

Json estimate_to_json(const std::optional<evalkit::Estimate>& e) {
  if (!e) return nullptr;
  return {{"mean", number_or_null(e->mean)}, {"std_error", number_or_null(e->std_error)}};
}

std::optional<evalkit::Estimate> estimate_from(Reader& parent, const char* key) {
  auto j = parent.optional(key);
  if (!j) return std::nullopt;
  Reader r(*j, parent.child(key), parent.config_doc());
  evalkit::Estimate e{r.number("mean"), r.number("std_error")};
  r.finish();
  return e;
}

Json fit_options_to_json(const scalelab::ParabolaOptions& o) {
  return {{"space", scalelab::to_string(o.space)},
          {"weighting", scalelab::to_string(o.weighting)},
          {"guard_decades", o.guard_decades}};
}

scalelab::ParabolaOptions fit_options_from_json(const Json& j, const std::string& where, bool cfg) {
  Reader r(j, where, cfg);
  scalelab::ParabolaOptions o;
  const std::string space = r.string("space", "loss");
  if (space == "loss") {
    o.space = scalelab::FitSpace::kLoss;
  } else if (space == "log_loss") {
    o.space = scalelab::FitSpace::kLogLoss;
  } else {
    fail(cfg, where + ".space: expected loss or log_loss");
  }
  const std::string weighting = r.string("weighting", "uniform");
  if (weighting == "uniform") {
    o.weighting = scalelab::Weighting::kUniform;
  } else if (weighting == "inverse_square") {
    o.weighting = scalelab::Weighting::kInverseSquare;
  } else {
    fail(cfg, where + ".weighting: expected uniform or inverse_square");
  }
  o.guard_decades = r.number("guard_decades", o.guard_decades);
  r.finish();
  return o;
}

scalelab::FitStatus status_from(const std::string& s) {
  using scalelab::FitStatus;
  for (FitStatus f : {FitStatus::kAccepted, FitStatus::kConcave, FitStatus::kOutsideGuard,
                      FitStatus::kTooFewPoints}) {
    if (scalelab::to_string(f) == s) return f;
  }
  throw StoreError("report: unknown parabola status '" + s + "'");
}

fs::path run_doc(const fs::path& dir, const std::string& id) { return dir / (id + ".json"); }
fs::path curves_file(const fs::path& dir, const std::string& id) {
  return dir / (id + ".curves.csv");
}
fs::path ckpt_file(const fs::path& dir, const std::string& id) { return dir / (id + ".ckpt"); }

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

std::string optional_cell(const std::optional<evalkit::EvalMetrics>& m,
                          std::optional<evalkit::Estimate> evalkit::EvalMetrics::*field) {
  if (!m || !((*m).*field)) return "";
  return csv::format_double(((*m).*field)->mean);
}

}  // namespace

void validate(const SweepConfig& c) {
  if (c.sweep_id.empty() || c.sweep_id.find_first_of("/\\") != std::string::npos ||
      c.sweep_id == "." || c.sweep_id == "..") {
    throw ConfigError("sweep config: sweep_id must be a plain directory name");
  }
  if (c.budgets.empty()) throw ConfigError("sweep config: budgets must be non-empty");
  for (std::size_t i = 0; i < c.budgets.size(); ++i) {
    if (!(c.budgets[i] > 0.0) || !std::isfinite(c.budgets[i])) {
      throw ConfigError("sweep config: budgets must be positive");
    }
    if (i > 0 && !(c.budgets[i] > c.budgets[i - 1])) {
      throw ConfigError("sweep config: budgets must be strictly increasing");
    }
  }
  if (c.grid.empty()) throw ConfigError("sweep config: model grid must be non-empty");
  if (c.workers < 1) throw ConfigError("sweep config: workers must be >= 1");
  if (c.fit.guard_decades < 0.0) throw ConfigError("sweep config: guard_decades must be >= 0");
  std::set<std::pair<int, int>> seen;
  for (const auto& g : c.grid) {
    if (g.depth < 1 || g.aspect_ratio < 1) {
      throw ConfigError("sweep config: grid entries need depth >= 1 and aspect_ratio >= 1");
    }
    if (!seen.insert({g.depth, g.aspect_ratio}).second) {
      throw ConfigError("sweep config: duplicate grid entry");
    }
  }
  for (const auto& m : model_grid(c)) {
    trainer::TrainConfig t = c.base;
    t.model = m;
    trainer::validate(t);
  }
  datagen::validate(c.ood);
  if (c.ood.num_classes() != c.base.model.num_classes) {
    throw ConfigError("sweep config: the OOD distribution has a different class count");
  }
  evalkit::validate(c.eval);
}

std::vector<netcore::ModelConfig> model_grid(const SweepConfig& c) {
  std::vector<netcore::ModelConfig> out;
  for (const auto& g : c.grid) out.push_back(netcore::family_member(g.depth, g.aspect_ratio, c.base.model));
  return out;
}

std::string fingerprint(const SweepConfig& c) {
  Json j = to_json(c);
  j.erase("workers");
  j.erase("output_dir");
  return hex64(fnv1a(j.dump()));
}

Json to_json(const datagen::DistributionSpec& d) {
  Json j;
  if (const auto* g = std::get_if<datagen::GaussianMixture>(&d.kind)) {
    j["kind"] = "gaussian_mixture";
    Json means = Json::array();
    for (const auto& m : g->means) means.push_back(vec2(m));
    j["means"] = means;
    j["std_dev"] = g->std_dev;
  } else {
    const auto& c = std::get<datagen::Checkerboard>(d.kind);
    j["kind"] = "checkerboard";
    j["grid"] = c.grid;
    j["cell_extent"] = c.cell_extent;
  }
  j["shift"] = vec2(d.shift);
  return j;
}

datagen::DistributionSpec distribution_from_json(const Json& j) {
  const bool cfg = true;
  Reader r(j, "distribution", cfg);
  datagen::DistributionSpec d;
  const std::string kind = r.string("kind");
  if (kind == "gaussian_mixture") {
    datagen::GaussianMixture g;
    g.std_dev = r.number("std_dev", g.std_dev);
    const Json& means = r.at("means");
    if (!means.is_array()) fail(cfg, "distribution.means: expected an array");
    for (const auto& m : means) g.means.push_back(vec2_from(m, "distribution.means", cfg));
    d.kind = g;
  } else if (kind == "checkerboard") {
    datagen::Checkerboard c;
    c.grid = int(r.integer("grid", c.grid));
    c.cell_extent = r.number("cell_extent", c.cell_extent);
    d.kind = c;
  } else {
    fail(cfg, "distribution.kind: unknown distribution '" + kind + "'");
  }
  if (auto s = r.optional("shift")) d.shift = vec2_from(*s, "distribution.shift", cfg);
  r.finish();
  datagen::validate(d);
  return d;
}

Json to_json(const trainer::TrainConfig& c) {
  return {{"budget_flops", c.budget_flops},
          {"model", model_to_json(c.model)},
          {"batch_size", c.batch_size},
          {"lr_schedule", lr_to_json(c.lr_schedule)},
          {"label_drop_prob", c.label_drop_prob},
          {"ema_alpha", c.ema_alpha},
          {"ema_convention", trainer::to_string(c.ema_convention)},
          {"clip_norm", c.clip_norm},
          {"adamw",
           {{"beta1", c.adamw.beta1},
            {"beta2", c.adamw.beta2},
            {"eps", c.adamw.eps},
            {"weight_decay", c.adamw.weight_decay}}},
          {"schedule", schedule_to_json(c.schedule)},
          {"timestep_sampler", sampler_to_json(c.sampler)},
          {"dataset", to_json(c.dataset)},
          {"seed", c.seed}};
}

trainer::TrainConfig train_config_from_json(const Json& j) {
  const bool cfg = true;
  Reader r(j, "train", cfg);
  trainer::TrainConfig c;
  c.budget_flops = r.number("budget_flops", c.budget_flops);
  if (auto m = r.optional("model")) c.model = model_from_json(*m, "train.model", cfg);
  c.batch_size = int(r.integer("batch_size", c.batch_size));
  if (auto l = r.optional("lr_schedule")) c.lr_schedule = lr_from_json(*l, "train.lr_schedule", cfg);
  c.label_drop_prob = r.number("label_drop_prob", c.label_drop_prob);
  c.ema_alpha = r.number("ema_alpha", c.ema_alpha);
  const std::string conv = r.string("ema_convention", "newest");
  if (conv == "newest") {
    c.ema_convention = trainer::EmaConvention::kNewest;
  } else if (conv == "history") {
    c.ema_convention = trainer::EmaConvention::kHistory;
  } else {
    fail(cfg, "train.ema_convention: expected newest or history");
  }
  c.clip_norm = r.number("clip_norm", c.clip_norm);
  if (auto a = r.optional("adamw")) {
    Reader ar(*a, "train.adamw", cfg);
    c.adamw.beta1 = ar.number("beta1", c.adamw.beta1);
    c.adamw.beta2 = ar.number("beta2", c.adamw.beta2);
    c.adamw.eps = ar.number("eps", c.adamw.eps);
    c.adamw.weight_decay = ar.number("weight_decay", c.adamw.weight_decay);
    ar.finish();
  }
  if (auto s = r.optional("schedule")) c.schedule = schedule_from_json(*s, "train.schedule", cfg);
  if (auto s = r.optional("timestep_sampler")) {
    c.sampler = sampler_from_json(*s, "train.timestep_sampler", cfg);
  }
  if (auto d = r.optional("dataset")) c.dataset = distribution_from_json(*d);
  c.seed = r.unsigned_integer("seed", c.seed);
  r.finish();
  return c;
}

Json to_json(const evalkit::EvalConfig& c) {
  return {{"n_points", c.n_points},
          {"timesteps_per_point", c.timesteps_per_point},
          {"nll_steps", c.nll_steps},
          {"nll_points", c.nll_points},
          {"sampling_steps", c.sampling_steps},
          {"cfg_scale", c.cfg_scale},
          {"vlb_clamp", c.vlb_clamp},
          {"escape_radius", c.escape_radius},
          {"seed", c.seed}};
}

evalkit::EvalConfig eval_config_from_json(const Json& j) {
  Reader r(j, "eval", true);
  evalkit::EvalConfig c;
  c.n_points = int(r.integer("n_points", c.n_points));
  c.timesteps_per_point = int(r.integer("timesteps_per_point", c.timesteps_per_point));
  c.nll_steps = int(r.integer("nll_steps", c.nll_steps));
  c.nll_points = int(r.integer("nll_points", c.nll_points));
  c.sampling_steps = int(r.integer("sampling_steps", c.sampling_steps));
  c.cfg_scale = r.number("cfg_scale", c.cfg_scale);
  c.vlb_clamp = r.number("vlb_clamp", c.vlb_clamp);
  c.escape_radius = r.number("escape_radius", c.escape_radius);
  c.seed = r.unsigned_integer("seed", c.seed);
  r.finish();
  evalkit::validate(c);
  return c;
}

Json to_json(const evalkit::EvalMetrics& m) {
  return {{"val_loss", estimate_to_json(m.val_loss)},
          {"offset_vlb", estimate_to_json(m.offset_vlb)},
          {"offset_nll", estimate_to_json(m.offset_nll)},
          {"frechet_distance", m.frechet_distance ? number_or_null(*m.frechet_distance) : Json()},
          {"frechet_ridge", m.frechet_ridge},
          {"vlb_clamp", m.vlb_clamp}};
}

evalkit::EvalMetrics eval_metrics_from_json(const Json& j) {
  Reader r(j, "metrics", false);
  evalkit::EvalMetrics m;
  m.val_loss = estimate_from(r, "val_loss");
  m.offset_vlb = estimate_from(r, "offset_vlb");
  m.offset_nll = estimate_from(r, "offset_nll");
  if (auto f = r.optional("frechet_distance")) m.frechet_distance = f->get<double>();
  m.frechet_ridge = r.boolean("frechet_ridge", false);
  m.vlb_clamp = r.number("vlb_clamp", 0.0);
  r.finish();
  return m;
}

Json to_json(const SweepConfig& c) {
  Json grid = Json::array();
  for (const auto& g : c.grid) grid.push_back({{"depth", g.depth}, {"aspect_ratio", g.aspect_ratio}});
  return {{"schema_version", kSchemaVersion},
          {"sweep_id", c.sweep_id},
          {"budgets", c.budgets},
          {"grid", grid},
          {"train", to_json(c.base)},
          {"ood", to_json(c.ood)},
          {"point_metric", scalelab::to_string(c.point_metric)},
          {"eval", to_json(c.eval)},
          {"fit", fit_options_to_json(c.fit)},
          {"workers", c.workers},
          {"master_seed", c.master_seed},
          {"output_dir", c.output_dir}};
}

SweepConfig sweep_config_from_json(const Json& j) {
  Reader r(j, "sweep", true);
  check_schema(r);
  SweepConfig c;
  c.sweep_id = r.string("sweep_id", c.sweep_id);
  if (r.has("budgets")) c.budgets = r.numbers("budgets");
  const Json& grid = r.at("grid");
  if (!grid.is_array()) throw ConfigError("sweep.grid: expected an array");
  for (const auto& g : grid) {
    Reader gr(g, "sweep.grid[]", true);
    GridEntry e;
    e.depth = int(gr.integer("depth"));
    e.aspect_ratio = int(gr.integer("aspect_ratio", 16));
    gr.finish();
    c.grid.push_back(e);
  }
  if (auto t = r.optional("train")) c.base = train_config_from_json(*t);
  if (auto o = r.optional("ood")) c.ood = distribution_from_json(*o);
  const std::string metric = r.string("point_metric", "final_ema_loss");
  if (metric == "final_ema_loss") {
    c.point_metric = scalelab::PointMetric::kFinalEmaLoss;
  } else if (metric == "val_loss") {
    c.point_metric = scalelab::PointMetric::kValLoss;
  } else {
    throw ConfigError("sweep.point_metric: expected final_ema_loss or val_loss");
  }
  if (auto e = r.optional("eval")) c.eval = eval_config_from_json(*e);
  if (auto f = r.optional("fit")) c.fit = fit_options_from_json(*f, "sweep.fit", true);
  c.workers = int(r.integer("workers", c.workers));
  c.master_seed = r.unsigned_integer("master_seed", c.master_seed);
  c.output_dir = r.string("output_dir", "");
  r.finish();
  validate(c);
  return c;
}

SweepConfig load_sweep_config(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError("sweep config " + path.string() + ": " + e.what());
  } catch (const StoreError& e) {
    throw ConfigError(e.what());
  }
  return sweep_config_from_json(j);
}

Json to_json(const trainer::RunRecord& r) {
  return {{"schema_version", kSchemaVersion},
          {"run_id", r.run_id},
          {"config", to_json(r.config)},
          {"n_params", r.n_params},
          {"d_samples", r.d_samples},
          {"steps", r.steps},
          {"final_ema_loss", number_or_null(r.final_ema_loss)},
          {"diverged", r.diverged},
          {"curves", r.run_id + ".curves.csv"},
          {"eval_in_domain", r.eval_in_domain ? to_json(*r.eval_in_domain) : Json()},
          {"eval_ood", r.eval_ood ? to_json(*r.eval_ood) : Json()}};
}

trainer::RunRecord run_record_from_json(const Json& j) {
  Reader r(j, "run", false);
  check_schema(r);
  trainer::RunRecord rec;
  rec.run_id = r.string("run_id");
  try {
    rec.config = train_config_from_json(r.at("config"));
  } catch (const ConfigError& e) {
    throw StoreError(std::string("run ") + rec.run_id + ": " + e.what());
  }
  rec.n_params = r.integer("n_params");
  rec.d_samples = r.integer("d_samples");
  rec.steps = r.integer("steps");
  rec.final_ema_loss = r.number("final_ema_loss");
  rec.diverged = r.boolean("diverged");
  r.string("curves", "");
  if (auto m = r.optional("eval_in_domain")) rec.eval_in_domain = eval_metrics_from_json(*m);
  if (auto m = r.optional("eval_ood")) rec.eval_ood = eval_metrics_from_json(*m);
  r.finish();
  return rec;
}

Json to_json(const scalelab::PowerLawFit& f) {
  return {{"k", f.k},
          {"e", f.e},
          {"r_squared", f.r_squared},
          {"exponent_std_error", f.exponent_std_error},
          {"c_min", f.c_min},
          {"c_max", f.c_max},
          {"n_points", f.n_points}};
}

scalelab::PowerLawFit power_law_from_json(const Json& j) {
  Reader r(j, "power_law", false);
  scalelab::PowerLawFit f;
  f.k = r.number("k");
  f.e = r.number("e");
  f.r_squared = r.number("r_squared");
  f.exponent_std_error = r.number("exponent_std_error", 0.0);
  f.c_min = r.number("c_min");
  f.c_max = r.number("c_max");
  f.n_points = int(r.integer("n_points"));
  r.finish();
  return f;
}

Json to_json(const scalelab::ScalingReport& rep) {
  Json optima = Json::array();
  for (const auto& o : rep.optima) {
    optima.push_back({{"C", o.C}, {"n_opt", o.n_opt}, {"d_opt", o.d_opt}, {"l_opt", o.l_opt}});
  }
  Json parabolas = Json::array();
  for (const auto& p : rep.parabolas) {
    parabolas.push_back({{"C", p.C},
                         {"status", scalelab::to_string(p.status)},
                         {"diagnostic", p.diagnostic},
                         {"a", number_or_null(p.a)},
                         {"b", number_or_null(p.b)},
                         {"c", number_or_null(p.c)},
                         {"x_star", number_or_null(p.x_star)},
                         {"y_star", number_or_null(p.y_star)},
                         {"n_opt", number_or_null(p.n_opt)},
                         {"d_opt", number_or_null(p.d_opt)},
                         {"l_opt", number_or_null(p.l_opt)},
                         {"residual_rms", number_or_null(p.residual_rms)},
                         {"n_points", p.n_points},
                         {"x_min", number_or_null(p.x_min)},
                         {"x_max", number_or_null(p.x_max)}});
  }
  Json fid_points = Json::array();
  for (const auto& [c, v] : rep.fid_points) fid_points.push_back({{"C", c}, {"distance", v}});
  const auto check = scalelab::exponent_sum_check(rep);
  return {{"schema_version", kSchemaVersion},
          {"fingerprint", rep.fingerprint},
          {"fit", fit_options_to_json(rep.options)},
          {"optima", optima},
          {"n_law", to_json(rep.n_law)},
          {"d_law", to_json(rep.d_law)},
          {"l_law", to_json(rep.l_law)},
          {"fid_law", rep.fid_law ? to_json(*rep.fid_law) : Json()},
          {"fid_points", fid_points},
          {"parabolas", parabolas},
          {"exponent_check",
           {{"sum", check.sum}, {"ratio", check.ratio}, {"consistent", check.consistent}}}};
}

scalelab::ScalingReport report_from_json(const Json& j) {
  Reader r(j, "report", false);
  check_schema(r);
  scalelab::ScalingReport rep;
  rep.fingerprint = r.string("fingerprint", "");
  if (auto f = r.optional("fit")) rep.options = fit_options_from_json(*f, "report.fit", false);
  for (const auto& o : r.at("optima")) {
    Reader orr(o, "report.optima[]", false);
    rep.optima.push_back({orr.number("C"), orr.number("n_opt"), orr.number("d_opt"), orr.number("l_opt")});
    orr.finish();
  }
  rep.n_law = power_law_from_json(r.at("n_law"));
  rep.d_law = power_law_from_json(r.at("d_law"));
  rep.l_law = power_law_from_json(r.at("l_law"));
  if (auto f = r.optional("fid_law")) rep.fid_law = power_law_from_json(*f);
  if (auto fp = r.optional("fid_points")) {
    for (const auto& p : *fp) {
      Reader pr(p, "report.fid_points[]", false);
      rep.fid_points.emplace_back(pr.number("C"), pr.number("distance"));
      pr.finish();
    }
  }
  if (auto ps = r.optional("parabolas")) {
    for (const auto& p : *ps) {
      Reader pr(p, "report.parabolas[]", false);
      scalelab::ParabolaFit f;
      f.C = pr.number("C");
      f.status = status_from(pr.string("status"));
      f.diagnostic = pr.string("diagnostic", "");
      f.a = pr.number("a");
      f.b = pr.number("b");
      f.c = pr.number("c");
      f.x_star = pr.number("x_star");
      f.y_star = pr.number("y_star");
      f.n_opt = pr.number("n_opt");
      f.d_opt = pr.number("d_opt");
      f.l_opt = pr.number("l_opt");
      f.residual_rms = pr.number("residual_rms");
      f.n_points = int(pr.integer("n_points"));
      f.x_min = pr.number("x_min");
      f.x_max = pr.number("x_max");
      pr.finish();
      rep.parabolas.push_back(std::move(f));
    }
  }
  r.optional("exponent_check");
  r.finish();
  return rep;
}

void write_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StoreError("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw StoreError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw StoreError("cannot rename into " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw StoreError(path.string() + ": " + e.what());
  }
}

fs::path resolve_root(const std::optional<std::string>& flag, const std::string& config_dir) {
  if (flag && !flag->empty()) return *flag;
  if (!config_dir.empty()) return config_dir;
  if (const char* env = std::getenv("DITSCALE_STORE"); env && *env) return env;
  return "store";
}

SweepLock::SweepLock(const fs::path& sweep_dir) {
  fs::create_directories(sweep_dir);
  const fs::path lock = sweep_dir / ".lock";
  fd_ = ::open(lock.c_str(), O_RDWR | O_CREAT, 0644);
  if (fd_ < 0) throw StoreError("cannot open lock file " + lock.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw StoreError("run store " + sweep_dir.string() + " is locked by another writer");
  }
}

SweepLock::~SweepLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

fs::path RunStore::sweep_dir(const std::string& id) const { return root_ / "runs" / id; }
fs::path RunStore::reports_dir(const std::string& id) const { return sweep_dir(id) / "reports"; }

std::vector<std::string> RunStore::sweeps() const {
  std::vector<std::string> out;
  const fs::path runs = root_ / "runs";
  if (!fs::is_directory(runs)) return out;
  for (const auto& e : fs::directory_iterator(runs)) {
    if (e.is_directory()) out.push_back(e.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string RunStore::resolve_sweep(const std::optional<std::string>& id) const {
  if (id && !id->empty()) {
    if (!fs::is_directory(sweep_dir(*id))) {
      throw StoreError("no sweep '" + *id + "' in store " + root_.string());
    }
    return *id;
  }
  const auto all = sweeps();
  if (all.size() != 1) {
    throw StoreError("store " + root_.string() + " holds " + std::to_string(all.size()) +
                     " sweeps; pass --sweep");
  }
  return all.front();
}

bool RunStore::has_run(const std::string& sweep_id, const std::string& run_id) const {
  const fs::path dir = sweep_dir(sweep_id);
  return fs::exists(run_doc(dir, run_id)) && fs::exists(curves_file(dir, run_id)) &&
         fs::exists(ckpt_file(dir, run_id));
}

trainer::RunRecord RunStore::load_run(const std::string& sweep_id, const std::string& run_id,
                                      bool with_curves) const {
  const fs::path dir = sweep_dir(sweep_id);
  if (!fs::exists(run_doc(dir, run_id))) {
    throw StoreError("no run '" + run_id + "' in sweep '" + sweep_id + "'");
  }
  trainer::RunRecord rec = run_record_from_json(read_json(run_doc(dir, run_id)));
  if (with_curves) {
    const csv::Table t = csv::read(curves_file(dir, run_id));
    const std::size_t raw = t.column("raw_loss"), ema = t.column("ema_loss"),
                      grad = t.column("grad_norm");
    for (const auto& row : t.rows) {
      rec.raw_losses.push_back(csv::parse_double(row.at(raw)));
      rec.ema_losses.push_back(csv::parse_double(row.at(ema)));
      rec.grad_norms.push_back(csv::parse_double(row.at(grad)));
    }
  }
  return rec;
}

netcore::ParamSet RunStore::load_params(const std::string& sweep_id, const std::string& run_id) const {
  const fs::path path = ckpt_file(sweep_dir(sweep_id), run_id);
  if (!fs::exists(path)) throw StoreError("no checkpoint for run '" + run_id + "'");
  return netcore::load_checkpoint(path);
}

void RunStore::save_run(const std::string& sweep_id, const trainer::RunRecord& record,
                        const netcore::ParamSet& params) const {
  const fs::path dir = sweep_dir(sweep_id);
  csv::Table t;
  t.header = {"step", "raw_loss", "ema_loss", "grad_norm"};
  t.rows.reserve(record.raw_losses.size());
  for (std::size_t i = 0; i < record.raw_losses.size(); ++i) {
    t.rows.push_back({std::to_string(i), csv::format_double(record.raw_losses[i]),
                      csv::format_double(record.ema_losses[i]),
                      csv::format_double(record.grad_norms[i])});
  }
  std::ostringstream curves;
  csv::write(curves, t);
  write_atomic(curves_file(dir, record.run_id), curves.str());
  const fs::path ckpt_tmp = ckpt_file(dir, record.run_id).string() + ".tmp";
  netcore::save_checkpoint(params, ckpt_tmp);
  fs::rename(ckpt_tmp, ckpt_file(dir, record.run_id));
  // The document goes last: its presence marks the run complete.
  write_atomic(run_doc(dir, record.run_id), dump(to_json(record)));
}

void RunStore::update_run(const std::string& sweep_id, const trainer::RunRecord& record) const {
  write_atomic(run_doc(sweep_dir(sweep_id), record.run_id), dump(to_json(record)));
}

std::vector<ManifestEntry> RunStore::manifest(const std::string& sweep_id) const {
  const fs::path path = sweep_dir(sweep_id) / "manifest.json";
  if (!fs::exists(path)) throw StoreError("sweep '" + sweep_id + "' has no manifest");
  const Json j = read_json(path);
  Reader r(j, "manifest", false);
  check_schema(r);
  r.string("sweep_id");
  r.string("fingerprint");
  std::vector<ManifestEntry> out;
  for (const auto& e : r.at("runs")) {
    Reader er(e, "manifest.runs[]", false);
    ManifestEntry m;
    m.run_id = er.string("run_id");
    m.budget = er.number("budget");
    m.depth = int(er.integer("depth"));
    m.width = int(er.integer("width"));
    m.n_params = er.integer("n_params");
    m.status = er.string("status");
    er.finish();
    out.push_back(std::move(m));
  }
  r.finish();
  return out;
}

std::string RunStore::manifest_fingerprint(const std::string& sweep_id) const {
  const fs::path path = sweep_dir(sweep_id) / "manifest.json";
  if (!fs::exists(path)) return "";
  const Json j = read_json(path);
  return j.value("fingerprint", "");
}

void RunStore::write_manifest(const std::string& sweep_id, const std::string& fp,
                              const std::vector<ManifestEntry>& entries) const {
  Json runs = Json::array();
  for (const auto& e : entries) {
    runs.push_back({{"run_id", e.run_id},
                    {"budget", e.budget},
                    {"depth", e.depth},
                    {"width", e.width},
                    {"n_params", e.n_params},
                    {"status", e.status}});
  }
  const Json j = {{"schema_version", kSchemaVersion},
                  {"sweep_id", sweep_id},
                  {"fingerprint", fp},
                  {"runs", runs}};
  write_atomic(sweep_dir(sweep_id) / "manifest.json", dump(j));
}

SweepConfig RunStore::load_config(const std::string& sweep_id) const {
  const fs::path path = sweep_dir(sweep_id) / "sweep.json";
  if (!fs::exists(path)) throw StoreError("sweep '" + sweep_id + "' has no sweep.json");
  try {
    return sweep_config_from_json(read_json(path));
  } catch (const ConfigError& e) {
    throw StoreError(path.string() + ": " + e.what());
  }
}

std::vector<trainer::RunRecord> RunStore::load_runs(const std::string& sweep_id,
                                                    bool with_curves) const {
  std::vector<trainer::RunRecord> out;
  for (const auto& e : manifest(sweep_id)) {
    if (e.status == "pending") continue;
    out.push_back(load_run(sweep_id, e.run_id, with_curves));
  }
  return out;
}

void RunStore::write_summary_csv(const std::string& sweep_id) const {
  using M = evalkit::EvalMetrics;
  csv::Table t;
  t.header = {"run_id", "budget", "depth", "width", "n_params", "d_samples", "steps",
              "final_ema_loss", "diverged", "val_loss", "val_loss_ood", "offset_vlb",
              "offset_vlb_ood", "offset_nll", "offset_nll_ood", "frechet", "frechet_ood"};
  auto frechet = [](const std::optional<M>& m) {
    return m && m->frechet_distance ? csv::format_double(*m->frechet_distance) : std::string();
  };
  for (const auto& r : load_runs(sweep_id)) {
    t.rows.push_back({r.run_id, csv::format_double(r.config.budget_flops),
                      std::to_string(r.config.model.depth), std::to_string(r.config.model.width),
                      std::to_string(r.n_params), std::to_string(r.d_samples),
                      std::to_string(r.steps),
                      std::isfinite(r.final_ema_loss) ? csv::format_double(r.final_ema_loss) : "",
                      r.diverged ? "true" : "false", optional_cell(r.eval_in_domain, &M::val_loss),
                      optional_cell(r.eval_ood, &M::val_loss),
                      optional_cell(r.eval_in_domain, &M::offset_vlb),
                      optional_cell(r.eval_ood, &M::offset_vlb),
                      optional_cell(r.eval_in_domain, &M::offset_nll),
                      optional_cell(r.eval_ood, &M::offset_nll), frechet(r.eval_in_domain),
                      frechet(r.eval_ood)});
  }
  std::ostringstream out;
  csv::write(out, t);
  write_atomic(sweep_dir(sweep_id) / "runs.csv", out.str());
}

datagen::Dataset eval_set(const SweepConfig& config, bool ood) {
  formulations::Rng rng(datagen::mix_seed(config.master_seed, ood ? kOodStream : kEvalStream));
  return datagen::sample(ood ? config.ood : config.base.dataset, std::size_t(config.eval.n_points),
                         rng);
}

SweepOutcome execute_sweep(const RunStore& store, const SweepConfig& config, bool force,
                           std::optional<int> stop_after) {
  validate(config);
  const std::string id = config.sweep_id;
  const fs::path dir = store.sweep_dir(id);
  SweepLock lock(dir);

  const std::string fp = fingerprint(config);
  const std::string previous = store.manifest_fingerprint(id);
  if (!previous.empty() && previous != fp && !force) {
    throw StoreError("sweep '" + id + "' already holds runs from a different config; use --force");
  }
  const bool reuse = !force;
  // Workers and the output directory do not change results, so the stored
  // copy leaves them out and resumes with other values match byte for byte.
  Json stored = to_json(config);
  stored.erase("workers");
  stored.erase("output_dir");
  write_atomic(dir / "sweep.json", dump(stored));

  const auto grid = model_grid(config);
  std::vector<ManifestEntry> entries;
  std::map<std::string, std::size_t> index;
  for (double C : config.budgets) {
    for (const auto& m : grid) {
      ManifestEntry e;
      e.run_id = scalelab::run_id(C, m);
      e.budget = C;
      e.depth = m.depth;
      e.width = m.width;
      e.n_params = netcore::param_count(m);
      e.status = "pending";
      if (reuse && store.has_run(id, e.run_id)) {
        e.status = store.load_run(id, e.run_id, false).diverged ? "diverged" : "complete";
      }
      index[e.run_id] = entries.size();
      entries.push_back(std::move(e));
    }
  }
  store.write_manifest(id, fp, entries);

  scalelab::SweepOptions opt;
  opt.workers = config.workers;
  opt.master_seed = config.master_seed;
  opt.point_metric = config.point_metric;
  opt.in_domain = eval_set(config, false);
  opt.ood = eval_set(config, true);
  opt.eval = config.eval;
  opt.stop_after = stop_after;
  if (reuse) {
    opt.lookup = [&](const std::string& run_id) -> std::optional<trainer::RunRecord> {
      if (!store.has_run(id, run_id)) return std::nullopt;
      return store.load_run(id, run_id, false);
    };
  }
  opt.persist = [&](const trainer::RunRecord& rec, const netcore::ParamSet& params) {
    store.save_run(id, rec, params);
    entries[index.at(rec.run_id)].status = rec.diverged ? "diverged" : "complete";
    store.write_manifest(id, fp, entries);
  };

  SweepOutcome out;
  out.sweep_dir = dir;
  out.result = scalelab::run_sweep(config.budgets, grid, config.base, opt);
  store.write_summary_csv(id);
  return out;
}

csv::Table optima_table(const scalelab::ScalingReport& report) {
  csv::Table t;
  t.header = {"C", "N_opt", "D_opt", "L_opt"};
  for (const auto& o : report.optima) {
    t.rows.push_back({csv::format_double(o.C), csv::format_double(o.n_opt),
                      csv::format_double(o.d_opt), csv::format_double(o.l_opt)});
  }
  return t;
}

scalelab::ScalingReport fit_store(const RunStore& store, const std::string& sweep_id) {
  const fs::path dir = store.sweep_dir(sweep_id);
  scalelab::ScalingReport report;
  if (fs::exists(dir / "optima.json")) {
    const Json j = read_json(dir / "optima.json");
    Reader r(j, "optima", false);
    check_schema(r);
    r.string("kind");
    const auto C = r.numbers("budgets");
    const auto n = r.numbers("n_opt");
    const auto d = r.numbers("d_opt");
    const auto l = r.numbers("l_opt");
    std::vector<double> fid;
    if (r.has("fid")) fid = r.numbers("fid");
    r.optional("laws");
    r.finish();
    report = scalelab::report_from_optima(C, n, d, l, fid, "fixture:" + sweep_id);
  } else {
    const SweepConfig config = store.load_config(sweep_id);
    const auto records = store.load_runs(sweep_id);
    std::vector<scalelab::IsoFlopPoint> points;
    for (const auto& rec : records) {
      if (auto p = scalelab::point_from_record(rec, config.point_metric)) points.push_back(*p);
    }
    report = scalelab::build_report(points, config.fit, {}, fingerprint(config));
    // Fréchet law from the grid model nearest each accepted optimum.
    std::vector<double> fc, fv;
    for (const auto& o : report.optima) {
      const trainer::RunRecord* best = nullptr;
      double gap = std::numeric_limits<double>::infinity();
      for (const auto& rec : records) {
        if (rec.config.budget_flops != o.C || rec.diverged) continue;
        const double g = std::abs(std::log10(double(rec.n_params)) - std::log10(o.n_opt));
        if (g < gap) {
          gap = g;
          best = &rec;
        }
      }
      if (best && best->eval_in_domain && best->eval_in_domain->frechet_distance &&
          *best->eval_in_domain->frechet_distance > 0.0) {
        fc.push_back(o.C);
        fv.push_back(*best->eval_in_domain->frechet_distance);
      }
    }
    if (fc.size() >= 3 && fc.size() == report.optima.size()) {
      for (std::size_t i = 0; i < fc.size(); ++i) report.fid_points.emplace_back(fc[i], fv[i]);
      report.fid_law = scalelab::fit_power_law(fc, fv);
    }
  }
  const fs::path reports = store.reports_dir(sweep_id);
  write_atomic(reports / "report.json", dump(to_json(report)));
  std::ostringstream out;
  csv::write(out, optima_table(report));
  write_atomic(reports / "optima.csv", out.str());
  return report;
}

scalelab::ScalingReport load_report(const fs::path& path) {
  if (!fs::exists(path)) throw StoreError("no report at " + path.string());
  return report_from_json(read_json(path));
}

LawFixture published_laws() {
  return {0.0009, 0.5681, 186.8535, 0.4319, 2.3943, -0.0273, std::pair{2.2566e6, -0.234}};
}

std::pair<LawFixture, LawFixture> benchmark_laws() {
  const LawFixture base = published_laws();
  LawFixture in_context = base;
  in_context.n_e = 0.56;
  in_context.d_e = 0.43;
  in_context.l_e = -0.0273;
  in_context.fid.reset();
  LawFixture cross = in_context;
  cross.n_e = 0.54;
  cross.d_e = 0.46;
  cross.l_e = -0.0385;
  return {in_context, cross};
}

std::vector<double> published_budgets() { return {1e17, 3e17, 6e17, 1e18, 3e18, 6e18}; }

void write_law_fixture(const RunStore& store, const std::string& sweep_id, const LawFixture& laws,
                       const std::vector<double>& budgets) {
  std::vector<double> n, d, l, fid;
  for (double C : budgets) {
    n.push_back(laws.n_k * std::pow(C, laws.n_e));
    d.push_back(laws.d_k * std::pow(C, laws.d_e));
    l.push_back(laws.l_k * std::pow(C, laws.l_e));
    if (laws.fid) fid.push_back(laws.fid->first * std::pow(C, laws.fid->second));
  }
  Json law_doc = {{"n_opt", {{"k", laws.n_k}, {"e", laws.n_e}}},
                  {"d_opt", {{"k", laws.d_k}, {"e", laws.d_e}}},
                  {"l_opt", {{"k", laws.l_k}, {"e", laws.l_e}}}};
  if (laws.fid) law_doc["fid"] = {{"k", laws.fid->first}, {"e", laws.fid->second}};
  Json j = {{"schema_version", kSchemaVersion},
            {"kind", "law_fixture"},
            {"budgets", budgets},
            {"n_opt", n},
            {"d_opt", d},
            {"l_opt", l}};
  if (laws.fid) j["fid"] = fid;
  j["laws"] = law_doc;
  write_atomic(store.sweep_dir(sweep_id) / "optima.json", dump(j));
}

}  // namespace ditscale::store
