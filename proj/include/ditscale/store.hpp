#pragma once

// Sweep configuration documents and the on-disk run store.
//
// Layout under the store root:
//   runs/<sweep-id>/manifest.json
//   runs/<sweep-id>/sweep.json           the config that produced the runs
//   runs/<sweep-id>/<run-id>.json        one RunRecord, loss curves aside
//   runs/<sweep-id>/<run-id>.curves.csv  step, raw, ema, grad_norm
//   runs/<sweep-id>/<run-id>.ckpt        final parameters
//   runs/<sweep-id>/runs.csv             one summary row per run
//   runs/<sweep-id>/optima.json          fixture stores only
//   runs/<sweep-id>/reports/             report.json, optima.csv, plots

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ditscale/csv.hpp"
#include "ditscale/datagen.hpp"
#include "ditscale/evalkit.hpp"
#include "ditscale/scalelab.hpp"
#include "ditscale/trainer.hpp"

namespace ditscale::store {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

struct GridEntry {
  int depth = 1;
  int aspect_ratio = 16;
  bool operator==(const GridEntry&) const = default;
};

struct SweepConfig {
  std::string sweep_id = "sweep";
  std::vector<double> budgets{1e9, 3e9, 1e10, 3e10};
  std::vector<GridEntry> grid;
  trainer::TrainConfig base;  // budget, depth, width and seed are ignored
  datagen::DistributionSpec ood = datagen::default_ood();
  scalelab::PointMetric point_metric = scalelab::PointMetric::kFinalEmaLoss;
  evalkit::EvalConfig eval;  // sweep-time validation losses
  scalelab::ParabolaOptions fit;
  int workers = 1;
  std::uint64_t master_seed = 0;
  std::string output_dir;  // store root; empty defers to --store and DITSCALE_STORE
};

/// Budgets strictly increasing, grid non-empty, nested configs valid.
void validate(const SweepConfig& config);

std::vector<netcore::ModelConfig> model_grid(const SweepConfig& config);

/// Hex digest of everything that affects results (not workers or output_dir).
std::string fingerprint(const SweepConfig& config);

// Document conversions. Readers reject unknown keys and wrong types with
// ConfigError (config documents) or StoreError (store documents).
Json to_json(const SweepConfig& c);
SweepConfig sweep_config_from_json(const Json& j);
SweepConfig load_sweep_config(const std::filesystem::path& path);

Json to_json(const trainer::TrainConfig& c);
trainer::TrainConfig train_config_from_json(const Json& j);
Json to_json(const datagen::DistributionSpec& d);
datagen::DistributionSpec distribution_from_json(const Json& j);
Json to_json(const evalkit::EvalConfig& c);
evalkit::EvalConfig eval_config_from_json(const Json& j);
Json to_json(const evalkit::EvalMetrics& m);
evalkit::EvalMetrics eval_metrics_from_json(const Json& j);

/// Without loss curves or wall time; curves live in the curves file.
Json to_json(const trainer::RunRecord& r);
trainer::RunRecord run_record_from_json(const Json& j);

Json to_json(const scalelab::PowerLawFit& f);
scalelab::PowerLawFit power_law_from_json(const Json& j);
Json to_json(const scalelab::ScalingReport& r);
scalelab::ScalingReport report_from_json(const Json& j);

/// Writes to a sibling temporary file, then renames over the target.
void write_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);

/// Store root from an explicit flag, then the config's output_dir, then
/// DITSCALE_STORE, then ./store.
std::filesystem::path resolve_root(const std::optional<std::string>& flag,
                                   const std::string& config_dir = "");

// Exclusive advisory lock on a sweep directory, held for the object's
// lifetime. Throws StoreError when another writer holds it.
class SweepLock {
 public:
  explicit SweepLock(const std::filesystem::path& sweep_dir);
  ~SweepLock();
  SweepLock(const SweepLock&) = delete;
  SweepLock& operator=(const SweepLock&) = delete;

 private:
  int fd_ = -1;
};

struct ManifestEntry {
  std::string run_id;
  double budget = 0.0;
  int depth = 0;
  int width = 0;
  std::int64_t n_params = 0;
  std::string status;  // pending, complete, diverged
};

class RunStore {
 public:
  explicit RunStore(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path sweep_dir(const std::string& sweep_id) const;
  std::filesystem::path reports_dir(const std::string& sweep_id) const;
  std::vector<std::string> sweeps() const;

  /// The only sweep in the store when id is empty.
  std::string resolve_sweep(const std::optional<std::string>& id) const;

  bool has_run(const std::string& sweep_id, const std::string& run_id) const;
  /// with_curves = false leaves the loss curves empty.
  trainer::RunRecord load_run(const std::string& sweep_id, const std::string& run_id,
                              bool with_curves = true) const;
  netcore::ParamSet load_params(const std::string& sweep_id, const std::string& run_id) const;
  void save_run(const std::string& sweep_id, const trainer::RunRecord& record,
                const netcore::ParamSet& params) const;
  /// Rewrites the record document only (metrics appended by eval).
  void update_run(const std::string& sweep_id, const trainer::RunRecord& record) const;

  std::vector<ManifestEntry> manifest(const std::string& sweep_id) const;
  void write_manifest(const std::string& sweep_id, const std::string& fingerprint,
                      const std::vector<ManifestEntry>& entries) const;
  std::string manifest_fingerprint(const std::string& sweep_id) const;

  SweepConfig load_config(const std::string& sweep_id) const;
  /// Every run listed as complete or diverged, manifest order.
  std::vector<trainer::RunRecord> load_runs(const std::string& sweep_id,
                                            bool with_curves = false) const;
  void write_summary_csv(const std::string& sweep_id) const;

 private:
  std::filesystem::path root_;
};

struct SweepOutcome {
  scalelab::SweepResult result;
  std::filesystem::path sweep_dir;
};

/// Runs (or resumes) a sweep into the store. Completed runs are reused
/// unless force is set. A different config under the same sweep id is a
/// StoreError unless force is set.
SweepOutcome execute_sweep(const RunStore& store, const SweepConfig& config, bool force,
                           std::optional<int> stop_after = std::nullopt);

/// The evaluation sets a sweep uses, drawn from its master seed.
datagen::Dataset eval_set(const SweepConfig& config, bool ood);

/// Fits the sweep (or the fixture optima) and writes reports/report.json
/// and reports/optima.csv.
scalelab::ScalingReport fit_store(const RunStore& store, const std::string& sweep_id);

scalelab::ScalingReport load_report(const std::filesystem::path& path);

/// (C, N_opt, D_opt, L_opt) rows of accepted budgets, or of the optima
/// for fixture reports.
csv::Table optima_table(const scalelab::ScalingReport& report);

// Fixture stores generated from published power laws, no training.
struct LawFixture {
  double n_k, n_e, d_k, d_e, l_k, l_e;
  std::optional<std::pair<double, double>> fid;
};

LawFixture published_laws();
/// In-context and cross-attention exponents of the benchmark table; the
/// coefficients are borrowed from published_laws().
std::pair<LawFixture, LawFixture> benchmark_laws();
std::vector<double> published_budgets();

/// Writes runs/<sweep_id>/optima.json with exact law values at budgets.
void write_law_fixture(const RunStore& store, const std::string& sweep_id,
                       const LawFixture& laws, const std::vector<double>& budgets);

}  // namespace ditscale::store
