#pragma once

// Experiment orchestration: dataset provisioning, the protocol guard, two-stage
// training with model selection, adaptation settings, and ablation grids.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "lgdg/config.hpp"
#include "lgdg/dataset_io.hpp"
#include "lgdg/metrics.hpp"

namespace lgdg {

// ---------------------------------------------------------------------------
// Datasets

// Generates (or reads from cfg.data.dir) each domain's dataset once and shares
// it read-only across runs.
class DatasetCache {
 public:
  std::shared_ptr<const Dataset> get(const DomainConfig& domain, const DataConfig& data);

 private:
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const Dataset>> cache_;
};

Dataset make_dataset(const DomainConfig& domain, const DataConfig& data);
// Writes <dir>/<source.name> and <dir>/<target.name>.
void generate_datasets(const ExperimentConfig& cfg, const std::string& dir);

// ---------------------------------------------------------------------------
// Protocol guard

enum class Role { Source, Target };
enum class Split { Train, Val, Test };
std::string to_string(Role r);
std::string to_string(Split s);

// Mediates every frame access of a run. Under domain generalization, any read
// of target-domain frames before begin_evaluation() throws ProtocolViolation.
class DataAccess {
 public:
  DataAccess(Setting setting, const Dataset& source, const Dataset& target);

  std::vector<const Scene*> frames(Role role, Split split);
  void begin_evaluation() { evaluating_ = true; }
  bool evaluating() const { return evaluating_; }
  const std::vector<std::string>& log() const { return log_; }
  const Dataset& dataset(Role role) const { return role == Role::Source ? source_ : target_; }

 private:
  Setting setting_;
  const Dataset& source_;
  const Dataset& target_;
  bool evaluating_ = false;
  std::vector<std::string> log_;
};

// ---------------------------------------------------------------------------
// Runs

struct RunRecord {
  std::string fingerprint;
  std::uint64_t seed = 0;
  std::string name;
  std::string setting;
  std::string variant;
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
  std::vector<double> val_history;  // selection score per epoch, index 0 = init
  int best_epoch = 0;
  MapResult val;
  MapResult test;
  double wall_time_s = 0.0;
  std::vector<std::string> access_log;
};

struct TrainOptions {
  // Where checkpoints of the selected model go (skipped when empty).
  std::string checkpoint_dir;
  // Called after every optimizer step with (epoch, step, loss).
  std::function<void(int, long, double)> on_step;
};

// Stage one (learned detector, when configured) then stage two classifier
// training with per-epoch validation and best-epoch selection. Deterministic
// in (config, seed).
RunRecord train(const ExperimentConfig& cfg, std::uint64_t seed, DatasetCache& cache,
                const TrainOptions& options = {});

struct SettingResult {
  std::vector<RunRecord> records;
  ResultAggregate test_map;
};

// Runs every seed of `cfg` (in parallel up to `threads`).
SettingResult run_setting(const ExperimentConfig& cfg, DatasetCache& cache, unsigned threads = 1);

// Runs arbitrary (config, seed) cells in parallel; results in input order.
std::vector<RunRecord> run_cells(const std::vector<std::pair<ExperimentConfig, std::uint64_t>>& cells,
                                 DatasetCache& cache, unsigned threads);

// LGDG_THREADS, defaulting to the hardware concurrency (at least 1).
unsigned thread_budget();

// ---------------------------------------------------------------------------
// Ablation grids

enum class GridHead { Cvs, Recon };

struct GridSpec {
  std::string name;
  GridHead head = GridHead::Cvs;
  std::vector<CategorySet> kept;  // categories left intact per row
};

// "✓✓✗"-style label in visual, semantic, backbone order.
std::string row_label(CategorySet kept);

struct AblationRow {
  CategorySet kept;
  std::string label;
  SettingResult result;
};

struct AblationReport {
  GridSpec spec;
  std::vector<AblationRow> rows;
};

// Row configs: base with the head's mask set to the complement of `kept`.
std::vector<ExperimentConfig> grid_configs(const ExperimentConfig& base, const GridSpec& spec);
AblationReport run_ablation_grid(const ExperimentConfig& base, const GridSpec& spec,
                                 DatasetCache& cache, unsigned threads = 1);

// Six-row CVS-head grid and five-row reconstruction grid.
GridSpec cvs_head_grid();
GridSpec recon_grid();
// Plain latent-graph model under domain generalization.
ExperimentConfig ablation_base();

// Six models × three settings in one transfer direction; image-only has no
// partially-supervised cell.
std::vector<ExperimentConfig> model_comparison_configs(const ExperimentConfig& base);

// Learned detector trained on the source train split's annotated frames,
// evaluated per class on the source and target test splits.
struct DetectorBreakdown {
  DetectorEval source;
  DetectorEval target;
};
DetectorBreakdown detector_breakdown(const ExperimentConfig& cfg, std::uint64_t seed,
                                     DatasetCache& cache);

}  // namespace lgdg
