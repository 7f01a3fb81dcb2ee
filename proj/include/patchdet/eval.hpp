#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "patchdet/localize.hpp"
#include "patchdet/score.hpp"
#include "patchdet/train.hpp"

namespace patchdet {

struct LabeledScores {
  std::vector<double> scores;
  std::vector<int> labels; // 1 = anomalous
};

/// Rank-based ROC AUC with the midrank tie convention:
/// P(score_anom > score_norm) + 0.5 * P(tie). Requires both classes.
double roc_auc(const LabeledScores& ls);

/// Localization AUC over per-pixel labels. pooled=true concatenates all
/// pixels of all images; pooled=false averages per-image AUCs (images whose
/// mask is single-class are skipped there).
double pixel_auc(const std::vector<PixelScoreMap>& maps, const std::vector<PixelMask>& masks,
                 bool pooled = true);

// --- experiment driver ------------------------------------------------------

struct ScoringConfig {
  enum class Estimator { gde, kde };
  Estimator estimator = Estimator::gde;
  bool per_location = false;   // patch level only
  double kde_bandwidth = 0.0;  // 0 = median pairwise heuristic
  double eps_rel = 1e-3;
  int extract_patch = 32;      // dense extraction geometry (patch level)
  int extract_stride = 4;
  double upsample_sigma = 0.0; // 0 = extract_patch / 4
  bool pooled_pixel_auc = true;
};

struct ExperimentRun {
  std::uint64_t seed = 0;
  double image_auc = 0.0;
  double pixel_auc = std::numeric_limits<double>::quiet_NaN();
  double wall_time_s = 0.0;
};

struct ExperimentReport {
  std::string category;
  Task task = Task::three_way;
  std::vector<ExperimentRun> runs;
  double mean_image_auc = 0.0;
  double stderr_image_auc = 0.0; // sample std (n-1) / sqrt(n); 0 for one run
  double mean_pixel_auc = std::numeric_limits<double>::quiet_NaN();
  double stderr_pixel_auc = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> ensemble_image_auc;
};

/// Train n_seeds models (seeds cfg.seed, cfg.seed+1, ...), score the test
/// split, and aggregate image (and, at patch level, pixel) AUCs. With
/// ensemble=true adds the z-normalized mean-score ensemble row.
ExperimentReport run_experiment(const std::filesystem::path& data_root,
                                const std::string& category, const BackboneConfig& backbone,
                                const TrainConfig& cfg, const ScoringConfig& scoring, int n_seeds,
                                bool ensemble = false, int working_resolution = 0);

/// CSV schema: category,task,seed,image_auc,pixel_auc,wall_time_s with
/// mean / stderr / optional ensemble summary rows.
void write_report_csv(const std::filesystem::path& path, const ExperimentReport& report);

struct SweepSpec {
  std::string parameter; // a TrainConfig knob, e.g. "lr" or "jitter_intensity"
  std::vector<double> values;
  int repeats = 1; // seeds per value
};

struct SweepCell {
  double value = 0.0;
  ExperimentReport report;
};

struct SweepTable {
  std::string parameter;
  std::vector<SweepCell> cells;
};

/// Set a named hyperparameter on a config copy; throws ArgumentError for
/// unknown names. "log_every" is accepted and result-neutral.
TrainConfig apply_sweep_parameter(const TrainConfig& base, const std::string& name, double value);

SweepTable run_sweep(const SweepSpec& spec, const std::filesystem::path& data_root,
                     const std::string& category, const BackboneConfig& backbone,
                     const TrainConfig& base_cfg, const ScoringConfig& scoring,
                     int working_resolution = 0);

void write_sweep_csv(const std::filesystem::path& path, const SweepTable& table);

} // namespace patchdet
