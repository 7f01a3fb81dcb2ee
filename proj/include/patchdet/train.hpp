#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "patchdet/augment.hpp"
#include "patchdet/image.hpp"
#include "patchdet/model.hpp"
#include "patchdet/rng.hpp"

namespace patchdet {

/// Proxy-task flavors. The three cutout_* tasks and confetti/scar are the
/// ablation ladder; binary_union folds both cut-paste variants into one
/// augmented class; three_way keeps them separate.
enum class Task {
  binary_cutpaste,
  binary_scar,
  binary_union,
  three_way,
  cutout_grey,
  cutout_mean,
  cutout_color,
  confetti,
  scar,
};

enum class Level { image, patch };

std::string to_string(Task t);
Task task_from_string(const std::string& s);
std::string to_string(Level l);
Level level_from_string(const std::string& s);

/// Classifier outputs needed by a task (normal / augmented classes).
int task_class_count(Task t);

/// 256 parameter updates count as one epoch.
constexpr int kStepsPerEpoch = 256;

struct TrainConfig {
  Task task = Task::three_way;
  Level level = Level::image;
  int patch_size = 64;
  int steps = 65000;
  int batch_size = 64; // source images per update; 96 is the three_way default
  double lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 3e-5;
  std::uint64_t seed = 0;
  int log_every = 100;
  AugmentConfig augment;
};

/// Reference defaults for a task (three_way widens the batch to 96).
TrainConfig default_train_config(Task task);

struct FinetuneSchedule {
  int head_only_epochs = 10;
  double head_lr = 0.03;
  int full_epochs = 64;
  double full_lr = 0.0001;
};

/// One source image expanded into its proxy-task group: the normal view
/// plus the augmented view(s), with labels.
struct TrainingGroup {
  std::vector<ImageBuffer> images;
  std::vector<int> labels;
};

TrainingGroup make_training_pair(const ImageBuffer& x, Task task, Level level, int patch_size,
                                 Rng& rng, const AugmentConfig& aug = {});

/// Single cosine cycle: base_lr at step 0, 0 at total_steps, monotone
/// nonincreasing in between.
double cosine_lr(int step, int total_steps, double base_lr);

struct MetricsRow {
  int step = 0; // 1-based count of completed updates
  double lr = 0.0;
  double loss = 0.0;
  double proxy_acc = 0.0;
};

struct TrainHooks {
  /// Called after each logged step with the live model.
  std::function<void(const MetricsRow&, Model&)> on_log;
  /// Checked once per step; when set, a checkpoint is written and the
  /// loop returns early.
  const std::atomic<bool>* interrupt = nullptr;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;
  std::uint64_t final_param_hash = 0;
  int steps_run = 0;
  bool interrupted = false;
};

/// SGD-with-momentum proxy-task training. Deterministic given cfg.seed:
/// augmentation and data order run on named substreams of it. Writes the
/// checkpoint at the end (and on interrupt) and the metrics CSV when paths
/// are given. Aborts with NumericsError on a non-finite loss, leaving a
/// diagnostic checkpoint behind.
TrainResult train_loop(Model& model, const std::vector<ImageBuffer>& train_images,
                       const TrainConfig& cfg,
                       const std::filesystem::path& checkpoint_path = {},
                       const std::filesystem::path& metrics_csv = {},
                       const TrainHooks& hooks = {});

/// Two-stage transfer schedule: heads only at head_lr with the backbone
/// frozen, then everything except normalization layers at full_lr.
TrainResult finetune_loop(Model& model, const std::vector<ImageBuffer>& train_images,
                          const FinetuneSchedule& sched, const TrainConfig& cfg,
                          const std::filesystem::path& checkpoint_path = {},
                          const std::filesystem::path& metrics_csv = {});

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

} // namespace patchdet
