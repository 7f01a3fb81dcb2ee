#include "patchdet/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "patchdet/checkpoint.hpp"
#include "patchdet/dataset.hpp"
#include "patchdet/errors.hpp"
#include "patchdet/optimizer.hpp"

namespace patchdet {

std::string to_string(Task t) {
  switch (t) {
    case Task::binary_cutpaste: return "binary_cutpaste";
    case Task::binary_scar: return "binary_scar";
    case Task::binary_union: return "binary_union";
    case Task::three_way: return "three_way";
    case Task::cutout_grey: return "cutout_grey";
    case Task::cutout_mean: return "cutout_mean";
    case Task::cutout_color: return "cutout_color";
    case Task::confetti: return "confetti";
    case Task::scar: return "scar";
  }
  throw ArgumentError("unknown task");
}

Task task_from_string(const std::string& s) {
  for (Task t : {Task::binary_cutpaste, Task::binary_scar, Task::binary_union, Task::three_way,
                 Task::cutout_grey, Task::cutout_mean, Task::cutout_color, Task::confetti,
                 Task::scar})
    if (to_string(t) == s) return t;
  throw ConfigError("unknown task: " + s);
}

std::string to_string(Level l) { return l == Level::image ? "image" : "patch"; }

Level level_from_string(const std::string& s) {
  if (s == "image") return Level::image;
  if (s == "patch") return Level::patch;
  throw ConfigError("unknown level: " + s);
}

int task_class_count(Task t) { return t == Task::three_way ? 3 : 2; }

TrainConfig default_train_config(Task task) {
  TrainConfig cfg;
  cfg.task = task;
  cfg.batch_size = task == Task::three_way ? 96 : 64;
  return cfg;
}

TrainingGroup make_training_pair(const ImageBuffer& x, Task task, Level level, int patch_size,
                                 Rng& rng, const AugmentConfig& aug) {
  TrainingGroup group;

  // Each branch gets an independent preprocessing draw; at patch level all
  // branches share one crop location so the pair stays aligned.
  int crop_top = 0, crop_left = 0;
  if (level == Level::patch) {
    if (patch_size > x.height || patch_size > x.width)
      throw ArgumentError("patch_size exceeds image side");
    crop_top = static_cast<int>(rng.uniform_int(0, x.height - patch_size));
    crop_left = static_cast<int>(rng.uniform_int(0, x.width - patch_size));
  }
  auto branch_view = [&](Rng& r) {
    ImageBuffer view = preprocess_augment(x, r, aug);
    if (level == Level::patch) view = crop_at(view, crop_top, crop_left, patch_size);
    return view;
  };

  group.images.push_back(branch_view(rng));
  group.labels.push_back(0);

  auto push = [&](ImageBuffer img, int label) {
    group.images.push_back(std::move(img));
    group.labels.push_back(label);
  };

  switch (task) {
    case Task::binary_cutpaste:
      push(sample_cutpaste(branch_view(rng), rng, aug).image, 1);
      break;
    case Task::binary_scar:
      push(sample_cutpaste_scar(branch_view(rng), rng, aug).image, 1);
      break;
    case Task::binary_union:
      push(sample_cutpaste(branch_view(rng), rng, aug).image, 1);
      push(sample_cutpaste_scar(branch_view(rng), rng, aug).image, 1);
      break;
    case Task::three_way:
      push(sample_cutpaste(branch_view(rng), rng, aug).image, 1);
      push(sample_cutpaste_scar(branch_view(rng), rng, aug).image, 2);
      break;
    case Task::cutout_grey:
      push(sample_cutout(branch_view(rng), CutoutFill::grey, rng, aug).image, 1);
      break;
    case Task::cutout_mean:
      push(sample_cutout(branch_view(rng), CutoutFill::mean_pixel, rng, aug).image, 1);
      break;
    case Task::cutout_color:
      push(sample_cutout(branch_view(rng), CutoutFill::random_color, rng, aug).image, 1);
      break;
    case Task::confetti:
      push(sample_confetti(branch_view(rng), rng, aug).image, 1);
      break;
    case Task::scar:
      push(sample_scar(branch_view(rng), rng, aug).image, 1);
      break;
  }
  return group;
}

double cosine_lr(int step, int total_steps, double base_lr) {
  if (total_steps <= 0) throw ArgumentError("total_steps must be positive");
  double t = std::clamp(static_cast<double>(step) / total_steps, 0.0, 1.0);
  return base_lr * (1.0 + std::cos(M_PI * t)) / 2.0;
}

namespace {

/// Seed-determined shuffled cycling over dataset indices.
class IndexSampler {
 public:
  IndexSampler(size_t n, Rng& rng) : rng_(rng), order_(n) {
    std::iota(order_.begin(), order_.end(), size_t{0});
    reshuffle();
  }
  size_t next() {
    if (pos_ == order_.size()) reshuffle();
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    for (size_t i = order_.size(); i > 1; --i)
      std::swap(order_[i - 1], order_[rng_.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
    pos_ = 0;
  }
  Rng& rng_;
  std::vector<size_t> order_;
  size_t pos_ = 0;
};

void format_row(std::string& out, const MetricsRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g\n", row.step, row.lr, row.loss,
                row.proxy_acc);
  out += buf;
}

} // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  std::string text = "step,lr,loss,proxy_acc\n";
  for (const auto& row : rows) format_row(text, row);
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write metrics csv: " + path.string());
  os << text;
}

TrainResult train_loop(Model& model, const std::vector<ImageBuffer>& train_images,
                       const TrainConfig& cfg, const std::filesystem::path& checkpoint_path,
                       const std::filesystem::path& metrics_csv, const TrainHooks& hooks) {
  if (train_images.empty()) throw ArgumentError("training set is empty");
  if (model.n_classes() != task_class_count(cfg.task))
    throw ArgumentError("model class count does not match task");
  if (cfg.batch_size <= 0) throw ArgumentError("batch_size must be positive");

  Rng aug_rng = Rng::from_root(cfg.seed, "augment");
  Rng order_rng = Rng::from_root(cfg.seed, "data-order");
  IndexSampler sampler(train_images.size(), order_rng);
  SgdMomentum opt(model.parameters(), cfg.momentum, cfg.weight_decay);

  TrainResult result;
  auto save = [&](const std::filesystem::path& path, int step) {
    if (!path.empty()) save_checkpoint(path, model, static_cast<std::uint64_t>(step),
                                       aug_rng.state());
  };

  std::vector<ImageBuffer> batch;
  std::vector<int> labels;
  for (int step = 0; step < cfg.steps; ++step) {
    if (hooks.interrupt && hooks.interrupt->load()) {
      result.interrupted = true;
      save(checkpoint_path, step);
      break;
    }
    batch.clear();
    labels.clear();
    for (int b = 0; b < cfg.batch_size; ++b) {
      TrainingGroup group = make_training_pair(train_images[sampler.next()], cfg.task, cfg.level,
                                               cfg.patch_size, aug_rng, cfg.augment);
      for (size_t i = 0; i < group.images.size(); ++i) {
        batch.push_back(std::move(group.images[i]));
        labels.push_back(group.labels[i]);
      }
    }

    nn::Tensor<float> input = Model::to_tensor(batch);
    nn::Tensor<float> logits = model.forward(input, true);
    nn::Tensor<float> dlogits;
    std::vector<int> preds;
    float loss = nn::softmax_cross_entropy(logits, labels, &dlogits, &preds);
    if (!std::isfinite(loss)) {
      if (!checkpoint_path.empty())
        save(std::filesystem::path(checkpoint_path.string() + ".diagnostic"), step);
      throw NumericsError("non-finite loss at step " + std::to_string(step));
    }
    model.zero_grad();
    model.backward(dlogits);
    opt.step(cosine_lr(step, cfg.steps, cfg.lr));
    result.steps_run = step + 1;

    bool last = step + 1 == cfg.steps;
    if ((step + 1) % cfg.log_every == 0 || last) {
      int correct = 0;
      for (size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i];
      MetricsRow row{step + 1, cosine_lr(step, cfg.steps, cfg.lr), static_cast<double>(loss),
                     static_cast<double>(correct) / static_cast<double>(preds.size())};
      result.metrics.push_back(row);
      if (hooks.on_log) hooks.on_log(row, model);
    }
  }

  if (!result.interrupted) save(checkpoint_path, result.steps_run);
  if (!metrics_csv.empty()) write_metrics_csv(metrics_csv, result.metrics);
  result.final_param_hash = hash_parameters(model);
  return result;
}

TrainResult finetune_loop(Model& model, const std::vector<ImageBuffer>& train_images,
                          const FinetuneSchedule& sched, const TrainConfig& cfg,
                          const std::filesystem::path& checkpoint_path,
                          const std::filesystem::path& metrics_csv) {
  // Stage 1: heads only, backbone (including its norm statistics) frozen.
  TrainConfig stage1 = cfg;
  stage1.steps = sched.head_only_epochs * kStepsPerEpoch;
  stage1.lr = sched.head_lr;
  stage1.seed = cfg.seed ^ 0x9e3779b97f4a7c15ull;
  model.freeze_backbone(true);
  TrainResult r1 = train_loop(model, train_images, stage1, {}, {});

  // Stage 2: everything except normalization layers.
  TrainConfig stage2 = cfg;
  stage2.steps = sched.full_epochs * kStepsPerEpoch;
  stage2.lr = sched.full_lr;
  stage2.seed = cfg.seed ^ 0xc2b2ae3d27d4eb4full;
  model.freeze_backbone(false);
  model.freeze_norm_layers(true);
  TrainResult r2 = train_loop(model, train_images, stage2, checkpoint_path, {});

  TrainResult combined;
  combined.metrics = std::move(r1.metrics);
  int offset = stage1.steps;
  for (auto row : r2.metrics) {
    row.step += offset;
    combined.metrics.push_back(row);
  }
  combined.steps_run = r1.steps_run + r2.steps_run;
  combined.final_param_hash = r2.final_param_hash;
  if (!metrics_csv.empty()) write_metrics_csv(metrics_csv, combined.metrics);
  return combined;
}

} // namespace patchdet
