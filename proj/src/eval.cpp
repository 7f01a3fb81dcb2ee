#include "patchdet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "patchdet/errors.hpp"

namespace patchdet {

double roc_auc(const LabeledScores& ls) {
  const size_t n = ls.scores.size();
  if (ls.labels.size() != n) throw ArgumentError("roc_auc: scores/labels length mismatch");
  if (n == 0) throw MetricError("roc_auc: empty input");
  size_t n_pos = 0;
  for (int label : ls.labels) {
    if (label != 0 && label != 1) throw ArgumentError("roc_auc: labels must be 0/1");
    n_pos += label;
  }
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("roc_auc: needs both classes");
  for (double s : ls.scores)
    if (!std::isfinite(s)) throw ArgumentError("roc_auc: non-finite score");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return ls.scores[a] < ls.scores[b]; });

  // Midranks over ties; the positive rank sum gives the Mann-Whitney U.
  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && ls.scores[order[j]] == ls.scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k)
      if (ls.labels[order[k]] == 1) pos_rank_sum += midrank;
    i = j;
  }
  const double numerator =
      pos_rank_sum - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return numerator / (static_cast<double>(n_neg) * static_cast<double>(n_pos));
}

double pixel_auc(const std::vector<PixelScoreMap>& maps, const std::vector<PixelMask>& masks,
                 bool pooled) {
  if (maps.size() != masks.size()) throw ArgumentError("pixel_auc: maps/masks count mismatch");
  if (maps.empty()) throw MetricError("pixel_auc: empty input");
  for (size_t i = 0; i < maps.size(); ++i)
    if (maps[i].size != masks[i].height || maps[i].size != masks[i].width)
      throw ArgumentError("pixel_auc: map/mask shape mismatch at index " + std::to_string(i));

  if (pooled) {
    LabeledScores all;
    for (size_t i = 0; i < maps.size(); ++i) {
      all.scores.insert(all.scores.end(), maps[i].values.begin(), maps[i].values.end());
      for (auto v : masks[i].values) all.labels.push_back(v ? 1 : 0);
    }
    return roc_auc(all);
  }

  double acc = 0.0;
  int counted = 0;
  for (size_t i = 0; i < maps.size(); ++i) {
    size_t defect = masks[i].count_nonzero();
    if (defect == 0 || defect == masks[i].values.size()) continue; // single class
    LabeledScores ls;
    ls.scores.assign(maps[i].values.begin(), maps[i].values.end());
    for (auto v : masks[i].values) ls.labels.push_back(v ? 1 : 0);
    acc += roc_auc(ls);
    ++counted;
  }
  if (counted == 0) throw MetricError("pixel_auc: no image with both classes");
  return acc / counted;
}

TrainConfig apply_sweep_parameter(const TrainConfig& base, const std::string& name, double value) {
  TrainConfig cfg = base;
  if (name == "lr")
    cfg.lr = value;
  else if (name == "steps")
    cfg.steps = static_cast<int>(value);
  else if (name == "epochs")
    cfg.steps = static_cast<int>(value) * kStepsPerEpoch;
  else if (name == "batch_size")
    cfg.batch_size = static_cast<int>(value);
  else if (name == "momentum")
    cfg.momentum = value;
  else if (name == "weight_decay")
    cfg.weight_decay = value;
  else if (name == "patch_size")
    cfg.patch_size = static_cast<int>(value);
  else if (name == "jitter_intensity")
    cfg.augment.jitter_intensity = value;
  else if (name == "area_max")
    cfg.augment.area_max = value;
  else if (name == "log_every")
    cfg.log_every = static_cast<int>(value);
  else
    throw ArgumentError("unknown sweep parameter: " + name);
  return cfg;
}

} // namespace patchdet
