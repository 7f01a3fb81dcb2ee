#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "patchdet/checkpoint.hpp"
#include "patchdet/dataset.hpp"
#include "patchdet/errors.hpp"
#include "patchdet/eval.hpp"

namespace patchdet {

namespace {

struct LoadedCategory {
  std::vector<ImageBuffer> train_images;
  std::vector<ImageBuffer> test_images;
  std::vector<int> test_labels; // 1 = defective
  std::vector<PixelMask> test_masks;
};

LoadedCategory load_category(const std::filesystem::path& root, const std::string& category,
                             int resolution) {
  DatasetLayout layout = scan_layout(root, category);
  LoadedCategory out;
  for (const auto* entry : layout.train_entries())
    out.train_images.push_back(load_image(entry->image_path, resolution));
  for (const auto* entry : layout.test_entries()) {
    out.test_images.push_back(load_image(entry->image_path, resolution));
    bool defective = entry->defect_type != "good";
    out.test_labels.push_back(defective ? 1 : 0);
    if (entry->mask_path)
      out.test_masks.push_back(load_entry_mask(*entry, resolution));
    else
      out.test_masks.push_back(PixelMask(resolution, resolution)); // all-normal label map
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = mean_of(v);
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size() - 1);
  return std::sqrt(var) / std::sqrt(static_cast<double>(v.size()));
}

} // namespace

ExperimentReport run_experiment(const std::filesystem::path& data_root,
                                const std::string& category, const BackboneConfig& backbone,
                                const TrainConfig& cfg, const ScoringConfig& scoring, int n_seeds,
                                bool ensemble, int working_resolution) {
  if (n_seeds < 1) throw ArgumentError("run_experiment: n_seeds must be >= 1");
  const int resolution = working_resolution > 0 ? working_resolution : backbone.input_size;
  LoadedCategory data = load_category(data_root, category, resolution);

  ExperimentReport report;
  report.category = category;
  report.task = cfg.task;

  std::vector<std::vector<AnomalyScore>> per_model_image_scores;
  std::vector<double> image_aucs, pixel_aucs;

  for (int s = 0; s < n_seeds; ++s) {
    auto t0 = std::chrono::steady_clock::now();
    TrainConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + static_cast<std::uint64_t>(s);
    Model model = build_model<float>(backbone, task_class_count(cfg.task), run_cfg.seed);
    train_loop(model, data.train_images, run_cfg);

    ExperimentRun run;
    run.seed = run_cfg.seed;

    if (cfg.level == Level::image) {
      EmbeddingBatch train_emb = model.embed_images(data.train_images);
      GdeModel gde;
      KdeModel kde;
      if (scoring.estimator == ScoringConfig::Estimator::gde)
        gde = fit_gde(train_emb, scoring.eps_rel);
      else
        kde = fit_kde(train_emb, scoring.kde_bandwidth);

      EmbeddingBatch test_emb = model.embed_images(data.test_images);
      std::vector<AnomalyScore> scores;
      if (scoring.estimator == ScoringConfig::Estimator::gde) {
        scores = score_gde(gde, test_emb);
      } else {
        Eigen::MatrixXd m = to_matrix(test_emb);
        for (Eigen::Index i = 0; i < m.rows(); ++i)
          scores.push_back(score_kde(kde, m.row(i).transpose()));
      }
      run.image_auc = roc_auc({scores, data.test_labels});
      per_model_image_scores.push_back(std::move(scores));
    } else {
      // Patch pipeline: pooled (or per-location) GDE over dense train
      // embeddings, then max-pooled detection plus upsampled localization.
      const int patch = scoring.extract_patch, stride = scoring.extract_stride;
      std::vector<EmbeddingGrid> train_grids;
      train_grids.reserve(data.train_images.size());
      for (const auto& img : data.train_images)
        train_grids.push_back(dense_extract(model, img, patch, stride));

      const int g = train_grids.front().grid, d = train_grids.front().d;
      GdeModel pooled_gde;
      std::vector<GdeModel> location_gdes;
      if (scoring.per_location) {
        std::vector<Eigen::MatrixXd> per_loc(
            static_cast<size_t>(g) * g,
            Eigen::MatrixXd(static_cast<Eigen::Index>(train_grids.size()), d));
        for (size_t t = 0; t < train_grids.size(); ++t)
          for (int i = 0; i < g; ++i)
            for (int j = 0; j < g; ++j)
              for (int k = 0; k < d; ++k)
                per_loc[static_cast<size_t>(i) * g + j](static_cast<Eigen::Index>(t), k) =
                    train_grids[t].cell(i, j)[k];
        location_gdes = fit_per_location_gde(per_loc, scoring.eps_rel);
      } else {
        Eigen::MatrixXd all(static_cast<Eigen::Index>(train_grids.size()) * g * g, d);
        Eigen::Index row = 0;
        for (const auto& grid : train_grids)
          for (int i = 0; i < g; ++i)
            for (int j = 0; j < g; ++j, ++row)
              for (int k = 0; k < d; ++k) all(row, k) = grid.cell(i, j)[k];
        pooled_gde = fit_gde(all, scoring.eps_rel);
      }

      const double sigma = scoring.upsample_sigma > 0.0 ? scoring.upsample_sigma : patch / 4.0;
      std::vector<AnomalyScore> scores;
      std::vector<PixelScoreMap> maps;
      for (const auto& img : data.test_images) {
        EmbeddingGrid grid = dense_extract(model, img, patch, stride);
        ScoreMap map = scoring.per_location ? score_grid(grid, location_gdes)
                                            : score_grid(grid, pooled_gde);
        scores.push_back(image_score_from_map(map));
        maps.push_back(gaussian_upsample(map, sigma));
      }
      run.image_auc = roc_auc({scores, data.test_labels});
      run.pixel_auc = pixel_auc(maps, data.test_masks, scoring.pooled_pixel_auc);
      pixel_aucs.push_back(run.pixel_auc);
      per_model_image_scores.push_back(std::move(scores));
    }

    run.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    image_aucs.push_back(run.image_auc);
    report.runs.push_back(run);
  }

  report.mean_image_auc = mean_of(image_aucs);
  report.stderr_image_auc = stderr_of(image_aucs);
  if (!pixel_aucs.empty()) {
    report.mean_pixel_auc = mean_of(pixel_aucs);
    report.stderr_pixel_auc = stderr_of(pixel_aucs);
  }
  if (ensemble) {
    std::vector<AnomalyScore> combined = ensemble_scores(per_model_image_scores);
    report.ensemble_image_auc = roc_auc({combined, data.test_labels});
  }
  return report;
}

void write_report_csv(const std::filesystem::path& path, const ExperimentReport& report) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write report csv: " + path.string());
  os << "category,task,seed,image_auc,pixel_auc,wall_time_s\n";
  char buf[256];
  for (const auto& run : report.runs) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%llu,%.6f,%.6f,%.3f\n", report.category.c_str(),
                  to_string(report.task).c_str(), static_cast<unsigned long long>(run.seed),
                  run.image_auc, run.pixel_auc, run.wall_time_s);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "%s,%s,mean,%.6f,%.6f,\n", report.category.c_str(),
                to_string(report.task).c_str(), report.mean_image_auc, report.mean_pixel_auc);
  os << buf;
  std::snprintf(buf, sizeof(buf), "%s,%s,stderr,%.6f,%.6f,\n", report.category.c_str(),
                to_string(report.task).c_str(), report.stderr_image_auc,
                report.stderr_pixel_auc);
  os << buf;
  if (report.ensemble_image_auc) {
    std::snprintf(buf, sizeof(buf), "%s,%s,ensemble,%.6f,,\n", report.category.c_str(),
                  to_string(report.task).c_str(), *report.ensemble_image_auc);
    os << buf;
  }
}

SweepTable run_sweep(const SweepSpec& spec, const std::filesystem::path& data_root,
                     const std::string& category, const BackboneConfig& backbone,
                     const TrainConfig& base_cfg, const ScoringConfig& scoring,
                     int working_resolution) {
  if (spec.values.empty()) throw ArgumentError("run_sweep: empty value list");
  if (spec.repeats < 1) throw ArgumentError("run_sweep: repeats must be >= 1");
  SweepTable table;
  table.parameter = spec.parameter;
  for (double value : spec.values) {
    TrainConfig cfg = apply_sweep_parameter(base_cfg, spec.parameter, value);
    SweepCell cell;
    cell.value = value;
    cell.report = run_experiment(data_root, category, backbone, cfg, scoring, spec.repeats,
                                 false, working_resolution);
    table.cells.push_back(std::move(cell));
  }
  return table;
}

void write_sweep_csv(const std::filesystem::path& path, const SweepTable& table) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write sweep csv: " + path.string());
  os << "parameter,value,seed,image_auc,pixel_auc\n";
  char buf[256];
  for (const auto& cell : table.cells) {
    for (const auto& run : cell.report.runs) {
      std::snprintf(buf, sizeof(buf), "%s,%.10g,%llu,%.6f,%.6f\n", table.parameter.c_str(),
                    cell.value, static_cast<unsigned long long>(run.seed), run.image_auc,
                    run.pixel_auc);
      os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%s,%.10g,mean+-stderr,%.6f,%.6f\n", table.parameter.c_str(),
                  cell.value, cell.report.mean_image_auc, cell.report.stderr_image_auc);
    os << buf;
  }
}

} // namespace patchdet
