#include "patchdet/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <json.hpp>

#include "patchdet/checkpoint.hpp"
#include "patchdet/config.hpp"
#include "patchdet/dataset.hpp"
#include "patchdet/errors.hpp"
#include "patchdet/eval.hpp"
#include "patchdet/imageio.hpp"
#include "patchdet/localize.hpp"
#include "patchdet/synthetic.hpp"
#include "patchdet/train.hpp"

namespace patchdet {

namespace {

constexpr const char* kVersion = "0.1.0";
namespace fs = std::filesystem;
using nlohmann::json;

std::atomic<bool> g_interrupt{false};
void handle_interrupt(int) { g_interrupt.store(true); }

std::string timestamp_now() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

/// Written before any work starts; every artifact path it names must exist
/// once the command succeeds.
void write_manifest(const fs::path& out_dir, const std::string& command,
                    const KeyValueConfig& resolved, std::uint64_t seed,
                    const std::vector<std::pair<std::string, std::string>>& input_hashes,
                    const std::vector<fs::path>& outputs) {
  json manifest;
  manifest["command"] = command;
  manifest["version"] = kVersion;
  manifest["seed"] = seed;
  manifest["started_at"] = timestamp_now();
  json cfg = json::object();
  for (const auto& [k, v] : resolved.values()) cfg[k] = v;
  manifest["config"] = cfg;
  json hashes = json::object();
  for (const auto& [name, hex] : input_hashes) hashes[name] = hex;
  manifest["input_hashes"] = hashes;
  json outs = json::array();
  for (const auto& p : outputs) outs.push_back(p.string());
  manifest["outputs"] = outs;

  fs::create_directories(out_dir);
  std::ofstream os(out_dir / "manifest.json");
  if (!os) throw ConfigError("cannot write manifest under " + out_dir.string());
  os << manifest.dump(2) << "\n";
}

json jitter_to_json(const JitterParams& j) {
  return json{{"delta", j.delta}, {"order", j.order}};
}

JitterParams jitter_from_json(const json& j) {
  JitterParams out;
  for (int i = 0; i < 4; ++i) {
    out.delta[i] = j.at("delta").at(i).get<float>();
    out.order[i] = j.at("order").at(i).get<int>();
  }
  return out;
}

const char* fill_name(FillMode f) {
  switch (f) {
    case FillMode::source_patch: return "source_patch";
    case FillMode::grey: return "grey";
    case FillMode::mean_pixel: return "mean_pixel";
    case FillMode::random_color: return "random_color";
    case FillMode::confetti: return "confetti";
  }
  return "source_patch";
}

FillMode fill_from_name(const std::string& s) {
  for (FillMode f : {FillMode::source_patch, FillMode::grey, FillMode::mean_pixel,
                     FillMode::random_color, FillMode::confetti})
    if (s == fill_name(f)) return f;
  throw ConfigError("unknown fill mode: " + s);
}

json params_to_json(const PatchParams& p) {
  return json{{"area_ratio", p.area_ratio},
              {"aspect_ratio", p.aspect_ratio},
              {"patch_height", p.patch_height},
              {"patch_width", p.patch_width},
              {"src_top", p.src_top},
              {"src_left", p.src_left},
              {"dst_top", p.dst_top},
              {"dst_left", p.dst_left},
              {"rotation_deg", p.rotation_deg},
              {"fill", fill_name(p.fill)},
              {"fill_value", p.fill_value},
              {"jitter", jitter_to_json(p.jitter)}};
}

PatchParams params_from_json(const json& j) {
  PatchParams p;
  p.area_ratio = j.at("area_ratio").get<double>();
  p.aspect_ratio = j.at("aspect_ratio").get<double>();
  p.patch_height = j.at("patch_height").get<int>();
  p.patch_width = j.at("patch_width").get<int>();
  p.src_top = j.at("src_top").get<int>();
  p.src_left = j.at("src_left").get<int>();
  p.dst_top = j.at("dst_top").get<int>();
  p.dst_left = j.at("dst_left").get<int>();
  p.rotation_deg = j.at("rotation_deg").get<double>();
  p.fill = fill_from_name(j.at("fill").get<std::string>());
  for (int i = 0; i < 3; ++i) p.fill_value[i] = j.at("fill_value").at(i).get<float>();
  p.jitter = jitter_from_json(j.at("jitter"));
  return p;
}

// --- option resolution ------------------------------------------------------

struct Common {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;

  KeyValueConfig load() const {
    KeyValueConfig cfg;
    if (!config_path.empty()) cfg = KeyValueConfig::from_file(config_path);
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& common, const std::string& default_out) {
  cmd->add_option("--config", common.config_path, "flat key=value config file");
  cmd->add_option("--out", common.out_dir, "output directory")->default_val(default_out);
  cmd->add_option("--seed", common.seed, "root random seed")
      ->default_val("0")
      ->trigger_on_parse()
      ->each([&common](const std::string&) { common.seed_given = true; });
}

std::uint64_t resolved_seed(const Common& common, const KeyValueConfig& cfg) {
  return common.seed_given ? common.seed : cfg.get_u64("seed", common.seed);
}

fs::path resolve_data_root(const std::string& flag_value, const KeyValueConfig& cfg) {
  if (!flag_value.empty()) return flag_value;
  std::string from_cfg = cfg.get("data.root", "");
  if (!from_cfg.empty()) return from_cfg;
  if (const char* env = std::getenv("PATCHDET_DATA_ROOT"); env && *env) return env;
  throw ConfigError("dataset root not set (use --data, data.root, or PATCHDET_DATA_ROOT)");
}

/// Flag-overrides-config resolution for the training knobs shared by the
/// train / finetune / eval / sweep commands.
struct TrainCli {
  std::string data_root;
  std::string category;
  std::string task = "three_way";
  std::string level = "image";
  std::string arch = "tiny_cnn";
  int resolution = 256;
  int input_size = 0; // 0: resolution (image level) or patch_size (patch level)
  int embedding_dim = 128;
  int patch_size = 64;
  int steps = -1;
  int batch_size = -1;
  double lr = -1.0;
  double momentum = -1.0;
  double weight_decay = -1.0;
  int log_every = -1;
  double jitter_intensity = -1.0;
  double area_max = -1.0;

  void add_options(CLI::App* cmd) {
    cmd->add_option("--data", data_root, "dataset root (MVTec-style layout)");
    cmd->add_option("--category", category, "dataset category name");
    cmd->add_option("--task", task, "proxy task")->default_val(task);
    cmd->add_option("--level", level, "image or patch")->default_val(level);
    cmd->add_option("--arch", arch, "tiny_cnn or resnet18_like")->default_val(arch);
    cmd->add_option("--resolution", resolution, "working resolution")->default_val("256");
    cmd->add_option("--input-size", input_size, "model input side (0 = derive)");
    cmd->add_option("--embedding-dim", embedding_dim)->default_val("128");
    cmd->add_option("--patch-size", patch_size, "training patch side (patch level)");
    cmd->add_option("--steps", steps, "SGD update count");
    cmd->add_option("--batch", batch_size, "source images per step");
    cmd->add_option("--lr", lr, "base learning rate");
    cmd->add_option("--momentum", momentum);
    cmd->add_option("--weight-decay", weight_decay);
    cmd->add_option("--log-every", log_every);
    cmd->add_option("--jitter-intensity", jitter_intensity);
    cmd->add_option("--area-max", area_max, "max patch area ratio");
  }

  TrainConfig resolve_train(const KeyValueConfig& cfg, std::uint64_t seed) const {
    Task t = task_from_string(cfg.has("train.task") && task == "three_way"
                                  ? cfg.get("train.task", task)
                                  : task);
    TrainConfig out = default_train_config(t);
    out.level = level_from_string(level != "image" ? level : cfg.get("train.level", level));
    out.patch_size = patch_size > 0 ? patch_size : cfg.get_int("train.patch_size", 64);
    out.steps = steps >= 0 ? steps : cfg.get_int("train.steps", out.steps);
    out.batch_size = batch_size > 0 ? batch_size : cfg.get_int("train.batch_size", out.batch_size);
    out.lr = lr >= 0 ? lr : cfg.get_double("train.lr", out.lr);
    out.momentum = momentum >= 0 ? momentum : cfg.get_double("train.momentum", out.momentum);
    out.weight_decay =
        weight_decay >= 0 ? weight_decay : cfg.get_double("train.weight_decay", out.weight_decay);
    out.log_every = log_every > 0 ? log_every : cfg.get_int("train.log_every", out.log_every);
    out.augment.jitter_intensity = jitter_intensity >= 0
                                       ? jitter_intensity
                                       : cfg.get_double("augment.jitter_intensity",
                                                        out.augment.jitter_intensity);
    out.augment.area_max =
        area_max > 0 ? area_max : cfg.get_double("augment.area_max", out.augment.area_max);
    out.seed = seed;
    return out;
  }

  int resolved_resolution(const KeyValueConfig& cfg) const {
    return cfg.has("data.resolution") && resolution == 256 ? cfg.get_int("data.resolution", 256)
                                                           : resolution;
  }

  BackboneConfig resolve_backbone(const KeyValueConfig& cfg, const TrainConfig& train) const {
    BackboneConfig out;
    out.architecture = arch_from_string(cfg.has("model.architecture") && arch == "tiny_cnn"
                                            ? cfg.get("model.architecture", arch)
                                            : arch);
    int res = resolved_resolution(cfg);
    out.input_size = input_size > 0
                         ? input_size
                         : (train.level == Level::patch ? train.patch_size : res);
    out.embedding_dim = embedding_dim != 128 ? embedding_dim
                                             : cfg.get_int("model.embedding_dim", embedding_dim);
    return out;
  }

  KeyValueConfig snapshot(const TrainConfig& train, const BackboneConfig& backbone,
                          const fs::path& root) const {
    KeyValueConfig out;
    out.set("data.root", root.string());
    out.set("data.category", category);
    out.set("data.resolution", std::to_string(resolved_resolution(KeyValueConfig{})));
    out.set("train.task", to_string(train.task));
    out.set("train.level", to_string(train.level));
    out.set("train.patch_size", std::to_string(train.patch_size));
    out.set("train.steps", std::to_string(train.steps));
    out.set("train.batch_size", std::to_string(train.batch_size));
    out.set("train.lr", std::to_string(train.lr));
    out.set("train.momentum", std::to_string(train.momentum));
    out.set("train.weight_decay", std::to_string(train.weight_decay));
    out.set("train.log_every", std::to_string(train.log_every));
    out.set("augment.jitter_intensity", std::to_string(train.augment.jitter_intensity));
    out.set("augment.area_max", std::to_string(train.augment.area_max));
    out.set("model.architecture", to_string(backbone.architecture));
    out.set("model.input_size", std::to_string(backbone.input_size));
    out.set("model.embedding_dim", std::to_string(backbone.embedding_dim));
    return out;
  }
};

std::string dataset_listing_hash(const fs::path& root, const std::string& category) {
  DatasetLayout layout = scan_layout(root, category, false);
  std::string listing;
  for (const auto& e : layout.entries) {
    listing += e.image_path.string();
    listing += '\n';
  }
  return hash_bytes_hex(listing);
}

// --- subcommands -------------------------------------------------------------

int run_augment_preview(const Common& common, const std::string& image_path,
                        const std::string& aug_name, int size, const std::string& replay_path) {
  KeyValueConfig cfg = common.load();
  std::uint64_t seed = resolved_seed(common, cfg);
  fs::path out_dir = common.out_dir;

  KeyValueConfig resolved;
  resolved.set("image", image_path);
  resolved.set("augmentation", aug_name);
  resolved.set("size", std::to_string(size));
  std::vector<std::pair<std::string, std::string>> hashes{{image_path, hash_file_hex(image_path)}};
  fs::path png = out_dir / "preview.png";
  fs::path sidecar = out_dir / "params.json";
  write_manifest(out_dir, "augment-preview", resolved, seed, hashes, {png, sidecar});

  ImageBuffer img = load_image(image_path, size);
  Rng rng = Rng::from_root(seed, "augment");

  if (!replay_path.empty()) {
    std::ifstream is(replay_path);
    if (!is) throw ConfigError("cannot open replay params: " + replay_path);
    json j = json::parse(is);
    PatchParams p = params_from_json(j);
    write_image(png, apply_patch_params(img, p));
    std::ofstream os(sidecar);
    os << params_to_json(p).dump(2) << "\n";
    return 0;
  }

  json sidecar_json;
  ImageBuffer result;
  if (aug_name == "cutpaste") {
    auto r = sample_cutpaste(img, rng);
    result = std::move(r.image);
    sidecar_json = params_to_json(r.params);
  } else if (aug_name == "cutpaste-scar") {
    auto r = sample_cutpaste_scar(img, rng);
    result = std::move(r.image);
    sidecar_json = params_to_json(r.params);
  } else if (aug_name == "cutout-grey" || aug_name == "cutout-mean" || aug_name == "cutout-color") {
    CutoutFill fill = aug_name == "cutout-grey"
                          ? CutoutFill::grey
                          : (aug_name == "cutout-mean" ? CutoutFill::mean_pixel
                                                       : CutoutFill::random_color);
    auto r = sample_cutout(img, fill, rng);
    result = std::move(r.image);
    sidecar_json = params_to_json(r.params);
  } else if (aug_name == "scar") {
    auto r = sample_scar(img, rng);
    result = std::move(r.image);
    sidecar_json = params_to_json(r.params);
  } else if (aug_name == "confetti") {
    auto r = sample_confetti(img, rng);
    result = std::move(r.image);
    sidecar_json = params_to_json(r.params);
  } else if (aug_name == "preprocess") {
    PreprocParams p = sample_preproc_params(img, rng);
    result = apply_preproc_params(img, p);
    sidecar_json = json{{"shift_rows", p.shift_rows},
                        {"shift_cols", p.shift_cols},
                        {"jitter", jitter_to_json(p.jitter)}};
  } else {
    throw ArgumentError("unknown augmentation: " + aug_name);
  }

  write_image(png, result);
  std::ofstream os(sidecar);
  os << sidecar_json.dump(2) << "\n";
  std::printf("wrote %s\n", png.string().c_str());
  return 0;
}

int run_synth_gen(const Common& common, const std::string& out_root, const std::string& category,
                  int size, int n_train, int n_test_normal, int n_test_defect) {
  KeyValueConfig cfg = common.load();
  std::uint64_t seed = resolved_seed(common, cfg);

  SyntheticDatasetConfig sc;
  sc.image_size = size;
  sc.n_train = n_train;
  sc.n_test_normal = n_test_normal;
  sc.n_test_defect = n_test_defect;
  sc.seed = seed;

  KeyValueConfig resolved;
  resolved.set("out_root", out_root);
  resolved.set("category", category);
  resolved.set("image_size", std::to_string(size));
  resolved.set("n_train", std::to_string(n_train));
  resolved.set("n_test_normal", std::to_string(n_test_normal));
  resolved.set("n_test_defect", std::to_string(n_test_defect));
  write_manifest(common.out_dir, "synth-gen", resolved, seed, {},
                 {fs::path(out_root) / category});

  SyntheticDataset ds = generate_synthetic_dataset(sc);
  write_synthetic_dataset(out_root, category, ds);
  std::printf("synthetic dataset at %s/%s: %d train, %d test\n", out_root.c_str(),
              category.c_str(), static_cast<int>(ds.train.size()),
              static_cast<int>(ds.test_images.size()));
  return 0;
}

int run_train(const Common& common, const TrainCli& tc, bool finetune,
              const std::string& pretrained, int head_epochs, double head_lr, int full_epochs,
              double full_lr) {
  KeyValueConfig cfg = common.load();
  std::uint64_t seed = resolved_seed(common, cfg);
  fs::path root = resolve_data_root(tc.data_root, cfg);
  std::string category = !tc.category.empty() ? tc.category : cfg.get("data.category", "");
  if (category.empty()) throw ConfigError("category not set (use --category or data.category)");

  TrainConfig train_cfg = tc.resolve_train(cfg, seed);
  BackboneConfig backbone = tc.resolve_backbone(cfg, train_cfg);
  if (finetune) backbone.pretrained_weights = pretrained;
  const int resolution = tc.resolved_resolution(cfg);

  fs::path out_dir = common.out_dir;
  fs::path ckpt = out_dir / "checkpoint.ckpt";
  fs::path metrics = out_dir / "metrics.csv";
  KeyValueConfig resolved = tc.snapshot(train_cfg, backbone, root);
  resolved.set("data.category", category);
  resolved.set("data.resolution", std::to_string(resolution));
  std::vector<std::pair<std::string, std::string>> hashes{
      {"dataset_listing", dataset_listing_hash(root, category)}};
  if (!common.config_path.empty())
    hashes.emplace_back(common.config_path, hash_file_hex(common.config_path));
  if (finetune) hashes.emplace_back(pretrained, hash_file_hex(pretrained));
  write_manifest(out_dir, finetune ? "finetune" : "train", resolved, seed, hashes,
                 {ckpt, metrics});

  DatasetLayout layout = scan_layout(root, category);
  std::vector<ImageBuffer> train_images;
  for (const auto* entry : layout.train_entries())
    train_images.push_back(load_image(entry->image_path, resolution));

  Model model = build_model<float>(backbone, task_class_count(train_cfg.task), seed);

  g_interrupt.store(false);
  std::signal(SIGINT, handle_interrupt);
  TrainHooks hooks;
  hooks.interrupt = &g_interrupt;
  hooks.on_log = [](const MetricsRow& row, Model&) {
    std::printf("step %6d  lr %.5f  loss %.4f  acc %.3f\n", row.step, row.lr, row.loss,
                row.proxy_acc);
  };

  TrainResult result;
  if (finetune) {
    FinetuneSchedule sched;
    sched.head_only_epochs = head_epochs;
    sched.head_lr = head_lr;
    sched.full_epochs = full_epochs;
    sched.full_lr = full_lr;
    result = finetune_loop(model, train_images, sched, train_cfg, ckpt, metrics);
  } else {
    result = train_loop(model, train_images, train_cfg, ckpt, metrics, hooks);
  }
  std::signal(SIGINT, SIG_DFL);
  std::printf("%s: %d steps, final parameter hash %016llx\n",
              result.interrupted ? "interrupted" : "done", result.steps_run,
              static_cast<unsigned long long>(result.final_param_hash));
  return 0;
}

Model model_from_checkpoint(const fs::path& path) {
  Checkpoint ckpt = read_checkpoint(path);
  Model model(ckpt.cfg, ckpt.n_classes, 0);
  load_into_model(ckpt, model, true);
  return model;
}

int run_score(const Common& common, const std::string& checkpoint, const std::string& data_root,
              const std::string& category, const std::string& estimator, int resolution,
              const std::string& level, int patch, int stride, bool export_csv) {
  KeyValueConfig cfg = common.load();
  std::uint64_t seed = resolved_seed(common, cfg);
  fs::path root = resolve_data_root(data_root, cfg);
  std::string cat = !category.empty() ? category : cfg.get("data.category", "");
  if (cat.empty()) throw ConfigError("category not set");

  fs::path out_dir = common.out_dir;
  fs::path scores_csv = out_dir / "scores.csv";
  fs::path gde_path = out_dir / "gde.bin";
  fs::path train_emb_path = out_dir / "train_embeddings.bin";
  fs::path test_emb_path = out_dir / "test_embeddings.bin";

  KeyValueConfig resolved;
  resolved.set("checkpoint", checkpoint);
  resolved.set("data.root", root.string());
  resolved.set("data.category", cat);
  resolved.set("score.estimator", estimator);
  resolved.set("score.level", level);
  std::vector<std::pair<std::string, std::string>> hashes{
      {checkpoint, hash_file_hex(checkpoint)},
      {"dataset_listing", dataset_listing_hash(root, cat)}};
  write_manifest(out_dir, "score", resolved, seed, hashes,
                 {scores_csv, gde_path, train_emb_path, test_emb_path});

  Model model = model_from_checkpoint(checkpoint);
  const int res = resolution > 0 ? resolution : model.config().input_size;

  DatasetLayout layout = scan_layout(root, cat);
  std::vector<ImageBuffer> train_images;
  for (const auto* e : layout.train_entries())
    train_images.push_back(load_image(e->image_path, res));
  std::vector<ImageBuffer> test_images;
  std::vector<int> labels;
  std::vector<std::string> names;
  for (const auto* e : layout.test_entries()) {
    test_images.push_back(load_image(e->image_path, res));
    labels.push_back(e->defect_type != "good" ? 1 : 0);
    names.push_back(e->image_path.string());
  }

  EmbeddingBatch train_emb, test_emb;
  std::vector<AnomalyScore> scores;
  if (level == "patch") {
    // Dense patch embeddings; image score is the max patch score.
    Eigen::MatrixXd all;
    std::vector<EmbeddingGrid> grids;
    for (const auto& img : train_images) grids.push_back(dense_extract(model, img, patch, stride));
    const int g = grids.front().grid, d = grids.front().d;
    all.resize(static_cast<Eigen::Index>(grids.size()) * g * g, d);
    Eigen::Index row = 0;
    for (const auto& grid : grids)
      for (int i = 0; i < g; ++i)
        for (int j = 0; j < g; ++j, ++row)
          for (int k = 0; k < d; ++k) all(row, k) = grid.cell(i, j)[k];
    GdeModel gde = fit_gde(all);
    write_gde(gde_path, gde);
    train_emb.n = static_cast<int>(all.rows());
    train_emb.d = d;
    train_emb.data.resize(all.size());
    for (Eigen::Index i = 0; i < all.rows(); ++i)
      for (int k = 0; k < d; ++k) train_emb.data[i * d + k] = static_cast<float>(all(i, k));
    for (const auto& img : test_images) {
      EmbeddingGrid grid = dense_extract(model, img, patch, stride);
      scores.push_back(image_score_from_map(score_grid(grid, gde)));
    }
    test_emb.n = 0; // per-image grids are not persisted at patch level
    test_emb.d = d;
  } else {
    train_emb = model.embed_images(train_images);
    test_emb = model.embed_images(test_images);
    if (estimator == "kde") {
      KdeModel kde = fit_kde(train_emb);
      Eigen::MatrixXd m = to_matrix(test_emb);
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        scores.push_back(score_kde(kde, m.row(i).transpose()));
      GdeModel gde = fit_gde(train_emb); // still persisted for later localization
      write_gde(gde_path, gde);
    } else if (estimator == "gde") {
      GdeModel gde = fit_gde(train_emb);
      write_gde(gde_path, gde);
      scores = score_gde(gde, test_emb);
    } else {
      throw ArgumentError("unknown estimator: " + estimator);
    }
  }

  write_embeddings(train_emb_path, train_emb);
  write_embeddings(test_emb_path, test_emb);
  if (export_csv) {
    write_embeddings_csv(out_dir / "train_embeddings.csv", train_emb);
    write_embeddings_csv(out_dir / "test_embeddings.csv", test_emb);
  }

  std::ofstream os(scores_csv);
  if (!os) throw ConfigError("cannot write scores csv");
  os << "image,label,score\n";
  char buf[64];
  for (size_t i = 0; i < scores.size(); ++i) {
    std::snprintf(buf, sizeof(buf), ",%d,%.10g\n", labels[i], scores[i]);
    os << names[i] << buf;
  }
  if (labels.end() != std::find(labels.begin(), labels.end(), 1) &&
      labels.end() != std::find(labels.begin(), labels.end(), 0)) {
    double auc = roc_auc({scores, labels});
    std::printf("image AUC: %.4f over %zu test images\n", auc, scores.size());
  }
  return 0;
}

int run_localize(const Common& common, const std::string& checkpoint, const std::string& gde_path,
                 const std::string& image_path, int patch, int stride, double sigma,
                 int resolution) {
  KeyValueConfig cfg = common.load();
  std::uint64_t seed = resolved_seed(common, cfg);
  fs::path out_dir = common.out_dir;
  fs::path heatmap = out_dir / "heatmap.png";
  fs::path raw = out_dir / "heatmap.pdm";

  KeyValueConfig resolved;
  resolved.set("checkpoint", checkpoint);
  resolved.set("gde", gde_path);
  resolved.set("image", image_path);
  resolved.set("localize.patch", std::to_string(patch));
  resolved.set("localize.stride", std::to_string(stride));
  std::vector<std::pair<std::string, std::string>> hashes{
      {checkpoint, hash_file_hex(checkpoint)},
      {gde_path, hash_file_hex(gde_path)},
      {image_path, hash_file_hex(image_path)}};
  write_manifest(out_dir, "localize", resolved, seed, hashes, {heatmap, raw});

  Model model = model_from_checkpoint(checkpoint);
  GdeModel gde = read_gde(gde_path);
  ImageBuffer image = load_image(image_path, resolution);

  EmbeddingGrid grid = dense_extract(model, image, patch, stride);
  ScoreMap map = score_grid(grid, gde);
  double s = sigma > 0 ? sigma : patch / 4.0;
  PixelScoreMap pixels = gaussian_upsample(map, s);
  emit_heatmap(pixels, image, heatmap);
  std::printf("image score (max patch): %.6f; heatmap at %s\n", image_score_from_map(map),
              heatmap.string().c_str());
  return 0;
}

int run_eval(const Common& common, const TrainCli& tc, int n_seeds, bool ensemble,
             const std::string& estimator, bool per_location, int extract_patch,
             int extract_stride) {
  KeyValueConfig cfg = common.load();
  std::uint64_t seed = resolved_seed(common, cfg);
  fs::path root = resolve_data_root(tc.data_root, cfg);
  std::string category = !tc.category.empty() ? tc.category : cfg.get("data.category", "");
  if (category.empty()) throw ConfigError("category not set");

  TrainConfig train_cfg = tc.resolve_train(cfg, seed);
  BackboneConfig backbone = tc.resolve_backbone(cfg, train_cfg);
  ScoringConfig scoring;
  scoring.estimator = estimator == "kde" ? ScoringConfig::Estimator::kde
                                         : ScoringConfig::Estimator::gde;
  scoring.per_location = per_location;
  scoring.extract_patch = extract_patch;
  scoring.extract_stride = extract_stride;

  fs::path out_dir = common.out_dir;
  fs::path report_csv = out_dir / "report.csv";
  KeyValueConfig resolved = tc.snapshot(train_cfg, backbone, root);
  resolved.set("data.category", category);
  resolved.set("eval.n_seeds", std::to_string(n_seeds));
  resolved.set("eval.ensemble", ensemble ? "true" : "false");
  std::vector<std::pair<std::string, std::string>> hashes{
      {"dataset_listing", dataset_listing_hash(root, category)}};
  write_manifest(out_dir, "eval", resolved, seed, hashes, {report_csv});

  g_interrupt.store(false);
  ExperimentReport report = run_experiment(root, category, backbone, train_cfg, scoring, n_seeds,
                                           ensemble, tc.resolved_resolution(cfg));
  write_report_csv(report_csv, report);
  std::printf("category %s task %s: image AUC %.4f +- %.4f", category.c_str(),
              to_string(train_cfg.task).c_str(), report.mean_image_auc, report.stderr_image_auc);
  if (!std::isnan(report.mean_pixel_auc))
    std::printf(", pixel AUC %.4f +- %.4f", report.mean_pixel_auc, report.stderr_pixel_auc);
  if (report.ensemble_image_auc) std::printf(", ensemble %.4f", *report.ensemble_image_auc);
  std::printf("\n");
  return 0;
}

int run_sweep_cmd(const Common& common, const TrainCli& tc, const std::string& parameter,
                  const std::string& values_csv, int repeats) {
  KeyValueConfig cfg = common.load();
  std::uint64_t seed = resolved_seed(common, cfg);
  fs::path root = resolve_data_root(tc.data_root, cfg);
  std::string category = !tc.category.empty() ? tc.category : cfg.get("data.category", "");
  if (category.empty()) throw ConfigError("category not set");

  SweepSpec spec;
  spec.parameter = parameter;
  spec.repeats = repeats;
  std::stringstream ss(values_csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) spec.values.push_back(std::stod(item));

  TrainConfig train_cfg = tc.resolve_train(cfg, seed);
  BackboneConfig backbone = tc.resolve_backbone(cfg, train_cfg);

  fs::path out_dir = common.out_dir;
  fs::path sweep_csv = out_dir / "sweep.csv";
  KeyValueConfig resolved = tc.snapshot(train_cfg, backbone, root);
  resolved.set("sweep.parameter", parameter);
  resolved.set("sweep.values", values_csv);
  resolved.set("sweep.repeats", std::to_string(repeats));
  write_manifest(out_dir, "sweep", resolved, seed, {}, {sweep_csv});

  SweepTable table = run_sweep(spec, root, category, backbone, train_cfg, ScoringConfig{},
                               tc.resolved_resolution(cfg));
  write_sweep_csv(sweep_csv, table);
  std::printf("sweep over %s: %zu cells x %d repeats -> %s\n", parameter.c_str(),
              spec.values.size(), repeats, sweep_csv.string().c_str());
  return 0;
}

} // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"self-supervised defect detection toolkit"};
  app.require_subcommand(1);
  std::function<int()> runner;

  // augment-preview
  auto* prev = app.add_subcommand("augment-preview", "apply one augmentation and save it");
  {
    static Common common;
    common = Common{};
    static std::string image, aug = "cutpaste", replay;
    static int size = 256;
    image.clear();
    replay.clear();
    prev->add_option("--image", image, "input image")->required();
    prev->add_option("--aug", aug,
                     "cutpaste | cutpaste-scar | cutout-grey | cutout-mean | cutout-color | "
                     "scar | confetti | preprocess")
        ->default_val("cutpaste");
    prev->add_option("--size", size, "working resolution")->default_val("256");
    prev->add_option("--replay", replay, "re-apply a recorded params.json");
    add_common(prev, common, "runs/augment-preview");
    prev->callback(
        [&]() { runner = [&]() { return run_augment_preview(common, image, aug, size, replay); }; });
  }

  // synth-gen
  auto* synth = app.add_subcommand("synth-gen", "generate a procedural-texture dataset");
  {
    static Common common;
    common = Common{};
    static std::string out_root = "data", category = "synthetic";
    static int size = 64, n_train = 200, n_good = 40, n_defect = 40;
    synth->add_option("--data-out", out_root, "dataset root to create")->default_val("data");
    synth->add_option("--category", category)->default_val("synthetic");
    synth->add_option("--size", size)->default_val("64");
    synth->add_option("--train", n_train)->default_val("200");
    synth->add_option("--test-normal", n_good)->default_val("40");
    synth->add_option("--test-defect", n_defect)->default_val("40");
    add_common(synth, common, "runs/synth-gen");
    synth->callback([&]() {
      runner = [&]() {
        return run_synth_gen(common, out_root, category, size, n_train, n_good, n_defect);
      };
    });
  }

  // train
  auto* train = app.add_subcommand("train", "train a proxy-task model");
  {
    static Common common;
    common = Common{};
    static TrainCli tc;
    tc = TrainCli{};
    tc.add_options(train);
    add_common(train, common, "runs/train");
    train->callback([&]() {
      runner = [&]() { return run_train(common, tc, false, "", 0, 0, 0, 0); };
    });
  }

  // finetune
  auto* finetune = app.add_subcommand("finetune", "two-stage fine-tune of a pretrained model");
  {
    static Common common;
    common = Common{};
    static TrainCli tc;
    tc = TrainCli{};
    static std::string pretrained;
    static int head_epochs = 10, full_epochs = 64;
    static double head_lr = 0.03, full_lr = 0.0001;
    pretrained.clear();
    finetune->add_option("--pretrained", pretrained, "pretrained checkpoint")->required();
    finetune->add_option("--head-epochs", head_epochs)->default_val("10");
    finetune->add_option("--head-lr", head_lr)->default_val("0.03");
    finetune->add_option("--full-epochs", full_epochs)->default_val("64");
    finetune->add_option("--full-lr", full_lr)->default_val("0.0001");
    tc.add_options(finetune);
    add_common(finetune, common, "runs/finetune");
    finetune->callback([&]() {
      runner = [&]() {
        return run_train(common, tc, true, pretrained, head_epochs, head_lr, full_epochs, full_lr);
      };
    });
  }

  // score
  auto* score = app.add_subcommand("score", "fit the density estimator and score the test split");
  {
    static Common common;
    common = Common{};
    static std::string checkpoint, data_root, category, estimator = "gde", level = "image";
    static int resolution = 0, patch = 32, stride = 4;
    static bool export_csv = false;
    checkpoint.clear();
    data_root.clear();
    category.clear();
    score->add_option("--checkpoint", checkpoint)->required();
    score->add_option("--data", data_root);
    score->add_option("--category", category);
    score->add_option("--estimator", estimator, "gde | kde")->default_val("gde");
    score->add_option("--level", level, "image | patch")->default_val("image");
    score->add_option("--resolution", resolution, "0 = checkpoint input size");
    score->add_option("--patch", patch)->default_val("32");
    score->add_option("--stride", stride)->default_val("4");
    score->add_flag("--csv", export_csv, "also export embeddings as CSV");
    add_common(score, common, "runs/score");
    score->callback([&]() {
      runner = [&]() {
        return run_score(common, checkpoint, data_root, category, estimator, resolution, level,
                         patch, stride, export_csv);
      };
    });
  }

  // localize
  auto* localize = app.add_subcommand("localize", "dense patch scoring heatmap for one image");
  {
    static Common common;
    common = Common{};
    static std::string checkpoint, gde, image;
    static int patch = 32, stride = 4, resolution = 256;
    static double sigma = 0.0;
    checkpoint.clear();
    gde.clear();
    image.clear();
    localize->add_option("--checkpoint", checkpoint)->required();
    localize->add_option("--gde", gde, "fitted density estimator")->required();
    localize->add_option("--image", image)->required();
    localize->add_option("--patch", patch)->default_val("32");
    localize->add_option("--stride", stride)->default_val("4");
    localize->add_option("--sigma", sigma, "0 = patch/4");
    localize->add_option("--resolution", resolution)->default_val("256");
    add_common(localize, common, "runs/localize");
    localize->callback([&]() {
      runner = [&]() {
        return run_localize(common, checkpoint, gde, image, patch, stride, sigma, resolution);
      };
    });
  }

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "train n seeds and report AUCs");
  {
    static Common common;
    common = Common{};
    static TrainCli tc;
    tc = TrainCli{};
    static int n_seeds = 1, extract_patch = 32, extract_stride = 4;
    static bool ensemble = false, per_location = false;
    static std::string estimator = "gde";
    tc.add_options(eval_cmd);
    eval_cmd->add_option("--seeds", n_seeds, "number of random seeds")->default_val("1");
    eval_cmd->add_flag("--ensemble", ensemble, "add the score-ensemble row");
    eval_cmd->add_option("--estimator", estimator, "gde | kde")->default_val("gde");
    eval_cmd->add_flag("--per-location", per_location, "per-location GDEs (patch level)");
    eval_cmd->add_option("--extract-patch", extract_patch)->default_val("32");
    eval_cmd->add_option("--extract-stride", extract_stride)->default_val("4");
    add_common(eval_cmd, common, "runs/eval");
    eval_cmd->callback([&]() {
      runner = [&]() {
        return run_eval(common, tc, n_seeds, ensemble, estimator, per_location, extract_patch,
                        extract_stride);
      };
    });
  }

  // sweep
  auto* sweep = app.add_subcommand("sweep", "hyperparameter sweep");
  {
    static Common common;
    common = Common{};
    static TrainCli tc;
    tc = TrainCli{};
    static std::string parameter, values;
    static int repeats = 1;
    parameter.clear();
    values.clear();
    sweep->add_option("--param", parameter, "TrainConfig knob to vary")->required();
    sweep->add_option("--values", values, "comma-separated values")->required();
    sweep->add_option("--repeats", repeats, "seeds per value")->default_val("1");
    tc.add_options(sweep);
    add_common(sweep, common, "runs/sweep");
    sweep->callback([&]() {
      runner = [&]() { return run_sweep_cmd(common, tc, parameter, values, repeats); };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e); // prints usage, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    return runner ? runner() : 1;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const NumericsError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

} // namespace patchdet
