#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "patchdet/image.hpp"
#include "patchdet/nn.hpp"

namespace patchdet {

struct BackboneConfig {
  enum class Arch { resnet18_like, tiny_cnn };
  Arch architecture = Arch::tiny_cnn;
  int input_size = 64;
  int embedding_dim = 128;
  std::string pretrained_weights; // checkpoint path; empty trains from scratch
};

std::string to_string(BackboneConfig::Arch arch);
BackboneConfig::Arch arch_from_string(const std::string& s);

/// Pooled-feature embeddings, one row per input image.
struct EmbeddingBatch {
  int n = 0;
  int d = 0;
  std::vector<float> data; // row-major n x d

  float at(int i, int j) const { return data[static_cast<size_t>(i) * d + j]; }
};

/// Backbone encoder plus a 2-layer MLP projection head ending in the
/// class logits. embed() returns the pooled backbone feature (the
/// representation the one-class scorer consumes), not the head output.
template <typename S>
class ModelT {
 public:
  ModelT(const BackboneConfig& cfg, int n_classes, std::uint64_t init_seed);

  /// Class logits, shape (N, n_classes). train toggles batch-stat
  /// normalization and caches activations for backward().
  nn::Tensor<S> forward(const nn::Tensor<S>& x, bool train);

  /// Pooled embedding, shape (N, d). Always evaluation mode.
  nn::Tensor<S> embed(const nn::Tensor<S>& x);

  /// Backpropagate d(loss)/d(logits) through head and backbone,
  /// accumulating parameter gradients.
  void backward(const nn::Tensor<S>& dlogits);

  void zero_grad();
  void freeze_backbone(bool frozen);
  /// Pin only the normalization layers of the backbone.
  void freeze_norm_layers(bool frozen) { backbone_.set_norm_frozen(frozen); }
  bool backbone_frozen() const { return frozen_; }

  std::vector<nn::Param<S>*> parameters();
  std::vector<nn::Param<S>*> backbone_parameters();
  std::vector<nn::Param<S>*> head_parameters();

  const BackboneConfig& config() const { return cfg_; }
  int n_classes() const { return n_classes_; }
  int embedding_dim() const { return cfg_.embedding_dim; }

  /// Convert images to an input tensor (NCHW); grayscale replicates.
  static nn::Tensor<S> to_tensor(const std::vector<ImageBuffer>& images);

  /// Embeddings for a list of images, chunked through eval-mode forward.
  EmbeddingBatch embed_images(const std::vector<ImageBuffer>& images, int batch_size = 64);

 private:
  void build();

  BackboneConfig cfg_;
  int n_classes_;
  bool frozen_ = false;
  nn::Sequential<S> backbone_;
  nn::Sequential<S> head_;
  std::vector<std::function<void(Rng&)>> initializers_;
};

using Model = ModelT<float>;

/// FNV-1a over the float32 serialization of every parameter and buffer;
/// the cheap determinism fingerprint used throughout the tests.
template <typename S>
std::uint64_t hash_parameters(ModelT<S>& model);

template <typename S>
std::uint64_t hash_parameters(const std::vector<nn::Param<S>*>& params);

// --- implementation --------------------------------------------------------

inline std::string to_string(BackboneConfig::Arch arch) {
  return arch == BackboneConfig::Arch::resnet18_like ? "resnet18_like" : "tiny_cnn";
}

inline BackboneConfig::Arch arch_from_string(const std::string& s) {
  if (s == "resnet18_like") return BackboneConfig::Arch::resnet18_like;
  if (s == "tiny_cnn") return BackboneConfig::Arch::tiny_cnn;
  throw ConfigError("unknown architecture: " + s);
}

template <typename S>
ModelT<S>::ModelT(const BackboneConfig& cfg, int n_classes, std::uint64_t init_seed)
    : cfg_(cfg), n_classes_(n_classes) {
  nn::tune_allocator();
  if (cfg.embedding_dim < 8) throw ConfigError("embedding_dim must be >= 8");
  if (cfg.input_size < 32 || cfg.input_size > 512)
    throw ConfigError("input_size must be within 32..512");
  if (cfg.architecture == BackboneConfig::Arch::resnet18_like) {
    if (cfg.input_size % 32 != 0)
      throw ConfigError("resnet18_like requires input_size divisible by 32");
    if (cfg.embedding_dim != 512)
      throw ConfigError("resnet18_like produces 512-d embeddings; set embedding_dim=512");
  }
  if (n_classes < 2) throw ConfigError("need at least 2 classes");
  build();
  Rng rng = Rng::from_root(init_seed, "init");
  for (auto& init : initializers_) init(rng);
}

template <typename S>
void ModelT<S>::build() {
  using namespace nn;
  if (cfg_.architecture == BackboneConfig::Arch::tiny_cnn) {
    const int widths[4] = {32, 64, 128, 128};
    int prev = 3;
    for (int i = 0; i < 4; ++i) {
      std::string name = "backbone.conv" + std::to_string(i + 1);
      auto* conv = backbone_.template emplace<Conv2d<S>>(name, prev, widths[i], 3, 2, 1);
      initializers_.push_back([conv](Rng& r) { conv->init_he(r); });
      backbone_.template emplace<BatchNorm2d<S>>("backbone.bn" + std::to_string(i + 1),
                                                 widths[i]);
      backbone_.template emplace<ReLU<S>>();
      prev = widths[i];
    }
    backbone_.template emplace<GlobalAvgPool<S>>();
    auto* proj = backbone_.template emplace<Linear<S>>("backbone.embed", prev, cfg_.embedding_dim);
    initializers_.push_back([proj](Rng& r) { proj->init_he(r); });
  } else {
    auto* stem = backbone_.template emplace<Conv2d<S>>("backbone.conv1", 3, 64, 7, 2, 3);
    initializers_.push_back([stem](Rng& r) { stem->init_he(r); });
    backbone_.template emplace<BatchNorm2d<S>>("backbone.bn1", 64);
    backbone_.template emplace<ReLU<S>>();
    backbone_.template emplace<MaxPool2d<S>>(3, 2, 1);
    const int stage_widths[4] = {64, 128, 256, 512};
    int prev = 64;
    for (int s = 0; s < 4; ++s) {
      for (int b = 0; b < 2; ++b) {
        std::string name =
            "backbone.layer" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
        int stride = (s > 0 && b == 0) ? 2 : 1;
        auto* block = backbone_.template emplace<BasicBlock<S>>(name, prev, stage_widths[s], stride);
        initializers_.push_back([block](Rng& r) { block->init_he(r); });
        prev = stage_widths[s];
      }
    }
    backbone_.template emplace<GlobalAvgPool<S>>();
  }

  const int d = cfg_.embedding_dim;
  auto* fc1 = head_.template emplace<nn::Linear<S>>("head.fc1", d, d);
  initializers_.push_back([fc1](Rng& r) { fc1->init_he(r); });
  head_.template emplace<nn::ReLU<S>>();
  auto* fc2 = head_.template emplace<nn::Linear<S>>("head.fc2", d, n_classes_);
  initializers_.push_back([fc2](Rng& r) { fc2->init_he(r); });
}

template <typename S>
nn::Tensor<S> ModelT<S>::forward(const nn::Tensor<S>& x, bool train) {
  nn::Tensor<S> e = backbone_.forward(x, train);
  return head_.forward(e, train);
}

template <typename S>
nn::Tensor<S> ModelT<S>::embed(const nn::Tensor<S>& x) {
  return backbone_.forward(x, false);
}

template <typename S>
void ModelT<S>::backward(const nn::Tensor<S>& dlogits) {
  nn::Tensor<S> g = head_.backward(dlogits);
  backbone_.backward(g);
}

template <typename S>
void ModelT<S>::zero_grad() {
  for (auto* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), S(0));
}

template <typename S>
void ModelT<S>::freeze_backbone(bool frozen) {
  frozen_ = frozen;
  backbone_.set_frozen(frozen);
}

template <typename S>
std::vector<nn::Param<S>*> ModelT<S>::parameters() {
  std::vector<nn::Param<S>*> out;
  backbone_.collect_params(out);
  head_.collect_params(out);
  return out;
}

template <typename S>
std::vector<nn::Param<S>*> ModelT<S>::backbone_parameters() {
  std::vector<nn::Param<S>*> out;
  backbone_.collect_params(out);
  return out;
}

template <typename S>
std::vector<nn::Param<S>*> ModelT<S>::head_parameters() {
  std::vector<nn::Param<S>*> out;
  head_.collect_params(out);
  return out;
}

template <typename S>
nn::Tensor<S> ModelT<S>::to_tensor(const std::vector<ImageBuffer>& images) {
  if (images.empty()) throw ArgumentError("empty image batch");
  const int h = images[0].height, w = images[0].width;
  nn::Tensor<S> t(static_cast<int>(images.size()), 3, h, w);
  for (size_t i = 0; i < images.size(); ++i) {
    const ImageBuffer& img = images[i];
    if (img.height != h || img.width != w)
      throw ArgumentError("batch images must share one shape");
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        for (int ch = 0; ch < 3; ++ch)
          t.at(static_cast<int>(i), ch, r, c) =
              static_cast<S>(img.at(r, c, std::min(ch, img.channels - 1)));
  }
  return t;
}

template <typename S>
EmbeddingBatch ModelT<S>::embed_images(const std::vector<ImageBuffer>& images, int batch_size) {
  EmbeddingBatch out;
  out.n = static_cast<int>(images.size());
  out.d = cfg_.embedding_dim;
  out.data.resize(static_cast<size_t>(out.n) * out.d);
  for (size_t start = 0; start < images.size(); start += batch_size) {
    size_t end = std::min(images.size(), start + batch_size);
    std::vector<ImageBuffer> chunk(images.begin() + start, images.begin() + end);
    nn::Tensor<S> e = embed(to_tensor(chunk));
    for (int i = 0; i < e.n; ++i)
      for (int j = 0; j < out.d; ++j)
        out.data[(start + i) * out.d + j] = static_cast<float>(e.at(i, j, 0, 0));
  }
  return out;
}

template <typename S>
std::uint64_t hash_parameters(const std::vector<nn::Param<S>*>& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* bytes, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto* p : params)
    for (S v : p->value) {
      float f = static_cast<float>(v);
      mix(&f, sizeof(f));
    }
  return h;
}

template <typename S>
std::uint64_t hash_parameters(ModelT<S>& model) {
  auto params = model.parameters();
  return hash_parameters(params);
}

} // namespace patchdet
