#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "patchdet/model.hpp"

namespace patchdet {

/// On-disk model container: versioned header, config text, step counter,
/// rng state, then named little-endian float32 parameter arrays (buffers
/// such as running statistics included).
struct Checkpoint {
  BackboneConfig cfg;
  int n_classes = 2;
  std::uint64_t step = 0;
  std::uint64_t rng_state = 0;
  std::map<std::string, std::vector<float>> tensors;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

template <typename S>
Checkpoint snapshot(ModelT<S>& model, std::uint64_t step, std::uint64_t rng_state) {
  Checkpoint ckpt;
  ckpt.cfg = model.config();
  ckpt.n_classes = model.n_classes();
  ckpt.step = step;
  ckpt.rng_state = rng_state;
  for (const auto* p : model.parameters()) {
    std::vector<float> data(p->value.size());
    for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(p->value[i]);
    ckpt.tensors.emplace(p->name, std::move(data));
  }
  return ckpt;
}

template <typename S>
void save_checkpoint(const std::filesystem::path& path, ModelT<S>& model, std::uint64_t step,
                     std::uint64_t rng_state) {
  write_checkpoint(path, snapshot(model, step, rng_state));
}

/// Copy checkpoint tensors into the model by name. strict requires every
/// model parameter to be present with a matching element count; otherwise
/// only matching names are copied and head-size mismatches are skipped,
/// which is what transfer onto a different class count needs.
template <typename S>
void load_into_model(const Checkpoint& ckpt, ModelT<S>& model, bool strict = true) {
  for (auto* p : model.parameters()) {
    auto it = ckpt.tensors.find(p->name);
    if (it == ckpt.tensors.end()) {
      if (strict) throw LoadError("checkpoint is missing parameter " + p->name);
      continue;
    }
    if (it->second.size() != p->value.size()) {
      if (strict || p->name.rfind("backbone.", 0) == 0)
        throw LoadError("checkpoint parameter " + p->name + " has incompatible shape");
      continue;
    }
    for (size_t i = 0; i < p->value.size(); ++i) p->value[i] = static_cast<S>(it->second[i]);
  }
}

/// Build, deterministically initialize, and (when the config names a
/// pretrained checkpoint) load backbone weights.
template <typename S = float>
ModelT<S> build_model(const BackboneConfig& cfg, int n_classes, std::uint64_t seed) {
  ModelT<S> model(cfg, n_classes, seed);
  if (!cfg.pretrained_weights.empty()) {
    Checkpoint ckpt = read_checkpoint(cfg.pretrained_weights);
    // The backbone must match exactly; a head trained for another task is
    // re-initialized rather than loaded.
    for (auto* p : model.backbone_parameters()) {
      auto it = ckpt.tensors.find(p->name);
      if (it == ckpt.tensors.end())
        throw LoadError("pretrained checkpoint is missing " + p->name);
      if (it->second.size() != p->value.size())
        throw LoadError("pretrained parameter " + p->name + " has incompatible shape");
      for (size_t i = 0; i < p->value.size(); ++i) p->value[i] = static_cast<S>(it->second[i]);
    }
    for (auto* p : model.head_parameters()) {
      auto it = ckpt.tensors.find(p->name);
      if (it != ckpt.tensors.end() && it->second.size() == p->value.size())
        for (size_t i = 0; i < p->value.size(); ++i) p->value[i] = static_cast<S>(it->second[i]);
    }
  }
  return model;
}

} // namespace patchdet
