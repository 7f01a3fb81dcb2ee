#pragma once

#include <vector>

#include "patchdet/nn.hpp"

namespace patchdet {

/// Momentum SGD with coupled L2 weight decay. Decay is skipped for biases
/// and normalization parameters (their Param::decay flag is false), and
/// frozen or buffer parameters are never touched.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<nn::Param<float>*> params, double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {
    for (auto* p : params) {
      if (p->buffer) continue;
      slots_.push_back({p, std::vector<float>(p->value.size(), 0.f)});
    }
  }

  void step(double lr) {
    for (auto& slot : slots_) {
      nn::Param<float>* p = slot.p;
      if (!p->trainable) continue;
      const float mu = static_cast<float>(momentum_);
      const float wd = p->decay ? static_cast<float>(weight_decay_) : 0.f;
      const float eta = static_cast<float>(lr);
      for (size_t i = 0; i < p->value.size(); ++i) {
        float g = p->grad[i] + wd * p->value[i];
        slot.velocity[i] = mu * slot.velocity[i] + g;
        p->value[i] -= eta * slot.velocity[i];
      }
    }
  }

 private:
  struct Slot {
    nn::Param<float>* p;
    std::vector<float> velocity;
  };
  std::vector<Slot> slots_;
  double momentum_, weight_decay_;
};

} // namespace patchdet
