#pragma once

#include <unordered_map>

#include "tgpssm/common.hpp"
#include "tgpssm/param_store.hpp"

namespace tgpssm::ad {

using GradMap = std::unordered_map<std::string, Matrix>;

// Adam optimizer state over the trainable entries of a ParamStore.
// The step direction is descent; callers maximizing an objective pass the
// gradient of its negation.
class AdamState {
 public:
  AdamState(double lr = 0.01, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // One update over every trainable parameter. Parameters missing from
  // `grads` are treated as zero-gradient.
  void step(ParamStore& params, const GradMap& grads);

  long step_count() const { return t_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };

  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

inline void adam_step(AdamState& state, ParamStore& params,
                      const GradMap& grads) {
  state.step(params, grads);
}

}  // namespace tgpssm::ad
