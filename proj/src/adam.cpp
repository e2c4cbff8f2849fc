#include "tgpssm/adam.hpp"

#include <cmath>

namespace tgpssm::ad {

void AdamState::step(ParamStore& params, const GradMap& grads) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    int id = static_cast<int>(i);
    if (!params.trainable(id)) continue;
    const std::string& name = params.name(id);
    Matrix& value = params.value(id);

    Matrix g = Matrix::Zero(value.rows(), value.cols());
    auto it = grads.find(name);
    if (it != grads.end()) {
      check_arg(it->second.rows() == value.rows() &&
                    it->second.cols() == value.cols(),
                "adam: gradient shape mismatch for '" + name + "'");
      g = it->second;
    }

    Moments& mom = moments_[name];
    if (mom.m.size() == 0) {
      mom.m = Matrix::Zero(value.rows(), value.cols());
      mom.v = Matrix::Zero(value.rows(), value.cols());
    }
    mom.m = beta1_ * mom.m + (1.0 - beta1_) * g;
    mom.v = beta2_ * mom.v + (1.0 - beta2_) * g.cwiseProduct(g);
    Matrix mhat = mom.m / bc1;
    Matrix vhat = mom.v / bc2;
    value.array() -=
        lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
  }
}

}  // namespace tgpssm::ad
