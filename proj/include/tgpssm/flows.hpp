#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tgpssm/autodiff.hpp"
#include "tgpssm/common.hpp"
#include "tgpssm/param_store.hpp"
#include "tgpssm/rng.hpp"

namespace tgpssm {

enum class FlowKind {
  kArcsinh,
  kLog,
  kExp,
  kLinear,
  kSinhArcsinh,
  kBoxCox,
  kTanh,
  kSal,
  kSumOfTanh,
  kSumOfLogExp,
  kCoupling,
};

FlowKind flow_kind_from_string(const std::string& s);
std::string to_string(FlowKind k);

struct FlowLayerSpec {
  FlowKind kind = FlowKind::kSal;
  // Effective (constrained) parameter values; empty selects the near-identity
  // default for the kind.
  Vector init;
  bool trainable = true;
  int terms = 2;  // J for the sum flows
  // Coupling layers only: coordinates [0, split) form block A. If !swap,
  // A passes through and B is transformed conditioned on A; if swap, the
  // roles are exchanged.
  int split = 1;
  bool swap = false;
  int hidden = 16;
};

// Shift-and-scale networks of one coupling layer: two tanh hidden layers,
// zero-initialized output layer so the layer starts as the identity.
struct CouplingNets {
  Matrix s_w1, s_b1, s_w2, s_b2, s_w3, s_b3;
  Matrix r_w1, r_b1, r_w2, r_b2, r_w3, r_b3;
};

// An ordered stack of invertible transforms applied coordinate-wise
// (elementary layers) or block-wise (coupling layers). Layer 0 is applied
// first on the forward pass.
class FlowStack {
 public:
  FlowStack() = default;

  // `rng` seeds the coupling-layer hidden weights; unused for elementary
  // stacks.
  static FlowStack create(int dim, const std::vector<FlowLayerSpec>& specs,
                          Rng& rng);

  int dim() const { return dim_; }
  int num_layers() const { return static_cast<int>(specs_.size()); }
  bool empty() const { return specs_.empty(); }
  const std::vector<FlowLayerSpec>& specs() const { return specs_; }

  Vector forward(const Vector& f) const;
  Vector inverse(const Vector& y) const;

  // log |det dG(f)/df| accumulated layer by layer on the forward pass.
  double log_det_jacobian(const Vector& f) const;
  // log |det dG^-1(y)/dy|, traversing the layers in reverse.
  double log_det_jacobian_inverse(const Vector& y) const;

  std::pair<Vector, double> forward_with_log_det(const Vector& f) const;

  // Derivative of layer `layer` at scalar input f (elementary layers only).
  double layer_derivative(int layer, double f) const;

  // Raw (unconstrained) parameter access for elementary layers.
  const Vector& theta_raw(int layer) const { return theta_raw_[layer]; }
  Vector& theta_raw(int layer) { return theta_raw_[layer]; }
  const CouplingNets& nets(int layer) const { return nets_[layer]; }

  void register_params(ad::ParamStore& store) const;
  void read_back(const ad::ParamStore& store);

  ad::Var forward_tape(ad::Tape& tape, const ad::VarMap& vars,
                       ad::Var f) const;

 private:
  Vector forward_layer(int layer, const Vector& f) const;
  Vector inverse_layer(int layer, const Vector& y) const;
  double log_det_layer(int layer, const Vector& f) const;

  int dim_ = 0;
  std::vector<FlowLayerSpec> specs_;
  std::vector<Vector> theta_raw_;    // per layer; empty for coupling layers
  std::vector<CouplingNets> nets_;   // aligned with specs_; unused slots empty
};

// Scalar helpers shared by tests: forward/derivative/inverse of one
// elementary flow with effective parameters `theta`.
double elementary_forward(FlowKind kind, const Vector& theta, double f);
double elementary_derivative(FlowKind kind, const Vector& theta, double f);
double elementary_inverse(FlowKind kind, const Vector& theta, double y);

// Effective parameters from raw storage (softplus on constrained entries).
Vector effective_theta(FlowKind kind, const Vector& raw);
Vector raw_theta(FlowKind kind, const Vector& effective);
Vector default_theta(FlowKind kind, int terms);

}  // namespace tgpssm
