#pragma once

#include <string>

#include "tgpssm/flows.hpp"
#include "tgpssm/gp.hpp"

namespace tgpssm {

// Latent states x_{0:T}, observations y_{1:T}, and (optionally) the latent
// function values that generated them. Empty matrices mark absent blocks.
struct Trajectory {
  Matrix states;         // (T+1) x dx
  Matrix observations;   // T x dy
  Matrix controls;       // T x dc, row t-1 enters the transition into x_t
  Matrix latent_f;       // T x dx
  Matrix latent_ftilde;  // T x dx

  int steps() const { return static_cast<int>(observations.rows()); }
  bool has_states() const { return states.size() > 0; }
  bool has_controls() const { return controls.size() > 0; }
};

// Generative model: sparse-GP transition warped by a flow stack, diagonal
// process/observation noise, fixed linear emission, x0 ~ N(0, I).
struct TgpssmModel {
  SparseGP gp;
  FlowStack flow;
  Vector log_q;  // dx
  Vector log_r;  // dy
  Matrix c;      // dy x dx, not trainable

  int dx() const { return static_cast<int>(log_q.size()); }
  int dy() const { return static_cast<int>(log_r.size()); }
  int dc() const { return gp.input_dim() - dx(); }

  Vector q_diag() const { return log_q.array().exp(); }
  Vector r_diag() const { return log_r.array().exp(); }

  void register_params(ad::ParamStore& store, bool train_z = true) const;
  void read_back(const ad::ParamStore& store);
};

// Sequential prior sampling conditioning each f_t on all earlier (input, f)
// pairs (exact GP draw). Draw order: x0, then per step f_t, v_t, e_t.
Trajectory sample_prior_exact(const TgpssmModel& model, int steps,
                              std::uint64_t seed,
                              const Matrix& controls = Matrix());

// Prior sampling through one inducing-value draw U ~ N(0, K_zz); each f_t
// conditions on U only, costing O(dx T M^2) overall.
Trajectory sample_prior_sparse(const TgpssmModel& model, int steps,
                               std::uint64_t seed,
                               const Matrix& controls = Matrix());

// log p(x_{0:T}, f~_{1:T}, y_{1:T}): standard-normal x0, finite-dimensional
// warped-GP density for f~ by change of variables, then Gaussian transition
// and emission factors.
double joint_log_density(const TgpssmModel& model, const Trajectory& traj);

// CSV with header "t,x_1..x_dx,y_1..y_dy" (and u_* columns when controls are
// present); 17 significant digits. Row t=0 carries the initial state only.
void write_trajectory_csv(const std::string& path, const Trajectory& traj);

}  // namespace tgpssm
