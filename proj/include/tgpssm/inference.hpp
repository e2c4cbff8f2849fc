#pragma once

#include <vector>

#include "tgpssm/model.hpp"

namespace tgpssm {

// Amortized posterior network: a backward recurrent encoder over y_{1:T}
// (so the step-t context carries y_{t:T}) and a dense head mapping
// (x_{t-1}, h_t) to the mean and diagonal scale of q(x_t | x_{t-1}).
// Output layers start at zero, so the initial conditional is
// N(0, softplus(0)^2 I) for every input.
struct InferenceNet {
  int obs_dim = 1;
  int state_dim = 1;
  int hidden = 32;

  Matrix w_in, w_h, b_h;
  Matrix w1, b1, w2, b2;
  Matrix w_mu, b_mu, w_s, b_s;

  static InferenceNet init(int obs_dim, int state_dim, int hidden, Rng& rng);

  // Column t holds the context h_{t+1} for the transition into step t+1.
  Matrix encode(const Matrix& y) const;

  // Mean and diagonal standard deviation of q(x_t | x_{t-1}).
  void head(const Vector& x_prev, const Vector& h, Vector* omega,
            Vector* sd) const;

  void register_params(ad::ParamStore& store) const;
  void read_back(const ad::ParamStore& store);
};

GaussianDist inference_step(const InferenceNet& net, const Vector& x_prev,
                            const Vector& h);

// q(x_0) parameters plus the shared inference network.
struct VariationalState {
  Vector m0;
  Matrix l0_raw;  // lower-triangular with softplus diagonal
  InferenceNet net;

  static VariationalState init(int state_dim, int obs_dim, int hidden,
                               Rng& rng);

  int dx() const { return static_cast<int>(m0.size()); }
  Matrix effective_l0() const;

  void register_params(ad::ParamStore& store) const;
  void read_back(const ad::ParamStore& store);
};

struct QTrajectory {
  Matrix states;  // (T+1) x dx
  Matrix omega;   // T x dx
  Matrix sigma;   // T x dx, conditional variances (diagonal)
};

// Reparametrized draw from q(x_{0:T}). Consumes the same leading normal
// draws as an ELBO evaluation with the same seed: eps_0, then eps_t per step.
QTrajectory sample_q_trajectory(const VariationalState& vs, const Matrix& y,
                                std::uint64_t seed);

// Deterministic mean recursion of q (zero-noise limit).
Matrix q_mean_states(const VariationalState& vs, const Matrix& y);

// The five ELBO terms; total = -kl_x0 - kl_u + entropy + state_recon
// + data_recon.
struct ElboBreakdown {
  double kl_x0 = 0.0;
  double kl_u = 0.0;
  double entropy = 0.0;
  double state_recon = 0.0;
  double data_recon = 0.0;
  double total = 0.0;
};

// Tape handles of the per-sequence terms (everything except the U-space KL,
// which is shared across sequences).
struct SequenceTerms {
  ad::Var kl_x0;
  ad::Var entropy;
  ad::Var state_recon;
  ad::Var data_recon;
};

// Records one sequence's terms on the tape. Normal draws are taken from
// `rng` outside the tape: eps_0, eps_{1:T} for the state path, then the
// n_samples * dx transition-function draws per step.
SequenceTerms build_sequence_terms(ad::Tape& tape, const ad::VarMap& vars,
                                   const TgpssmModel& model,
                                   const VariationalState& vs,
                                   const SparseGpVars& gpv, const Matrix& y,
                                   const Matrix& controls, int n_samples,
                                   Rng& rng);

// Single-sequence ELBO with one sampled state path (Monte-Carlo estimate).
ElboBreakdown elbo(const TgpssmModel& model, const VariationalState& vs,
                   const Matrix& y, const Matrix& controls, int n_samples,
                   std::uint64_t seed);

}  // namespace tgpssm
