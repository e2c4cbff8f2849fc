#pragma once

#include <limits>
#include <string>
#include <vector>

#include "tgpssm/adam.hpp"
#include "tgpssm/inference.hpp"
#include "tgpssm/model.hpp"
#include "tgpssm/serde.hpp"

namespace tgpssm {

struct TrainConfig {
  int epochs = 1500;
  double lr = 0.01;
  bool constrained = false;  // joint vs constrained optimization
  // Joint mode: fixed scale on both KL terms (1 = plain ELBO).
  double beta_fixed = 1.0;
  // Constrained mode.
  double r0 = std::numeric_limits<double>::quiet_NaN();  // NaN: fit from data
  double alpha = 0.5;
  double eta = 0.001;
  double beta0 = 1.0;
  int n_samples = 1;
  int batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;
  bool train_z = true;
  std::string log_path;  // JSON-lines epoch log, appended as training runs
};

struct LagrangeState {
  double beta = 1.0;
  double r_hat = 0.0;
  long iteration = 0;
};

// beta <- beta * exp(-eta (r_hat_new - r0)), clamped away from zero so the
// multiplier stays positive under extreme exponents.
LagrangeState update_beta(const LagrangeState& state, double r_hat_new,
                          double r0, double eta);

inline double moving_average(double r_hat_prev, double r_hat_batch,
                             double alpha) {
  check_arg(alpha >= 0.0 && alpha < 1.0, "moving_average: alpha in [0,1)");
  return (1.0 - alpha) * r_hat_batch + alpha * r_hat_prev;
}

struct EpochLog {
  int epoch = 0;
  ElboBreakdown elbo;  // dataset values (sequence terms averaged over batch)
  double beta = 1.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double final_elbo = 0.0;
};

// Reconstruction level of a channel-wise Gaussian fit to the observations:
// the default constraint target for constrained training (mean per sequence).
double default_r0(const std::vector<Trajectory>& data);

TrainResult train_joint(TgpssmModel& model, VariationalState& vs,
                        const std::vector<Trajectory>& data,
                        const TrainConfig& cfg);

TrainResult train_constrained(TgpssmModel& model, VariationalState& vs,
                              const std::vector<Trajectory>& data,
                              const TrainConfig& cfg);

// Self-describing checkpoint: structure, named parameters, RNG state.
void save_checkpoint(const std::string& path, const TgpssmModel& model,
                     const VariationalState& vs,
                     const std::string& rng_state = {},
                     const Json* resolved_config = nullptr);

void load_checkpoint(const std::string& path, TgpssmModel& model,
                     VariationalState& vs, std::string* rng_state = nullptr);

}  // namespace tgpssm
