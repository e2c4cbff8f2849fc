#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tgpssm/datagen.hpp"
#include "tgpssm/inference.hpp"

namespace tgpssm {

struct MetricReport {
  std::string metric;
  double value = 0.0;
  std::vector<double> per_seed;
  double mean = 0.0;
  double std_dev = 0.0;
  std::string config_fingerprint;

  static MetricReport from_values(const std::string& metric,
                                  const std::vector<double>& per_seed,
                                  const std::string& fingerprint = {});
  Json to_json() const;
};

// Posterior-mean transition map in data units: standardize the grid point,
// push the marginal q(f) mean through the flow, destandardize.
double posterior_mean_transition(const TgpssmModel& model, double x,
                                 const StandardizeStats& stats);

// Mean squared error of the posterior-mean transition against a reference
// map over an evaluation grid (1-d state).
double transition_mse(const TgpssmModel& model,
                      const std::function<double(double)>& true_fn,
                      const Vector& grid,
                      const StandardizeStats& stats = {});

// Grid, reference map, posterior mean, and a central-band envelope obtained
// by pushing mean +- 2 sd of q(f) through the monotone flow. Columns:
// x, f_true, f_mean, band_lo, band_hi.
Matrix transition_curve(const TgpssmModel& model,
                        const std::function<double(double)>& true_fn,
                        const Vector& grid,
                        const StandardizeStats& stats = {});

// Mean-dynamics rollout through flow(mean q(f)); row k holds the state after
// k+1 steps.
Matrix rollout_mean(const TgpssmModel& model, const Vector& x_start,
                    int horizon, const Matrix& controls = Matrix());

// Point-forecast RMSE over a horizon, in the (standardized) units of the
// series: start from the q mean at the end of training, roll the mean
// dynamics, compare C x against the held-out observations.
double forecast_rmse(const TgpssmModel& model, const VariationalState& vs,
                     const Matrix& y_train, const Matrix& y_test, int horizon,
                     const Matrix& controls_future = Matrix());

// Mean squared error of the q-mean state estimates against ground truth,
// destandardized when stats are provided.
double state_estimation_mse(const VariationalState& vs, const Matrix& y,
                            const Matrix& true_states,
                            const StandardizeStats& stats = {});

// Extended Kalman filter for x_t = f(x_{t-1}) + w, y_t = C x_t + v.
struct EkfResult {
  Matrix filtered;  // T x dx posterior means
  double state_mse = 0.0;
};

EkfResult ekf(const std::function<Vector(const Vector&)>& dynamics,
              const std::function<Matrix(const Vector&)>& jacobian,
              const Matrix& q, const Matrix& r, const Matrix& c,
              const Matrix& y, const Vector& x0, const Matrix& p0,
              const Matrix& true_states = Matrix());

void write_metric_report(const std::string& path, const MetricReport& report);
void write_plot_csv(const std::string& path, const Matrix& columns,
                    const std::vector<std::string>& header);

}  // namespace tgpssm
