#include "tgpssm/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace tgpssm {

MetricReport MetricReport::from_values(const std::string& metric,
                                       const std::vector<double>& per_seed,
                                       const std::string& fingerprint) {
  check_arg(!per_seed.empty(), "metric report: no values");
  MetricReport r;
  r.metric = metric;
  r.per_seed = per_seed;
  double sum = 0.0, sq = 0.0;
  for (double v : per_seed) {
    sum += v;
    sq += v * v;
  }
  r.mean = sum / static_cast<double>(per_seed.size());
  double var = sq / static_cast<double>(per_seed.size()) - r.mean * r.mean;
  r.std_dev = std::sqrt(std::max(var, 0.0));
  r.value = r.mean;
  r.config_fingerprint = fingerprint;
  return r;
}

Json MetricReport::to_json() const {
  return Json{{"metric", metric},
              {"value", value},
              {"per_seed", per_seed},
              {"mean", mean},
              {"std", std_dev},
              {"config_fingerprint", config_fingerprint}};
}

namespace {

double std_at(const StandardizeStats& stats, int d) {
  return stats.empty() ? 1.0 : stats.std[d];
}
double mean_at(const StandardizeStats& stats, int d) {
  return stats.empty() ? 0.0 : stats.mean[d];
}

}  // namespace

double posterior_mean_transition(const TgpssmModel& model, double x,
                                 const StandardizeStats& stats) {
  check_arg(model.dx() == 1, "posterior_mean_transition: 1-d state only");
  double xs = (x - mean_at(stats, 0)) / std_at(stats, 0);
  GaussianDist q = marginal_q_ft(model.gp, Vector::Constant(1, xs));
  Vector f = model.flow.forward(q.mean);
  return f[0] * std_at(stats, 0) + mean_at(stats, 0);
}

double transition_mse(const TgpssmModel& model,
                      const std::function<double(double)>& true_fn,
                      const Vector& grid, const StandardizeStats& stats) {
  check_arg(grid.size() > 0, "transition_mse: empty grid");
  double mse = 0.0;
  for (int i = 0; i < grid.size(); ++i) {
    double err = posterior_mean_transition(model, grid[i], stats) -
                 true_fn(grid[i]);
    mse += err * err;
  }
  return mse / static_cast<double>(grid.size());
}

Matrix transition_curve(const TgpssmModel& model,
                        const std::function<double(double)>& true_fn,
                        const Vector& grid, const StandardizeStats& stats) {
  Matrix out(grid.size(), 5);
  for (int i = 0; i < grid.size(); ++i) {
    double xs = (grid[i] - mean_at(stats, 0)) / std_at(stats, 0);
    GaussianDist q = marginal_q_ft(model.gp, Vector::Constant(1, xs));
    double sd = std::sqrt(q.cov(0, 0));
    double mean = model.flow.forward(q.mean)[0];
    double lo = model.flow.forward(Vector::Constant(1, q.mean[0] - 2.0 * sd))[0];
    double hi = model.flow.forward(Vector::Constant(1, q.mean[0] + 2.0 * sd))[0];
    if (lo > hi) std::swap(lo, hi);
    out(i, 0) = grid[i];
    out(i, 1) = true_fn(grid[i]);
    out(i, 2) = mean * std_at(stats, 0) + mean_at(stats, 0);
    out(i, 3) = lo * std_at(stats, 0) + mean_at(stats, 0);
    out(i, 4) = hi * std_at(stats, 0) + mean_at(stats, 0);
  }
  return out;
}

Matrix rollout_mean(const TgpssmModel& model, const Vector& x_start,
                    int horizon, const Matrix& controls) {
  check_arg(horizon >= 0, "rollout_mean: negative horizon");
  Matrix out(horizon, model.dx());
  Vector x = x_start;
  for (int k = 0; k < horizon; ++k) {
    Vector in = x;
    if (controls.size() > 0) {
      in.conservativeResize(x.size() + controls.cols());
      in.tail(controls.cols()) = controls.row(k).transpose();
    }
    GaussianDist q = marginal_q_ft(model.gp, in);
    x = model.flow.forward(q.mean);
    out.row(k) = x.transpose();
  }
  return out;
}

double forecast_rmse(const TgpssmModel& model, const VariationalState& vs,
                     const Matrix& y_train, const Matrix& y_test, int horizon,
                     const Matrix& controls_future) {
  check_arg(horizon >= 0, "forecast_rmse: negative horizon");
  if (horizon == 0) return 0.0;
  check_arg(y_test.rows() >= horizon, "forecast_rmse: not enough test data");
  Matrix states = q_mean_states(vs, y_train);
  Vector x = states.row(states.rows() - 1).transpose();
  Matrix rolled = rollout_mean(model, x, horizon, controls_future);
  double se = 0.0;
  for (int k = 0; k < horizon; ++k) {
    Vector pred = model.c * rolled.row(k).transpose();
    se += (pred - y_test.row(k).transpose()).squaredNorm();
  }
  return std::sqrt(se / static_cast<double>(horizon * y_test.cols()));
}

double state_estimation_mse(const VariationalState& vs, const Matrix& y,
                            const Matrix& true_states,
                            const StandardizeStats& stats) {
  const int steps = static_cast<int>(y.rows());
  check_arg(true_states.rows() >= steps + 1,
            "state_estimation_mse: ground truth too short");
  Matrix est = q_mean_states(vs, y);
  double se = 0.0;
  for (int t = 1; t <= steps; ++t) {
    Vector xhat = est.row(t).transpose();
    if (!stats.empty()) xhat = destandardize(xhat, stats);
    se += (xhat - true_states.row(t).transpose()).squaredNorm();
  }
  return se / static_cast<double>(steps * true_states.cols());
}

EkfResult ekf(const std::function<Vector(const Vector&)>& dynamics,
              const std::function<Matrix(const Vector&)>& jacobian,
              const Matrix& q, const Matrix& r, const Matrix& c,
              const Matrix& y, const Vector& x0, const Matrix& p0,
              const Matrix& true_states) {
  const int steps = static_cast<int>(y.rows());
  const int dx = static_cast<int>(x0.size());
  EkfResult out;
  out.filtered = Matrix(steps, dx);

  Vector x = x0;
  Matrix p = p0;
  double se = 0.0;
  for (int t = 0; t < steps; ++t) {
    Matrix jac = jacobian(x);
    Vector x_pred = dynamics(x);
    Matrix p_pred = jac * p * jac.transpose() + q;
    Matrix s = c * p_pred * c.transpose() + r;
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success)
      throw NumericError("ekf: innovation covariance lost definiteness at step " +
                         std::to_string(t));
    Matrix gain = llt.solve(c * p_pred.transpose()).transpose();
    x = x_pred + gain * (y.row(t).transpose() - c * x_pred);
    p = (Matrix::Identity(dx, dx) - gain * c) * p_pred;
    p = 0.5 * (p + p.transpose());
    out.filtered.row(t) = x.transpose();
    if (true_states.size() > 0)
      se += (x - true_states.row(t + 1).transpose()).squaredNorm();
  }
  if (true_states.size() > 0)
    out.state_mse = se / static_cast<double>(steps * dx);
  return out;
}

void write_metric_report(const std::string& path, const MetricReport& report) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write metric report '" + path + "'");
  os << report.to_json().dump(2) << "\n";
}

void write_plot_csv(const std::string& path, const Matrix& columns,
                    const std::vector<std::string>& header) {
  check_arg(static_cast<int>(header.size()) == columns.cols(),
            "write_plot_csv: header/column mismatch");
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ConfigError("cannot open '" + path + "' for writing");
  for (std::size_t i = 0; i < header.size(); ++i)
    std::fprintf(f, "%s%s", i ? "," : "", header[i].c_str());
  std::fprintf(f, "\n");
  for (int i = 0; i < columns.rows(); ++i) {
    for (int j = 0; j < columns.cols(); ++j)
      std::fprintf(f, "%s%.17g", j ? "," : "", columns(i, j));
    std::fprintf(f, "\n");
  }
  std::fclose(f);
}

}  // namespace tgpssm
