#include "tgpssm/model.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>

#include "tgpssm/gaussian.hpp"

namespace tgpssm {

void TgpssmModel::register_params(ad::ParamStore& store, bool train_z) const {
  register_sparse_gp(store, gp, train_z);
  flow.register_params(store);
  store.add("noise.log_q", log_q);
  store.add("noise.log_r", log_r);
}

void TgpssmModel::read_back(const ad::ParamStore& store) {
  read_back_sparse_gp(store, gp);
  flow.read_back(store);
  log_q = store["noise.log_q"];
  log_r = store["noise.log_r"];
}

namespace {

Matrix gp_input_row(const Vector& x, const Matrix& controls, int t) {
  if (controls.size() == 0) return x.transpose();
  Matrix row(1, x.size() + controls.cols());
  row << x.transpose(), controls.row(t);
  return row;
}

void check_controls(const TgpssmModel& model, const Matrix& controls,
                    int steps) {
  if (model.dc() > 0) {
    check_arg(controls.rows() >= steps && controls.cols() == model.dc(),
              "sampler: control sequence does not match the model input");
  } else {
    check_arg(controls.size() == 0,
              "sampler: model takes no control inputs");
  }
}

}  // namespace

Trajectory sample_prior_exact(const TgpssmModel& model, int steps,
                              std::uint64_t seed, const Matrix& controls) {
  check_arg(steps >= 1, "sample_prior_exact: steps must be >= 1");
  check_controls(model, controls, steps);
  const int dx = model.dx(), dy = model.dy();
  Rng rng(seed);

  Trajectory traj;
  traj.states = Matrix(steps + 1, dx);
  traj.observations = Matrix(steps, dy);
  traj.latent_f = Matrix(steps, dx);
  traj.latent_ftilde = Matrix(steps, dx);
  traj.controls = controls;

  Vector x = rng.normal_vec(dx);
  traj.states.row(0) = x.transpose();

  Matrix inputs(steps, model.gp.input_dim());
  Vector q_sd = model.q_diag().array().sqrt();
  Vector r_sd = model.r_diag().array().sqrt();

  for (int t = 0; t < steps; ++t) {
    inputs.row(t) = gp_input_row(x, controls, t);
    Vector f(dx);
    for (int d = 0; d < dx; ++d) {
      GaussianDist cond = gp_conditional(
          model.gp.kernels[d], inputs.topRows(t), traj.latent_f.col(d).head(t),
          0.0, inputs.row(t));
      double sd = std::sqrt(std::max(cond.cov(0, 0), 0.0));
      f[d] = cond.mean[0] + sd * rng.normal();
    }
    traj.latent_f.row(t) = f.transpose();
    Vector ftilde = model.flow.forward(f);
    traj.latent_ftilde.row(t) = ftilde.transpose();
    x = ftilde + q_sd.cwiseProduct(rng.normal_vec(dx));
    traj.states.row(t + 1) = x.transpose();
    traj.observations.row(t) =
        (model.c * x + r_sd.cwiseProduct(rng.normal_vec(dy))).transpose();
  }
  return traj;
}

Trajectory sample_prior_sparse(const TgpssmModel& model, int steps,
                               std::uint64_t seed, const Matrix& controls) {
  check_arg(steps >= 1, "sample_prior_sparse: steps must be >= 1");
  check_arg(model.gp.num_inducing() >= 1,
            "sample_prior_sparse: no inducing points");
  check_controls(model, controls, steps);
  const int dx = model.dx(), dy = model.dy();
  const int m_count = model.gp.num_inducing();
  Rng rng(seed);

  Trajectory traj;
  traj.states = Matrix(steps + 1, dx);
  traj.observations = Matrix(steps, dy);
  traj.latent_f = Matrix(steps, dx);
  traj.latent_ftilde = Matrix(steps, dx);
  traj.controls = controls;

  // One inducing-value draw per output dimension.
  std::vector<Matrix> lk(dx);
  std::vector<Vector> u(dx);
  for (int d = 0; d < dx; ++d) {
    Matrix kzz = model.gp.kernels[d].matrix(model.gp.z, model.gp.z);
    kzz.diagonal().array() += kJitter;
    lk[d] = chol_psd(kzz, "sample_prior_sparse K_zz");
    u[d] = lk[d] * rng.normal_vec(m_count);
  }

  Vector x = rng.normal_vec(dx);
  traj.states.row(0) = x.transpose();
  Vector q_sd = model.q_diag().array().sqrt();
  Vector r_sd = model.r_diag().array().sqrt();

  for (int t = 0; t < steps; ++t) {
    Matrix row = gp_input_row(x, controls, t);
    Vector f(dx);
    for (int d = 0; d < dx; ++d) {
      Matrix kxz = model.gp.kernels[d].matrix(row, model.gp.z);
      Vector v = lk[d].triangularView<Eigen::Lower>().solve(kxz.transpose());
      Vector alpha = lk[d].triangularView<Eigen::Lower>().solve(u[d]);
      double var =
          std::max(model.gp.kernels[d].sf2() - v.squaredNorm(), 0.0);
      f[d] = v.dot(alpha) + std::sqrt(var) * rng.normal();
    }
    traj.latent_f.row(t) = f.transpose();
    Vector ftilde = model.flow.forward(f);
    traj.latent_ftilde.row(t) = ftilde.transpose();
    x = ftilde + q_sd.cwiseProduct(rng.normal_vec(dx));
    traj.states.row(t + 1) = x.transpose();
    traj.observations.row(t) =
        (model.c * x + r_sd.cwiseProduct(rng.normal_vec(dy))).transpose();
  }
  return traj;
}

double joint_log_density(const TgpssmModel& model, const Trajectory& traj) {
  const int steps = traj.steps();
  const int dx = model.dx();
  check_arg(traj.has_states() && traj.states.rows() == steps + 1,
            "joint_log_density: need x_{0:T} with T = |y|");
  check_arg(traj.latent_ftilde.rows() == steps,
            "joint_log_density: need latent f~ values");

  double out = gaussian_log_pdf_diag(traj.states.row(0).transpose(),
                                     Vector::Zero(dx), Vector::Ones(dx));

  // Warped finite-dimensional GP density by change of variables.
  Matrix f(steps, dx);
  double ldj = 0.0;
  for (int t = 0; t < steps; ++t) {
    Vector ft = model.flow.inverse(traj.latent_ftilde.row(t).transpose());
    f.row(t) = ft.transpose();
    ldj += model.flow.log_det_jacobian(ft);
  }
  Matrix inputs(steps, model.gp.input_dim());
  for (int t = 0; t < steps; ++t) {
    inputs.row(t) = gp_input_row(traj.states.row(t).transpose(),
                                 traj.controls, t);
  }
  for (int d = 0; d < dx; ++d) {
    Matrix gram = model.gp.kernels[d].matrix(inputs, inputs);
    out += gaussian_log_pdf(f.col(d), Vector::Zero(steps), gram);
  }
  out -= ldj;

  Vector q = model.q_diag(), r = model.r_diag();
  for (int t = 0; t < steps; ++t) {
    Vector xt = traj.states.row(t + 1).transpose();
    out += gaussian_log_pdf_diag(xt, traj.latent_ftilde.row(t).transpose(), q);
    out += gaussian_log_pdf_diag(traj.observations.row(t).transpose(),
                                 model.c * xt, r);
  }
  return out;
}

void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ConfigError("cannot open '" + path + "' for writing");
  const int dx = traj.has_states() ? static_cast<int>(traj.states.cols()) : 0;
  const int dy = static_cast<int>(traj.observations.cols());
  const int dc = traj.has_controls() ? static_cast<int>(traj.controls.cols())
                                     : 0;
  std::fprintf(f, "t");
  for (int d = 0; d < dx; ++d) std::fprintf(f, ",x_%d", d + 1);
  for (int d = 0; d < dy; ++d) std::fprintf(f, ",y_%d", d + 1);
  for (int d = 0; d < dc; ++d) std::fprintf(f, ",u_%d", d + 1);
  std::fprintf(f, "\n");
  const int steps = traj.steps();
  for (int t = 0; t <= steps; ++t) {
    if (t == 0 && dx == 0) continue;
    std::fprintf(f, "%d", t);
    for (int d = 0; d < dx; ++d) std::fprintf(f, ",%.17g", traj.states(t, d));
    for (int d = 0; d < dy; ++d) {
      if (t == 0) {
        std::fprintf(f, ",");
      } else {
        std::fprintf(f, ",%.17g", traj.observations(t - 1, d));
      }
    }
    for (int d = 0; d < dc; ++d) {
      if (t == 0) {
        std::fprintf(f, ",");
      } else {
        std::fprintf(f, ",%.17g", traj.controls(t - 1, d));
      }
    }
    std::fprintf(f, "\n");
  }
  std::fclose(f);
}

}  // namespace tgpssm
