#include "tgpssm/inference.hpp"

#include <cmath>

namespace tgpssm {

namespace {
double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
}  // namespace

InferenceNet InferenceNet::init(int obs_dim, int state_dim, int hidden,
                                Rng& rng) {
  InferenceNet net;
  net.obs_dim = obs_dim;
  net.state_dim = state_dim;
  net.hidden = hidden;
  auto w = [&](int r, int c) {
    return (1.0 / std::sqrt(static_cast<double>(c))) * rng.normal_mat(r, c);
  };
  net.w_in = w(hidden, obs_dim);
  net.w_h = w(hidden, hidden);
  net.b_h = Matrix::Zero(hidden, 1);
  net.w1 = w(hidden, state_dim + hidden);
  net.b1 = Matrix::Zero(hidden, 1);
  net.w2 = w(hidden, hidden);
  net.b2 = Matrix::Zero(hidden, 1);
  net.w_mu = Matrix::Zero(state_dim, hidden);
  net.b_mu = Matrix::Zero(state_dim, 1);
  net.w_s = Matrix::Zero(state_dim, hidden);
  net.b_s = Matrix::Zero(state_dim, 1);
  return net;
}

Matrix InferenceNet::encode(const Matrix& y) const {
  const int steps = static_cast<int>(y.rows());
  Matrix h(hidden, steps);
  Vector hnext = Vector::Zero(hidden);
  for (int t = steps - 1; t >= 0; --t) {
    hnext =
        (w_in * y.row(t).transpose() + w_h * hnext + b_h.col(0)).array().tanh();
    h.col(t) = hnext;
  }
  return h;
}

void InferenceNet::head(const Vector& x_prev, const Vector& h, Vector* omega,
                        Vector* sd) const {
  Vector in(x_prev.size() + h.size());
  in << x_prev, h;
  Vector l1 = (w1 * in + b1.col(0)).array().tanh();
  Vector l2 = (w2 * l1 + b2.col(0)).array().tanh();
  *omega = w_mu * l2 + b_mu.col(0);
  Vector raw = w_s * l2 + b_s.col(0);
  *sd = raw.unaryExpr([](double x) { return softplus(x); });
}

void InferenceNet::register_params(ad::ParamStore& store) const {
  store.add("net.w_in", w_in);
  store.add("net.w_h", w_h);
  store.add("net.b_h", b_h);
  store.add("net.w1", w1);
  store.add("net.b1", b1);
  store.add("net.w2", w2);
  store.add("net.b2", b2);
  store.add("net.w_mu", w_mu);
  store.add("net.b_mu", b_mu);
  store.add("net.w_s", w_s);
  store.add("net.b_s", b_s);
}

void InferenceNet::read_back(const ad::ParamStore& store) {
  w_in = store["net.w_in"];
  w_h = store["net.w_h"];
  b_h = store["net.b_h"];
  w1 = store["net.w1"];
  b1 = store["net.b1"];
  w2 = store["net.w2"];
  b2 = store["net.b2"];
  w_mu = store["net.w_mu"];
  b_mu = store["net.b_mu"];
  w_s = store["net.w_s"];
  b_s = store["net.b_s"];
}

GaussianDist inference_step(const InferenceNet& net, const Vector& x_prev,
                            const Vector& h) {
  Vector omega, sd;
  net.head(x_prev, h, &omega, &sd);
  GaussianDist out;
  out.mean = omega;
  out.cov = sd.array().square().matrix().asDiagonal();
  return out;
}

VariationalState VariationalState::init(int state_dim, int obs_dim,
                                        int hidden, Rng& rng) {
  VariationalState vs;
  vs.m0 = Vector::Zero(state_dim);
  vs.l0_raw = Matrix::Zero(state_dim, state_dim);
  vs.l0_raw.diagonal().array() = 0.5413248546129181;  // softplus -> 1
  vs.net = InferenceNet::init(obs_dim, state_dim, hidden, rng);
  return vs;
}

Matrix VariationalState::effective_l0() const {
  Matrix l = l0_raw.triangularView<Eigen::StrictlyLower>();
  for (int i = 0; i < l.rows(); ++i) l(i, i) = softplus(l0_raw(i, i));
  return l;
}

void VariationalState::register_params(ad::ParamStore& store) const {
  store.add("vs.m0", m0);
  store.add("vs.l0_raw", l0_raw);
  net.register_params(store);
}

void VariationalState::read_back(const ad::ParamStore& store) {
  m0 = store["vs.m0"];
  l0_raw = store["vs.l0_raw"];
  net.read_back(store);
}

QTrajectory sample_q_trajectory(const VariationalState& vs, const Matrix& y,
                                std::uint64_t seed) {
  const int steps = static_cast<int>(y.rows());
  check_arg(steps >= 1, "sample_q_trajectory: empty observation sequence");
  const int dx = vs.dx();
  Rng rng(seed);
  QTrajectory out;
  out.states = Matrix(steps + 1, dx);
  out.omega = Matrix(steps, dx);
  out.sigma = Matrix(steps, dx);

  Matrix h = vs.net.encode(y);
  Vector x = vs.m0 + vs.effective_l0() * rng.normal_vec(dx);
  out.states.row(0) = x.transpose();
  for (int t = 0; t < steps; ++t) {
    Vector omega, sd;
    vs.net.head(x, h.col(t), &omega, &sd);
    x = omega + sd.cwiseProduct(rng.normal_vec(dx));
    out.states.row(t + 1) = x.transpose();
    out.omega.row(t) = omega.transpose();
    out.sigma.row(t) = sd.array().square().transpose();
  }
  return out;
}

Matrix q_mean_states(const VariationalState& vs, const Matrix& y) {
  const int steps = static_cast<int>(y.rows());
  const int dx = vs.dx();
  Matrix h = vs.net.encode(y);
  Matrix states(steps + 1, dx);
  Vector x = vs.m0;
  states.row(0) = x.transpose();
  for (int t = 0; t < steps; ++t) {
    Vector omega, sd;
    vs.net.head(x, h.col(t), &omega, &sd);
    x = omega;
    states.row(t + 1) = x.transpose();
  }
  return states;
}

// ---- tape ELBO -------------------------------------------------------------

namespace {

using ad::Var;

struct NetVars {
  Var w_in, w_h, b_h, w1, b1, w2, b2, w_mu, b_mu, w_s, b_s;
};

NetVars net_vars(const ad::VarMap& vars) {
  return NetVars{vars.at("net.w_in"), vars.at("net.w_h"), vars.at("net.b_h"),
                 vars.at("net.w1"),   vars.at("net.b1"),  vars.at("net.w2"),
                 vars.at("net.b2"),   vars.at("net.w_mu"), vars.at("net.b_mu"),
                 vars.at("net.w_s"),  vars.at("net.b_s")};
}

}  // namespace

SequenceTerms build_sequence_terms(ad::Tape& tape, const ad::VarMap& vars,
                                   const TgpssmModel& model,
                                   const VariationalState& vs,
                                   const SparseGpVars& gpv, const Matrix& y,
                                   const Matrix& controls, int n_samples,
                                   Rng& rng) {
  const int steps = static_cast<int>(y.rows());
  const int dx = model.dx();
  const int dy = model.dy();
  check_arg(steps >= 1, "build_sequence_terms: empty sequence");
  check_arg(n_samples >= 1, "build_sequence_terms: n_samples must be >= 1");
  check_arg(y.cols() == dy, "build_sequence_terms: observation dim mismatch");

  Var m0 = vars.at("vs.m0");
  Var l0 = ad::tril_softplus_diag(vars.at("vs.l0_raw"));
  Var log_q = vars.at("noise.log_q");
  Var log_r = vars.at("noise.log_r");
  NetVars net = net_vars(vars);

  // KL[q(x0) || N(0, I)].
  Var kl_x0 = ad::cmul(
      ad::cadd(ad::sub(ad::add(ad::squared_norm(m0), ad::squared_norm(l0)),
                       ad::cmul(ad::sum_all(ad::log(ad::diagv(l0))), 2.0)),
               -static_cast<double>(dx)),
      0.5);

  // Backward encoder contexts.
  std::vector<Var> h(steps);
  Var hnext = tape.constant(Matrix::Zero(vs.net.hidden, 1));
  for (int t = steps - 1; t >= 0; --t) {
    Var yt = tape.constant(Matrix(y.row(t).transpose()));
    hnext = ad::tanh(ad::add(
        ad::add(ad::matmul(net.w_in, yt), ad::matmul(net.w_h, hnext)),
        net.b_h));
    h[t] = hnext;
  }

  // Reparametrized state path (one trajectory per evaluation).
  Var x_prev = ad::add(m0, ad::matmul(l0, tape.constant(Matrix(
                                              rng.normal_vec(dx)))));
  std::vector<Var> x(steps + 1), omega(steps), sd(steps);
  x[0] = x_prev;
  for (int t = 0; t < steps; ++t) {
    Var in = ad::concat_v(x[t], h[t]);
    Var l1 = ad::tanh(ad::add(ad::matmul(net.w1, in), net.b1));
    Var l2 = ad::tanh(ad::add(ad::matmul(net.w2, l1), net.b2));
    omega[t] = ad::add(ad::matmul(net.w_mu, l2), net.b_mu);
    sd[t] = ad::softplus(ad::add(ad::matmul(net.w_s, l2), net.b_s));
    x[t + 1] = ad::add(omega[t],
                       ad::mul(sd[t], tape.constant(Matrix(
                                          rng.normal_vec(dx)))));
  }

  // Entropy of the state path.
  Var entropy = tape.constant(0.0);
  for (int t = 0; t < steps; ++t)
    entropy = ad::add(entropy, ad::sum_all(ad::log(sd[t])));
  entropy = ad::cadd(entropy, static_cast<double>(steps) * 0.5 *
                                  static_cast<double>(dx) *
                                  (std::log(2.0 * M_PI) + 1.0));

  // Data reconstruction with the inner expectation in closed form.
  Matrix c2 = model.c.cwiseProduct(model.c);
  Var c_const = tape.constant(model.c);
  Var c2_const = tape.constant(c2);
  Var data = tape.constant(0.0);
  for (int t = 0; t < steps; ++t) {
    Var yt = tape.constant(Matrix(y.row(t).transpose()));
    Var mean = ad::matmul(c_const, omega[t]);
    Var lr_b = log_r;
    Var ll = ad::gaussian_logpdf_diag(yt, mean, lr_b);
    Var tr = ad::sum_all(
        ad::div(ad::matmul(c2_const, ad::square(sd[t])), ad::exp(log_r)));
    data = ad::add(data, ad::sub(ll, ad::cmul(tr, 0.5)));
  }

  // State reconstruction through q(f_t), reparametrized.
  Var state = tape.constant(0.0);
  for (int t = 0; t < steps; ++t) {
    Var gp_in = x[t];
    if (controls.size() > 0) {
      gp_in = ad::concat_v(
          gp_in, tape.constant(Matrix(controls.row(t).transpose())));
    }
    Var x_row = ad::transpose(gp_in);
    std::vector<Var> f_mean(dx), f_sd(dx);
    for (int d = 0; d < dx; ++d) {
      MarginalQf q = marginal_q_ft_tape(tape, gpv, d, x_row);
      f_mean[d] = q.mean;
      f_sd[d] = ad::sqrt(q.var);
    }
    Var acc = tape.constant(0.0);
    for (int i = 0; i < n_samples; ++i) {
      Var f = ad::add(f_mean[0],
                      ad::cmul(f_sd[0], rng.normal()));
      for (int d = 1; d < dx; ++d) {
        Var fd = ad::add(f_mean[d], ad::cmul(f_sd[d], rng.normal()));
        f = ad::concat_v(f, fd);
      }
      Var ftilde = model.flow.forward_tape(tape, vars, f);
      acc = ad::add(acc, ad::gaussian_logpdf_diag(x[t + 1], ftilde, log_q));
    }
    state = ad::add(state, ad::cmul(acc, 1.0 / n_samples));
  }

  return SequenceTerms{kl_x0, entropy, state, data};
}

ElboBreakdown elbo(const TgpssmModel& model, const VariationalState& vs,
                   const Matrix& y, const Matrix& controls, int n_samples,
                   std::uint64_t seed) {
  ad::ParamStore store;
  model.register_params(store);
  vs.register_params(store);

  ad::Tape tape;
  ad::VarMap vars;
  for (std::size_t i = 0; i < store.size(); ++i) {
    int id = static_cast<int>(i);
    vars.emplace(store.name(id), tape.leaf(store.value(id), store.name(id)));
  }
  SparseGpVars gpv = build_sparse_gp_vars(tape, vars, model.dx());
  Rng rng(seed);
  SequenceTerms terms = build_sequence_terms(tape, vars, model, vs, gpv, y,
                                             controls, n_samples, rng);
  Var kl_u = kl_q_u_tape(tape, gpv);

  ElboBreakdown out;
  out.kl_x0 = terms.kl_x0.scalar();
  out.kl_u = kl_u.scalar();
  out.entropy = terms.entropy.scalar();
  out.state_recon = terms.state_recon.scalar();
  out.data_recon = terms.data_recon.scalar();
  out.total = -out.kl_x0 - out.kl_u + out.entropy + out.state_recon +
              out.data_recon;
  return out;
}

}  // namespace tgpssm
