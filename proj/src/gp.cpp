#include "tgpssm/gp.hpp"

#include <cmath>

namespace tgpssm {

namespace {
// Keeps predictive variances positive under cancellation.
constexpr double kVarFloor = 1e-12;

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double softplus_inv(double y) {
  return y > 30.0 ? y : std::log(std::expm1(y));
}
}  // namespace

SeKernel SeKernel::isotropic(int input_dim, double ell, double sf2) {
  SeKernel k;
  k.log_ell = Vector::Constant(input_dim, std::log(ell));
  k.log_sf2 = std::log(sf2);
  return k;
}

double SeKernel::operator()(const Vector& a, const Vector& b) const {
  check_arg(a.size() == log_ell.size() && b.size() == log_ell.size(),
            "se kernel: input dim mismatch");
  double d2 = 0.0;
  for (int k = 0; k < a.size(); ++k) {
    double s = (a[k] - b[k]) / std::exp(log_ell[k]);
    d2 += s * s;
  }
  return sf2() * std::exp(-0.5 * d2);
}

Matrix SeKernel::matrix(const Matrix& a, const Matrix& b) const {
  const int d = static_cast<int>(log_ell.size());
  check_arg(a.cols() == d && b.cols() == d, "se kernel: input dim mismatch");
  Vector inv_ell = (-log_ell.array()).exp();
  Matrix as = a * inv_ell.asDiagonal();
  Matrix bs = b * inv_ell.asDiagonal();
  Vector an = as.rowwise().squaredNorm();
  Vector bn = bs.rowwise().squaredNorm();
  Matrix d2 = -2.0 * as * bs.transpose();
  d2.colwise() += an;
  d2.rowwise() += bn.transpose();
  return sf2() * (-0.5 * d2.cwiseMax(0.0).array()).exp();
}

GaussianDist gp_conditional(const SeKernel& kernel, const Matrix& train_x,
                            const Vector& train_f, double noise_var,
                            const Matrix& test_x, double jitter) {
  check_arg(noise_var >= 0.0, "gp_conditional: negative noise variance");
  check_arg(train_x.rows() == train_f.size(),
            "gp_conditional: training size mismatch");
  const int n = static_cast<int>(train_x.rows());
  Matrix ktt = kernel.matrix(test_x, test_x);
  if (n == 0) {
    return GaussianDist{Vector::Zero(test_x.rows()), std::move(ktt)};
  }
  Matrix gram = kernel.matrix(train_x, train_x);
  gram.diagonal().array() += noise_var + jitter;
  Matrix l = chol_psd(gram, "gp_conditional training gram", jitter > 0.0);
  Matrix ktx = kernel.matrix(test_x, train_x);
  Vector alpha = l.triangularView<Eigen::Lower>().solve(train_f);
  Matrix v = l.triangularView<Eigen::Lower>().solve(Matrix(ktx.transpose()));
  GaussianDist out;
  out.mean = v.transpose() * alpha;
  out.cov = ktt - v.transpose() * v;
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  out.cov.diagonal() = out.cov.diagonal().cwiseMax(0.0);
  return out;
}

Matrix SparseGP::effective_l(int d) const {
  Matrix l = l_raw[d].triangularView<Eigen::StrictlyLower>();
  for (int i = 0; i < l.rows(); ++i) l(i, i) = softplus(l_raw[d](i, i));
  return l;
}

Matrix SparseGP::to_l_raw(const Matrix& l) {
  Matrix raw = l.triangularView<Eigen::StrictlyLower>();
  for (int i = 0; i < l.rows(); ++i) {
    check_arg(l(i, i) > 0.0, "to_l_raw: non-positive diagonal");
    raw(i, i) = softplus_inv(l(i, i));
  }
  return raw;
}

SparseGP SparseGP::random(int output_dim, int input_dim, int num_inducing,
                          Rng& rng) {
  SparseGP gp;
  gp.z = rng.normal_mat(num_inducing, input_dim);
  for (int d = 0; d < output_dim; ++d) {
    SeKernel k;
    k.log_ell = Vector::NullaryExpr(
        input_dim, [&](Eigen::Index) { return rng.uniform(-0.3, 0.5); });
    k.log_sf2 = rng.uniform(-0.5, 0.5);
    gp.kernels.push_back(k);
    gp.m.push_back(rng.normal_vec(num_inducing));
    Matrix raw = 0.3 * rng.normal_mat(num_inducing, num_inducing);
    raw.diagonal().array() = -1.0;
    gp.l_raw.push_back(raw);
  }
  return gp;
}

GaussianDist marginal_q_ft(const SparseGP& gp, const Vector& x_prev) {
  const int dx = gp.output_dim();
  const int m_count = gp.num_inducing();
  check_arg(x_prev.size() == gp.input_dim(),
            "marginal_q_ft: input dim mismatch");
  GaussianDist out;
  out.mean = Vector::Zero(dx);
  out.cov = Matrix::Zero(dx, dx);
  Matrix x_row = x_prev.transpose();
  // Mirrors the tape builder operation by operation (matrix-shaped solves,
  // explicit transposes) so both paths agree to rounding error even on
  // ill-conditioned kernel matrices.
  for (int d = 0; d < dx; ++d) {
    Matrix kzz = gp.kernels[d].matrix(gp.z, gp.z);
    kzz.diagonal().array() += kJitter;
    Matrix l = chol_psd(kzz, "marginal_q_ft K_zz");
    Matrix kxz = gp.kernels[d].matrix(x_row, gp.z);  // 1 x M
    Matrix rhs = kxz.transpose();
    Matrix v = l.triangularView<Eigen::Lower>().solve(rhs);
    Matrix vm = l.triangularView<Eigen::Lower>().solve(Matrix(gp.m[d]));
    Matrix w = l.transpose().triangularView<Eigen::Upper>().solve(v);
    Matrix lt = gp.effective_l(d).transpose();
    Matrix u = lt * w;
    double kxx = gp.kernels[d].sf2();
    out.mean[d] = v.cwiseProduct(vm).sum();
    out.cov(d, d) = kxx - v.array().square().sum() +
                    u.array().square().sum() + kVarFloor;
  }
  (void)m_count;
  return out;
}

double kl_q_u(const SparseGP& gp) {
  const int m_count = gp.num_inducing();
  double total = 0.0;
  for (int d = 0; d < gp.output_dim(); ++d) {
    Matrix kzz = gp.kernels[d].matrix(gp.z, gp.z);
    kzz.diagonal().array() += kJitter;
    Matrix lk = chol_psd(kzz, "kl_q_u K_zz");
    Matrix ld = gp.effective_l(d);
    Matrix vm = lk.triangularView<Eigen::Lower>().solve(Matrix(gp.m[d]));
    Matrix w = lk.triangularView<Eigen::Lower>().solve(ld);
    double logdet_s = 2.0 * ld.diagonal().array().log().sum();
    double logdet_k = 2.0 * lk.diagonal().array().log().sum();
    total += 0.5 * (vm.array().square().sum() + w.array().square().sum() -
                    logdet_s + logdet_k - static_cast<double>(m_count));
  }
  return total;
}

// ---- tape builders ----------------------------------------------------------

std::string gp_param_name(const std::string& field, int d) {
  return "gp." + field + "." + std::to_string(d);
}

void register_sparse_gp(ad::ParamStore& store, const SparseGP& gp,
                        bool train_z) {
  store.add("gp.z", gp.z, train_z);
  for (int d = 0; d < gp.output_dim(); ++d) {
    store.add(gp_param_name("log_ell", d), gp.kernels[d].log_ell);
    store.add(gp_param_name("log_sf2", d),
              Matrix::Constant(1, 1, gp.kernels[d].log_sf2));
    store.add(gp_param_name("m", d), gp.m[d]);
    store.add(gp_param_name("l_raw", d), gp.l_raw[d]);
  }
}

void read_back_sparse_gp(const ad::ParamStore& store, SparseGP& gp) {
  gp.z = store["gp.z"];
  for (int d = 0; d < gp.output_dim(); ++d) {
    gp.kernels[d].log_ell = store[gp_param_name("log_ell", d)];
    gp.kernels[d].log_sf2 = store[gp_param_name("log_sf2", d)](0, 0);
    gp.m[d] = store[gp_param_name("m", d)];
    gp.l_raw[d] = store[gp_param_name("l_raw", d)];
  }
}

SparseGpVars build_sparse_gp_vars(ad::Tape& tape, const ad::VarMap& vars,
                                  int output_dim) {
  SparseGpVars gp;
  gp.z = vars.at("gp.z");
  const int m_count = gp.z.rows();
  Matrix jitter_eye =
      kJitter * Matrix::Identity(m_count, m_count);
  for (int d = 0; d < output_dim; ++d) {
    gp.log_ell.push_back(vars.at(gp_param_name("log_ell", d)));
    gp.log_sf2.push_back(vars.at(gp_param_name("log_sf2", d)));
    gp.m.push_back(vars.at(gp_param_name("m", d)));
    gp.l.push_back(ad::tril_softplus_diag(vars.at(gp_param_name("l_raw", d))));
    ad::Var kzz =
        ad::se_kernel(gp.z, gp.z, gp.log_ell[d], gp.log_sf2[d]);
    gp.kzz_chol.push_back(ad::cholesky(
        ad::add(kzz, tape.constant(jitter_eye)), gp_param_name("K_zz", d)));
  }
  return gp;
}

MarginalQf marginal_q_ft_tape(ad::Tape& tape, const SparseGpVars& gp, int d,
                              ad::Var x_row) {
  ad::Var kxz = ad::se_kernel(x_row, gp.z, gp.log_ell[d], gp.log_sf2[d]);
  ad::Var v = ad::solve_tril(gp.kzz_chol[d], ad::transpose(kxz));
  ad::Var vm = ad::solve_tril(gp.kzz_chol[d], gp.m[d]);
  ad::Var w = ad::solve_trilt(gp.kzz_chol[d], v);
  ad::Var u = ad::matmul(ad::transpose(gp.l[d]), w);
  ad::Var kxx = ad::exp(gp.log_sf2[d]);
  MarginalQf out;
  out.mean = ad::dot(v, vm);
  out.var = ad::cadd(
      ad::add(ad::sub(kxx, ad::squared_norm(v)), ad::squared_norm(u)),
      kVarFloor);
  return out;
}

ad::Var kl_q_u_tape(ad::Tape& tape, const SparseGpVars& gp) {
  const int dx = static_cast<int>(gp.m.size());
  const double m_count = static_cast<double>(gp.z.rows());
  ad::Var total = tape.constant(0.0);
  for (int d = 0; d < dx; ++d) {
    ad::Var vm = ad::solve_tril(gp.kzz_chol[d], gp.m[d]);
    ad::Var w = ad::solve_tril(gp.kzz_chol[d], gp.l[d]);
    ad::Var logdet_s = ad::log_det_from_chol(gp.l[d]);
    ad::Var logdet_k = ad::log_det_from_chol(gp.kzz_chol[d]);
    ad::Var term = ad::add(ad::squared_norm(vm), ad::squared_norm(w));
    term = ad::add(term, ad::sub(logdet_k, logdet_s));
    total = ad::add(total, ad::cmul(ad::cadd(term, -m_count), 0.5));
  }
  return total;
}

}  // namespace tgpssm
