#include "tgpssm/gaussian.hpp"

#include <cmath>

namespace tgpssm {

Matrix chol_psd(const Matrix& a, const std::string& what, bool allow_jitter) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  if (allow_jitter) {
    Matrix aj = a + kJitter * Matrix::Identity(a.rows(), a.cols());
    Eigen::LLT<Matrix> llt2(aj);
    if (llt2.info() == Eigen::Success) return llt2.matrixL();
  }
  throw CholeskyError("cholesky failed: " + what);
}

double gaussian_log_pdf(const Vector& x, const Vector& mean,
                        const Matrix& cov) {
  check_arg(x.size() == mean.size() && cov.rows() == x.size() &&
                cov.cols() == x.size(),
            "gaussian_log_pdf: dimension mismatch");
  Matrix l = chol_psd(cov, "gaussian_log_pdf covariance", false);
  Vector z = l.triangularView<Eigen::Lower>().solve(x - mean);
  double logdet = 2.0 * l.diagonal().array().log().sum();
  double n = static_cast<double>(x.size());
  return -0.5 * (z.squaredNorm() + logdet + n * std::log(2.0 * M_PI));
}

double gaussian_log_pdf_diag(const Vector& x, const Vector& mean,
                             const Vector& var) {
  check_arg(x.size() == mean.size() && var.size() == x.size(),
            "gaussian_log_pdf_diag: dimension mismatch");
  double out = -0.5 * static_cast<double>(x.size()) * std::log(2.0 * M_PI);
  for (int i = 0; i < x.size(); ++i) {
    double r = x[i] - mean[i];
    out -= 0.5 * (std::log(var[i]) + r * r / var[i]);
  }
  return out;
}

Vector sample_gaussian(const GaussianDist& g, Rng& rng) {
  Matrix l = chol_psd(g.cov, "sample_gaussian covariance");
  return g.mean + l * rng.normal_vec(g.dim());
}

double kl_gaussian(const GaussianDist& q, const GaussianDist& p) {
  check_arg(q.dim() == p.dim(), "kl_gaussian: dimension mismatch");
  const int n = q.dim();
  Matrix lp = chol_psd(p.cov, "kl_gaussian p covariance");
  Vector z = lp.triangularView<Eigen::Lower>().solve(p.mean - q.mean);
  // tr(Sp^-1 Sq) = || Lp^-1 Lq ||_F^2
  Matrix lq = chol_psd(q.cov, "kl_gaussian q covariance");
  Matrix w = lp.triangularView<Eigen::Lower>().solve(Matrix(lq));
  double logdet_p = 2.0 * lp.diagonal().array().log().sum();
  double logdet_q = 2.0 * lq.diagonal().array().log().sum();
  return 0.5 * (z.squaredNorm() + w.squaredNorm() - (logdet_q - logdet_p) -
                static_cast<double>(n));
}

}  // namespace tgpssm
