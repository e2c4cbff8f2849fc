#pragma once

#include "tgpssm/common.hpp"
#include "tgpssm/rng.hpp"

namespace tgpssm {

// Multivariate Gaussian by mean and (dense) covariance.
struct GaussianDist {
  Vector mean;
  Matrix cov;

  int dim() const { return static_cast<int>(mean.size()); }
};

// Cholesky factor of a symmetric positive definite matrix. Throws
// CholeskyError (after one retry with kJitter when allow_jitter) on failure.
Matrix chol_psd(const Matrix& a, const std::string& what,
                bool allow_jitter = true);

// log N(x | mean, cov)
double gaussian_log_pdf(const Vector& x, const Vector& mean, const Matrix& cov);

// log N(x | mean, diag(var))
double gaussian_log_pdf_diag(const Vector& x, const Vector& mean,
                             const Vector& var);

Vector sample_gaussian(const GaussianDist& g, Rng& rng);

// KL(q || p) for multivariate Gaussians:
//   0.5 [ (m_p-m_q)' Sp^-1 (m_p-m_q) + tr(Sp^-1 Sq) - ln(|Sq|/|Sp|) - n ]
double kl_gaussian(const GaussianDist& q, const GaussianDist& p);

}  // namespace tgpssm
