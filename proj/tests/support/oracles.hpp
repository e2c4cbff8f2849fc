#pragma once

#include <cmath>
#include <vector>

#include "tgpssm/flows.hpp"
#include "tgpssm/gaussian.hpp"
#include "tgpssm/gp.hpp"
#include "tgpssm/rng.hpp"

namespace tgpssm::testing {

// Plain Gaussian elimination with partial pivoting; independent of any Eigen
// factorization used by the implementation.
inline Vector gauss_solve(Matrix a, Vector b) {
  const int n = static_cast<int>(a.rows());
  for (int k = 0; k < n; ++k) {
    int piv = k;
    for (int i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    a.row(k).swap(a.row(piv));
    std::swap(b[k], b[piv]);
    for (int i = k + 1; i < n; ++i) {
      double f = a(i, k) / a(k, k);
      a.row(i) -= f * a.row(k);
      b[i] -= f * b[k];
    }
  }
  Vector x = Vector::Zero(n);
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i] - a.row(i).tail(n - 1 - i).dot(x.tail(n - 1 - i));
    x[i] = s / a(i, i);
  }
  return x;
}

// |log p(F~,U~) via p(F|U) J_f * p(U) J_u  -  direct change of variables on
// the joint Gaussian|, on one random 2-point instance with an elementary
// flow. Inputs and inducing locations are kept apart so no jitter is needed
// and the Gaussian identity is exact.
inline double augmented_factorization_gap(std::uint64_t seed) {
  Rng rng(seed);
  const int t_count = 2, m_count = 2;

  SeKernel kernel;
  kernel.log_ell = Vector::Constant(1, rng.uniform(-0.2, 0.4));
  kernel.log_sf2 = rng.uniform(-0.3, 0.3);

  Matrix x(t_count, 1), z(m_count, 1);
  x << rng.uniform(-2.0, -1.2), rng.uniform(-0.8, -0.2);
  z << rng.uniform(0.2, 0.8), rng.uniform(1.2, 2.0);

  static const FlowKind kinds[] = {FlowKind::kSal, FlowKind::kTanh,
                                   FlowKind::kArcsinh, FlowKind::kSumOfTanh,
                                   FlowKind::kLinear};
  FlowKind kind = kinds[seed % 5];
  Vector theta;
  switch (kind) {
    case FlowKind::kSal:
      theta = (Vector(4) << rng.uniform(-0.5, 0.5), rng.uniform(0.7, 1.5),
               rng.uniform(-0.5, 0.5), rng.uniform(0.7, 1.5))
                  .finished();
      break;
    case FlowKind::kTanh:
      theta = (Vector(4) << rng.uniform(2.0, 4.0), rng.uniform(0.2, 0.6),
               rng.uniform(-0.3, 0.3), rng.uniform(-0.5, 0.5))
                  .finished();
      break;
    case FlowKind::kArcsinh:
      theta = (Vector(4) << rng.uniform(-0.5, 0.5), rng.uniform(0.7, 1.5),
               rng.uniform(-0.5, 0.5), rng.uniform(0.7, 1.5))
                  .finished();
      break;
    case FlowKind::kSumOfTanh:
      theta = (Vector(6) << rng.uniform(0.1, 0.8), rng.uniform(0.1, 0.8),
               rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5),
               rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5))
                  .finished();
      break;
    default:
      theta = (Vector(2) << rng.uniform(-0.5, 0.5), rng.uniform(0.7, 1.5))
                  .finished();
      kind = FlowKind::kLinear;
      break;
  }
  Rng flow_rng(1);
  FlowStack flow =
      FlowStack::create(1, {FlowLayerSpec{kind, theta, true, 2, 1, false, 8}},
                        flow_rng);

  // Joint Gaussian sample over stacked inputs [X; Z].
  Matrix w(t_count + m_count, 1);
  w << x, z;
  Matrix k_joint = kernel.matrix(w, w);
  Matrix l = chol_psd(k_joint, "factorization joint", false);
  Vector fu = l * rng.normal_vec(t_count + m_count);
  Vector f = fu.head(t_count), u = fu.tail(m_count);

  double ldj_all = 0.0;
  for (int i = 0; i < fu.size(); ++i)
    ldj_all += flow.log_det_jacobian(fu.segment(i, 1));

  // Route A: change of variables directly on the joint.
  double route_a = gaussian_log_pdf(fu, Vector::Zero(fu.size()), k_joint) -
                   ldj_all;

  // Route B: p(F|U) J_f * p(U) J_u.
  double ldj_f = 0.0, ldj_u = 0.0;
  for (int i = 0; i < t_count; ++i)
    ldj_f += flow.log_det_jacobian(f.segment(i, 1));
  for (int i = 0; i < m_count; ++i)
    ldj_u += flow.log_det_jacobian(u.segment(i, 1));
  GaussianDist cond = gp_conditional(kernel, z, u, 0.0, x, /*jitter=*/0.0);
  double route_b = gaussian_log_pdf(f, cond.mean, cond.cov) - ldj_f +
                   gaussian_log_pdf(u, Vector::Zero(m_count),
                                    kernel.matrix(z, z)) -
                   ldj_u;
  return std::abs(route_a - route_b);
}

}  // namespace tgpssm::testing
