#include "apsis/uncertainty.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>

namespace apsis {

Eigen::Matrix3d gravity_jacobian(const Eigen::Vector3d& r, double mu) {
  double rm = r.norm();
  if (rm == 0.0) throw std::invalid_argument("gravity_jacobian: zero position");
  double r3 = rm * rm * rm;
  double r5 = r3 * rm * rm;
  return mu * (3.0 * r * r.transpose() / r5 - Eigen::Matrix3d::Identity() / r3);
}

Matrix6d dynamics_jacobian(const Eigen::Vector3d& r, double mu) {
  Matrix6d A = Matrix6d::Zero();
  A.block<3, 3>(0, 3) = Eigen::Matrix3d::Identity();
  A.block<3, 3>(3, 0) = gravity_jacobian(r, mu);
  return A;
}

Matrix6d stm_approx(const Matrix6d& A, double dt) {
  return Matrix6d::Identity() + dt * A;
}

CovarianceResult propagate_covariance(const CartesianState& s, const Matrix6d& sigma0,
                                      double dt, double max_substep, double mu) {
  if (max_substep <= 0.0)
    throw std::invalid_argument("propagate_covariance: max_substep <= 0");
  CovarianceResult res{sigma0, s};
  if (dt == 0.0) return res;
  double total = std::abs(dt);
  double dir = dt > 0.0 ? 1.0 : -1.0;
  int n = static_cast<int>(std::ceil(total / max_substep - 1e-12));
  double h = total / n;
  CartesianState cur = s;
  for (int i = 0; i < n; ++i) {
    Matrix6d phi = stm_approx(dynamics_jacobian(cur.r, mu), dir * h);
    res.sigma = phi * res.sigma * phi.transpose();
    cur = kepler_advance(cur, dir * h, mu);
  }
  res.state = cur;
  // Round symmetry drift from the repeated congruence products.
  res.sigma = 0.5 * (res.sigma + res.sigma.transpose());
  return res;
}

CartesianState sample_state(const StateDistribution& dist, Rng& rng) {
  CartesianState out = dist.mean;
  for (int k = 0; k < 3; ++k) {
    if (dist.sigma[k] != 0.0) out.r[k] += dist.sigma[k] * rng.normal();
  }
  for (int k = 0; k < 3; ++k) {
    if (dist.sigma[3 + k] != 0.0) out.v[k] += dist.sigma[3 + k] * rng.normal();
  }
  return out;
}

CartesianState sample_state(const CartesianState& mean, const Matrix6d& cov, Rng& rng) {
  Eigen::LLT<Matrix6d> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("sample_state: covariance not positive definite");
  Vector6d z;
  for (int k = 0; k < 6; ++k) z[k] = rng.normal();
  Vector6d d = llt.matrixL() * z;
  CartesianState out = mean;
  out.r += d.head<3>();
  out.v += d.tail<3>();
  return out;
}

}  // namespace apsis
