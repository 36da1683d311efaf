// Linearized covariance propagation and state sampling.
#pragma once

#include <Eigen/Core>

#include "apsis/frames.hpp"
#include "apsis/rng.hpp"

namespace apsis {

using Matrix6d = Eigen::Matrix<double, 6, 6>;
using Vector6d = Eigen::Matrix<double, 6, 1>;

// d(r_ddot)/dr for point-mass gravity: mu * (3 r r^T / |r|^5 - I / |r|^3).
Eigen::Matrix3d gravity_jacobian(const Eigen::Vector3d& r, double mu);

// A = [[0, I], [G, 0]] over the (r, v) state.
Matrix6d dynamics_jacobian(const Eigen::Vector3d& r, double mu);

// First-order state transition matrix, Phi = I + A*dt.
Matrix6d stm_approx(const Matrix6d& A, double dt);

struct CovarianceResult {
  Matrix6d sigma;
  CartesianState state;  // reference trajectory endpoint
};

// Propagates sigma0 along the point-mass reference trajectory from s over
// a signed dt, chaining Phi = I + A*substep with substeps of at most
// max_substep seconds. The reference advances analytically.
CovarianceResult propagate_covariance(const CartesianState& s, const Matrix6d& sigma0,
                                      double dt, double max_substep, double mu);

// Per-axis standard deviations for (r, v); no cross correlation.
struct StateDistribution {
  CartesianState mean;
  Vector6d sigma = Vector6d::Zero();
};

// Diagonal fast path; all-zero sigma returns the mean exactly.
CartesianState sample_state(const StateDistribution& dist, Rng& rng);

// General case via Cholesky; throws std::invalid_argument when the
// covariance is not positive semidefinite.
CartesianState sample_state(const CartesianState& mean, const Matrix6d& cov, Rng& rng);

}  // namespace apsis
