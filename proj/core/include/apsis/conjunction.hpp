// Short-term encounter analysis: TCA, conjunction plane, collision probability.
#pragma once

#include <Eigen/Core>

#include "apsis/frames.hpp"

namespace apsis {

// Probability threshold above which an encounter counts as high risk.
inline constexpr double kPocRiskThreshold = 1e-6;

// Target-minus-chaser relative kinematics.
struct RelativeState {
  Eigen::Vector3d r = Eigen::Vector3d::Zero();  // m
  Eigen::Vector3d v = Eigen::Vector3d::Zero();  // m/s
};

struct ConjunctionGeometry {
  Eigen::Matrix3d Q;               // rows are the RTN axes of the chaser
  Eigen::Matrix<double, 3, 2> C;   // columns J_hat, K_hat in RTN coordinates
  Eigen::Vector2d mu2;             // projected relative position, m
  Eigen::Matrix2d sigma2;          // projected combined covariance, m^2
  double combined_radius = 0.0;    // R_T + R_C, m
};

struct PocResult {
  double value = 0.0;
  double abs_error_estimate = 0.0;
};

// TCA = -r.v / v.v under linear relative motion; may be negative.
// Throws std::invalid_argument for zero relative velocity.
double time_of_closest_approach(const RelativeState& rel);

// |r + TCA*v|, the linear-motion minimum separation.
double miss_distance(const RelativeState& rel);

struct ScreeningMiss {
  double distance = 0.0;
  bool receding = false;  // TCA <= 0: current separation reported instead
};

// Forward-window variant: a receding geometry reports the current |r|.
ScreeningMiss miss_distance_screened(const RelativeState& rel);

// Rows R_hat, T_hat, N_hat of the chaser-centered frame. Throws
// std::invalid_argument for degenerate (r parallel to v) states.
Eigen::Matrix3d rtn_basis(const CartesianState& chaser);

// Builds the conjunction plane at an encounter. sigma_T/sigma_C are 3x3
// position covariances in the inertial frame; radii combine additively.
// Throws std::domain_error("non-crossing geometry") when the target and
// chaser velocities are (anti)parallel and the plane normal is undefined.
ConjunctionGeometry conjunction_geometry(const CartesianState& target,
                                         const CartesianState& chaser,
                                         const Eigen::Matrix3d& sigma_T,
                                         const Eigen::Matrix3d& sigma_C,
                                         double radius_T, double radius_C);

// 2D Gaussian mass of the combined-radius disk, integrated adaptively in
// polar coordinates to the given absolute tolerance. Throws
// std::invalid_argument for singular sigma2.
PocResult probability_of_collision(const ConjunctionGeometry& geom,
                                   double abs_tol = 1e-10);
PocResult probability_of_collision(const Eigen::Vector2d& mu2,
                                   const Eigen::Matrix2d& sigma2, double radius,
                                   double abs_tol = 1e-10);

// Closed form for the centered isotropic case, 1 - exp(-R^2 / (2 sigma^2)).
double poc_isotropic(double sigma, double radius);

}  // namespace apsis
