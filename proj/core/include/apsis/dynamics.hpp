// Force models and fixed-step RK4 propagation of (r, v, m).
#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "apsis/frames.hpp"

namespace apsis {

// Default exponential-atmosphere parameters (700 km reference band).
inline constexpr double kDragRho0 = 3.614e-13;        // kg/m^3
inline constexpr double kDragH0 = 700e3;              // m
inline constexpr double kDragScaleHeight = 88.667e3;  // m

struct BodyProperties {
  double dry_mass = 0.0;  // kg
  double radius = 1.0;    // m, drag cross-section and collision radius
  double cd = 2.2;        // drag coefficient
  double cr = 1.0;        // reflectivity coefficient (carried, unused by forces)
  double isp = 300.0;     // s
};

struct ForceConfig {
  double mu = kMuEarth;
  double earth_radius = kEarthRadius;
  bool enable_j2 = false;
  double j2 = kJ2Earth;
  bool enable_drag = false;
  double drag_rho0 = kDragRho0;
  double drag_h0 = kDragH0;
  double drag_scale_height = kDragScaleHeight;
};

// Propagation state: inertial position/velocity, wet mass, epoch.
struct PropState {
  Eigen::Vector3d r = Eigen::Vector3d::Zero();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  double m = 0.0;
  double t = 0.0;
};

// Point-mass gravity, -mu/|r|^3 * r.
Eigen::Vector3d gravity_accel(const Eigen::Vector3d& r, double mu);

// First zonal harmonic.
Eigen::Vector3d j2_accel(const Eigen::Vector3d& r, double mu, double j2,
                         double earth_radius);

// rho0 * exp(-(h - h0)/H) for altitude h above earth_radius.
double atmosphere_density(double altitude, const ForceConfig& cfg);

// -0.5 * cd * (A/m) * rho * |v| * v with A = pi * radius^2.
Eigen::Vector3d drag_accel(const Eigen::Vector3d& r, const Eigen::Vector3d& v,
                           double mass, const BodyProperties& props,
                           const ForceConfig& cfg);

// Mass rate for a thrust magnitude, -|T| / (isp * g0). <= 0.
double mass_flow(double thrust_norm, double isp);

struct StateDerivative {
  Eigen::Vector3d dr;
  Eigen::Vector3d dv;
  double dm;
};

// Full right-hand side at state s under constant inertial thrust.
StateDerivative derivative(const PropState& s, const Eigen::Vector3d& thrust,
                           const BodyProperties& props, const ForceConfig& cfg);

struct StepResult {
  PropState state;
  bool fuel_exhausted = false;  // thrust was cut (fully or mid-step) by the mass floor
};

// One classical RK4 step of signed length dt with constant thrust. If the
// mass floor would be crossed, the step is split exactly at the exhaustion
// time and the remainder integrates ballistically.
StepResult rk4_step(const PropState& s, double dt, const Eigen::Vector3d& thrust,
                    const BodyProperties& props, const ForceConfig& cfg);

// Constant inertial thrust over [t_start, t_end) in scenario seconds.
struct ThrustPhase {
  double t_start = 0.0;
  double t_end = 0.0;
  Eigen::Vector3d thrust = Eigen::Vector3d::Zero();
};

struct PropagationResult {
  std::vector<PropState> states;  // s0 first, then one per step
  bool deorbited = false;
  bool fuel_exhausted = false;
};

// Fixed-step propagation over a signed duration. Output steps split
// internally at thrust phase boundaries; the final step may be partial.
// Halts early (flagged) when |r| drops below earth_radius. Throws
// std::runtime_error on non-finite state.
PropagationResult propagate(const PropState& s0, double duration, double step,
                            std::span<const ThrustPhase> phases,
                            const BodyProperties& props, const ForceConfig& cfg);

}  // namespace apsis
