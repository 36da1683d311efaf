// Orbital element sets, anomaly conversions, and local orbital frames.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace apsis {

// Physical constants (SI units).
inline constexpr double kMuEarth = 3.986004418e14;  // m^3/s^2
inline constexpr double kEarthRadius = 6.378e6;     // m
inline constexpr double kJ2Earth = 1.08263e-3;
inline constexpr double kStandardGravity = 9.80665;  // m/s^2

enum class AnomalyKind { True, Eccentric, Mean };

// Inertial position/velocity plus an epoch in scenario seconds.
struct CartesianState {
  Eigen::Vector3d r = Eigen::Vector3d::Zero();  // m
  Eigen::Vector3d v = Eigen::Vector3d::Zero();  // m/s
  double t = 0.0;                               // s
};

// Classical elements. Angles in radians, normalized to [0, 2*pi).
struct KeplerianElements {
  double a = 0.0;     // semi-major axis, m
  double e = 0.0;     // eccentricity
  double i = 0.0;     // inclination
  double argp = 0.0;  // argument of perigee
  double raan = 0.0;  // right ascension of the ascending node
  double anomaly = 0.0;
  AnomalyKind anomaly_kind = AnomalyKind::True;
};

// Modified equinoctial set (a, ex, ey, hx, hy, M); nonsingular for
// circular and equatorial orbits.
struct EquinoctialElements {
  double a = 0.0;
  double ex = 0.0;  // e*cos(argp+raan)
  double ey = 0.0;  // e*sin(argp+raan)
  double hx = 0.0;  // tan(i/2)*cos(raan)
  double hy = 0.0;  // tan(i/2)*sin(raan)
  double M = 0.0;   // mean anomaly
};

// Radial / along-track / cross-track unit vectors.
struct RswBasis {
  Eigen::Vector3d r_hat;
  Eigen::Vector3d s_hat;
  Eigen::Vector3d w_hat;
};

// Thrust in polar form relative to the RSW frame: theta is measured from
// the along-track axis, phi sweeps the radial/cross-track plane.
struct PolarThrust {
  double magnitude = 0.0;  // N, >= 0
  double theta = 0.0;      // [0, pi]
  double phi = 0.0;        // [0, 2*pi)
};

// Normalizes an angle to [0, 2*pi).
double wrap_angle(double x);

// Smallest signed difference a-b wrapped to (-pi, pi].
double wrap_signed(double x);

// Solves Kepler's equation M = E - e*sin(E) for E by Newton iteration.
// Tolerance 1e-13 on the update, at most 50 iterations.
double solve_kepler(double mean_anomaly, double e);

// Converts an anomaly between true/eccentric/mean forms. Elliptical only.
double convert_anomaly(double value, double e, AnomalyKind from, AnomalyKind to);

double mean_motion(double a, double mu);
double orbital_period(double a, double mu);

// Perifocal construction followed by the 3-1-3 rotation. Throws
// std::invalid_argument for non-elliptical input (a <= 0 or e >= 1).
CartesianState keplerian_to_cartesian(const KeplerianElements& k, double mu,
                                      double epoch = 0.0);

// Inverse conversion. Degenerate geometries are canonicalized: e < 1e-9
// forces argp = 0, i < 1e-9 forces raan = 0. Returns a true anomaly.
// Throws std::invalid_argument for parabolic/hyperbolic or zero angular
// momentum states.
KeplerianElements cartesian_to_keplerian(const CartesianState& s, double mu);

EquinoctialElements keplerian_to_equinoctial(const KeplerianElements& k);

// Returns elements with a mean anomaly. The same degenerate-geometry
// conventions as cartesian_to_keplerian apply.
KeplerianElements equinoctial_to_keplerian(const EquinoctialElements& q);

EquinoctialElements cartesian_to_equinoctial(const CartesianState& s, double mu);
CartesianState equinoctial_to_cartesian(const EquinoctialElements& q, double mu,
                                        double epoch = 0.0);

// Analytic two-body propagation by mean anomaly advance. Exact for
// point-mass dynamics; elliptical states only.
CartesianState kepler_advance(const CartesianState& s, double dt, double mu);

// Requires nonzero position and angular momentum.
RswBasis rsw_basis(const CartesianState& s);

// T * (cos(theta)*S + sin(theta)*(cos(phi)*R + sin(phi)*W)).
Eigen::Vector3d thrust_to_inertial(const PolarThrust& t, const RswBasis& basis);

}  // namespace apsis
