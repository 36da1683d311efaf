#include "apsis/frames.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace apsis {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kCircularTol = 1e-9;    // eccentricity below this is circular
constexpr double kEquatorialTol = 1e-9;  // inclination below this is equatorial
}  // namespace

double wrap_angle(double x) {
  double w = std::fmod(x, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  if (w >= kTwoPi) w = 0.0;  // guards fmod results that round up
  return w;
}

double wrap_signed(double x) {
  double w = std::remainder(x, kTwoPi);
  return w;
}

double solve_kepler(double mean_anomaly, double e) {
  if (e < 0.0 || e >= 1.0) throw std::invalid_argument("solve_kepler: e outside [0,1)");
  double M = wrap_angle(mean_anomaly);
  double E = e > 0.8 ? std::numbers::pi : M;
  for (int it = 0; it < 50; ++it) {
    double f = E - e * std::sin(E) - M;
    double fp = 1.0 - e * std::cos(E);
    double dE = f / fp;
    E -= dE;
    if (std::abs(dE) < 1e-13) break;
  }
  return wrap_angle(E);
}

namespace {
double true_to_eccentric(double nu, double e) {
  return std::atan2(std::sqrt(1.0 - e * e) * std::sin(nu), e + std::cos(nu));
}

double eccentric_to_true(double E, double e) {
  return std::atan2(std::sqrt(1.0 - e * e) * std::sin(E), std::cos(E) - e);
}
}  // namespace

double convert_anomaly(double value, double e, AnomalyKind from, AnomalyKind to) {
  if (e < 0.0 || e >= 1.0) throw std::invalid_argument("convert_anomaly: e outside [0,1)");
  if (from == to) return wrap_angle(value);
  // Route through the eccentric anomaly.
  double E = 0.0;
  switch (from) {
    case AnomalyKind::True: E = true_to_eccentric(value, e); break;
    case AnomalyKind::Eccentric: E = value; break;
    case AnomalyKind::Mean: E = solve_kepler(value, e); break;
  }
  switch (to) {
    case AnomalyKind::True: return wrap_angle(eccentric_to_true(E, e));
    case AnomalyKind::Eccentric: return wrap_angle(E);
    case AnomalyKind::Mean: return wrap_angle(E - e * std::sin(E));
  }
  return wrap_angle(E);
}

double mean_motion(double a, double mu) {
  if (a <= 0.0) throw std::invalid_argument("mean_motion: a <= 0");
  return std::sqrt(mu / (a * a * a));
}

double orbital_period(double a, double mu) { return kTwoPi / mean_motion(a, mu); }

CartesianState keplerian_to_cartesian(const KeplerianElements& k, double mu, double epoch) {
  if (k.a <= 0.0) throw std::invalid_argument("keplerian_to_cartesian: a <= 0");
  if (k.e < 0.0 || k.e >= 1.0)
    throw std::invalid_argument("keplerian_to_cartesian: e outside [0,1)");
  double nu = convert_anomaly(k.anomaly, k.e, k.anomaly_kind, AnomalyKind::True);
  double p = k.a * (1.0 - k.e * k.e);
  double rmag = p / (1.0 + k.e * std::cos(nu));
  Eigen::Vector3d r_pf(rmag * std::cos(nu), rmag * std::sin(nu), 0.0);
  double f = std::sqrt(mu / p);
  Eigen::Vector3d v_pf(-f * std::sin(nu), f * (k.e + std::cos(nu)), 0.0);

  // 3-1-3 rotation: Rz(raan) * Rx(i) * Rz(argp).
  double co = std::cos(k.argp), so = std::sin(k.argp);
  double ci = std::cos(k.i), si = std::sin(k.i);
  double cO = std::cos(k.raan), sO = std::sin(k.raan);
  Eigen::Matrix3d R;
  R << cO * co - sO * so * ci, -cO * so - sO * co * ci, sO * si,
       sO * co + cO * so * ci, -sO * so + cO * co * ci, -cO * si,
       so * si, co * si, ci;

  CartesianState s;
  s.r = R * r_pf;
  s.v = R * v_pf;
  s.t = epoch;
  return s;
}

KeplerianElements cartesian_to_keplerian(const CartesianState& s, double mu) {
  const Eigen::Vector3d& r = s.r;
  const Eigen::Vector3d& v = s.v;
  double rmag = r.norm();
  if (rmag == 0.0) throw std::invalid_argument("cartesian_to_keplerian: zero position");
  Eigen::Vector3d h = r.cross(v);
  double hmag = h.norm();
  if (hmag < 1e-8 * rmag * v.norm() || hmag == 0.0)
    throw std::invalid_argument("cartesian_to_keplerian: zero angular momentum");

  double energy = 0.5 * v.squaredNorm() - mu / rmag;
  if (energy >= 0.0)
    throw std::invalid_argument("cartesian_to_keplerian: non-elliptical state");
  double a = -mu / (2.0 * energy);

  Eigen::Vector3d e_vec = ((v.squaredNorm() - mu / rmag) * r - r.dot(v) * v) / mu;
  double e = e_vec.norm();
  if (e >= 1.0) throw std::invalid_argument("cartesian_to_keplerian: e >= 1");

  double i = std::acos(std::clamp(h.z() / hmag, -1.0, 1.0));
  bool circular = e < kCircularTol;
  bool equatorial = i < kEquatorialTol || i > std::numbers::pi - kEquatorialTol;

  Eigen::Vector3d n(-h.y(), h.x(), 0.0);  // node vector, z_hat x h
  double nmag = n.norm();

  KeplerianElements k;
  k.a = a;
  k.e = e;
  k.i = i;
  k.anomaly_kind = AnomalyKind::True;

  if (equatorial) {
    double sgn = h.z() >= 0.0 ? 1.0 : -1.0;  // retrograde longitudes run backwards
    k.raan = 0.0;
    if (circular) {
      // True longitude measured from x_hat.
      k.argp = 0.0;
      k.anomaly = wrap_angle(sgn * std::atan2(r.y(), r.x()));
    } else {
      // Longitude of perigee measured from x_hat.
      k.argp = wrap_angle(sgn * std::atan2(e_vec.y(), e_vec.x()));
      double nu = std::acos(std::clamp(e_vec.dot(r) / (e * rmag), -1.0, 1.0));
      if (r.dot(v) < 0.0) nu = kTwoPi - nu;
      k.anomaly = wrap_angle(nu);
    }
    return k;
  }

  k.raan = wrap_angle(std::atan2(n.y(), n.x()));
  if (circular) {
    k.argp = 0.0;
    // Argument of latitude from the node.
    double u = std::acos(std::clamp(n.dot(r) / (nmag * rmag), -1.0, 1.0));
    if (r.z() < 0.0) u = kTwoPi - u;
    k.anomaly = wrap_angle(u);
  } else {
    double w = std::acos(std::clamp(n.dot(e_vec) / (nmag * e), -1.0, 1.0));
    if (e_vec.z() < 0.0) w = kTwoPi - w;
    k.argp = wrap_angle(w);
    double nu = std::acos(std::clamp(e_vec.dot(r) / (e * rmag), -1.0, 1.0));
    if (r.dot(v) < 0.0) nu = kTwoPi - nu;
    k.anomaly = wrap_angle(nu);
  }
  return k;
}

EquinoctialElements keplerian_to_equinoctial(const KeplerianElements& k) {
  EquinoctialElements q;
  q.a = k.a;
  double lon_peri = k.argp + k.raan;
  q.ex = k.e * std::cos(lon_peri);
  q.ey = k.e * std::sin(lon_peri);
  double t2 = std::tan(k.i / 2.0);
  q.hx = t2 * std::cos(k.raan);
  q.hy = t2 * std::sin(k.raan);
  q.M = convert_anomaly(k.anomaly, k.e, k.anomaly_kind, AnomalyKind::Mean);
  return q;
}

KeplerianElements equinoctial_to_keplerian(const EquinoctialElements& q) {
  KeplerianElements k;
  k.a = q.a;
  k.e = std::hypot(q.ex, q.ey);
  double t2 = std::hypot(q.hx, q.hy);
  k.i = 2.0 * std::atan(t2);
  bool equatorial = k.i < kEquatorialTol;
  bool circular = k.e < kCircularTol;
  k.raan = equatorial ? 0.0 : wrap_angle(std::atan2(q.hy, q.hx));
  if (circular) {
    k.e = k.e < 1e-15 ? 0.0 : k.e;
    k.argp = 0.0;
  } else {
    double lon_peri = std::atan2(q.ey, q.ex);
    k.argp = wrap_angle(lon_peri - k.raan);
  }
  k.anomaly = wrap_angle(q.M);
  k.anomaly_kind = AnomalyKind::Mean;
  return k;
}

EquinoctialElements cartesian_to_equinoctial(const CartesianState& s, double mu) {
  return keplerian_to_equinoctial(cartesian_to_keplerian(s, mu));
}

CartesianState equinoctial_to_cartesian(const EquinoctialElements& q, double mu,
                                        double epoch) {
  return keplerian_to_cartesian(equinoctial_to_keplerian(q), mu, epoch);
}

CartesianState kepler_advance(const CartesianState& s, double dt, double mu) {
  KeplerianElements k = cartesian_to_keplerian(s, mu);
  double M0 = convert_anomaly(k.anomaly, k.e, k.anomaly_kind, AnomalyKind::Mean);
  k.anomaly = wrap_angle(M0 + mean_motion(k.a, mu) * dt);
  k.anomaly_kind = AnomalyKind::Mean;
  return keplerian_to_cartesian(k, mu, s.t + dt);
}

RswBasis rsw_basis(const CartesianState& s) {
  double rmag = s.r.norm();
  if (rmag == 0.0) throw std::invalid_argument("rsw_basis: zero position");
  Eigen::Vector3d h = s.r.cross(s.v);
  double hmag = h.norm();
  if (hmag == 0.0) throw std::invalid_argument("rsw_basis: zero angular momentum");
  RswBasis b;
  b.r_hat = s.r / rmag;
  b.w_hat = h / hmag;
  b.s_hat = b.w_hat.cross(b.r_hat);
  return b;
}

Eigen::Vector3d thrust_to_inertial(const PolarThrust& t, const RswBasis& basis) {
  if (t.magnitude < 0.0) throw std::invalid_argument("thrust_to_inertial: negative magnitude");
  Eigen::Vector3d dir = std::cos(t.theta) * basis.s_hat +
                        std::sin(t.theta) * (std::cos(t.phi) * basis.r_hat +
                                             std::sin(t.phi) * basis.w_hat);
  return t.magnitude * dir;
}

}  // namespace apsis
