#include "apsis/conjunction.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Geometry>

namespace apsis {
namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kDegenerateVelocity2 = 1e-24;  // (m/s)^2

struct QuadResult {
  double value = 0.0;
  double err = 0.0;
};

// Recursive Simpson with Richardson acceptance; accepted panels accumulate
// |S2 - S1| / 15 as the error estimate and the budget halves on each split.
template <typename F>
void simpson_panel(const F& f, double a, double fa, double b, double fb,
                   double m, double fm, double whole, double tol, int depth,
                   QuadResult* out) {
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) {
    out->value += left + right + delta / 15.0;
    out->err += std::abs(delta) / 15.0;
    return;
  }
  simpson_panel(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1, out);
  simpson_panel(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1, out);
}

// Splits [a, b] into fixed panels before adapting so a peak narrower than
// the whole interval cannot fool the first acceptance test.
template <typename F>
QuadResult adaptive_simpson(const F& f, double a, double b, double tol,
                            int initial_panels) {
  QuadResult out;
  const double h = (b - a) / initial_panels;
  const double panel_tol = tol / initial_panels;
  double fa = f(a);
  for (int k = 0; k < initial_panels; ++k) {
    const double x0 = a + k * h;
    const double x1 = (k + 1 == initial_panels) ? b : x0 + h;
    const double xm = 0.5 * (x0 + x1);
    const double fb = f(x1);
    const double fm = f(xm);
    const double whole = (x1 - x0) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_panel(f, x0, fa, x1, fb, xm, fm, whole, panel_tol, 48, &out);
    fa = fb;
  }
  return out;
}

}  // namespace

double time_of_closest_approach(const RelativeState& rel) {
  const double vv = rel.v.squaredNorm();
  if (vv < kDegenerateVelocity2) {
    throw std::invalid_argument(
        "time_of_closest_approach: zero relative velocity");
  }
  return -rel.r.dot(rel.v) / vv;
}

double miss_distance(const RelativeState& rel) {
  const double t = time_of_closest_approach(rel);
  return (rel.r + t * rel.v).norm();
}

ScreeningMiss miss_distance_screened(const RelativeState& rel) {
  if (rel.v.squaredNorm() < kDegenerateVelocity2) {
    return {rel.r.norm(), true};
  }
  const double t = time_of_closest_approach(rel);
  if (t <= 0.0) return {rel.r.norm(), true};
  return {(rel.r + t * rel.v).norm(), false};
}

Eigen::Matrix3d rtn_basis(const CartesianState& chaser) {
  const double rn = chaser.r.norm();
  if (rn <= 0.0) throw std::invalid_argument("rtn_basis: zero position");
  const Eigen::Vector3d r_hat = chaser.r / rn;
  const Eigen::Vector3d h = chaser.r.cross(chaser.v);
  const double hn = h.norm();
  if (hn <= 1e-12 * rn * chaser.v.norm() || hn == 0.0) {
    throw std::invalid_argument("rtn_basis: degenerate (radial) velocity");
  }
  const Eigen::Vector3d n_hat = h / hn;
  const Eigen::Vector3d t_hat = n_hat.cross(r_hat);
  Eigen::Matrix3d q;
  q.row(0) = r_hat;
  q.row(1) = t_hat;
  q.row(2) = n_hat;
  return q;
}

ConjunctionGeometry conjunction_geometry(const CartesianState& target,
                                         const CartesianState& chaser,
                                         const Eigen::Matrix3d& sigma_T,
                                         const Eigen::Matrix3d& sigma_C,
                                         double radius_T, double radius_C) {
  ConjunctionGeometry geom;
  geom.Q = rtn_basis(chaser);

  const Eigen::Vector3d r_rel = geom.Q * (target.r - chaser.r);
  const Eigen::Vector3d v_t = geom.Q * target.v;
  const Eigen::Vector3d v_c = geom.Q * chaser.v;

  const Eigen::Vector3d v_rel = v_t - v_c;
  const double v_rel_n = v_rel.norm();
  if (v_rel_n * v_rel_n < kDegenerateVelocity2) {
    throw std::domain_error("non-crossing geometry");
  }
  const Eigen::Vector3d i_hat = v_rel / v_rel_n;

  const Eigen::Vector3d cross_tc = v_t.cross(v_c);
  const double cross_n = cross_tc.norm();
  if (cross_n <= 1e-12 * v_t.norm() * v_c.norm() || cross_n == 0.0) {
    throw std::domain_error("non-crossing geometry");
  }
  const Eigen::Vector3d j_hat = cross_tc / cross_n;
  const Eigen::Vector3d k_hat = i_hat.cross(j_hat);

  geom.C.col(0) = j_hat;
  geom.C.col(1) = k_hat;
  geom.mu2 = geom.C.transpose() * r_rel;

  const Eigen::Matrix3d sigma_rtn =
      geom.Q * (sigma_T + sigma_C) * geom.Q.transpose();
  geom.sigma2 = geom.C.transpose() * sigma_rtn * geom.C;
  geom.combined_radius = radius_T + radius_C;
  return geom;
}

double poc_isotropic(double sigma, double radius) {
  return -std::expm1(-radius * radius / (2.0 * sigma * sigma));
}

PocResult probability_of_collision(const Eigen::Vector2d& mu2,
                                   const Eigen::Matrix2d& sigma2, double radius,
                                   double abs_tol) {
  if (!(radius >= 0.0) || !std::isfinite(radius)) {
    throw std::invalid_argument("probability_of_collision: bad radius");
  }
  if (!(abs_tol > 0.0)) {
    throw std::invalid_argument("probability_of_collision: bad tolerance");
  }
  const double det = sigma2.determinant();
  if (!sigma2.allFinite() || !(det > 0.0) || !(sigma2(0, 0) > 0.0)) {
    throw std::invalid_argument(
        "probability_of_collision: singular covariance");
  }
  if (radius == 0.0) return {0.0, 0.0};

  Eigen::Matrix2d inv;
  inv << sigma2(1, 1), -sigma2(0, 1), -sigma2(1, 0), sigma2(0, 0);
  inv /= det;
  const double norm = 1.0 / (2.0 * kPi * std::sqrt(det));

  // Largest standard deviation, used to bound the density support.
  const double tr = sigma2(0, 0) + sigma2(1, 1);
  const double disc = std::sqrt(std::max(0.0, tr * tr - 4.0 * det));
  const double sig_max = std::sqrt(0.5 * (tr + disc));

  // Density beyond |mu| + 40 sigma is below any representable tolerance, so
  // the radial range is clamped there; the truncation loses nothing.
  const double mu_n = mu2.norm();
  const double r_upper = std::min(radius, mu_n + 40.0 * sig_max);
  if (!(r_upper > 0.0)) return {0.0, 0.0};

  // The angular peak sits where the circle passes closest to the mean;
  // rotating the integration start there puts it on an evaluation point.
  const double theta0 = (mu_n > 0.0) ? std::atan2(mu2.y(), mu2.x()) : 0.0;

  // Inner budget is per ring; the induced outer bias is at most
  // inner_tol * r_upper^2 / 2 which the denominator keeps within abs_tol / 2.
  const double inner_tol = 0.5 * abs_tol / std::max(1.0, r_upper * r_upper);
  const double outer_tol = 0.5 * abs_tol;
  double inner_err_max = 0.0;

  auto ring = [&](double rho) {
    auto pdf = [&](double t) {
      const double theta = theta0 + t;
      const Eigen::Vector2d d(rho * std::cos(theta) - mu2.x(),
                              rho * std::sin(theta) - mu2.y());
      return norm * std::exp(-0.5 * d.dot(inv * d));
    };
    const QuadResult s = adaptive_simpson(pdf, 0.0, 2.0 * kPi, inner_tol, 16);
    inner_err_max = std::max(inner_err_max, s.err);
    return rho * s.value;
  };

  // Radial knots bracketing the annulus where the density lives keep a
  // narrow ring from slipping between panel evaluation points.
  std::vector<double> knots{0.0, r_upper};
  for (double k : {-40.0, -10.0, -3.0, -1.0, 1.0, 3.0, 10.0, 40.0}) {
    const double x = mu_n + k * sig_max;
    if (x > 0.0 && x < r_upper) knots.push_back(x);
  }
  if (mu_n > 0.0 && mu_n < r_upper) knots.push_back(mu_n);
  std::sort(knots.begin(), knots.end());

  QuadResult outer;
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    const double a = knots[i];
    const double b = knots[i + 1];
    if (b - a <= 1e-12 * r_upper) continue;
    const double seg_tol = outer_tol * std::max(1e-3, (b - a) / r_upper);
    const QuadResult seg = adaptive_simpson(ring, a, b, seg_tol, 4);
    outer.value += seg.value;
    outer.err += seg.err;
  }

  PocResult result;
  result.value = std::clamp(outer.value, 0.0, 1.0);
  result.abs_error_estimate =
      outer.err + 0.5 * inner_err_max * r_upper * r_upper;
  return result;
}

PocResult probability_of_collision(const ConjunctionGeometry& geom,
                                   double abs_tol) {
  return probability_of_collision(geom.mu2, geom.sigma2, geom.combined_radius,
                                  abs_tol);
}

}  // namespace apsis
