#include "apsis/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace apsis {

Eigen::Vector3d gravity_accel(const Eigen::Vector3d& r, double mu) {
  double rm = r.norm();
  if (rm == 0.0) throw std::invalid_argument("gravity_accel: zero position");
  return -mu / (rm * rm * rm) * r;
}

Eigen::Vector3d j2_accel(const Eigen::Vector3d& r, double mu, double j2,
                         double earth_radius) {
  double rm = r.norm();
  if (rm == 0.0) throw std::invalid_argument("j2_accel: zero position");
  double k = -1.5 * j2 * mu * earth_radius * earth_radius / std::pow(rm, 5);
  double zr2 = 5.0 * r.z() * r.z() / (rm * rm);
  return Eigen::Vector3d(k * r.x() * (1.0 - zr2),
                         k * r.y() * (1.0 - zr2),
                         k * r.z() * (3.0 - zr2));
}

double atmosphere_density(double altitude, const ForceConfig& cfg) {
  return cfg.drag_rho0 * std::exp(-(altitude - cfg.drag_h0) / cfg.drag_scale_height);
}

Eigen::Vector3d drag_accel(const Eigen::Vector3d& r, const Eigen::Vector3d& v,
                           double mass, const BodyProperties& props,
                           const ForceConfig& cfg) {
  double h = r.norm() - cfg.earth_radius;
  double rho = atmosphere_density(h, cfg);
  double area = M_PI * props.radius * props.radius;
  return -0.5 * props.cd * (area / mass) * rho * v.norm() * v;
}

double mass_flow(double thrust_norm, double isp) {
  if (thrust_norm == 0.0) return 0.0;
  return -thrust_norm / (isp * kStandardGravity);
}

StateDerivative derivative(const PropState& s, const Eigen::Vector3d& thrust,
                           const BodyProperties& props, const ForceConfig& cfg) {
  StateDerivative d;
  d.dr = s.v;
  d.dv = gravity_accel(s.r, cfg.mu);
  if (cfg.enable_j2) d.dv += j2_accel(s.r, cfg.mu, cfg.j2, cfg.earth_radius);
  if (cfg.enable_drag) d.dv += drag_accel(s.r, s.v, s.m, props, cfg);
  double tn = thrust.norm();
  if (tn > 0.0) {
    d.dv += thrust / s.m;
    d.dm = mass_flow(tn, props.isp);
  } else {
    d.dm = 0.0;
  }
  return d;
}

namespace {

PropState rk4_raw(const PropState& s, double dt, const Eigen::Vector3d& thrust,
                  const BodyProperties& props, const ForceConfig& cfg) {
  auto eval = [&](const PropState& x) { return derivative(x, thrust, props, cfg); };
  auto advance = [](const PropState& x, const StateDerivative& d, double h) {
    PropState y;
    y.r = x.r + h * d.dr;
    y.v = x.v + h * d.dv;
    y.m = x.m + h * d.dm;
    y.t = x.t + h;
    return y;
  };
  StateDerivative k1 = eval(s);
  StateDerivative k2 = eval(advance(s, k1, dt / 2.0));
  StateDerivative k3 = eval(advance(s, k2, dt / 2.0));
  StateDerivative k4 = eval(advance(s, k3, dt));
  PropState out;
  out.r = s.r + dt / 6.0 * (k1.dr + 2.0 * k2.dr + 2.0 * k3.dr + k4.dr);
  out.v = s.v + dt / 6.0 * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv);
  out.m = s.m + dt / 6.0 * (k1.dm + 2.0 * k2.dm + 2.0 * k3.dm + k4.dm);
  out.t = s.t + dt;
  return out;
}

}  // namespace

StepResult rk4_step(const PropState& s, double dt, const Eigen::Vector3d& thrust,
                    const BodyProperties& props, const ForceConfig& cfg) {
  StepResult res;
  double tn = thrust.norm();
  if (dt > 0.0 && tn > 0.0) {
    double fuel = s.m - props.dry_mass;
    if (fuel <= 0.0) {
      // Already at the floor: thrust is a no-op.
      res.state = rk4_raw(s, dt, Eigen::Vector3d::Zero(), props, cfg);
      res.state.m = props.dry_mass;
      res.fuel_exhausted = true;
      return res;
    }
    double mdot = -mass_flow(tn, props.isp);
    double t_ex = fuel / mdot;  // mass is linear in time under constant thrust
    if (t_ex < dt) {
      PropState burn = rk4_raw(s, t_ex, thrust, props, cfg);
      burn.m = props.dry_mass;
      res.state = rk4_raw(burn, dt - t_ex, Eigen::Vector3d::Zero(), props, cfg);
      res.fuel_exhausted = true;
      return res;
    }
  }
  res.state = rk4_raw(s, dt, dt != 0.0 ? thrust : Eigen::Vector3d::Zero(), props, cfg);
  return res;
}

namespace {

Eigen::Vector3d active_thrust(double t, std::span<const ThrustPhase> phases) {
  for (const auto& p : phases) {
    if (t >= p.t_start && t < p.t_end) return p.thrust;
  }
  return Eigen::Vector3d::Zero();
}

// Breakpoints of the thrust schedule strictly inside (t0, t1).
void collect_breaks(double t0, double t1, std::span<const ThrustPhase> phases,
                    std::vector<double>& out) {
  out.clear();
  for (const auto& p : phases) {
    for (double b : {p.t_start, p.t_end}) {
      if (b > t0 && b < t1) out.push_back(b);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
}

}  // namespace

PropagationResult propagate(const PropState& s0, double duration, double step,
                            std::span<const ThrustPhase> phases,
                            const BodyProperties& props, const ForceConfig& cfg) {
  if (step <= 0.0) throw std::invalid_argument("propagate: step <= 0");
  if (duration == 0.0) return {{s0}, false, false};
  double dir = duration > 0.0 ? 1.0 : -1.0;
  double total = std::abs(duration);
  long long n_steps = static_cast<long long>(std::ceil(total / step - 1e-12));

  PropagationResult res;
  res.states.reserve(static_cast<size_t>(n_steps) + 1);
  res.states.push_back(s0);

  PropState cur = s0;
  std::vector<double> breaks;
  bool out_of_fuel = cur.m <= props.dry_mass;
  for (long long i = 0; i < n_steps; ++i) {
    double t_end_step = s0.t + dir * std::min(total, (i + 1) * step);
    // Integrate the output step in thrust-constant slices.
    double lo = std::min(cur.t, t_end_step);
    double hi = std::max(cur.t, t_end_step);
    collect_breaks(lo, hi, phases, breaks);
    if (dir < 0.0) std::reverse(breaks.begin(), breaks.end());
    double from = cur.t;
    auto integrate_to = [&](double to) {
      double dt = to - from;
      if (dt == 0.0) return;
      Eigen::Vector3d thrust =
          out_of_fuel ? Eigen::Vector3d::Zero()
                      : active_thrust(std::min(from, to), phases);
      StepResult sr = rk4_step(cur, dt, thrust, props, cfg);
      cur = sr.state;
      if (sr.fuel_exhausted) {
        res.fuel_exhausted = true;
        out_of_fuel = true;
      }
      from = to;
    };
    for (double b : breaks) integrate_to(b);
    integrate_to(t_end_step);

    if (!cur.r.allFinite() || !cur.v.allFinite() || !std::isfinite(cur.m)) {
      throw std::runtime_error("propagate: non-finite state");
    }
    res.states.push_back(cur);
    if (cur.r.norm() < cfg.earth_radius) {
      res.deorbited = true;
      break;
    }
  }
  return res;
}

}  // namespace apsis
