#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <apsis/dynamics.hpp>
#include <apsis/frames.hpp>

#include <cmath>
#include <random>

using namespace apsis;

namespace {
std::mt19937_64 test_rng(777);

// Independent oracle: gravity potential including J2, differentiated
// numerically. U = mu/r * (1 - J2*(Re/r)^2 * (3*(z/r)^2 - 1)/2).
double potential_with_j2(const Eigen::Vector3d& r, double mu, double j2, double re) {
  double rm = r.norm();
  double zr = r.z() / rm;
  return mu / rm * (1.0 - j2 * (re / rm) * (re / rm) * (3.0 * zr * zr - 1.0) / 2.0);
}

Eigen::Vector3d fd_gradient(const Eigen::Vector3d& r, double mu, double j2, double re) {
  Eigen::Vector3d g;
  double h = 0.5;
  for (int k = 0; k < 3; ++k) {
    Eigen::Vector3d rp = r, rm_ = r;
    rp[k] += h;
    rm_[k] -= h;
    g[k] = (potential_with_j2(rp, mu, j2, re) - potential_with_j2(rm_, mu, j2, re)) /
           (2.0 * h);
  }
  return g;
}

PropState circular_state(double a, double mu) {
  PropState s;
  s.r = Eigen::Vector3d(a, 0, 0);
  s.v = Eigen::Vector3d(0, std::sqrt(mu / a), 0);
  s.m = 500.0;
  return s;
}

// Analytic two-body propagation via mean anomaly advance.
CartesianState kepler_advance_oracle(const CartesianState& s0, double dt, double mu) {
  KeplerianElements k = cartesian_to_keplerian(s0, mu);
  double M0 = convert_anomaly(k.anomaly, k.e, k.anomaly_kind, AnomalyKind::Mean);
  k.anomaly = wrap_angle(M0 + mean_motion(k.a, mu) * dt);
  k.anomaly_kind = AnomalyKind::Mean;
  CartesianState out = keplerian_to_cartesian(k, mu, s0.t + dt);
  return out;
}

double specific_energy(const PropState& s, double mu) {
  return 0.5 * s.v.squaredNorm() - mu / s.r.norm();
}
}  // namespace

TEST_CASE("gravity reference value") {
  Eigen::Vector3d a = gravity_accel(Eigen::Vector3d(7.0e6, 0, 0), 3.986e14);
  CHECK(a.x() == doctest::Approx(-8.13469387755102).epsilon(1e-12));
  CHECK(a.y() == 0.0);
  CHECK(a.z() == 0.0);
  // Central force: a antiparallel to r, magnitude mu/r^2.
  for (int n = 0; n < 200; ++n) {
    std::uniform_real_distribution<double> u(-1e7, 1e7);
    Eigen::Vector3d r(u(test_rng), u(test_rng), u(test_rng));
    if (r.norm() < 1e6) continue;
    Eigen::Vector3d g = gravity_accel(r, kMuEarth);
    CHECK(g.norm() == doctest::Approx(kMuEarth / r.squaredNorm()).epsilon(1e-12));
    CHECK((g.normalized() + r.normalized()).norm() < 1e-12);
  }
}

TEST_CASE("j2 acceleration matches the potential gradient") {
  std::uniform_real_distribution<double> u(-8e6, 8e6);
  int tested = 0;
  while (tested < 300) {
    Eigen::Vector3d r(u(test_rng), u(test_rng), u(test_rng));
    if (r.norm() < 6.6e6) continue;
    ++tested;
    Eigen::Vector3d total_fd = fd_gradient(r, kMuEarth, kJ2Earth, kEarthRadius);
    Eigen::Vector3d j2_fd = total_fd - gravity_accel(r, kMuEarth);
    Eigen::Vector3d j2 = j2_accel(r, kMuEarth, kJ2Earth, kEarthRadius);
    CHECK((j2 - j2_fd).norm() < 2e-5 * j2.norm() + 1e-12);
  }
  // Equatorial point: no out-of-plane component.
  Eigen::Vector3d eq = j2_accel(Eigen::Vector3d(7e6, 1e6, 0), kMuEarth, kJ2Earth,
                                kEarthRadius);
  CHECK(eq.z() == 0.0);
}

TEST_CASE("atmosphere density scale") {
  ForceConfig cfg;
  cfg.enable_drag = true;
  CHECK(atmosphere_density(700e3, cfg) == doctest::Approx(3.614e-13).epsilon(1e-12));
  CHECK(atmosphere_density(750e3, cfg) / atmosphere_density(700e3, cfg) ==
        doctest::Approx(0.5689813316286629).epsilon(1e-12));
  CHECK(atmosphere_density(788.667e3, cfg) / atmosphere_density(700e3, cfg) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("drag reference value and direction") {
  ForceConfig cfg;
  cfg.enable_drag = true;
  BodyProperties props;
  props.dry_mass = 100.0;
  props.cd = 2.2;
  props.radius = std::sqrt(10.0 / M_PI);  // area exactly 10 m^2
  Eigen::Vector3d r(kEarthRadius + 700e3, 0, 0);
  Eigen::Vector3d v(0, 7500.0, 0);
  Eigen::Vector3d a = drag_accel(r, v, 500.0, props, cfg);
  CHECK(a.norm() == doctest::Approx(4.472325000000001e-07).epsilon(1e-9));
  CHECK((a.normalized() + v.normalized()).norm() < 1e-12);
}

TEST_CASE("mass flow reference") {
  CHECK(mass_flow(308.0, 310.0) == doctest::Approx(-0.10131373987006513).epsilon(1e-12));
  CHECK(mass_flow(0.0, 310.0) == 0.0);
}

TEST_CASE("rk4 agrees with analytic Kepler propagation") {
  BodyProperties props;
  props.dry_mass = 100.0;
  ForceConfig cfg;

  SUBCASE("circular") {
    PropState s = circular_state(7.0e6, cfg.mu);
    double T = orbital_period(7.0e6, cfg.mu);
    auto res = propagate(s, T, T / 5000.0, {}, props, cfg);
    CartesianState truth = kepler_advance_oracle({s.r, s.v, 0.0}, T, cfg.mu);
    CHECK((res.states.back().r - truth.r).norm() < 1e-3);
  }
  SUBCASE("elliptic e=0.1") {
    KeplerianElements k;
    k.a = 7.2e6;
    k.e = 0.1;
    k.i = 0.4;
    k.argp = 0.2;
    k.raan = 1.0;
    k.anomaly = 0.1;
    CartesianState c = keplerian_to_cartesian(k, cfg.mu);
    PropState s{c.r, c.v, 500.0, 0.0};
    double T = orbital_period(k.a, cfg.mu);
    auto res = propagate(s, T, T / 5000.0, {}, props, cfg);
    CartesianState truth = kepler_advance_oracle(c, T, cfg.mu);
    CHECK((res.states.back().r - truth.r).norm() < 1e-3);
  }
}

TEST_CASE("rk4 order of convergence") {
  // Halving the step on an e=0.1 ellipse cuts the one-period error by
  // at least 12x (asymptotically 16x for a 4th-order scheme).
  ForceConfig cfg;
  BodyProperties props;
  props.dry_mass = 100.0;
  KeplerianElements k;
  k.a = 7.2e6;
  k.e = 0.1;
  k.anomaly = 0.0;
  CartesianState c = keplerian_to_cartesian(k, cfg.mu);
  PropState s{c.r, c.v, 500.0, 0.0};
  double T = orbital_period(k.a, cfg.mu);
  CartesianState truth = kepler_advance_oracle(c, T, cfg.mu);

  auto coarse = propagate(s, T, T / 400.0, {}, props, cfg);
  auto fine = propagate(s, T, T / 800.0, {}, props, cfg);
  double e_coarse = (coarse.states.back().r - truth.r).norm();
  double e_fine = (fine.states.back().r - truth.r).norm();
  CHECK(e_coarse > 1e-4);  // stays above double-precision noise
  CHECK(e_coarse / e_fine >= 12.0);
}

TEST_CASE("energy and angular momentum conservation") {
  ForceConfig cfg;
  BodyProperties props;
  props.dry_mass = 100.0;
  PropState s = circular_state(7.0e6, cfg.mu);
  double T = orbital_period(7.0e6, cfg.mu);
  double e0 = specific_energy(s, cfg.mu);
  Eigen::Vector3d h0 = s.r.cross(s.v);
  auto res = propagate(s, T, T / 2000.0, {}, props, cfg);
  for (const auto& st : res.states) {
    CHECK(std::abs(specific_energy(st, cfg.mu) - e0) < 1e-6 * std::abs(e0));
    CHECK((st.r.cross(st.v) - h0).norm() < 1e-6 * h0.norm());
  }
  // Position closure after one period.
  CHECK((res.states.back().r - s.r).norm() < 1.0);
}

TEST_CASE("constant thrust burns mass linearly") {
  ForceConfig cfg;
  BodyProperties props;
  props.dry_mass = 100.0;
  props.isp = 310.0;
  PropState s = circular_state(7.0e6, cfg.mu);
  s.m = 200.0;
  Eigen::Vector3d thrust(0, 50.0, 0);
  ThrustPhase phase{0.0, 60.0, thrust};
  auto res = propagate(s, 60.0, 5.0, std::span(&phase, 1), props, cfg);
  double expected = 200.0 + mass_flow(50.0, 310.0) * 60.0;
  CHECK(res.states.back().m == doctest::Approx(expected).epsilon(1e-12));
  CHECK_FALSE(res.fuel_exhausted);
  // Along-track thrust raises orbital energy.
  CHECK(specific_energy(res.states.back(), cfg.mu) > specific_energy(s, cfg.mu));
}

TEST_CASE("mass floor splits the step") {
  ForceConfig cfg;
  BodyProperties props;
  props.dry_mass = 100.0;
  props.isp = 310.0;
  PropState s = circular_state(7.0e6, cfg.mu);
  s.m = 100.5;  // 0.5 kg of fuel left
  Eigen::Vector3d thrust(0, 100.0, 0);
  double mdot = -mass_flow(100.0, 310.0);
  double t_ex = 0.5 / mdot;  // ~15.2 s
  REQUIRE(t_ex < 20.0);

  auto step = rk4_step(s, 20.0, thrust, props, cfg);
  CHECK(step.fuel_exhausted);
  CHECK(step.state.m == 100.0);

  // Two-stage reference: thrust for exactly t_ex, ballistic afterwards.
  auto burn = rk4_step(s, t_ex, thrust, props, cfg);
  auto coast = rk4_step(burn.state, 20.0 - t_ex, Eigen::Vector3d::Zero(), props, cfg);
  CHECK((step.state.r - coast.state.r).norm() < 1e-9);
  CHECK((step.state.v - coast.state.v).norm() < 1e-12);

  // No fuel at all: thrust is a no-op.
  PropState dry = s;
  dry.m = 100.0;
  auto noop = rk4_step(dry, 20.0, thrust, props, cfg);
  CHECK(noop.fuel_exhausted);
  CHECK(noop.state.m == 100.0);
  auto ball = rk4_step(dry, 20.0, Eigen::Vector3d::Zero(), props, cfg);
  CHECK((noop.state.r - ball.state.r).norm() == 0.0);
}

TEST_CASE("backward propagation consistency") {
  ForceConfig cfg;
  BodyProperties props;
  props.dry_mass = 100.0;
  PropState s = circular_state(7.0e6, cfg.mu);

  SUBCASE("single step roundtrip") {
    auto fwd = rk4_step(s, 10.0, Eigen::Vector3d::Zero(), props, cfg);
    auto back = rk4_step(fwd.state, -10.0, Eigen::Vector3d::Zero(), props, cfg);
    CHECK((back.state.r - s.r).norm() < 1e-6);
    CHECK((back.state.v - s.v).norm() < 1e-9);
    CHECK(back.state.t == doctest::Approx(0.0));
  }
  SUBCASE("multi step roundtrip") {
    // Truncation asymmetry accumulates over 60 steps; measured ~0.02 m.
    auto fwd = propagate(s, 1800.0, 30.0, {}, props, cfg);
    auto back = propagate(fwd.states.back(), -1800.0, 30.0, {}, props, cfg);
    CHECK((back.states.back().r - s.r).norm() < 0.1);
    CHECK((back.states.back().v - s.v).norm() < 1e-4);
  }
}

TEST_CASE("propagate output grid") {
  ForceConfig cfg;
  BodyProperties props;
  props.dry_mass = 100.0;
  PropState s = circular_state(7.0e6, cfg.mu);

  auto exact = propagate(s, 100.0, 10.0, {}, props, cfg);
  CHECK(exact.states.size() == 11);
  CHECK(exact.states.back().t == doctest::Approx(100.0));

  auto partial = propagate(s, 95.0, 10.0, {}, props, cfg);
  CHECK(partial.states.size() == 11);  // ceil(95/10)+1
  CHECK(partial.states.back().t == doctest::Approx(95.0));
  for (size_t i = 1; i < partial.states.size(); ++i) {
    CHECK(partial.states[i].t > partial.states[i - 1].t);
  }
}

TEST_CASE("deorbit halts propagation") {
  ForceConfig cfg;
  BodyProperties props;
  props.dry_mass = 100.0;
  PropState s;
  s.r = Eigen::Vector3d(6.6e6, 0, 0);
  s.v = Eigen::Vector3d(-2000.0, 500.0, 0);  // steep descent
  s.m = 500.0;
  auto res = propagate(s, 2000.0, 10.0, {}, props, cfg);
  CHECK(res.deorbited);
  CHECK(res.states.back().r.norm() < cfg.earth_radius);
  CHECK(res.states.size() < 202);
}

TEST_CASE("burn window inside a long step") {
  // Thrust over the first 10 s of a 900 s interval equals a two-phase
  // reference: 10 s burn then 890 s coast.
  ForceConfig cfg;
  BodyProperties props;
  props.dry_mass = 100.0;
  props.isp = 3100.0;
  PropState s = circular_state(8.378e6, cfg.mu);
  s.m = 300.0;
  Eigen::Vector3d thrust(0, 5.0, 0);
  ThrustPhase phase{0.0, 10.0, thrust};
  auto windowed = propagate(s, 900.0, 900.0, std::span(&phase, 1), props, cfg);

  auto burn = propagate(s, 10.0, 10.0, std::span(&phase, 1), props, cfg);
  auto coast = propagate(burn.states.back(), 890.0, 890.0, {}, props, cfg);
  CHECK((windowed.states.back().r - coast.states.back().r).norm() < 1e-6);
  CHECK((windowed.states.back().v - coast.states.back().v).norm() < 1e-9);
  CHECK(windowed.states.back().m == doctest::Approx(coast.states.back().m).epsilon(1e-14));
}

TEST_CASE("derivative composes the enabled forces") {
  ForceConfig cfg;
  cfg.enable_j2 = true;
  cfg.enable_drag = true;
  BodyProperties props;
  props.dry_mass = 100.0;
  props.isp = 310.0;
  props.cd = 2.2;
  props.radius = 1.0;
  PropState s = circular_state(kEarthRadius + 700e3, cfg.mu);
  s.m = 400.0;
  Eigen::Vector3d thrust(10.0, 0, 0);
  StateDerivative d = derivative(s, thrust, props, cfg);
  Eigen::Vector3d expected = gravity_accel(s.r, cfg.mu) +
                             j2_accel(s.r, cfg.mu, cfg.j2, cfg.earth_radius) +
                             drag_accel(s.r, s.v, s.m, props, cfg) + thrust / s.m;
  CHECK((d.dr - s.v).norm() == 0.0);
  CHECK((d.dv - expected).norm() < 1e-15);
  CHECK(d.dm == doctest::Approx(mass_flow(10.0, 310.0)).epsilon(1e-14));
}
