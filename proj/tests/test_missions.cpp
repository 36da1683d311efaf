#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "apsis/frames.hpp"
#include "apsis/missions.hpp"

using namespace apsis;
using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

EquinoctialElements eq(double a, double ex, double ey, double hx, double hy,
                       double m) {
  return EquinoctialElements{a, ex, ey, hx, hy, m};
}

}  // namespace

TEST_CASE("mission ids round trip and reject unknowns") {
  const MissionId ids[] = {
      MissionId::KolosaTransfer, MissionId::HerreraStationKeeping,
      MissionId::Hohmann,        MissionId::Chase,
      MissionId::CollisionAvoidance, MissionId::GeoConstellation};
  for (MissionId id : ids)
    CHECK(mission_id_from_string(mission_id_to_string(id)) == id);
  CHECK(mission_id_to_string(MissionId::CollisionAvoidance) == "cam");
  CHECK(mission_id_to_string(MissionId::HerreraStationKeeping) == "herrera_sk");
  CHECK_THROWS_AS(mission_id_from_string("orbit_race"), std::invalid_argument);
}

TEST_CASE("kolosa reward: normalized weighted element distance") {
  EquinoctialElements start = eq(11878e3, 0.153, 0.128, 0.041, 0.015, 0.2);
  EquinoctialElements target = eq(12678e3, 0.154, 0.171, 0.042, 0.019, 0.0);

  // Semi-major term in isolation: -|da| / a_target.
  Vector5d only_a;
  only_a << 1, 0, 0, 0, 0;
  CHECK(kolosa_reward(start, target, only_a) ==
        doctest::Approx(-0.06310143555765893).epsilon(1e-14));

  Vector5d alphas;
  alphas << 1, 1, 1, 10, 10;
  CHECK(kolosa_reward(start, target, alphas) ==
        doctest::Approx(-0.15710143555765896).epsilon(1e-14));

  // Anomaly does not enter; sitting on the target scores zero.
  EquinoctialElements there = target;
  there.M = 3.0;
  CHECK(kolosa_reward(there, target, alphas) == 0.0);

  EquinoctialElements degenerate = target;
  degenerate.a = 0.0;
  CHECK_THROWS_AS(kolosa_reward(start, degenerate, alphas),
                  std::invalid_argument);
}

TEST_CASE("herrera reward tracks survival time and dies at the band") {
  CHECK(herrera_reward(0.5, 10.0, 400) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(herrera_reward(0.0, 10.0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(herrera_reward(0.3, 10.0, 800) == doctest::Approx(1.5).epsilon(1e-15));
  // Exactly 1 m is still inside the band; beyond it the reward collapses.
  CHECK(herrera_reward(1.0, 10.0, 100) > 0.0);
  CHECK(herrera_reward(1.0000001, 10.0, 100) == 0.0);
  CHECK(herrera_reward(0.2, 0.0, 100) == 0.0);

  // Range property: {0} union [0.5, 1.5].
  std::mt19937 gen(7);
  std::uniform_real_distribution<double> err(0.0, 3.0), fuel(0.0, 80.0);
  std::uniform_int_distribution<int> t(0, 800);
  for (int k = 0; k < 1000; ++k) {
    double r = herrera_reward(err(gen), fuel(gen), t(gen));
    CHECK((r == 0.0 || (r >= 0.5 && r <= 1.5)));
  }
}

TEST_CASE("hohmann progress and reward arithmetic") {
  Vector5d prev, cur, el, w;
  prev << 30e3, 0.002, 0, 0, 0;
  cur << 20e3, 0.001, 0, 0, 0;
  el << 8388e3, 0.007, 0.006, 0.041, 0.015;
  w << 1e3, 1, 1, 10, 10;
  CHECK(hohmann_progress(prev, cur, el, w) ==
        doctest::Approx(1.3350364466244293).epsilon(1e-14));

  // No element change means no progress.
  CHECK(hohmann_progress(cur, cur, el, w) == 0.0);

  // A zero current element falls back to the 1e-12 floor instead of dividing
  // by zero.
  Vector5d el0 = el;
  el0(1) = 0.0;
  Vector5d p0 = Vector5d::Zero(), c0 = Vector5d::Zero();
  p0(1) = 2e-12;
  c0(1) = 1e-12;
  Vector5d wex = Vector5d::Zero();
  wex(1) = 1.0;
  CHECK(hohmann_progress(p0, c0, el0, wex) ==
        doctest::Approx(1.0).epsilon(1e-12));

  // Published example: delta=1, T=T_max/2, theta=theta_max/2, alphas (1, .5),
  // P=0.1 gives 1*0.5*0.1 - 0.5*0.5 = -0.2.
  CHECK(hohmann_reward(0.1, 250.0, kPi / 2.0, true, 500.0, kPi, 1.0, 0.5) ==
        doctest::Approx(-0.2).epsilon(1e-15));
  CHECK(hohmann_reward(0.1, 250.0, kPi / 2.0, false, 500.0, kPi, 1.0, 0.5) ==
        0.0);
  CHECK_THROWS_AS(hohmann_reward(0.1, 1.0, 1.0, true, 0.0, kPi, 1.0, 0.5),
                  std::invalid_argument);
}

TEST_CASE("hohmann success tolerances") {
  EquinoctialElements target = eq(8408e3, 0.007, 0.006, 0.041, 0.015, 0.0);
  Vector5d tol;
  tol << 100.0, 0.005, 0.005, 1e-3, 1e-3;

  EquinoctialElements at = target;
  at.M = 2.0;
  CHECK(hohmann_success(at, target, tol));

  // Boundary counts as a hit; one element past it fails.
  EquinoctialElements edge = target;
  edge.a += 100.0;
  CHECK(hohmann_success(edge, target, tol));
  edge.a += 1.0;
  CHECK_FALSE(hohmann_success(edge, target, tol));

  EquinoctialElements off = target;
  off.hy += 2e-3;
  CHECK_FALSE(hohmann_success(off, target, tol));
}

TEST_CASE("chase reward wraps the anomaly gap") {
  Eigen::Matrix<double, 6, 1> only_m;
  only_m << 0, 0, 0, 0, 0, 1;

  // M_L = 0.1, M_F = 6.2: the short way around is 2*pi - 6.1.
  EquinoctialElements follower = eq(16378e3, 0.1, 0.0, 0.0, 0.0, 6.2);
  EquinoctialElements leader = eq(46378e3, 0.001, 0.0, 0.0, 0.0, 0.1);
  CHECK(chase_reward(follower, leader, only_m) ==
        doctest::Approx(-(2.0 * kPi - 6.1)).epsilon(1e-13));

  // 2*pi-periodic in either anomaly.
  EquinoctialElements shifted = follower;
  shifted.M += 2.0 * kPi;
  CHECK(chase_reward(shifted, leader, only_m) ==
        doctest::Approx(chase_reward(follower, leader, only_m))
            .epsilon(1e-12));

  // Semi-major gap normalized by the leader value.
  Eigen::Matrix<double, 6, 1> only_a;
  only_a << 1, 0, 0, 0, 0, 0;
  CHECK(chase_reward(follower, leader, only_a) ==
        doctest::Approx(-(46378e3 - 16378e3) / 46378e3).epsilon(1e-14));

  // Default weights: all terms negative semidefinite, zero on the leader.
  Eigen::Matrix<double, 6, 1> alphas;
  alphas << 1, 1e-3, 1e-3, 1e-2, 1e-2, 1e-6;
  CHECK(chase_reward(leader, leader, alphas) == 0.0);
  CHECK(chase_reward(follower, leader, alphas) < 0.0);
}

TEST_CASE("cam reward branches on the risk threshold") {
  const double tau = 1e-6;
  // Quiet sky, no burn: free.
  CHECK(cam_reward(1e-9, 1e-9, 0.4, false, 1.0, 0.1, tau) == 0.0);
  // Quiet sky, burn: flat alpha1 penalty.
  CHECK(cam_reward(1e-9, 1e-9, 0.4, true, 1.0, 0.1, tau) == -1.0);
  // Hot sky: deviation plus alpha2 while the risk stays high.
  CHECK(cam_reward(1e-5, 1e-5, 0.2, true, 1.0, 0.1, tau) ==
        doctest::Approx(-0.3).epsilon(1e-15));
  // Hot sky resolved below the threshold: deviation only.
  CHECK(cam_reward(1e-5, 1e-9, 0.2, true, 1.0, 0.1, tau) ==
        doctest::Approx(-0.2).epsilon(1e-15));
  // Exactly at the threshold counts as hot.
  CHECK(cam_reward(tau, 1e-9, 0.15, false, 1.0, 0.1, tau) ==
        doctest::Approx(-0.15).epsilon(1e-15));
}

TEST_CASE("cam orbit deviation normalizes the semi-major axis") {
  EquinoctialElements nominal = eq(8378e3, 0.01, 0.0, 0.1, 0.1, 0.0);
  EquinoctialElements cur = nominal;
  cur.a += 83.78e3;  // one percent
  cur.ex += 0.5;
  Vector5d w;
  w << 10, 1e-2, 1e-2, 1e-1, 1e-1;
  CHECK(cam_orbit_deviation(cur, nominal, w) ==
        doctest::Approx(10 * 0.01 + 1e-2 * 0.5).epsilon(1e-12));
  CHECK(cam_orbit_deviation(nominal, nominal, w) == 0.0);
}

TEST_CASE("geo anomaly penalty: spacing cases and invariances") {
  // Evenly spread rings score zero.
  for (int n : {2, 4, 7}) {
    std::vector<double> ring(n);
    for (int i = 0; i < n; ++i) ring[i] = 2.0 * kPi * i / n;
    CHECK(geo_anomaly_penalty(ring) == doctest::Approx(0.0).epsilon(1e-15));
  }

  // A stacked constellation scores one.
  CHECK(geo_anomaly_penalty({1.3, 1.3, 1.3, 1.3}) ==
        doctest::Approx(1.0).epsilon(1e-15));

  // Hand-worked three-body case: gaps pi/3, pi, 2*pi/3 against target
  // 2*pi/3 leave a single shortfall of one half, averaged over three pairs.
  CHECK(geo_anomaly_penalty({0.0, kPi / 3.0, kPi}) ==
        doctest::Approx(1.0 / 6.0).epsilon(1e-14));

  // Permutation and rotation invariance.
  std::vector<double> set = {0.3, 2.9, 4.0, 5.6};
  double base = geo_anomaly_penalty(set);
  CHECK(geo_anomaly_penalty({5.6, 0.3, 4.0, 2.9}) ==
        doctest::Approx(base).epsilon(1e-14));
  std::vector<double> rotated;
  for (double m : set) rotated.push_back(wrap_angle(m + 2.1));
  CHECK(geo_anomaly_penalty(rotated) == doctest::Approx(base).epsilon(1e-12));

  CHECK_THROWS_AS(geo_anomaly_penalty({0.5}), std::invalid_argument);
}

TEST_CASE("geo reward arithmetic") {
  // Thrust term alone: T=5 with alpha2=10 costs 50.
  CHECK(geo_reward(0.0, 5.0, 0.0, 1e-8, 10.0, 1e-2) ==
        doctest::Approx(-50.0).epsilon(1e-15));
  CHECK(geo_reward(1e6, 0.0, 0.0, 1e-8, 10.0, 1e-2) ==
        doctest::Approx(-0.01).epsilon(1e-15));
  CHECK(geo_reward(0.0, 0.0, 1.0, 1e-8, 10.0, 1e-2) ==
        doctest::Approx(-0.01).epsilon(1e-15));
}

TEST_CASE("observation layouts per mission") {
  WorldSnapshot world;
  BodySnapshot a;
  a.eq = eq(8378e3, 0.01, 0.02, 0.03, 0.04, 1.5);
  a.r = Eigen::Vector3d(6.9e6, 1e5, 0.0);
  a.v = Eigen::Vector3d(10.0, 7500.0, 0.0);
  a.fuel = 25.0;
  a.fuel0 = 50.0;
  BodySnapshot b;
  b.eq = eq(46378e3, 0.001, 0.002, 0.003, 0.004, 2.5);
  b.fuel = 0.0;
  b.fuel0 = 1.0;
  world.bodies = {a, b};
  world.poc = 3e-4;
  world.thrust_t = 0.02;
  world.thrust_theta = 1.25;

  SUBCASE("element missions share the seven-slot layout") {
    for (MissionId id : {MissionId::KolosaTransfer, MissionId::Hohmann}) {
      Eigen::VectorXd obs = build_observation(id, world, 0);
      REQUIRE(obs.size() == 7);
      CHECK(obs(0) == a.eq.a);
      CHECK(obs(5) == a.eq.M);
      CHECK(obs(6) == doctest::Approx(0.5).epsilon(1e-15));
    }
  }

  SUBCASE("station keeping is planar and normalized") {
    Eigen::VectorXd obs =
        build_observation(MissionId::HerreraStationKeeping, world, 0);
    REQUIRE(obs.size() == 8);
    CHECK(obs(0) == doctest::Approx(6.9e6 / kSkNominalRadius).epsilon(1e-15));
    CHECK(obs(2) == doctest::Approx(10.0 / sk_nominal_speed()).epsilon(1e-15));
    CHECK(obs(4) == doctest::Approx(std::abs(a.r.norm() - kSkNominalRadius))
                        .epsilon(1e-12));
    CHECK(obs(5) == doctest::Approx(std::abs(a.v.norm() - sk_nominal_speed()))
                        .epsilon(1e-12));
    CHECK(obs(6) == 1.25);
    CHECK(obs(7) == 0.02);
  }

  SUBCASE("chase sees the leader anomaly") {
    Eigen::VectorXd obs = build_observation(MissionId::Chase, world, 0);
    REQUIRE(obs.size() == 8);
    CHECK(obs(5) == 1.5);
    CHECK(obs(6) == 2.5);
    CHECK(obs(7) == doctest::Approx(0.5).epsilon(1e-15));
  }

  SUBCASE("collision avoidance stacks both element sets plus risk") {
    Eigen::VectorXd obs =
        build_observation(MissionId::CollisionAvoidance, world, 0);
    REQUIRE(obs.size() == 14);
    CHECK(obs(0) == a.eq.a);
    CHECK(obs(6) == b.eq.a);
    CHECK(obs(11) == 2.5);
    CHECK(obs(12) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(obs(13) == 3e-4);
  }

  SUBCASE("constellation sees every anomaly") {
    Eigen::VectorXd obs =
        build_observation(MissionId::GeoConstellation, world, 1);
    REQUIRE(obs.size() == 6);
    CHECK(obs(0) == b.eq.a);
    CHECK(obs(3) == 0.0);  // leader-style body with an empty tank
    CHECK(obs(4) == 1.5);
    CHECK(obs(5) == 2.5);
  }

  CHECK_THROWS_AS(build_observation(MissionId::Hohmann, world, 5),
                  std::invalid_argument);
}

TEST_CASE("default specs pin the published episode and weight tables") {
  MissionSpec k = mission_default_spec(MissionId::KolosaTransfer);
  CHECK(k.episode.step_s == 500.0);
  CHECK(k.episode.steps == 692);
  CHECK(k.episode.burn_window_s == 500.0);
  CHECK(k.param("alpha_a") == 1.0);
  CHECK(k.param("alpha_hx") == 10.0);
  CHECK(k.param("target_a_m") == 12678e3);
  CHECK(k.param("target_ey") == 0.171);

  MissionSpec h = mission_default_spec(MissionId::HerreraStationKeeping);
  CHECK(h.episode.step_s == 1.0);
  CHECK(h.episode.steps == 800);
  CHECK(h.episode.burn_window_s == 1.0);
  CHECK(h.param("delta_t_max_n") == doctest::Approx(8e-4).epsilon(1e-15));
  CHECK(h.param("delta_theta_max_rad") ==
        doctest::Approx(kPi / 3.0).epsilon(1e-15));

  MissionSpec ho = mission_default_spec(MissionId::Hohmann);
  CHECK(ho.episode.step_s == 5.0);
  CHECK(ho.episode.steps == 1000);
  CHECK(ho.param("w_a") == 1e3);
  CHECK(ho.param("w_m") == 1e-3);
  CHECK(ho.param("alpha2") == 0.5);
  CHECK(ho.param("target_a_m") == 8408e3);
  CHECK(ho.param("tol_a_m") == 100.0);
  CHECK(ho.param("tol_hx") == 1e-3);

  MissionSpec c = mission_default_spec(MissionId::Chase);
  CHECK(c.episode.step_s == 500.0);
  CHECK(c.episode.steps == 2000);
  CHECK(c.param("alpha_a") == 1.0);
  CHECK(c.param("alpha_ex") == 1e-3);
  CHECK(c.param("alpha_hy") == 1e-2);
  CHECK(c.param("alpha_m") == 1e-6);

  MissionSpec cam = mission_default_spec(MissionId::CollisionAvoidance);
  CHECK(cam.episode.step_s == 900.0);
  CHECK(cam.episode.steps == 202);
  CHECK(cam.episode.burn_window_s == 10.0);
  CHECK(cam.param("w_a") == 10.0);
  CHECK(cam.param("w_hy") == 1e-1);
  CHECK(cam.param("alpha1") == 1.0);
  CHECK(cam.param("alpha2") == 0.1);
  CHECK(cam.param("poc_threshold") == 1e-6);
  CHECK(cam.param("backward_s") == 172800.0);

  MissionSpec g = mission_default_spec(MissionId::GeoConstellation);
  CHECK(g.episode.step_s == 360.0);
  CHECK(g.episode.steps == 500);
  CHECK(g.param("alpha1") == 1e-8);
  CHECK(g.param("alpha2") == 10.0);
  CHECK(g.param("alpha3") == 1e-2);
  CHECK(g.param("a_geo_m") == 42164e3);

  CHECK_THROWS_AS(g.param("w_a"), std::out_of_range);
}

TEST_CASE("preset scenarios parse and carry the configured bodies") {
  struct Row {
    MissionId id;
    std::size_t bodies;
  };
  const Row rows[] = {{MissionId::KolosaTransfer, 1},
                      {MissionId::HerreraStationKeeping, 1},
                      {MissionId::Hohmann, 1},
                      {MissionId::Chase, 2},
                      {MissionId::CollisionAvoidance, 2},
                      {MissionId::GeoConstellation, 4}};
  for (const Row& row : rows) {
    json doc = json::parse(preset_scenario_json(row.id));
    CHECK(doc["mission"]["id"] == mission_id_to_string(row.id));
    CHECK(doc["bodies"].size() == row.bodies);
    CHECK(doc["stepping"]["step_s"].get<double>() ==
          mission_default_spec(row.id).episode.step_s);
    CHECK(doc["stepping"]["episode_steps"].get<int>() ==
          mission_default_spec(row.id).episode.steps);
  }

  SUBCASE("transfer satellite masses and engine") {
    json doc = json::parse(preset_scenario_json(MissionId::KolosaTransfer));
    const json& sat = doc["bodies"][0];
    CHECK(sat["dry_mass_kg"] == 500.0);
    CHECK(sat["fuel_kg"] == 150.0);
    CHECK(sat["isp_s"] == 3100.0);
    CHECK(sat["thrust"]["t_max_n"] == 0.6);
    CHECK(sat["elements"]["a_m"] == 11878e3);
    CHECK(doc["forces"]["enable_drag"] == false);
  }

  SUBCASE("station keeping flies a draggy shell") {
    json doc =
        json::parse(preset_scenario_json(MissionId::HerreraStationKeeping));
    const json& sat = doc["bodies"][0];
    CHECK(sat["dry_mass_kg"].get<double>() + sat["fuel_kg"].get<double>() ==
          100.0);
    CHECK(sat["fuel_kg"] == 75.0);
    CHECK(sat["radius_m"] == 16.8);
    CHECK(sat["cd"] == 2.123);
    CHECK(sat["isp_s"] == 0.0067);
    CHECK(doc["forces"]["enable_drag"] == true);
    CHECK(doc["forces"]["drag"]["h0_m"] == 550e3);
  }

  SUBCASE("impulse climb carries a decision flag") {
    json doc = json::parse(preset_scenario_json(MissionId::Hohmann));
    const json& sat = doc["bodies"][0];
    CHECK(sat["thrust"]["decision_flag"] == true);
    CHECK(sat["thrust"]["t_max_n"] == 500.0);
    CHECK(sat["elements"]["a_m"] == 8378e3);
  }

  SUBCASE("chase leader is ballistic") {
    json doc = json::parse(preset_scenario_json(MissionId::Chase));
    CHECK(doc["bodies"][0]["name"] == "follower");
    CHECK(doc["bodies"][1]["name"] == "leader");
    CHECK_FALSE(doc["bodies"][1].contains("thrust"));
    CHECK(doc["bodies"][1]["elements"]["a_m"] == 46378e3);
  }

  SUBCASE("avoidance pair is co-located with opposed velocities") {
    json doc =
        json::parse(preset_scenario_json(MissionId::CollisionAvoidance));
    const json& sat = doc["bodies"][0];
    const json& drifter = doc["bodies"][1];
    CHECK(sat["radius_m"] == 10.0);
    CHECK(drifter["radius_m"] == 5.0);
    REQUIRE(sat["sigma"].size() == 6);
    CHECK(sat["sigma"][0] == 0.1);
    CHECK(sat["sigma"][2] == 0.1);
    CHECK(sat["sigma"][5] == 0.0);
    CHECK(drifter["sigma"][1] == 0.1);
    CHECK(drifter["sigma"][4] == 0.0);

    KeplerianElements kep{8378e3,
                          0.01,
                          5.0 * kPi / 180.0,
                          20.0 * kPi / 180.0,
                          20.0 * kPi / 180.0,
                          10.0 * kPi / 180.0,
                          AnomalyKind::Mean};
    CartesianState enc = keplerian_to_cartesian(kep, kMuEarth);
    CHECK(drifter["elements"]["type"] == "cartesian");
    for (int i = 0; i < 3; ++i) {
      CHECK(drifter["elements"]["r_m"][i].get<double>() ==
            doctest::Approx(enc.r(i)).epsilon(1e-15));
      CHECK(drifter["elements"]["v_mps"][i].get<double>() ==
            doctest::Approx(-enc.v(i)).epsilon(1e-15));
    }
  }

  SUBCASE("constellation rides the geostationary shell") {
    json doc = json::parse(preset_scenario_json(MissionId::GeoConstellation));
    for (const json& sat : doc["bodies"]) {
      CHECK(sat["elements"]["a_m"] == 42164e3);
      CHECK(sat["thrust"]["t_max_n"] == 5.0);
      CHECK(sat["thrust"]["phi_max_rad"] == 0.0);
    }
  }
}

TEST_CASE("station keeping nominal shell") {
  CHECK(kSkNominalRadius == doctest::Approx(6.928e6).epsilon(1e-15));
  CHECK(sk_nominal_speed() ==
        doctest::Approx(7585.163531693988).epsilon(1e-13));
}
