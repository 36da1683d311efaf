#include "apsis/missions.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "apsis/conjunction.hpp"
#include "apsis/dynamics.hpp"

namespace apsis {
namespace {

constexpr double kPi = 3.14159265358979323846;

// Station-keeping preset density at the 550 km shell, tuned so an uncontrolled
// satellite drifts out of the 1 m band after roughly 200 one-second steps.
constexpr double kSkDragRho0 = 6.324e-13;  // kg/m^3

// Collision-avoidance preset density referenced at the 2000 km encounter
// altitude; small but large enough to separate the onboard point-mass
// predictor from the true dynamics over a two-day arc.
constexpr double kCamDragRho0 = 1e-13;  // kg/m^3

double deg(double d) { return d * kPi / 180.0; }

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

MissionId mission_id_from_string(const std::string& id) {
  if (id == "kolosa_transfer") return MissionId::KolosaTransfer;
  if (id == "herrera_sk") return MissionId::HerreraStationKeeping;
  if (id == "hohmann") return MissionId::Hohmann;
  if (id == "chase") return MissionId::Chase;
  if (id == "cam") return MissionId::CollisionAvoidance;
  if (id == "geo_constellation") return MissionId::GeoConstellation;
  throw std::invalid_argument("unknown mission id: " + id);
}

std::string mission_id_to_string(MissionId id) {
  switch (id) {
    case MissionId::KolosaTransfer: return "kolosa_transfer";
    case MissionId::HerreraStationKeeping: return "herrera_sk";
    case MissionId::Hohmann: return "hohmann";
    case MissionId::Chase: return "chase";
    case MissionId::CollisionAvoidance: return "cam";
    case MissionId::GeoConstellation: return "geo_constellation";
  }
  throw std::invalid_argument("unknown mission id value");
}

double MissionSpec::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end())
    throw std::out_of_range("mission parameter not set: " + name);
  return it->second;
}

MissionSpec mission_default_spec(MissionId id) {
  MissionSpec spec;
  spec.id = id;
  switch (id) {
    case MissionId::KolosaTransfer:
      spec.params = {
          {"alpha_a", 1.0},           {"alpha_ex", 1.0},
          {"alpha_ey", 1.0},          {"alpha_hx", 10.0},
          {"alpha_hy", 10.0},         {"target_a_m", 12678e3},
          {"target_ex", 0.154},       {"target_ey", 0.171},
          {"target_hx", 0.042},       {"target_hy", 0.019},
      };
      spec.episode = {500.0, 692, 500.0};
      break;
    case MissionId::HerreraStationKeeping:
      spec.params = {
          {"band_m", 1.0},
          {"delta_t_max_n", 0.04 / 50.0},
          {"delta_theta_max_rad", 2.0 * kPi / 6.0},
      };
      spec.episode = {1.0, 800, 1.0};
      break;
    case MissionId::Hohmann:
      spec.params = {
          {"w_a", 1e3},      {"w_ex", 1.0},        {"w_ey", 1.0},
          {"w_hx", 10.0},    {"w_hy", 10.0},       {"w_m", 1e-3},
          {"alpha1", 1.0},   {"alpha2", 0.5},      {"target_a_m", 8408e3},
          {"target_ex", 0.007},                    {"target_ey", 0.006},
          {"target_hx", 0.041},                    {"target_hy", 0.015},
          {"tol_a_m", 100.0},                      {"tol_ex", 0.005},
          {"tol_ey", 0.005}, {"tol_hx", 1e-3},     {"tol_hy", 1e-3},
      };
      spec.episode = {5.0, 1000, 5.0};
      break;
    case MissionId::Chase:
      spec.params = {
          {"alpha_a", 1.0},   {"alpha_ex", 1e-3}, {"alpha_ey", 1e-3},
          {"alpha_hx", 1e-2}, {"alpha_hy", 1e-2}, {"alpha_m", 1e-6},
      };
      spec.episode = {500.0, 2000, 500.0};
      break;
    case MissionId::CollisionAvoidance:
      spec.params = {
          {"w_a", 10.0},   {"w_ex", 1e-2},  {"w_ey", 1e-2},
          {"w_hx", 1e-1},  {"w_hy", 1e-1},  {"alpha1", 1.0},
          {"alpha2", 0.1}, {"poc_threshold", kPocRiskThreshold},
          {"backward_s", 172800.0},
      };
      spec.episode = {900.0, 202, 10.0};
      break;
    case MissionId::GeoConstellation:
      spec.params = {
          {"alpha1", 1e-8},
          {"alpha2", 10.0},
          {"alpha3", 1e-2},
          {"a_geo_m", 42164e3},
      };
      spec.episode = {360.0, 500, 360.0};
      break;
  }
  return spec;
}

double sk_nominal_speed() { return std::sqrt(kMuEarth / kSkNominalRadius); }

Vector5d element_deltas(const EquinoctialElements& current,
                        const EquinoctialElements& target) {
  Vector5d d;
  d << std::abs(current.a - target.a), std::abs(current.ex - target.ex),
      std::abs(current.ey - target.ey), std::abs(current.hx - target.hx),
      std::abs(current.hy - target.hy);
  return d;
}

double kolosa_reward(const EquinoctialElements& current,
                     const EquinoctialElements& target,
                     const Vector5d& alphas) {
  require(target.a != 0.0, "kolosa_reward: zero target semi-major axis");
  Vector5d d = element_deltas(current, target);
  d(0) /= std::abs(target.a);
  return -alphas.dot(d);
}

double herrera_reward(double radius_err_m, double fuel_kg, int t,
                      int total_steps, double band_m) {
  require(total_steps > 0, "herrera_reward: total_steps must be positive");
  if (radius_err_m > band_m || fuel_kg <= 0.0) return 0.0;
  return static_cast<double>(t) / total_steps + 0.5;
}

double hohmann_progress(const Vector5d& prev_delta, const Vector5d& cur_delta,
                        const Vector5d& cur_elements, const Vector5d& weights) {
  double p = 0.0;
  for (int e = 0; e < 5; ++e) {
    double scale = std::max(std::abs(cur_elements(e)), 1e-12);
    p += weights(e) * (prev_delta(e) - cur_delta(e)) / scale;
  }
  return p;
}

double hohmann_reward(double progress, double thrust_n, double theta_rad,
                      bool decision, double t_max, double theta_max,
                      double alpha1, double alpha2) {
  require(t_max > 0.0 && theta_max > 0.0,
          "hohmann_reward: action limits must be positive");
  if (!decision) return 0.0;
  return alpha1 * (thrust_n / t_max) * progress -
         alpha2 * (theta_rad / theta_max);
}

bool hohmann_success(const EquinoctialElements& current,
                     const EquinoctialElements& target,
                     const Vector5d& tolerances) {
  Vector5d d = element_deltas(current, target);
  return (d.array() <= tolerances.array()).all();
}

double chase_reward(const EquinoctialElements& follower,
                    const EquinoctialElements& leader,
                    const Eigen::Matrix<double, 6, 1>& alphas) {
  require(leader.a != 0.0, "chase_reward: zero leader semi-major axis");
  double da = std::abs(follower.a - leader.a) / std::abs(leader.a);
  double dm = std::abs(
      std::atan2(std::sin(follower.M - leader.M), std::cos(follower.M - leader.M)));
  return -(alphas(0) * da + alphas(1) * std::abs(follower.ex - leader.ex) +
           alphas(2) * std::abs(follower.ey - leader.ey) +
           alphas(3) * std::abs(follower.hx - leader.hx) +
           alphas(4) * std::abs(follower.hy - leader.hy) + alphas(5) * dm);
}

double cam_orbit_deviation(const EquinoctialElements& current,
                           const EquinoctialElements& nominal,
                           const Vector5d& weights) {
  require(nominal.a != 0.0, "cam_orbit_deviation: zero nominal semi-major axis");
  Vector5d d = element_deltas(current, nominal);
  d(0) /= std::abs(nominal.a);
  return weights.dot(d);
}

double cam_reward(double poc_before, double poc_after, double deviation,
                  bool burned, double alpha1, double alpha2,
                  double threshold) {
  if (poc_before < threshold) return burned ? -alpha1 : 0.0;
  return -(deviation + (poc_after > threshold ? alpha2 : 0.0));
}

double geo_anomaly_penalty(const std::vector<double>& anomalies) {
  std::size_t n = anomalies.size();
  require(n >= 2, "geo_anomaly_penalty: need at least two anomalies");
  double target = 2.0 * kPi / static_cast<double>(n);
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double gap = std::abs(wrap_signed(anomalies[i] - anomalies[j]));
      sum += std::max(0.0, (target - gap) / target);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

double geo_reward(double radius_err_m, double thrust_n, double spacing_penalty,
                  double alpha1, double alpha2, double alpha3) {
  return -(alpha1 * radius_err_m + alpha2 * thrust_n +
           alpha3 * spacing_penalty);
}

int action_arity(MissionId id) {
  switch (id) {
    case MissionId::KolosaTransfer: return 3;   // (T, theta, phi)
    case MissionId::HerreraStationKeeping: return 2;  // (dT, dtheta)
    case MissionId::Hohmann: return 4;          // (T, theta, phi, delta)
    case MissionId::Chase: return 3;
    case MissionId::CollisionAvoidance: return 4;
    case MissionId::GeoConstellation: return 2;  // (T, theta) in-plane
  }
  throw std::invalid_argument("unknown mission id value");
}

int observation_arity(MissionId id, int body_count) {
  switch (id) {
    case MissionId::KolosaTransfer: return 7;
    case MissionId::HerreraStationKeeping: return 8;
    case MissionId::Hohmann: return 7;
    case MissionId::Chase: return 8;
    case MissionId::CollisionAvoidance: return 14;
    case MissionId::GeoConstellation: return 4 + body_count;
  }
  throw std::invalid_argument("unknown mission id value");
}

Eigen::VectorXd build_observation(MissionId id, const WorldSnapshot& world,
                                  std::size_t agent) {
  require(agent < world.bodies.size(), "build_observation: agent out of range");
  const BodySnapshot& own = world.bodies[agent];
  double f = own.fuel0 > 0.0 ? own.fuel / own.fuel0 : 0.0;
  Eigen::VectorXd obs(
      observation_arity(id, static_cast<int>(world.bodies.size())));
  switch (id) {
    case MissionId::KolosaTransfer:
    case MissionId::Hohmann:
      obs << own.eq.a, own.eq.ex, own.eq.ey, own.eq.hx, own.eq.hy, own.eq.M, f;
      break;
    case MissionId::HerreraStationKeeping: {
      double r_nom = kSkNominalRadius;
      double v_nom = sk_nominal_speed();
      obs << own.r.x() / r_nom, own.r.y() / r_nom, own.v.x() / v_nom,
          own.v.y() / v_nom, std::abs(own.r.norm() - r_nom),
          std::abs(own.v.norm() - v_nom), world.thrust_theta, world.thrust_t;
      break;
    }
    case MissionId::Chase: {
      require(world.bodies.size() >= 2, "build_observation: chase needs a leader");
      const BodySnapshot& leader = world.bodies[1];
      obs << own.eq.a, own.eq.ex, own.eq.ey, own.eq.hx, own.eq.hy, own.eq.M,
          leader.eq.M, f;
      break;
    }
    case MissionId::CollisionAvoidance: {
      require(world.bodies.size() >= 2, "build_observation: cam needs two bodies");
      const BodySnapshot& other = world.bodies[agent == 0 ? 1 : 0];
      obs << own.eq.a, own.eq.ex, own.eq.ey, own.eq.hx, own.eq.hy, own.eq.M,
          other.eq.a, other.eq.ex, other.eq.ey, other.eq.hx, other.eq.hy,
          other.eq.M, f, world.poc;
      break;
    }
    case MissionId::GeoConstellation: {
      obs(0) = own.eq.a;
      obs(1) = own.eq.ex;
      obs(2) = own.eq.ey;
      obs(3) = f;
      for (std::size_t j = 0; j < world.bodies.size(); ++j)
        obs(4 + static_cast<Eigen::Index>(j)) = world.bodies[j].eq.M;
      break;
    }
  }
  return obs;
}

namespace {

using nlohmann::json;

json equinoctial_json(double a, double ex, double ey, double hx, double hy,
                      double m) {
  return {{"type", "equinoctial"}, {"a_m", a}, {"ex", ex}, {"ey", ey},
          {"hx", hx},              {"hy", hy}, {"m_rad", m}};
}

json keplerian_json(double a, double e, double i, double argp, double raan,
                    double anomaly, const char* kind) {
  return {{"type", "keplerian"},
          {"a_m", a},
          {"e", e},
          {"i_rad", i},
          {"argp_rad", argp},
          {"raan_rad", raan},
          {"anomaly_rad", anomaly},
          {"anomaly_kind", kind}};
}

json thrust_json(double t_max, double theta_max, double phi_max,
                 bool decision) {
  return {{"t_max_n", t_max},
          {"theta_max_rad", theta_max},
          {"phi_max_rad", phi_max},
          {"decision_flag", decision}};
}

json newtonian_forces() {
  return {{"mu", kMuEarth}, {"enable_j2", false}, {"enable_drag", false}};
}

json stepping_json(const EpisodeParams& ep, bool parallel) {
  return {{"step_s", ep.step_s},
          {"episode_steps", ep.steps},
          {"burn_window_s", ep.burn_window_s},
          {"parallel", parallel}};
}

json body_json(const char* name, double dry, double fuel, double radius,
               double isp, json elements) {
  return {{"name", name},     {"dry_mass_kg", dry}, {"fuel_kg", fuel},
          {"radius_m", radius}, {"isp_s", isp},     {"elements", elements}};
}

}  // namespace

std::string preset_scenario_json(MissionId id) {
  MissionSpec def = mission_default_spec(id);
  json doc;
  doc["mission"] = {{"id", mission_id_to_string(id)}, {"params", json::object()}};
  doc["forces"] = newtonian_forces();
  doc["stepping"] = stepping_json(def.episode, false);
  doc["seed"] = 0;
  switch (id) {
    case MissionId::KolosaTransfer: {
      json sat = body_json("sat", 500.0, 150.0, 1.0, 3100.0,
                           equinoctial_json(11878e3, 0.153, 0.128, 0.041,
                                            0.015, deg(10.0)));
      sat["thrust"] = thrust_json(0.6, kPi, 2.0 * kPi, false);
      doc["bodies"] = json::array({sat});
      break;
    }
    case MissionId::HerreraStationKeeping: {
      json sat = body_json("sat", 25.0, 75.0, 16.8, 0.0067,
                           keplerian_json(kSkNominalRadius, 0.0, 0.0, 0.0, 0.0,
                                          0.0, "mean"));
      sat["cd"] = 2.123;
      sat["thrust"] = thrust_json(0.04, 2.0 * kPi, 0.0, false);
      doc["bodies"] = json::array({sat});
      doc["forces"] = {{"mu", kMuEarth},
                       {"enable_j2", false},
                       {"enable_drag", true},
                       {"drag",
                        {{"rho0", kSkDragRho0},
                         {"h0_m", kSkNominalRadius - kEarthRadius},
                         {"scale_height_m", kDragScaleHeight}}}};
      break;
    }
    case MissionId::Hohmann: {
      json sat = body_json("sat", 200.0, 50.0, 1.0, 310.0,
                           equinoctial_json(8378e3, 0.007, 0.006, 0.041, 0.015,
                                            0.0));
      sat["thrust"] = thrust_json(500.0, kPi, 2.0 * kPi, true);
      doc["bodies"] = json::array({sat});
      break;
    }
    case MissionId::Chase: {
      json follower = body_json("follower", 500.0, 150.0, 5.0, 3000.0,
                                keplerian_json(16378e3, 0.1, deg(5.0),
                                               deg(10.0), deg(10.0), deg(10.0),
                                               "mean"));
      follower["thrust"] = thrust_json(30.0, kPi, 2.0 * kPi, false);
      json leader = body_json("leader", 1000.0, 0.0, 5.0, 300.0,
                              keplerian_json(46378e3, 0.001, deg(5.0),
                                             deg(10.0), deg(10.0), deg(10.0),
                                             "mean"));
      doc["bodies"] = json::array({follower, leader});
      break;
    }
    case MissionId::CollisionAvoidance: {
      KeplerianElements kep{8378e3, 0.01,      deg(5.0), deg(20.0),
                            deg(20.0), deg(10.0), AnomalyKind::Mean};
      CartesianState enc = keplerian_to_cartesian(kep, kMuEarth);
      json sat = body_json("sat", 200.0, 50.0, 10.0, 3100.0,
                           keplerian_json(kep.a, kep.e, kep.i, kep.argp,
                                          kep.raan, kep.anomaly, "mean"));
      sat["thrust"] = thrust_json(5.0, kPi, 2.0 * kPi, true);
      // Position-only knowledge noise: velocity noise would smear the
      // projected encounter covariance over tens of kilometres after the
      // two-day lead time and wash out the collision-risk signal.
      sat["sigma"] = {0.1, 0.1, 0.1, 0.0, 0.0, 0.0};
      // Drifter mass picked so both ballistic coefficients match: differential
      // drag then barely perturbs the encounter geometry, keeping the reset
      // conjunction risk above the reaction threshold for every seed.
      json drifter =
          body_json("drifter", 62.5, 0.0, 5.0, 300.0,
                    json{{"type", "cartesian"},
                         {"r_m", {enc.r.x(), enc.r.y(), enc.r.z()}},
                         {"v_mps", {-enc.v.x(), -enc.v.y(), -enc.v.z()}}});
      drifter["sigma"] = {0.1, 0.1, 0.1, 0.0, 0.0, 0.0};
      doc["bodies"] = json::array({sat, drifter});
      doc["forces"] = {{"mu", kMuEarth},
                       {"enable_j2", false},
                       {"enable_drag", true},
                       {"drag",
                        {{"rho0", kCamDragRho0},
                         {"h0_m", 2000e3},
                         {"scale_height_m", kDragScaleHeight}}}};
      break;
    }
    case MissionId::GeoConstellation: {
      doc["bodies"] = json::array();
      const char* names[] = {"sat1", "sat2", "sat3", "sat4"};
      for (const char* name : names) {
        json sat = body_json(name, 200.0, 50.0, 1.0, 3100.0,
                             equinoctial_json(42164e3, 0.0, 0.0, 0.0, 0.0,
                                              0.0));
        sat["thrust"] = thrust_json(5.0, 2.0 * kPi, 0.0, false);
        doc["bodies"].push_back(sat);
      }
      break;
    }
  }
  return doc.dump(2) + "\n";
}

}  // namespace apsis
