// Mission contracts: reward shaping, observation layouts, preset scenarios.
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "apsis/frames.hpp"

namespace apsis {

using Vector5d = Eigen::Matrix<double, 5, 1>;

enum class MissionId {
  KolosaTransfer,
  HerreraStationKeeping,
  Hohmann,
  Chase,
  CollisionAvoidance,
  GeoConstellation,
};

// Wire ids: kolosa_transfer, herrera_sk, hohmann, chase, cam,
// geo_constellation. Throws std::invalid_argument on unknown ids.
MissionId mission_id_from_string(const std::string& id);
std::string mission_id_to_string(MissionId id);

struct EpisodeParams {
  double step_s = 0.0;
  int steps = 0;
  double burn_window_s = 0.0;  // thrust window at the start of each step
};

// Mission contract: named numeric parameters (weights, targets, tolerances)
// plus the episode clock. Scenario files may override individual parameters
// but cannot introduce names absent from the defaults.
struct MissionSpec {
  MissionId id = MissionId::Hohmann;
  std::map<std::string, double> params;
  EpisodeParams episode;

  // Throws std::out_of_range with the parameter name.
  double param(const std::string& name) const;
};

MissionSpec mission_default_spec(MissionId id);

// Complete scenario document for a mission preset, ready for the loader.
std::string preset_scenario_json(MissionId id);

// Station-keeping shell: 550 km circular orbit and its circular speed.
inline const double kSkNominalRadius = kEarthRadius + 550e3;
double sk_nominal_speed();

// (|da|, |dex|, |dey|, |dhx|, |dhy|) against a target orbit, SI units.
Vector5d element_deltas(const EquinoctialElements& current,
                        const EquinoctialElements& target);

// Negated weighted distance to the target orbit; the semi-major axis delta
// is normalized by the target value, the shape terms stay absolute.
double kolosa_reward(const EquinoctialElements& current,
                     const EquinoctialElements& target,
                     const Vector5d& alphas);

// 0 once the shell error leaves the band or the tank runs dry, otherwise
// t / total_steps + 0.5 for survival step t.
double herrera_reward(double radius_err_m, double fuel_kg, int t,
                      int total_steps = 800, double band_m = 1.0);

// Weighted per-element progress toward the target since the previous step,
// each term normalized by the current element magnitude (floored at 1e-12).
double hohmann_progress(const Vector5d& prev_delta, const Vector5d& cur_delta,
                        const Vector5d& cur_elements, const Vector5d& weights);

// 1{decision} * (a1 * (T / T_max) * progress - a2 * theta / theta_max).
double hohmann_reward(double progress, double thrust_n, double theta_rad,
                      bool decision, double t_max, double theta_max,
                      double alpha1, double alpha2);

// Every element within its tolerance of the target.
bool hohmann_success(const EquinoctialElements& current,
                     const EquinoctialElements& target,
                     const Vector5d& tolerances);

// Negated weighted gap to the leader orbit: da is normalized by the leader
// semi-major axis and the anomaly error is wrapped to [0, pi].
double chase_reward(const EquinoctialElements& follower,
                    const EquinoctialElements& leader,
                    const Eigen::Matrix<double, 6, 1>& alphas);

// Weighted deviation from the nominal orbit used by collision avoidance;
// same normalization convention as kolosa_reward.
double cam_orbit_deviation(const EquinoctialElements& current,
                           const EquinoctialElements& nominal,
                           const Vector5d& weights);

// Below the risk threshold burns are the only cost; above it the agent pays
// the orbit deviation plus a flat penalty while the risk stays high.
double cam_reward(double poc_before, double poc_after, double deviation,
                  bool burned, double alpha1, double alpha2,
                  double threshold);

// Mean pairwise spacing shortfall on the circle: 0 when evenly spread,
// 1 when every anomaly coincides. Needs at least two entries.
double geo_anomaly_penalty(const std::vector<double>& anomalies);

// -(a1 * radius_err + a2 * thrust + a3 * spacing).
double geo_reward(double radius_err_m, double thrust_n, double spacing_penalty,
                  double alpha1, double alpha2, double alpha3);

// Per-body slice of the world handed to observation assembly.
struct BodySnapshot {
  EquinoctialElements eq;
  Eigen::Vector3d r = Eigen::Vector3d::Zero();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  double fuel = 0.0;
  double fuel0 = 1.0;
};

struct WorldSnapshot {
  std::vector<BodySnapshot> bodies;  // scenario order, agents first
  double poc = 0.0;                  // latest predicted collision probability
  double thrust_t = 0.0;             // persistent in-plane throttle
  double thrust_theta = 0.0;         // persistent in-plane direction
};

int action_arity(MissionId id);
int observation_arity(MissionId id, int body_count);

// Observation layouts, SI units and fuel as a fraction of the initial load:
//   kolosa_transfer   (a, ex, ey, hx, hy, M, f)                      R^7
//   herrera_sk        (rx, ry)/r_nom, (vx, vy)/v_nom,
//                     |r_err|, |v_err|, theta, T                     R^8
//   hohmann           (a, ex, ey, hx, hy, M, f)                      R^7
//   chase             (a, ex, ey, hx, hy, M, M_leader, f)            R^8
//   cam               own (a..M), other (a..M), f, poc               R^14
//   geo_constellation (a, ex, ey, f, M_1..M_n)                       R^(4+n)
Eigen::VectorXd build_observation(MissionId id, const WorldSnapshot& world,
                                  std::size_t agent);

}  // namespace apsis
