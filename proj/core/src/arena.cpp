#include "apsis/arena.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <utility>

#include <nlohmann/json.hpp>

#include "apsis/conjunction.hpp"
#include "apsis/ephemeris.hpp"
#include "apsis/rng.hpp"

namespace apsis {
namespace {

using nlohmann::json;

constexpr double kPi = 3.14159265358979323846;

CartesianState cart(const PropState& s) { return CartesianState{s.r, s.v, s.t}; }

// Validation pass that keeps going after the first failure so one rejection
// names every violation.
struct Check {
  std::vector<std::string> errs;

  void fail(const std::string& path, const std::string& what) {
    errs.push_back(path + ": " + what);
  }

  void known_keys(const json& o, const std::string& path,
                  std::initializer_list<const char*> allowed) {
    for (auto it = o.begin(); it != o.end(); ++it) {
      bool found = false;
      for (const char* k : allowed)
        if (it.key() == k) {
          found = true;
          break;
        }
      if (!found) fail(path + "." + it.key(), "unknown key");
    }
  }

  double num(const json& o, const std::string& path, const char* key,
             bool required, double fallback) {
    if (!o.contains(key)) {
      if (required) fail(path + "." + key, "missing");
      return fallback;
    }
    const json& v = o.at(key);
    if (!v.is_number()) {
      fail(path + "." + key, "expected a number");
      return fallback;
    }
    double x = v.get<double>();
    if (!std::isfinite(x)) {
      fail(path + "." + key, "not finite");
      return fallback;
    }
    return x;
  }

  double positive(const json& o, const std::string& path, const char* key,
                  bool required, double fallback) {
    double x = num(o, path, key, required, fallback);
    if (x <= 0.0 && o.contains(key) && o.at(key).is_number())
      fail(path + "." + key, "must be positive");
    return x > 0.0 ? x : fallback;
  }

  double nonneg(const json& o, const std::string& path, const char* key,
                bool required, double fallback) {
    double x = num(o, path, key, required, fallback);
    if (x < 0.0) {
      fail(path + "." + key, "must be nonnegative");
      return fallback;
    }
    return x;
  }

  bool flag(const json& o, const std::string& path, const char* key,
            bool fallback) {
    if (!o.contains(key)) return fallback;
    const json& v = o.at(key);
    if (!v.is_boolean()) {
      fail(path + "." + key, "expected a boolean");
      return fallback;
    }
    return v.get<bool>();
  }

  std::string text(const json& o, const std::string& path, const char* key,
                   bool required, const std::string& fallback) {
    if (!o.contains(key)) {
      if (required) fail(path + "." + key, "missing");
      return fallback;
    }
    const json& v = o.at(key);
    if (!v.is_string()) {
      fail(path + "." + key, "expected a string");
      return fallback;
    }
    return v.get<std::string>();
  }
};

bool parse_elements(Check& ck, const json& el, const std::string& path,
                    double mu, CartesianState* out) {
  std::size_t before = ck.errs.size();
  std::string type = ck.text(el, path, "type", true, "");
  if (type == "keplerian") {
    ck.known_keys(el, path,
                  {"type", "a_m", "e", "i_rad", "argp_rad", "raan_rad",
                   "anomaly_rad", "anomaly_kind"});
    KeplerianElements k;
    k.a = ck.positive(el, path, "a_m", true, 7e6);
    k.e = ck.num(el, path, "e", true, 0.0);
    if (k.e < 0.0 || k.e >= 1.0) ck.fail(path + ".e", "must lie in [0, 1)");
    k.i = ck.num(el, path, "i_rad", true, 0.0);
    k.argp = ck.num(el, path, "argp_rad", true, 0.0);
    k.raan = ck.num(el, path, "raan_rad", true, 0.0);
    k.anomaly = ck.num(el, path, "anomaly_rad", true, 0.0);
    std::string kind = ck.text(el, path, "anomaly_kind", false, "true");
    if (kind == "mean")
      k.anomaly_kind = AnomalyKind::Mean;
    else if (kind == "eccentric")
      k.anomaly_kind = AnomalyKind::Eccentric;
    else if (kind == "true")
      k.anomaly_kind = AnomalyKind::True;
    else
      ck.fail(path + ".anomaly_kind", "expected mean, eccentric, or true");
    if (ck.errs.size() != before) return false;
    *out = keplerian_to_cartesian(k, mu);
    return true;
  }
  if (type == "equinoctial") {
    ck.known_keys(el, path, {"type", "a_m", "ex", "ey", "hx", "hy", "m_rad"});
    EquinoctialElements q;
    q.a = ck.positive(el, path, "a_m", true, 7e6);
    q.ex = ck.num(el, path, "ex", true, 0.0);
    q.ey = ck.num(el, path, "ey", true, 0.0);
    q.hx = ck.num(el, path, "hx", true, 0.0);
    q.hy = ck.num(el, path, "hy", true, 0.0);
    q.M = ck.num(el, path, "m_rad", true, 0.0);
    if (q.ex * q.ex + q.ey * q.ey >= 1.0)
      ck.fail(path, "eccentricity vector magnitude must stay below 1");
    if (ck.errs.size() != before) return false;
    *out = equinoctial_to_cartesian(q, mu);
    return true;
  }
  if (type == "cartesian") {
    ck.known_keys(el, path, {"type", "r_m", "v_mps"});
    Eigen::Vector3d r = Eigen::Vector3d::Zero(), v = Eigen::Vector3d::Zero();
    for (const char* key : {"r_m", "v_mps"}) {
      if (!el.contains(key)) {
        ck.fail(path + "." + key, "missing");
        continue;
      }
      const json& arr = el.at(key);
      if (!arr.is_array() || arr.size() != 3) {
        ck.fail(path + "." + key, "expected an array of three numbers");
        continue;
      }
      for (int i = 0; i < 3; ++i) {
        if (!arr[i].is_number() ||
            !std::isfinite(arr[i].get<double>())) {
          ck.fail(path + "." + key, "expected an array of three numbers");
          break;
        }
        (key[0] == 'r' ? r : v)(i) = arr[i].get<double>();
      }
    }
    if (ck.errs.size() != before) return false;
    *out = CartesianState{r, v, 0.0};
    return true;
  }
  if (type.empty()) return false;
  ck.fail(path + ".type", "expected keplerian, equinoctial, or cartesian");
  return false;
}

BodyConfig parse_body(Check& ck, const json& item, const std::string& path,
                      double mu) {
  BodyConfig b;
  ck.known_keys(item, path,
                {"name", "dry_mass_kg", "fuel_kg", "radius_m", "cd", "cr",
                 "isp_s", "elements", "sigma", "thrust"});
  b.name = ck.text(item, path, "name", true, "");
  if (item.contains("name") && b.name.empty())
    ck.fail(path + ".name", "must not be empty");
  b.props.dry_mass = ck.positive(item, path, "dry_mass_kg", true, 1.0);
  b.fuel = ck.nonneg(item, path, "fuel_kg", false, 0.0);
  b.props.radius = ck.positive(item, path, "radius_m", false, 1.0);
  b.props.cd = ck.nonneg(item, path, "cd", false, 2.2);
  b.props.cr = ck.nonneg(item, path, "cr", false, 1.0);
  b.props.isp = ck.positive(item, path, "isp_s", false, 300.0);

  if (!item.contains("elements")) {
    ck.fail(path + ".elements", "missing");
  } else if (!item.at("elements").is_object()) {
    ck.fail(path + ".elements", "expected an object");
  } else {
    parse_elements(ck, item.at("elements"), path + ".elements", mu, &b.mean);
  }

  if (item.contains("sigma")) {
    const json& s = item.at("sigma");
    if (!s.is_array() || s.size() != 6) {
      ck.fail(path + ".sigma", "expected an array of six numbers");
    } else {
      for (int i = 0; i < 6; ++i) {
        if (!s[i].is_number() || s[i].get<double>() < 0.0) {
          ck.fail(path + ".sigma", "entries must be nonnegative numbers");
          break;
        }
        b.sigma(i) = s[i].get<double>();
      }
    }
  }

  if (item.contains("thrust")) {
    const json& t = item.at("thrust");
    if (!t.is_object()) {
      ck.fail(path + ".thrust", "expected an object");
    } else {
      ck.known_keys(t, path + ".thrust",
                    {"t_max_n", "theta_max_rad", "phi_max_rad",
                     "decision_flag"});
      b.maneuverable = true;
      b.limits.t_max = ck.nonneg(t, path + ".thrust", "t_max_n", true, 0.0);
      b.limits.theta_max =
          ck.nonneg(t, path + ".thrust", "theta_max_rad", false, 0.0);
      b.limits.phi_max =
          ck.nonneg(t, path + ".thrust", "phi_max_rad", false, 0.0);
      b.limits.decision_flag =
          ck.flag(t, path + ".thrust", "decision_flag", false);
    }
  }
  return b;
}

void parallel_for(std::size_t n, bool parallel,
                  const std::function<void(std::size_t)>& fn) {
  unsigned hw = std::thread::hardware_concurrency();
  std::size_t workers = std::min<std::size_t>(hw ? hw : 4, n);
  if (!parallel || workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

Vector5d elements5(const EquinoctialElements& q) {
  Vector5d v;
  v << q.a, q.ex, q.ey, q.hx, q.hy;
  return v;
}

EquinoctialElements target_from(const MissionSpec& ms) {
  return EquinoctialElements{ms.param("target_a_m"), ms.param("target_ex"),
                             ms.param("target_ey"), ms.param("target_hx"),
                             ms.param("target_hy"), 0.0};
}

}  // namespace

ScenarioError::ScenarioError(std::vector<std::string> violations)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "scenario rejected with " << violations.size() << " violation"
           << (violations.size() == 1 ? "" : "s");
        for (const std::string& v : violations) os << "\n  " << v;
        return os.str();
      }()),
      violations_(std::move(violations)) {}

ScenarioConfig load_scenario(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ScenarioError({std::string("invalid JSON: ") + e.what()});
  }
  Check ck;
  ScenarioConfig cfg;
  if (!doc.is_object()) {
    throw ScenarioError({"document: expected a JSON object"});
  }
  ck.known_keys(doc, "document",
                {"bodies", "forces", "mission", "stepping", "seed", "epoch"});

  // Forces come first: element conversions need mu.
  if (doc.contains("forces")) {
    const json& f = doc.at("forces");
    if (!f.is_object()) {
      ck.fail("forces", "expected an object");
    } else {
      ck.known_keys(f, "forces",
                    {"mu", "earth_radius_m", "enable_j2", "j2", "enable_drag",
                     "drag"});
      cfg.forces.mu = ck.positive(f, "forces", "mu", false, kMuEarth);
      cfg.forces.earth_radius =
          ck.positive(f, "forces", "earth_radius_m", false, kEarthRadius);
      cfg.forces.enable_j2 = ck.flag(f, "forces", "enable_j2", false);
      cfg.forces.j2 = ck.num(f, "forces", "j2", false, kJ2Earth);
      cfg.forces.enable_drag = ck.flag(f, "forces", "enable_drag", false);
      if (f.contains("drag")) {
        const json& d = f.at("drag");
        if (!d.is_object()) {
          ck.fail("forces.drag", "expected an object");
        } else {
          ck.known_keys(d, "forces.drag", {"rho0", "h0_m", "scale_height_m"});
          cfg.forces.drag_rho0 =
              ck.nonneg(d, "forces.drag", "rho0", false, kDragRho0);
          cfg.forces.drag_h0 = ck.num(d, "forces.drag", "h0_m", false, kDragH0);
          cfg.forces.drag_scale_height = ck.positive(
              d, "forces.drag", "scale_height_m", false, kDragScaleHeight);
        }
      }
    }
  }

  if (!doc.contains("bodies")) {
    ck.fail("bodies", "missing");
  } else if (!doc.at("bodies").is_array() || doc.at("bodies").empty()) {
    ck.fail("bodies", "expected a non-empty array");
  } else {
    const json& arr = doc.at("bodies");
    std::set<std::string> names;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      std::string path = "bodies[" + std::to_string(i) + "]";
      if (!arr[i].is_object()) {
        ck.fail(path, "expected an object");
        continue;
      }
      BodyConfig b = parse_body(ck, arr[i], path, cfg.forces.mu);
      if (!b.name.empty() && !names.insert(b.name).second)
        ck.fail(path + ".name", "duplicate body name '" + b.name + "'");
      cfg.bodies.push_back(std::move(b));
    }
  }

  if (doc.contains("mission")) {
    const json& m = doc.at("mission");
    if (!m.is_object()) {
      ck.fail("mission", "expected an object");
    } else {
      ck.known_keys(m, "mission", {"id", "params"});
      std::string id = ck.text(m, "mission", "id", true, "");
      if (!id.empty()) {
        try {
          cfg.mission = mission_default_spec(mission_id_from_string(id));
          cfg.has_mission = true;
        } catch (const std::invalid_argument&) {
          ck.fail("mission.id", "unknown mission '" + id + "'");
        }
      }
      if (m.contains("params")) {
        const json& p = m.at("params");
        if (!p.is_object()) {
          ck.fail("mission.params", "expected an object");
        } else {
          for (auto it = p.begin(); it != p.end(); ++it) {
            if (cfg.has_mission &&
                cfg.mission.params.find(it.key()) == cfg.mission.params.end()) {
              ck.fail("mission.params." + it.key(), "unknown parameter");
              continue;
            }
            if (!it.value().is_number()) {
              ck.fail("mission.params." + it.key(), "expected a number");
              continue;
            }
            if (cfg.has_mission)
              cfg.mission.params[it.key()] = it.value().get<double>();
          }
        }
      }
    }
  }

  if (cfg.has_mission) {
    cfg.stepping.step_s = cfg.mission.episode.step_s;
    cfg.stepping.episode_steps = cfg.mission.episode.steps;
    cfg.stepping.burn_window_s = cfg.mission.episode.burn_window_s;
  }
  if (doc.contains("stepping")) {
    const json& s = doc.at("stepping");
    if (!s.is_object()) {
      ck.fail("stepping", "expected an object");
    } else {
      ck.known_keys(s, "stepping",
                    {"step_s", "episode_steps", "burn_window_s", "parallel"});
      cfg.stepping.step_s =
          ck.positive(s, "stepping", "step_s", true, cfg.stepping.step_s);
      double steps = ck.positive(s, "stepping", "episode_steps", true,
                                 cfg.stepping.episode_steps);
      if (steps != std::floor(steps))
        ck.fail("stepping.episode_steps", "expected an integer");
      else
        cfg.stepping.episode_steps = static_cast<int>(steps);
      cfg.stepping.burn_window_s = ck.nonneg(s, "stepping", "burn_window_s",
                                             false, cfg.stepping.step_s);
      cfg.stepping.parallel = ck.flag(s, "stepping", "parallel", false);
    }
  }
  if (cfg.stepping.burn_window_s > cfg.stepping.step_s)
    ck.fail("stepping.burn_window_s", "must not exceed step_s");
  if (cfg.has_mission) {
    cfg.mission.episode.step_s = cfg.stepping.step_s;
    cfg.mission.episode.steps = cfg.stepping.episode_steps;
    cfg.mission.episode.burn_window_s = cfg.stepping.burn_window_s;
  }

  if (doc.contains("seed")) {
    const json& s = doc.at("seed");
    if (!s.is_number_integer() ||
        (s.is_number_integer() && !s.is_number_unsigned() &&
         s.get<long long>() < 0))
      ck.fail("seed", "expected a nonnegative integer");
    else
      cfg.seed = s.get<std::uint64_t>();
  }

  cfg.epoch = ck.text(doc, "document", "epoch", false, "");
  if (!cfg.epoch.empty()) {
    try {
      parse_epoch_iso(cfg.epoch);
    } catch (const std::exception& e) {
      ck.fail("epoch", e.what());
    }
  }

  // Mission and body list must agree before an episode can run.
  if (cfg.has_mission && !cfg.bodies.empty()) {
    std::size_t agents = 0;
    for (const BodyConfig& b : cfg.bodies) agents += b.maneuverable ? 1 : 0;
    if (agents == 0) ck.fail("bodies", "mission needs a maneuverable body");
    switch (cfg.mission.id) {
      case MissionId::Chase:
      case MissionId::CollisionAvoidance:
        if (cfg.bodies.size() != 2 || !cfg.bodies[0].maneuverable ||
            cfg.bodies[1].maneuverable)
          ck.fail("bodies",
                  mission_id_to_string(cfg.mission.id) +
                      " expects exactly one maneuverable body followed by one "
                      "ballistic body");
        break;
      case MissionId::GeoConstellation:
        if (cfg.bodies.size() < 2)
          ck.fail("bodies", "geo_constellation expects at least two bodies");
        break;
      default:
        break;
    }
  }

  if (!ck.errs.empty()) throw ScenarioError(std::move(ck.errs));
  return cfg;
}

Environment::Environment(ScenarioConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.bodies.empty())
    throw std::invalid_argument("Environment: scenario has no bodies");
  bodies_.resize(cfg_.bodies.size());
  for (std::size_t i = 0; i < cfg_.bodies.size(); ++i)
    if (cfg_.bodies[i].maneuverable) agents_.push_back(i);
  if (cfg_.has_mission && agents_.empty())
    throw std::invalid_argument("Environment: mission needs a maneuverable body");
  if (cfg_.has_mission) {
    switch (cfg_.mission.id) {
      case MissionId::Chase:
      case MissionId::CollisionAvoidance:
        if (cfg_.bodies.size() != 2 || !cfg_.bodies[0].maneuverable ||
            cfg_.bodies[1].maneuverable)
          throw std::invalid_argument(
              "Environment: pair mission expects one maneuverable body "
              "followed by one ballistic body");
        break;
      case MissionId::GeoConstellation:
        if (cfg_.bodies.size() < 2)
          throw std::invalid_argument(
              "Environment: constellation needs at least two bodies");
        break;
      default:
        break;
    }
  }
}

int Environment::agent_count() const { return static_cast<int>(agents_.size()); }

std::size_t Environment::body_index(const std::string& name) const {
  for (std::size_t i = 0; i < cfg_.bodies.size(); ++i)
    if (cfg_.bodies[i].name == name) return i;
  throw std::invalid_argument("unknown body '" + name + "'");
}

const PropState& Environment::body_state(std::size_t index) const {
  return bodies_.at(index).state;
}

const PropState& Environment::body_state(const std::string& name) const {
  return bodies_[body_index(name)].state;
}

double Environment::body_fuel(const std::string& name) const {
  std::size_t i = body_index(name);
  return bodies_[i].state.m - cfg_.bodies[i].props.dry_mass;
}

const Matrix6d& Environment::body_covariance(const std::string& name) const {
  return bodies_[body_index(name)].cov;
}

double Environment::body_distance(const std::string& a,
                                  const std::string& b) const {
  return (bodies_[body_index(a)].state.r - bodies_[body_index(b)].state.r)
      .norm();
}

const std::vector<CartesianState>& Environment::trajectory(
    const std::string& name) const {
  return bodies_[body_index(name)].track;
}

std::vector<Eigen::VectorXd> Environment::reset() { return reset(cfg_.seed); }

std::vector<Eigen::VectorXd> Environment::reset(std::uint64_t seed) {
  step_index_ = 0;
  time_s_ = 0.0;
  finished_ = false;
  poc_prev_ = 0.0;
  tca_step_limit_ = cfg_.stepping.episode_steps;
  prev_delta_.assign(agents_.size(), Vector5d::Zero());
  thrust_t_.assign(agents_.size(), 0.0);
  thrust_theta_.assign(agents_.size(), 0.0);

  const bool geo = cfg_.has_mission &&
                   cfg_.mission.id == MissionId::GeoConstellation;
  for (std::size_t i = 0; i < bodies_.size(); ++i) {
    const BodyConfig& bc = cfg_.bodies[i];
    Rng rng(Rng::derive(seed, bc.name));
    CartesianState mean = bc.mean;
    if (geo) {
      // Constellations start phase-randomized on the configured shell.
      EquinoctialElements q = cartesian_to_equinoctial(mean, cfg_.forces.mu);
      q.M = rng.uniform() * 2.0 * kPi;
      mean = equinoctial_to_cartesian(q, cfg_.forces.mu);
    }
    CartesianState s = sample_state(StateDistribution{mean, bc.sigma}, rng);
    BodyRuntime& b = bodies_[i];
    b.state = PropState{s.r, s.v, bc.props.dry_mass + bc.fuel, 0.0};
    b.deorbited = false;
    b.cov = Matrix6d::Zero();
    for (int d = 0; d < 6; ++d) b.cov(d, d) = bc.sigma(d) * bc.sigma(d);
    b.track.clear();
  }

  if (cfg_.has_mission &&
      cfg_.mission.id == MissionId::CollisionAvoidance) {
    // The configured states describe the encounter; episodes start a fixed
    // lead time earlier, flown backward under the true force model.
    double back = cfg_.mission.param("backward_s");
    for (std::size_t i = 0; i < bodies_.size(); ++i) {
      PropagationResult res =
          propagate(bodies_[i].state, -back, kMaxSubstepS, {},
                    cfg_.bodies[i].props, cfg_.forces);
      bodies_[i].state = res.states.back();
      bodies_[i].state.t = 0.0;
    }
    nominal_ = cartesian_to_equinoctial(cfg_.bodies[0].mean, cfg_.forces.mu);
    poc_prev_ = pair_conjunction_indices(0, 1).poc;
    // Episodes cover the designed encounter plus a short tail; the scanned
    // TCA itself may hop between earlier crossings of the shared orbit.
    tca_step_limit_ =
        static_cast<int>(std::ceil(back / cfg_.stepping.step_s)) + 10;
  }

  if (cfg_.has_mission && cfg_.mission.id == MissionId::Hohmann) {
    EquinoctialElements target = target_from(cfg_.mission);
    for (std::size_t k = 0; k < agents_.size(); ++k) {
      EquinoctialElements q = cartesian_to_equinoctial(
          cart(bodies_[agents_[k]].state), cfg_.forces.mu);
      prev_delta_[k] = element_deltas(q, target);
    }
  }

  for (BodyRuntime& b : bodies_) b.track.push_back(cart(b.state));

  std::vector<Eigen::VectorXd> obs;
  if (cfg_.has_mission) {
    WorldSnapshot world = snapshot();
    obs.reserve(agents_.size());
    for (std::size_t k = 0; k < agents_.size(); ++k) {
      world.thrust_t = thrust_t_[k];
      world.thrust_theta = thrust_theta_[k];
      obs.push_back(build_observation(cfg_.mission.id, world, agents_[k]));
    }
  }
  return obs;
}

WorldSnapshot Environment::snapshot() const {
  WorldSnapshot w;
  w.bodies.reserve(bodies_.size());
  for (std::size_t i = 0; i < bodies_.size(); ++i) {
    BodySnapshot s;
    s.eq = cartesian_to_equinoctial(cart(bodies_[i].state), cfg_.forces.mu);
    s.r = bodies_[i].state.r;
    s.v = bodies_[i].state.v;
    s.fuel = bodies_[i].state.m - cfg_.bodies[i].props.dry_mass;
    s.fuel0 = cfg_.bodies[i].fuel;
    w.bodies.push_back(std::move(s));
  }
  w.poc = poc_prev_;
  return w;
}

Environment::ThrustCommand Environment::command_for(
    std::size_t k, const Eigen::VectorXd& a) {
  const ActionLimits& lim = cfg_.bodies[agents_[k]].limits;
  ThrustCommand c;
  auto clampf = [&c](double v, double lo, double hi) {
    if (v < lo) {
      c.clamped = true;
      return lo;
    }
    if (v > hi) {
      c.clamped = true;
      return hi;
    }
    return v;
  };
  switch (cfg_.mission.id) {
    case MissionId::HerreraStationKeeping: {
      double d_t = cfg_.mission.param("delta_t_max_n");
      double d_th = cfg_.mission.param("delta_theta_max_rad");
      double dt_cmd = clampf(a(0), -d_t, d_t);
      double dth_cmd = clampf(a(1), -d_th, d_th);
      thrust_t_[k] = std::clamp(thrust_t_[k] + dt_cmd, 0.0, lim.t_max);
      thrust_theta_[k] = wrap_angle(thrust_theta_[k] + dth_cmd);
      c.polar = PolarThrust{thrust_t_[k], thrust_theta_[k], 0.0};
      c.decision = true;
      c.active = thrust_t_[k] > 0.0;
      c.commanded_t = thrust_t_[k];
      c.commanded_theta = thrust_theta_[k];
      break;
    }
    case MissionId::GeoConstellation: {
      double t = clampf(a(0), 0.0, lim.t_max);
      double th = clampf(a(1), 0.0, lim.theta_max);
      c.polar = PolarThrust{t, th, 0.0};
      c.decision = true;
      c.active = t > 0.0;
      c.commanded_t = t;
      c.commanded_theta = th;
      break;
    }
    default: {
      double t = clampf(a(0), 0.0, lim.t_max);
      double th = clampf(a(1), 0.0, lim.theta_max);
      double ph = clampf(a(2), 0.0, lim.phi_max);
      c.decision = true;
      if (a.size() >= 4) {
        double delta = clampf(a(3), 0.0, 1.0);
        if (lim.decision_flag) c.decision = delta > 0.5;
      }
      c.polar = PolarThrust{t, th, ph};
      c.active = c.decision && t > 0.0;
      c.commanded_t = t;
      c.commanded_theta = th;
      break;
    }
  }
  return c;
}

void Environment::advance_body(std::size_t index, const ThrustCommand* cmd) {
  BodyRuntime& b = bodies_[index];
  const double step = cfg_.stepping.step_s;
  const double t_end = b.state.t + step;
  if (!b.deorbited) {
    // Onboard knowledge grows along the pre-step arc under the point-mass
    // model, independent of the true forces below.
    b.cov = propagate_covariance(cart(b.state), b.cov, step, kMaxSubstepS,
                                 cfg_.forces.mu)
                .sigma;
    double burn =
        (cmd && cmd->active) ? std::min(cfg_.stepping.burn_window_s, step)
                             : 0.0;
    auto segment = [&](double duration, const PolarThrust* polar) {
      if (duration <= 0.0 || b.deorbited) return;
      int n = static_cast<int>(std::ceil(duration / kMaxSubstepS));
      double dt = duration / n;
      for (int s = 0; s < n; ++s) {
        Eigen::Vector3d thrust = Eigen::Vector3d::Zero();
        if (polar && polar->magnitude > 0.0)
          thrust = thrust_to_inertial(*polar, rsw_basis(cart(b.state)));
        b.state = rk4_step(b.state, dt, thrust, cfg_.bodies[index].props,
                           cfg_.forces)
                      .state;
        if (b.state.r.norm() < cfg_.forces.earth_radius) {
          b.deorbited = true;
          return;
        }
      }
    };
    segment(burn, cmd ? &cmd->polar : nullptr);
    segment(step - burn, nullptr);
  }
  b.state.t = t_end;
}

StepOutcome Environment::step(const std::vector<Eigen::VectorXd>& actions) {
  if (finished_) throw std::logic_error("episode already finished");
  if (!cfg_.has_mission)
    throw std::logic_error("scenario has no mission to step");
  if (actions.size() != agents_.size())
    throw std::invalid_argument(
        "expected " + std::to_string(agents_.size()) + " actions, got " +
        std::to_string(actions.size()));
  const int arity = action_arity(cfg_.mission.id);
  for (const Eigen::VectorXd& a : actions)
    if (a.size() != arity)
      throw std::invalid_argument("action arity must be " +
                                  std::to_string(arity) + ", got " +
                                  std::to_string(a.size()));

  std::vector<ThrustCommand> cmds(agents_.size());
  for (std::size_t k = 0; k < agents_.size(); ++k)
    cmds[k] = command_for(k, actions[k]);

  std::vector<const ThrustCommand*> body_cmd(bodies_.size(), nullptr);
  for (std::size_t k = 0; k < agents_.size(); ++k)
    body_cmd[agents_[k]] = &cmds[k];

  parallel_for(bodies_.size(), cfg_.stepping.parallel,
               [&](std::size_t i) { advance_body(i, body_cmd[i]); });

  time_s_ += cfg_.stepping.step_s;
  step_index_ += 1;

  StepOutcome out;
  out.agents.resize(agents_.size());
  score_agents(cmds, out);

  for (BodyRuntime& b : bodies_) b.track.push_back(cart(b.state));
  finished_ = out.done;
  return out;
}

void Environment::score_agents(const std::vector<ThrustCommand>& cmds,
                               StepOutcome& out) {
  const MissionSpec& ms = cfg_.mission;
  WorldSnapshot world = snapshot();
  bool terminated = false;
  bool truncated = step_index_ >= cfg_.stepping.episode_steps;

  ConjunctionEstimate est;
  if (ms.id == MissionId::CollisionAvoidance)
    est = pair_conjunction_indices(0, 1);

  double spacing = 0.0;
  if (ms.id == MissionId::GeoConstellation) {
    std::vector<double> anomalies;
    anomalies.reserve(world.bodies.size());
    for (const BodySnapshot& b : world.bodies) anomalies.push_back(b.eq.M);
    spacing = geo_anomaly_penalty(anomalies);
  }

  for (std::size_t k = 0; k < agents_.size(); ++k) {
    std::size_t bi = agents_[k];
    const BodySnapshot& bs = world.bodies[bi];
    const ActionLimits& lim = cfg_.bodies[bi].limits;
    AgentStep& ag = out.agents[k];
    ag.info["fuel_kg"] = bs.fuel;
    ag.info["clamped"] = cmds[k].clamped ? 1.0 : 0.0;
    ag.info["deorbited"] = bodies_[bi].deorbited ? 1.0 : 0.0;
    switch (ms.id) {
      case MissionId::KolosaTransfer: {
        Vector5d alphas;
        alphas << ms.param("alpha_a"), ms.param("alpha_ex"),
            ms.param("alpha_ey"), ms.param("alpha_hx"), ms.param("alpha_hy");
        ag.reward = kolosa_reward(bs.eq, target_from(ms), alphas);
        break;
      }
      case MissionId::HerreraStationKeeping: {
        double err = std::abs(bs.r.norm() - kSkNominalRadius);
        double band = ms.param("band_m");
        ag.reward = herrera_reward(err, bs.fuel, step_index_,
                                   cfg_.stepping.episode_steps, band);
        ag.info["radius_err_m"] = err;
        if (err > band || bs.fuel <= 0.0) terminated = true;
        break;
      }
      case MissionId::Hohmann: {
        EquinoctialElements target = target_from(ms);
        Vector5d w;
        w << ms.param("w_a"), ms.param("w_ex"), ms.param("w_ey"),
            ms.param("w_hx"), ms.param("w_hy");
        Vector5d cur_delta = element_deltas(bs.eq, target);
        double progress = hohmann_progress(prev_delta_[k], cur_delta,
                                           elements5(bs.eq), w);
        prev_delta_[k] = cur_delta;
        ag.reward = hohmann_reward(progress, cmds[k].commanded_t,
                                   cmds[k].commanded_theta, cmds[k].decision,
                                   lim.t_max, lim.theta_max,
                                   ms.param("alpha1"), ms.param("alpha2"));
        Vector5d tol;
        tol << ms.param("tol_a_m"), ms.param("tol_ex"), ms.param("tol_ey"),
            ms.param("tol_hx"), ms.param("tol_hy");
        bool hit = hohmann_success(bs.eq, target, tol);
        ag.info["progress"] = progress;
        ag.info["success"] = hit ? 1.0 : 0.0;
        if (hit) terminated = true;
        break;
      }
      case MissionId::Chase: {
        Eigen::Matrix<double, 6, 1> alphas;
        alphas << ms.param("alpha_a"), ms.param("alpha_ex"),
            ms.param("alpha_ey"), ms.param("alpha_hx"), ms.param("alpha_hy"),
            ms.param("alpha_m");
        ag.reward = chase_reward(bs.eq, world.bodies[1].eq, alphas);
        ag.info["distance_m"] = (bs.r - world.bodies[1].r).norm();
        break;
      }
      case MissionId::CollisionAvoidance: {
        Vector5d w;
        w << ms.param("w_a"), ms.param("w_ex"), ms.param("w_ey"),
            ms.param("w_hx"), ms.param("w_hy");
        double deviation = cam_orbit_deviation(bs.eq, nominal_, w);
        ag.reward = cam_reward(poc_prev_, est.poc, deviation,
                               cmds[k].decision, ms.param("alpha1"),
                               ms.param("alpha2"), ms.param("poc_threshold"));
        ag.info["poc"] = est.poc;
        ag.info["tca_s"] = est.tca_s;
        ag.info["miss_m"] = est.miss_m;
        ag.info["distance_m"] = (bs.r - world.bodies[1].r).norm();
        ag.info["deviation"] = deviation;
        if (step_index_ >= tca_step_limit_) terminated = true;
        break;
      }
      case MissionId::GeoConstellation: {
        double err = std::abs(ms.param("a_geo_m") - bs.r.norm());
        ag.reward = geo_reward(err, cmds[k].commanded_t, spacing,
                               ms.param("alpha1"), ms.param("alpha2"),
                               ms.param("alpha3"));
        ag.info["radius_err_m"] = err;
        ag.info["spacing_penalty"] = spacing;
        ag.info["thrust_penalty"] = ms.param("alpha2") * cmds[k].commanded_t;
        break;
      }
    }
    if (bodies_[bi].deorbited) terminated = true;
  }

  if (ms.id == MissionId::CollisionAvoidance) poc_prev_ = est.poc;
  world.poc = poc_prev_;

  for (std::size_t k = 0; k < agents_.size(); ++k) {
    world.thrust_t = thrust_t_[k];
    world.thrust_theta = thrust_theta_[k];
    out.agents[k].observation =
        build_observation(ms.id, world, agents_[k]);
    out.agents[k].terminated = terminated;
    out.agents[k].truncated = truncated && !terminated;
  }
  out.done = terminated || truncated;
}

ConjunctionEstimate Environment::pair_conjunction(const std::string& a,
                                                  const std::string& b) const {
  return pair_conjunction_indices(body_index(a), body_index(b));
}

ConjunctionEstimate Environment::pair_conjunction_indices(
    std::size_t ia, std::size_t ib) const {
  const double mu = cfg_.forces.mu;
  double horizon =
      cfg_.has_mission
          ? (cfg_.stepping.episode_steps - step_index_) * cfg_.stepping.step_s
          : kDefaultScanHorizonS;
  horizon = std::max(horizon, kConjunctionScanStepS);

  CartesianState a0 = cart(bodies_[ia].state);
  CartesianState b0 = cart(bodies_[ib].state);

  auto distance_at = [&](double t) {
    return (kepler_advance(a0, t, mu).r - kepler_advance(b0, t, mu).r).norm();
  };

  int n = static_cast<int>(std::ceil(horizon / kConjunctionScanStepS));
  std::vector<double> dist(n + 1);
  for (int i = 0; i <= n; ++i)
    dist[i] = distance_at(std::min(horizon, i * kConjunctionScanStepS));

  // Every grid basin hides a sharp approach, so each local minimum is
  // refined by Newton on the range rate before the basins are compared.
  // The derivative keeps the r.a term: for slow co-orbital drifts the
  // differential gravity dominates the relative velocity, and the plain
  // linearized TCA step overshoots by whole grid cells there.
  auto refine = [&](double t) {
    for (int it = 0; it < 12; ++it) {
      CartesianState sa = kepler_advance(a0, t, mu);
      CartesianState sb = kepler_advance(b0, t, mu);
      Eigen::Vector3d r = sa.r - sb.r;
      Eigen::Vector3d v = sa.v - sb.v;
      Eigen::Vector3d acc = -mu * sa.r / std::pow(sa.r.norm(), 3) +
                            mu * sb.r / std::pow(sb.r.norm(), 3);
      double slope = v.squaredNorm() + r.dot(acc);
      if (slope <= 0.0) slope = v.squaredNorm();
      if (slope <= 0.0) break;
      double delta = std::clamp(-r.dot(v) / slope, -kConjunctionScanStepS,
                                kConjunctionScanStepS);
      double t_new = std::clamp(t + delta, 0.0, horizon);
      bool converged = std::abs(t_new - t) < 1e-6;
      t = t_new;
      if (converged) break;
    }
    return std::make_pair(t, distance_at(t));
  };

  double best_t = 0.0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= n; ++i) {
    bool local_min = (i == 0 || dist[i] <= dist[i - 1]) &&
                     (i == n || dist[i] <= dist[i + 1]);
    if (!local_min) continue;
    auto [t, d] = refine(std::min(horizon, i * kConjunctionScanStepS));
    if (d < best_d) {
      best_d = d;
      best_t = t;
    }
  }

  ConjunctionEstimate est;
  est.tca_s = best_t;
  est.miss_m = best_d;

  Matrix6d sig_a =
      propagate_covariance(a0, bodies_[ia].cov, best_t, kMaxSubstepS, mu)
          .sigma;
  Matrix6d sig_b =
      propagate_covariance(b0, bodies_[ib].cov, best_t, kMaxSubstepS, mu)
          .sigma;
  CartesianState sa = kepler_advance(a0, best_t, mu);
  CartesianState sb = kepler_advance(b0, best_t, mu);
  double radius_a = cfg_.bodies[ia].props.radius;
  double radius_b = cfg_.bodies[ib].props.radius;
  try {
    ConjunctionGeometry geom = conjunction_geometry(
        sa, sb, sig_a.topLeftCorner<3, 3>(), sig_b.topLeftCorner<3, 3>(),
        radius_a, radius_b);
    if (geom.sigma2.determinant() <= 1e-12) {
      est.poc = est.miss_m < geom.combined_radius ? 1.0 : 0.0;
    } else {
      est.poc = probability_of_collision(geom).value;
    }
  } catch (const std::domain_error&) {
    // Exactly (anti)parallel velocities leave no crossing plane; report the
    // deterministic limit instead of failing the screening call.
    est.poc = est.miss_m < radius_a + radius_b ? 1.0 : 0.0;
  }
  return est;
}

}  // namespace apsis
