// Multi-agent episode engine: scenario loading, lockstep propagation,
// onboard conjunction screening.
#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "apsis/dynamics.hpp"
#include "apsis/missions.hpp"
#include "apsis/uncertainty.hpp"

namespace apsis {

// Integrator and linearization substeps never exceed this length.
inline constexpr double kMaxSubstepS = 60.0;

// Grid spacing of the forward conjunction scan.
inline constexpr double kConjunctionScanStepS = 60.0;

// Screening horizon when no episode clock bounds the prediction.
inline constexpr double kDefaultScanHorizonS = 172800.0;

// Scenario rejection carrying every violation found in a single pass.
class ScenarioError : public std::runtime_error {
 public:
  explicit ScenarioError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

struct ActionLimits {
  double t_max = 0.0;       // N
  double theta_max = 0.0;   // rad
  double phi_max = 0.0;     // rad
  bool decision_flag = false;
};

struct BodyConfig {
  std::string name;
  BodyProperties props;
  double fuel = 0.0;              // initial load, kg
  CartesianState mean;            // configured state at the scenario epoch
  Vector6d sigma = Vector6d::Zero();  // per-axis standard deviations
  bool maneuverable = false;
  ActionLimits limits;
};

struct SteppingConfig {
  double step_s = 60.0;
  int episode_steps = 1;
  double burn_window_s = 0.0;  // thrust window at the start of each step
  bool parallel = false;
};

struct ScenarioConfig {
  std::vector<BodyConfig> bodies;
  ForceConfig forces;
  bool has_mission = false;
  MissionSpec mission;  // defaults merged with scenario overrides
  SteppingConfig stepping;
  std::uint64_t seed = 0;
  std::string epoch;  // optional ISO-8601 label anchoring exports
};

// Parses and validates a scenario document. Collects every violation before
// throwing ScenarioError; unknown keys are rejected at all levels.
ScenarioConfig load_scenario(const std::string& json_text);

// Onboard prediction for one pair: point-mass propagation of the current
// states regardless of the true force model.
struct ConjunctionEstimate {
  double tca_s = 0.0;  // seconds from now
  double miss_m = 0.0;
  double poc = 0.0;
};

struct AgentStep {
  Eigen::VectorXd observation;
  double reward = 0.0;
  bool terminated = false;  // mission outcome
  bool truncated = false;   // episode clock expired
  std::map<std::string, double> info;
};

struct StepOutcome {
  std::vector<AgentStep> agents;  // maneuverable bodies, scenario order
  bool done = false;
};

// Episode handle. Not internally synchronized: callers serialize access.
// step() may fan propagation out over worker threads when the scenario asks
// for it; results are identical to sequential stepping.
class Environment {
 public:
  explicit Environment(ScenarioConfig cfg);

  const ScenarioConfig& config() const { return cfg_; }
  int agent_count() const;
  int body_count() const { return static_cast<int>(bodies_.size()); }

  // Observation per agent. Deterministic in (scenario, seed).
  std::vector<Eigen::VectorXd> reset();  // scenario seed
  std::vector<Eigen::VectorXd> reset(std::uint64_t seed);

  // Advances every body by exactly one step. Throws std::invalid_argument on
  // wrong action arity and std::logic_error once the episode has finished.
  StepOutcome step(const std::vector<Eigen::VectorXd>& actions);

  bool episode_finished() const { return finished_; }
  int step_index() const { return step_index_; }
  double time_s() const { return time_s_; }

  std::size_t body_index(const std::string& name) const;
  const PropState& body_state(std::size_t index) const;
  const PropState& body_state(const std::string& name) const;
  double body_fuel(const std::string& name) const;
  const Matrix6d& body_covariance(const std::string& name) const;

  // Current separation, symmetric and nonnegative.
  double body_distance(const std::string& a, const std::string& b) const;

  // Forward scan over the remaining episode horizon with the onboard
  // point-mass model; every local approach is refined by Newton on the
  // range rate and the riskiest (minimum-miss) one is reported.
  ConjunctionEstimate pair_conjunction(const std::string& a,
                                       const std::string& b) const;

  // One sample per step boundary since the last reset.
  const std::vector<CartesianState>& trajectory(const std::string& name) const;

 private:
  struct BodyRuntime {
    PropState state;
    Matrix6d cov = Matrix6d::Zero();
    bool deorbited = false;
    std::vector<CartesianState> track;
  };

  struct ThrustCommand {
    PolarThrust polar;
    bool active = false;
    bool clamped = false;
    bool decision = false;
    double commanded_t = 0.0;
    double commanded_theta = 0.0;
  };

  ThrustCommand command_for(std::size_t agent, const Eigen::VectorXd& action);
  void advance_body(std::size_t index, const ThrustCommand* cmd);
  WorldSnapshot snapshot() const;
  ConjunctionEstimate pair_conjunction_indices(std::size_t ia,
                                               std::size_t ib) const;
  void score_agents(const std::vector<ThrustCommand>& cmds,
                    StepOutcome& out);

  ScenarioConfig cfg_;
  std::vector<BodyRuntime> bodies_;
  std::vector<std::size_t> agents_;  // indices of maneuverable bodies
  int step_index_ = 0;
  double time_s_ = 0.0;
  bool finished_ = true;  // becomes false on reset

  // Mission runtime.
  std::vector<Vector5d> prev_delta_;      // per agent, target chases
  std::vector<double> thrust_t_;          // per agent, persistent throttle
  std::vector<double> thrust_theta_;
  EquinoctialElements nominal_;           // avoidance reference orbit
  double poc_prev_ = 0.0;
  int tca_step_limit_ = 0;
};

}  // namespace apsis
