// Training loops that connect the environment to the learning primitives.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "apsis/arena.hpp"
#include "apsis/learning.hpp"
#include "apsis/missions.hpp"

namespace apsis {

// Everything a run needs beyond the scenario. train_defaults fills the knob
// set for an (algorithm, mission) pair from the published experiment tables;
// fields irrelevant to the chosen algorithm are ignored.
struct TrainConfig {
  std::string algo = "ppo";  // ppo | ddqn | ddpg
  int episodes = 100;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {500, 450};

  // PPO
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  double gamma = 0.99;
  double lambda = 0.95;
  double clip_eps = 0.1;
  int epochs = 5;
  int minibatch = 64;
  int experiences = 4096;  // rollout length between updates
  double sigma0 = 0.5;     // exploration stddev, stepped down between updates
  double sigma_decay = 0.05;
  int sigma_decay_every = 40000;  // environment steps per decay notch
  double sigma_min = 0.05;

  // DDQN
  double q_lr = 5e-5;
  double epsilon0 = 0.5;
  double epsilon_decay = 0.05;
  int epsilon_decay_every = 1000;  // environment steps per decay notch
  double epsilon_min = 0.05;
  int buffer_capacity = 10000;
  int batch_size = 256;
  int target_update_every = 10;  // online updates between target blends
  double tau = 1e-3;

  // DDPG exploration noise
  double ou_mu = 0.0;
  double ou_sigma = 0.2;
  double ou_theta = 0.15;
  double ou_dt = 0.01;

  // Multi-agent PPO: agents keep local actors and average their critics
  // every N updates (0 disables the exchange).
  int fedavg_every = 0;

  int checkpoint_every = 0;  // episodes between hook calls; 0 = never
};

// Published hyperparameters for the mission's experiment; the generic
// defaults above for pairs without a table.
TrainConfig train_defaults(const std::string& algo, MissionId mission);

// Overrides base with the keys present in a JSON object. Unknown keys and
// out-of-range values throw std::invalid_argument.
TrainConfig train_config_from_json(const std::string& text,
                                   TrainConfig base = {});
std::string train_config_to_json(const TrainConfig& cfg);

// final_metric gauges the mission outcome at episode end: semi-major-axis
// gap in meters (transfers), screened collision probability (avoidance),
// survived steps (station keeping), separation in meters (chase), summed
// reward otherwise.
struct EpisodeStats {
  int episode = 0;
  int steps = 0;
  double total_reward = 0.0;  // per-step rewards averaged over agents
  double final_metric = 0.0;
};

struct TrainResult {
  PolicyBundle bundle;
  std::vector<EpisodeStats> episodes;
  bool aborted = false;
  std::string abort_reason;
};

// Max-thrust pokes along each axis plus idling, the discrete controller's
// whole vocabulary: (T, theta, phi, delta) rows.
std::vector<Eigen::VectorXd> discrete_action_table(double t_max);

// Maps a policy output in [-1, 1]^k onto the mission action box. Station
// keeping scales symmetric increments, everything else scales [0, max];
// outputs beyond the box are left for the environment to clamp and flag.
Eigen::VectorXd scale_action(const Eigen::VectorXd& u,
                             const ScenarioConfig& scenario,
                             std::size_t agent);

// Greedy action from a trained bundle (no exploration). Throws
// std::invalid_argument when the bundle lacks the agent's network or its
// input arity does not match the observation.
Eigen::VectorXd policy_action(const PolicyBundle& bundle,
                              const Eigen::VectorXd& observation,
                              const ScenarioConfig& scenario,
                              std::size_t agent);

// One full episode under the greedy policy (or no control at all).
EpisodeStats evaluate_policy(const ScenarioConfig& scenario,
                             const PolicyBundle& bundle, std::uint64_t seed);
EpisodeStats evaluate_noop(const ScenarioConfig& scenario,
                           std::uint64_t seed);

using CheckpointHook = std::function<void(const PolicyBundle&, int episode)>;

// Single-threaded and deterministic in (scenario, cfg): a fixed seed
// reproduces the reward curve bit-exactly. Resuming restores parameters,
// schedules, and the episode count from the bundle and continues toward
// cfg.episodes; in-flight rollouts are not carried across a resume.
TrainResult train(const ScenarioConfig& scenario, const TrainConfig& cfg,
                  const PolicyBundle* resume = nullptr,
                  const CheckpointHook& on_checkpoint = {});

}  // namespace apsis
