#include "apsis/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>

#include <nlohmann/json.hpp>

#include "apsis/frames.hpp"
#include "apsis/rng.hpp"

namespace apsis {
namespace {

constexpr double kPi = 3.14159265358979323846;

using nlohmann::json;

std::vector<std::size_t> agent_bodies(const ScenarioConfig& sc) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < sc.bodies.size(); ++i)
    if (sc.bodies[i].maneuverable) out.push_back(i);
  return out;
}

std::vector<int> net_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> sizes;
  sizes.reserve(hidden.size() + 2);
  sizes.push_back(in);
  for (int h : hidden) sizes.push_back(h);
  sizes.push_back(out);
  return sizes;
}

double schedule(double start, double decay, int every, double floor,
                long steps) {
  if (every <= 0) return std::max(floor, start);
  double notches = std::floor(static_cast<double>(steps) / every);
  return std::max(floor, start - decay * notches);
}

double episode_metric(const ScenarioConfig& sc, const Environment& env,
                      const std::map<std::string, double>& last_info,
                      int steps, double total_reward) {
  switch (sc.mission.id) {
    case MissionId::Hohmann: {
      std::size_t body = agent_bodies(sc).front();
      const PropState& s = env.body_state(body);
      EquinoctialElements eq =
          cartesian_to_equinoctial(CartesianState{s.r, s.v, 0.0},
                                   sc.forces.mu);
      return std::abs(eq.a - sc.mission.param("target_a_m"));
    }
    case MissionId::CollisionAvoidance: {
      auto it = last_info.find("poc");
      return it != last_info.end() ? it->second : 0.0;
    }
    case MissionId::HerreraStationKeeping:
      return static_cast<double>(steps);
    case MissionId::Chase: {
      auto it = last_info.find("distance_m");
      return it != last_info.end() ? it->second : 0.0;
    }
    default:
      return total_reward;
  }
}

const MlpParams& bundle_net(const PolicyBundle& b, const std::string& name,
                            const std::string& fallback = "") {
  auto it = b.nets.find(name);
  if (it == b.nets.end() && !fallback.empty()) it = b.nets.find(fallback);
  if (it == b.nets.end())
    throw std::invalid_argument("policy bundle has no network '" + name +
                                "'");
  return it->second;
}

double bundle_scalar(const PolicyBundle& b, const std::string& name,
                     double fallback) {
  auto it = b.scalars.find(name);
  return it != b.scalars.end() ? it->second : fallback;
}

void check_input_dim(const MlpParams& net, const Eigen::VectorXd& obs,
                     const std::string& name) {
  if (net.input_dim() != obs.size())
    throw std::invalid_argument(
        "network '" + name + "' expects " + std::to_string(net.input_dim()) +
        " inputs, observation has " + std::to_string(obs.size()));
}

// Shared episode loop for greedy evaluation.
template <typename ActionFn>
EpisodeStats run_episode(const ScenarioConfig& sc, std::uint64_t seed,
                         ActionFn&& act) {
  Environment env(sc);
  std::vector<Eigen::VectorXd> obs = env.reset(seed);
  const int n = env.agent_count();
  EpisodeStats stats;
  std::map<std::string, double> last_info;
  while (!env.episode_finished()) {
    std::vector<Eigen::VectorXd> actions(n);
    for (int k = 0; k < n; ++k) actions[k] = act(k, obs[k]);
    StepOutcome out = env.step(actions);
    double mean_r = 0.0;
    for (int k = 0; k < n; ++k) {
      mean_r += out.agents[k].reward;
      obs[k] = out.agents[k].observation;
    }
    stats.total_reward += mean_r / n;
    stats.steps += 1;
    last_info = out.agents[0].info;
  }
  stats.episode = 1;
  stats.final_metric =
      episode_metric(sc, env, last_info, stats.steps, stats.total_reward);
  return stats;
}

struct PpoLearner {
  MlpParams actor;
  MlpParams critic;
  AdamState actor_opt;
  AdamState critic_opt;
  TrajectoryBatch batch;
};

PolicyBundle ppo_bundle(const ScenarioConfig& sc,
                        const std::vector<PpoLearner>& learners, double sigma,
                        long total_steps, long updates, int episodes_done) {
  PolicyBundle b;
  b.strings["algo"] = "ppo";
  b.strings["mission"] = mission_id_to_string(sc.mission.id);
  for (std::size_t k = 0; k < learners.size(); ++k) {
    b.nets["actor" + std::to_string(k)] = learners[k].actor;
    b.nets["critic" + std::to_string(k)] = learners[k].critic;
  }
  b.scalars["agents"] = static_cast<double>(learners.size());
  b.scalars["sigma"] = sigma;
  b.scalars["total_steps"] = static_cast<double>(total_steps);
  b.scalars["updates"] = static_cast<double>(updates);
  b.scalars["episodes_done"] = static_cast<double>(episodes_done);
  return b;
}

TrainResult train_ppo(const ScenarioConfig& sc, const TrainConfig& cfg,
                      const PolicyBundle* resume,
                      const CheckpointHook& hook) {
  Environment env(sc);
  const int n = env.agent_count();
  const int obs_dim = observation_arity(sc.mission.id, env.body_count());
  const int act_dim = action_arity(sc.mission.id);

  Rng init_rng(Rng::derive(cfg.seed, "ppo-init"));
  std::vector<PpoLearner> learners(n);
  for (int k = 0; k < n; ++k) {
    learners[k].actor = mlp_init(net_sizes(obs_dim, cfg.hidden, act_dim),
                                 OutputActivation::Tanh, init_rng);
    learners[k].critic = mlp_init(net_sizes(obs_dim, cfg.hidden, 1),
                                  OutputActivation::Linear, init_rng);
  }

  long total_steps = 0;
  long updates = 0;
  int episodes_done = 0;
  if (resume) {
    for (int k = 0; k < n; ++k) {
      learners[k].actor =
          bundle_net(*resume, "actor" + std::to_string(k), "actor");
      learners[k].critic =
          bundle_net(*resume, "critic" + std::to_string(k), "critic");
    }
    total_steps = static_cast<long>(bundle_scalar(*resume, "total_steps", 0));
    updates = static_cast<long>(bundle_scalar(*resume, "updates", 0));
    episodes_done =
        static_cast<int>(bundle_scalar(*resume, "episodes_done", 0));
  }
  for (int k = 0; k < n; ++k) {
    learners[k].actor_opt = AdamState(learners[k].actor, cfg.actor_lr);
    learners[k].critic_opt = AdamState(learners[k].critic, cfg.critic_lr);
  }

  TrainResult out;
  double sigma = schedule(cfg.sigma0, cfg.sigma_decay, cfg.sigma_decay_every,
                          cfg.sigma_min, total_steps);

  while (episodes_done < cfg.episodes) {
    std::vector<Eigen::VectorXd> obs =
        env.reset(Rng::derive(cfg.seed, "ep:" + std::to_string(episodes_done)));
    Rng ep_rng(
        Rng::derive(cfg.seed, "eprng:" + std::to_string(episodes_done)));
    for (int k = 0; k < n; ++k) {
      TrajectoryBatch& batch = learners[k].batch;
      // The pending next-state slot becomes the fresh reset state so each
      // stored transition keeps pointing at the state it was taken from.
      if (batch.states.empty()) batch.states.push_back(obs[k]);
      else batch.states.back() = obs[k];
    }

    double ep_reward = 0.0;
    int ep_steps = 0;
    std::map<std::string, double> last_info;

    while (!env.episode_finished()) {
      std::vector<Eigen::VectorXd> raw(n);
      std::vector<double> log_probs(n);
      std::vector<Eigen::VectorXd> actions(n);
      for (int k = 0; k < n; ++k) {
        Eigen::VectorXd mu = mlp_forward1(learners[k].actor, obs[k]);
        raw[k] = sample_gaussian_action(mu, sigma, ep_rng);
        log_probs[k] = gaussian_log_prob(raw[k], mu, sigma);
        actions[k] = scale_action(raw[k], sc, static_cast<std::size_t>(k));
      }
      StepOutcome so = env.step(actions);

      double mean_r = 0.0;
      for (int k = 0; k < n; ++k) {
        TrajectoryBatch& batch = learners[k].batch;
        batch.actions.push_back(raw[k]);
        batch.log_probs.push_back(log_probs[k]);
        batch.rewards.push_back(so.agents[k].reward);
        batch.dones.push_back(so.agents[k].terminated ||
                              so.agents[k].truncated);
        batch.states.push_back(so.agents[k].observation);
        learners[k].actor.norm.update(obs[k]);
        learners[k].critic.norm.update(obs[k]);
        obs[k] = so.agents[k].observation;
        mean_r += so.agents[k].reward;
      }
      ep_reward += mean_r / n;
      ep_steps += 1;
      total_steps += 1;
      last_info = so.agents[0].info;

      if (static_cast<int>(learners[0].batch.steps()) >= cfg.experiences) {
        for (int k = 0; k < n; ++k) {
          learners[k].batch.gamma = cfg.gamma;
          learners[k].batch.lambda = cfg.lambda;
          PpoConfig pc;
          pc.clip_eps = cfg.clip_eps;
          pc.epochs = cfg.epochs;
          pc.minibatch = cfg.minibatch;
          pc.sigma = sigma;
          Rng update_rng(Rng::derive(
              cfg.seed, "update:" + std::to_string(updates) + ":" +
                            std::to_string(k)));
          PpoDiagnostics diag =
              ppo_update(learners[k].actor, learners[k].critic,
                         learners[k].batch, pc, learners[k].actor_opt,
                         learners[k].critic_opt, update_rng);
          if (diag.aborted) {
            out.aborted = true;
            out.abort_reason = diag.abort_reason;
          }
          TrajectoryBatch fresh;
          fresh.states.push_back(obs[k]);
          learners[k].batch = std::move(fresh);
        }
        updates += 1;
        if (out.aborted) {
          out.bundle = ppo_bundle(sc, learners, sigma, total_steps, updates,
                                  episodes_done);
          return out;
        }
        if (cfg.fedavg_every > 0 && n > 1 &&
            updates % cfg.fedavg_every == 0) {
          std::vector<MlpParams> critics;
          std::vector<std::size_t> sizes;
          critics.reserve(n);
          for (int k = 0; k < n; ++k) {
            critics.push_back(learners[k].critic);
            sizes.push_back(static_cast<std::size_t>(cfg.experiences));
          }
          MlpParams global = fedavg(critics, sizes);
          for (int k = 0; k < n; ++k) learners[k].critic = global;
        }
        sigma = schedule(cfg.sigma0, cfg.sigma_decay, cfg.sigma_decay_every,
                         cfg.sigma_min, total_steps);
      }
    }

    episodes_done += 1;
    EpisodeStats stats;
    stats.episode = episodes_done;
    stats.steps = ep_steps;
    stats.total_reward = ep_reward;
    stats.final_metric =
        episode_metric(sc, env, last_info, ep_steps, ep_reward);
    out.episodes.push_back(stats);
    if (hook && cfg.checkpoint_every > 0 &&
        episodes_done % cfg.checkpoint_every == 0)
      hook(ppo_bundle(sc, learners, sigma, total_steps, updates,
                      episodes_done),
           episodes_done);
  }

  out.bundle =
      ppo_bundle(sc, learners, sigma, total_steps, updates, episodes_done);
  return out;
}

PolicyBundle ddqn_bundle(const ScenarioConfig& sc, const MlpParams& online,
                         const MlpParams& target, double epsilon,
                         long total_steps, long updates, int episodes_done) {
  PolicyBundle b;
  b.strings["algo"] = "ddqn";
  b.strings["mission"] = mission_id_to_string(sc.mission.id);
  b.nets["online"] = online;
  b.nets["target"] = target;
  b.scalars["epsilon"] = epsilon;
  b.scalars["total_steps"] = static_cast<double>(total_steps);
  b.scalars["updates"] = static_cast<double>(updates);
  b.scalars["episodes_done"] = static_cast<double>(episodes_done);
  return b;
}

TrainResult train_ddqn(const ScenarioConfig& sc, const TrainConfig& cfg,
                       const PolicyBundle* resume,
                       const CheckpointHook& hook) {
  if (action_arity(sc.mission.id) != 4)
    throw std::invalid_argument(
        "ddqn: mission '" + mission_id_to_string(sc.mission.id) +
        "' does not take the discrete (T, theta, phi, delta) table");

  Environment env(sc);
  if (env.agent_count() != 1)
    throw std::invalid_argument("ddqn: exactly one agent supported");
  const int obs_dim = observation_arity(sc.mission.id, env.body_count());
  const std::size_t agent_body = agent_bodies(sc).front();
  const std::vector<Eigen::VectorXd> table =
      discrete_action_table(sc.bodies[agent_body].limits.t_max);
  const int n_actions = static_cast<int>(table.size());

  Rng init_rng(Rng::derive(cfg.seed, "ddqn-init"));
  MlpParams online = mlp_init(net_sizes(obs_dim, cfg.hidden, n_actions),
                              OutputActivation::Linear, init_rng);
  long total_steps = 0;
  long updates = 0;
  int episodes_done = 0;
  if (resume) {
    online = bundle_net(*resume, "online");
    total_steps = static_cast<long>(bundle_scalar(*resume, "total_steps", 0));
    updates = static_cast<long>(bundle_scalar(*resume, "updates", 0));
    episodes_done =
        static_cast<int>(bundle_scalar(*resume, "episodes_done", 0));
  }
  MlpParams target = resume ? bundle_net(*resume, "target", "online") : online;

  AdamState opt(online, cfg.q_lr);
  ExperienceBuffer buffer(static_cast<std::size_t>(cfg.buffer_capacity));
  Rng update_rng(Rng::derive(cfg.seed, "ddqn-updates"));

  TrainResult out;
  while (episodes_done < cfg.episodes) {
    std::vector<Eigen::VectorXd> reset_obs =
        env.reset(Rng::derive(cfg.seed, "ep:" + std::to_string(episodes_done)));
    Eigen::VectorXd obs = reset_obs[0];
    Rng ep_rng(
        Rng::derive(cfg.seed, "eprng:" + std::to_string(episodes_done)));

    double ep_reward = 0.0;
    int ep_steps = 0;
    std::map<std::string, double> last_info;

    while (!env.episode_finished()) {
      double epsilon = schedule(cfg.epsilon0, cfg.epsilon_decay,
                                cfg.epsilon_decay_every, cfg.epsilon_min,
                                total_steps);
      Eigen::VectorXd q = mlp_forward1(online, obs);
      int idx = epsilon_greedy(q, epsilon, ep_rng);
      StepOutcome so = env.step({table[idx]});
      const AgentStep& a = so.agents[0];

      Transition tr;
      tr.s = obs;
      tr.a = Eigen::VectorXd::Constant(1, static_cast<double>(idx));
      tr.r = a.reward;
      tr.s2 = a.observation;
      tr.done = a.terminated || a.truncated;
      buffer.push(tr);
      online.norm.update(obs);

      obs = a.observation;
      ep_reward += a.reward;
      ep_steps += 1;
      total_steps += 1;
      last_info = a.info;

      if (buffer.size() >= static_cast<std::size_t>(cfg.batch_size)) {
        double loss = ddqn_update(online, target, buffer, cfg.gamma,
                                  cfg.batch_size, opt, update_rng);
        if (!std::isfinite(loss)) {
          out.aborted = true;
          out.abort_reason = "ddqn: non-finite loss";
          out.bundle = ddqn_bundle(sc, online, target, epsilon, total_steps,
                                   updates, episodes_done);
          return out;
        }
        updates += 1;
        if (updates % cfg.target_update_every == 0) {
          soft_update(target, online, cfg.tau);
          target.norm = online.norm;  // statistics copy over exactly
        }
      }
    }

    episodes_done += 1;
    EpisodeStats stats;
    stats.episode = episodes_done;
    stats.steps = ep_steps;
    stats.total_reward = ep_reward;
    stats.final_metric =
        episode_metric(sc, env, last_info, ep_steps, ep_reward);
    out.episodes.push_back(stats);
    if (hook && cfg.checkpoint_every > 0 &&
        episodes_done % cfg.checkpoint_every == 0) {
      double epsilon = schedule(cfg.epsilon0, cfg.epsilon_decay,
                                cfg.epsilon_decay_every, cfg.epsilon_min,
                                total_steps);
      hook(ddqn_bundle(sc, online, target, epsilon, total_steps, updates,
                       episodes_done),
           episodes_done);
    }
  }

  double epsilon = schedule(cfg.epsilon0, cfg.epsilon_decay,
                            cfg.epsilon_decay_every, cfg.epsilon_min,
                            total_steps);
  out.bundle = ddqn_bundle(sc, online, target, epsilon, total_steps, updates,
                           episodes_done);
  return out;
}

PolicyBundle ddpg_bundle(const ScenarioConfig& sc, const MlpParams& actor,
                         const MlpParams& critic,
                         const MlpParams& actor_target,
                         const MlpParams& critic_target, long total_steps,
                         long updates, int episodes_done) {
  PolicyBundle b;
  b.strings["algo"] = "ddpg";
  b.strings["mission"] = mission_id_to_string(sc.mission.id);
  b.nets["actor"] = actor;
  b.nets["critic"] = critic;
  b.nets["actor_target"] = actor_target;
  b.nets["critic_target"] = critic_target;
  b.scalars["total_steps"] = static_cast<double>(total_steps);
  b.scalars["updates"] = static_cast<double>(updates);
  b.scalars["episodes_done"] = static_cast<double>(episodes_done);
  return b;
}

TrainResult train_ddpg(const ScenarioConfig& sc, const TrainConfig& cfg,
                       const PolicyBundle* resume,
                       const CheckpointHook& hook) {
  Environment env(sc);
  if (env.agent_count() != 1)
    throw std::invalid_argument("ddpg: exactly one agent supported");
  const int obs_dim = observation_arity(sc.mission.id, env.body_count());
  const int act_dim = action_arity(sc.mission.id);

  Rng init_rng(Rng::derive(cfg.seed, "ddpg-init"));
  MlpParams actor = mlp_init(net_sizes(obs_dim, cfg.hidden, act_dim),
                             OutputActivation::Tanh, init_rng);
  MlpParams critic = mlp_init(net_sizes(obs_dim + act_dim, cfg.hidden, 1),
                              OutputActivation::Linear, init_rng);
  long total_steps = 0;
  long updates = 0;
  int episodes_done = 0;
  if (resume) {
    actor = bundle_net(*resume, "actor");
    critic = bundle_net(*resume, "critic");
    total_steps = static_cast<long>(bundle_scalar(*resume, "total_steps", 0));
    updates = static_cast<long>(bundle_scalar(*resume, "updates", 0));
    episodes_done =
        static_cast<int>(bundle_scalar(*resume, "episodes_done", 0));
  }
  MlpParams actor_target =
      resume ? bundle_net(*resume, "actor_target", "actor") : actor;
  MlpParams critic_target =
      resume ? bundle_net(*resume, "critic_target", "critic") : critic;

  AdamState actor_opt(actor, cfg.actor_lr);
  AdamState critic_opt(critic, cfg.critic_lr);
  ExperienceBuffer buffer(static_cast<std::size_t>(cfg.buffer_capacity));
  Rng update_rng(Rng::derive(cfg.seed, "ddpg-updates"));

  TrainResult out;
  while (episodes_done < cfg.episodes) {
    std::vector<Eigen::VectorXd> reset_obs =
        env.reset(Rng::derive(cfg.seed, "ep:" + std::to_string(episodes_done)));
    Eigen::VectorXd obs = reset_obs[0];
    Rng ep_rng(
        Rng::derive(cfg.seed, "eprng:" + std::to_string(episodes_done)));
    OuState noise;
    noise.x = Eigen::VectorXd::Zero(act_dim);
    noise.mu = cfg.ou_mu;
    noise.sigma = cfg.ou_sigma;
    noise.theta = cfg.ou_theta;
    noise.dt = cfg.ou_dt;

    double ep_reward = 0.0;
    int ep_steps = 0;
    std::map<std::string, double> last_info;

    while (!env.episode_finished()) {
      Eigen::VectorXd mu = mlp_forward1(actor, obs);
      noise = ou_step(noise, ep_rng);
      Eigen::VectorXd raw =
          (mu + noise.x).cwiseMax(-1.0).cwiseMin(1.0);
      StepOutcome so = env.step({scale_action(raw, sc, 0)});
      const AgentStep& a = so.agents[0];

      Transition tr;
      tr.s = obs;
      tr.a = raw;
      tr.r = a.reward;
      tr.s2 = a.observation;
      tr.done = a.terminated || a.truncated;
      buffer.push(tr);
      Eigen::VectorXd sa(obs_dim + act_dim);
      sa << obs, raw;
      actor.norm.update(obs);
      critic.norm.update(sa);

      obs = a.observation;
      ep_reward += a.reward;
      ep_steps += 1;
      total_steps += 1;
      last_info = a.info;

      if (buffer.size() >= static_cast<std::size_t>(cfg.batch_size)) {
        DdpgDiagnostics diag =
            ddpg_update(actor, critic, actor_target, critic_target, buffer,
                        cfg.gamma, cfg.tau, cfg.batch_size, actor_opt,
                        critic_opt, update_rng);
        if (!std::isfinite(diag.critic_loss) ||
            !std::isfinite(diag.actor_objective)) {
          out.aborted = true;
          out.abort_reason = "ddpg: non-finite loss";
          out.bundle = ddpg_bundle(sc, actor, critic, actor_target,
                                   critic_target, total_steps, updates,
                                   episodes_done);
          return out;
        }
        actor_target.norm = actor.norm;
        critic_target.norm = critic.norm;
        updates += 1;
      }
    }

    episodes_done += 1;
    EpisodeStats stats;
    stats.episode = episodes_done;
    stats.steps = ep_steps;
    stats.total_reward = ep_reward;
    stats.final_metric =
        episode_metric(sc, env, last_info, ep_steps, ep_reward);
    out.episodes.push_back(stats);
    if (hook && cfg.checkpoint_every > 0 &&
        episodes_done % cfg.checkpoint_every == 0)
      hook(ddpg_bundle(sc, actor, critic, actor_target, critic_target,
                       total_steps, updates, episodes_done),
           episodes_done);
  }

  out.bundle = ddpg_bundle(sc, actor, critic, actor_target, critic_target,
                           total_steps, updates, episodes_done);
  return out;
}

}  // namespace

TrainConfig train_defaults(const std::string& algo, MissionId mission) {
  TrainConfig c;
  c.algo = algo;
  if (algo == "ppo") {
    c.hidden = {500, 450};
    switch (mission) {
      case MissionId::HerreraStationKeeping:
        c.clip_eps = 0.03;
        c.experiences = 800;
        c.sigma_decay_every = 10000;
        break;
      case MissionId::Hohmann:
        c.clip_eps = 0.1;
        c.experiences = 4096;
        c.sigma_decay_every = 40000;
        break;
      case MissionId::Chase:
        c.actor_lr = 1e-5;
        c.critic_lr = 1e-4;
        c.clip_eps = 0.1;
        c.sigma0 = 0.4;
        c.experiences = 4096;
        c.sigma_decay_every = 10000;
        break;
      case MissionId::CollisionAvoidance:
        c.gamma = 0.95;
        c.clip_eps = 0.5;
        c.sigma0 = 0.2;
        c.experiences = 256;
        c.sigma_decay_every = 5000;
        break;
      case MissionId::GeoConstellation:
        c.actor_lr = 1e-5;
        c.critic_lr = 1e-4;
        c.epochs = 3;
        c.clip_eps = 0.2;
        c.experiences = 1024;
        c.sigma_decay_every = 10000;
        break;
      default:
        break;
    }
    return c;
  }
  if (algo == "ddqn") {
    c.hidden = {512, 256};
    c.gamma = 0.95;
    return c;
  }
  if (algo == "ddpg") {
    c.hidden = {512, 256};
    c.actor_lr = 1e-5;
    c.critic_lr = 1e-4;
    c.tau = 0.01;
    return c;
  }
  throw std::invalid_argument("train_defaults: unknown algorithm '" + algo +
                              "'");
}

TrainConfig train_config_from_json(const std::string& text,
                                   TrainConfig base) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("hyperparameters: ") + e.what());
  }
  if (!doc.is_object())
    throw std::invalid_argument("hyperparameters: expected a JSON object");

  auto number = [&](const char* key, double& field, double lo) {
    if (!doc.contains(key)) return;
    const json& v = doc.at(key);
    if (!v.is_number())
      throw std::invalid_argument(std::string("hyperparameters: '") + key +
                                  "' must be a number");
    double x = v.get<double>();
    if (!(x >= lo))
      throw std::invalid_argument(std::string("hyperparameters: '") + key +
                                  "' out of range");
    field = x;
  };
  auto integer = [&](const char* key, int& field, int lo) {
    if (!doc.contains(key)) return;
    const json& v = doc.at(key);
    if (!v.is_number_integer())
      throw std::invalid_argument(std::string("hyperparameters: '") + key +
                                  "' must be an integer");
    int x = v.get<int>();
    if (x < lo)
      throw std::invalid_argument(std::string("hyperparameters: '") + key +
                                  "' out of range");
    field = x;
  };

  static const std::vector<std::string> known = {
      "algo",          "episodes",
      "seed",          "hidden",
      "actor_lr",      "critic_lr",
      "gamma",         "lambda",
      "clip_eps",      "epochs",
      "minibatch",     "experiences",
      "sigma0",        "sigma_decay",
      "sigma_decay_every",
      "sigma_min",     "q_lr",
      "epsilon0",      "epsilon_decay",
      "epsilon_decay_every",
      "epsilon_min",   "buffer_capacity",
      "batch_size",    "target_update_every",
      "tau",           "ou_mu",
      "ou_sigma",      "ou_theta",
      "ou_dt",         "fedavg_every",
      "checkpoint_every"};
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("hyperparameters: unknown key '" +
                                  it.key() + "'");
  }

  if (doc.contains("algo")) {
    if (!doc.at("algo").is_string())
      throw std::invalid_argument("hyperparameters: 'algo' must be a string");
    base.algo = doc.at("algo").get<std::string>();
  }
  if (base.algo != "ppo" && base.algo != "ddqn" && base.algo != "ddpg")
    throw std::invalid_argument("hyperparameters: unknown algorithm '" +
                                base.algo + "'");
  if (doc.contains("seed")) {
    const json& v = doc.at("seed");
    if (!v.is_number_integer() || v.get<double>() < 0)
      throw std::invalid_argument(
          "hyperparameters: 'seed' must be a nonnegative integer");
    base.seed = v.get<std::uint64_t>();
  }
  if (doc.contains("hidden")) {
    const json& v = doc.at("hidden");
    if (!v.is_array() || v.empty())
      throw std::invalid_argument(
          "hyperparameters: 'hidden' must be a non-empty array");
    std::vector<int> hidden;
    for (const json& h : v) {
      if (!h.is_number_integer() || h.get<int>() < 1)
        throw std::invalid_argument(
            "hyperparameters: 'hidden' entries must be positive integers");
      hidden.push_back(h.get<int>());
    }
    base.hidden = hidden;
  }
  integer("episodes", base.episodes, 1);
  number("actor_lr", base.actor_lr, 0.0);
  number("critic_lr", base.critic_lr, 0.0);
  number("gamma", base.gamma, 0.0);
  number("lambda", base.lambda, 0.0);
  number("clip_eps", base.clip_eps, 0.0);
  integer("epochs", base.epochs, 1);
  integer("minibatch", base.minibatch, 1);
  integer("experiences", base.experiences, 1);
  number("sigma0", base.sigma0, 0.0);
  number("sigma_decay", base.sigma_decay, 0.0);
  integer("sigma_decay_every", base.sigma_decay_every, 1);
  number("sigma_min", base.sigma_min, 0.0);
  number("q_lr", base.q_lr, 0.0);
  number("epsilon0", base.epsilon0, 0.0);
  number("epsilon_decay", base.epsilon_decay, 0.0);
  integer("epsilon_decay_every", base.epsilon_decay_every, 1);
  number("epsilon_min", base.epsilon_min, 0.0);
  integer("buffer_capacity", base.buffer_capacity, 1);
  integer("batch_size", base.batch_size, 1);
  integer("target_update_every", base.target_update_every, 1);
  number("tau", base.tau, 0.0);
  if (doc.contains("ou_mu")) {
    if (!doc.at("ou_mu").is_number())
      throw std::invalid_argument(
          "hyperparameters: 'ou_mu' must be a number");
    base.ou_mu = doc.at("ou_mu").get<double>();
  }
  number("ou_sigma", base.ou_sigma, 0.0);
  number("ou_theta", base.ou_theta, 0.0);
  number("ou_dt", base.ou_dt, 1e-12);
  int fedavg = base.fedavg_every;
  if (doc.contains("fedavg_every")) {
    integer("fedavg_every", fedavg, 0);
    base.fedavg_every = fedavg;
  }
  int checkpoint = base.checkpoint_every;
  if (doc.contains("checkpoint_every")) {
    integer("checkpoint_every", checkpoint, 0);
    base.checkpoint_every = checkpoint;
  }
  return base;
}

std::string train_config_to_json(const TrainConfig& c) {
  json doc;
  doc["algo"] = c.algo;
  doc["episodes"] = c.episodes;
  doc["seed"] = c.seed;
  doc["hidden"] = c.hidden;
  doc["actor_lr"] = c.actor_lr;
  doc["critic_lr"] = c.critic_lr;
  doc["gamma"] = c.gamma;
  doc["lambda"] = c.lambda;
  doc["clip_eps"] = c.clip_eps;
  doc["epochs"] = c.epochs;
  doc["minibatch"] = c.minibatch;
  doc["experiences"] = c.experiences;
  doc["sigma0"] = c.sigma0;
  doc["sigma_decay"] = c.sigma_decay;
  doc["sigma_decay_every"] = c.sigma_decay_every;
  doc["sigma_min"] = c.sigma_min;
  doc["q_lr"] = c.q_lr;
  doc["epsilon0"] = c.epsilon0;
  doc["epsilon_decay"] = c.epsilon_decay;
  doc["epsilon_decay_every"] = c.epsilon_decay_every;
  doc["epsilon_min"] = c.epsilon_min;
  doc["buffer_capacity"] = c.buffer_capacity;
  doc["batch_size"] = c.batch_size;
  doc["target_update_every"] = c.target_update_every;
  doc["tau"] = c.tau;
  doc["ou_mu"] = c.ou_mu;
  doc["ou_sigma"] = c.ou_sigma;
  doc["ou_theta"] = c.ou_theta;
  doc["ou_dt"] = c.ou_dt;
  doc["fedavg_every"] = c.fedavg_every;
  doc["checkpoint_every"] = c.checkpoint_every;
  return doc.dump(2);
}

std::vector<Eigen::VectorXd> discrete_action_table(double t_max) {
  auto row = [](double t, double th, double ph, double d) {
    Eigen::VectorXd a(4);
    a << t, th, ph, d;
    return a;
  };
  return {
      row(t_max, 0.0, 0.0, 1.0),
      row(t_max, kPi / 2.0, 0.0, 1.0),
      row(t_max, kPi, 0.0, 1.0),
      row(t_max, kPi / 2.0, kPi, 1.0),
      row(t_max, kPi / 2.0, kPi / 2.0, 1.0),
      row(t_max, kPi / 2.0, 3.0 * kPi / 2.0, 1.0),
      row(0.0, 0.0, 0.0, 0.0),
  };
}

Eigen::VectorXd scale_action(const Eigen::VectorXd& u,
                             const ScenarioConfig& sc, std::size_t agent) {
  std::vector<std::size_t> agents = agent_bodies(sc);
  if (agent >= agents.size())
    throw std::invalid_argument("scale_action: no agent " +
                                std::to_string(agent));
  const ActionLimits& lim = sc.bodies[agents[agent]].limits;
  const int arity = action_arity(sc.mission.id);
  if (u.size() != arity)
    throw std::invalid_argument("scale_action: expected " +
                                std::to_string(arity) + " outputs, got " +
                                std::to_string(u.size()));

  auto half = [](double x, double hi) { return 0.5 * (x + 1.0) * hi; };
  Eigen::VectorXd a(arity);
  switch (sc.mission.id) {
    case MissionId::HerreraStationKeeping:
      a << u(0) * sc.mission.param("delta_t_max_n"),
          u(1) * sc.mission.param("delta_theta_max_rad");
      break;
    case MissionId::GeoConstellation:
      a << half(u(0), lim.t_max), half(u(1), lim.theta_max);
      break;
    default:
      a(0) = half(u(0), lim.t_max);
      a(1) = half(u(1), lim.theta_max);
      a(2) = half(u(2), lim.phi_max);
      if (arity >= 4) a(3) = half(u(3), 1.0);
      break;
  }
  return a;
}

Eigen::VectorXd policy_action(const PolicyBundle& bundle,
                              const Eigen::VectorXd& observation,
                              const ScenarioConfig& sc, std::size_t agent) {
  std::string algo = "ppo";
  auto it = bundle.strings.find("algo");
  if (it != bundle.strings.end()) algo = it->second;

  if (algo == "ddqn") {
    const MlpParams& q_net = bundle_net(bundle, "online");
    check_input_dim(q_net, observation, "online");
    Eigen::VectorXd q = mlp_forward1(q_net, observation);
    int best = 0;
    for (int i = 1; i < q.size(); ++i)
      if (q(i) > q(best)) best = i;
    std::vector<std::size_t> agents = agent_bodies(sc);
    if (agent >= agents.size())
      throw std::invalid_argument("policy_action: no agent " +
                                  std::to_string(agent));
    return discrete_action_table(
        sc.bodies[agents[agent]].limits.t_max)[best];
  }

  const std::string name = "actor" + std::to_string(agent);
  const MlpParams& actor = bundle_net(bundle, name, "actor");
  check_input_dim(actor, observation, name);
  Eigen::VectorXd mu = mlp_forward1(actor, observation);
  return scale_action(mu, sc, agent);
}

EpisodeStats evaluate_policy(const ScenarioConfig& sc,
                             const PolicyBundle& bundle, std::uint64_t seed) {
  return run_episode(sc, seed, [&](int k, const Eigen::VectorXd& obs) {
    return policy_action(bundle, obs, sc, static_cast<std::size_t>(k));
  });
}

EpisodeStats evaluate_noop(const ScenarioConfig& sc, std::uint64_t seed) {
  const int arity = action_arity(sc.mission.id);
  return run_episode(sc, seed, [&](int, const Eigen::VectorXd&) {
    return Eigen::VectorXd::Zero(arity).eval();
  });
}

TrainResult train(const ScenarioConfig& scenario, const TrainConfig& cfg,
                  const PolicyBundle* resume, const CheckpointHook& hook) {
  if (!scenario.has_mission)
    throw std::invalid_argument("train: scenario has no mission");
  if (cfg.episodes < 1)
    throw std::invalid_argument("train: episodes must be positive");
  if (cfg.algo == "ppo") return train_ppo(scenario, cfg, resume, hook);
  if (cfg.algo == "ddqn") return train_ddqn(scenario, cfg, resume, hook);
  if (cfg.algo == "ddpg") return train_ddpg(scenario, cfg, resume, hook);
  throw std::invalid_argument("train: unknown algorithm '" + cfg.algo + "'");
}

}  // namespace apsis
