// Small dense networks with analytic gradients and desk-scale RL updates.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "apsis/rng.hpp"

namespace apsis {

inline constexpr double kNormalizerEps = 1e-6;

// Running per-feature statistics applied to network inputs. Statistics are
// frozen during gradient computation; trainers call update between steps.
struct Normalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  Eigen::VectorXd m2;  // Welford sum of squared deviations
  double count = 0.0;

  void reset(int dim);
  void update(const Eigen::VectorXd& x);
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
};

enum class OutputActivation { Linear, Tanh };

// Feed-forward net with Tanh hidden layers. w[l] maps layer l activations
// (rows = fan-out, cols = fan-in); the input normalizer is not trainable.
struct MlpParams {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
  OutputActivation out_act = OutputActivation::Linear;
  Normalizer norm;

  int input_dim() const { return w.empty() ? 0 : static_cast<int>(w.front().cols()); }
  int output_dim() const { return w.empty() ? 0 : static_cast<int>(w.back().rows()); }
};

// Uniform init in +-1/sqrt(fan_in), zero biases, identity normalizer.
MlpParams mlp_init(const std::vector<int>& sizes, OutputActivation out_act,
                   Rng& rng);

struct MlpCache {
  // acts[0] is the normalized input; acts[l+1] the output of layer l.
  // Columns are samples.
  std::vector<Eigen::MatrixXd> acts;
};

// Columns of input are samples evaluated independently, so batch output
// is bit-identical to per-sample calls.
Eigen::MatrixXd mlp_forward(const MlpParams& p, const Eigen::MatrixXd& input,
                            MlpCache* cache = nullptr);
Eigen::VectorXd mlp_forward1(const MlpParams& p, const Eigen::VectorXd& input);

struct MlpGrads {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;
};

MlpGrads mlp_zero_grads(const MlpParams& p);

// Reverse-mode gradients of sum_i g_i . output_i. Optionally also returns
// the gradient with respect to the raw (unnormalized) input.
MlpGrads mlp_backward(const MlpParams& p, const MlpCache& cache,
                      const Eigen::MatrixXd& output_gradient,
                      Eigen::MatrixXd* input_gradient = nullptr);

// Flat parameter views used by finite-difference checks and aggregation.
Eigen::VectorXd mlp_flatten(const MlpParams& p);
void mlp_unflatten(MlpParams& p, const Eigen::VectorXd& theta);
Eigen::VectorXd grads_flatten(const MlpGrads& g);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;

  AdamState() = default;
  AdamState(const MlpParams& p, double learning_rate);
};

void adam_step(MlpParams& p, AdamState& opt, const MlpGrads& g);

// target <- tau * online + (1 - tau) * target, elementwise.
void soft_update(MlpParams& target, const MlpParams& online, double tau);

struct Transition {
  Eigen::VectorXd s;
  Eigen::VectorXd a;  // discrete agents store the action index in a[0]
  double r = 0.0;
  Eigen::VectorXd s2;
  bool done = false;
};

// Fixed-capacity ring. Uniform sampling by default; proportional
// prioritization (weights = stored priorities) behind the flag.
class ExperienceBuffer {
 public:
  explicit ExperienceBuffer(std::size_t capacity, bool prioritized = false);

  void push(const Transition& t, double priority = 1.0);
  void set_priority(std::size_t index, double priority);
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool prioritized() const { return prioritized_; }
  const Transition& at(std::size_t index) const { return items_.at(index); }
  double priority(std::size_t index) const { return priorities_.at(index); }

 private:
  std::size_t capacity_;
  bool prioritized_;
  std::size_t write_ = 0;
  std::vector<Transition> items_;
  std::vector<double> priorities_;
};

// On-policy rollout. states has one extra entry (the state after the last
// action); values mirrors that layout so the bootstrap is values.back().
struct TrajectoryBatch {
  std::vector<Eigen::VectorXd> states;  // T + 1
  std::vector<Eigen::VectorXd> actions; // T
  std::vector<double> log_probs;        // T, behavior policy
  std::vector<double> rewards;          // T
  std::vector<std::uint8_t> dones;      // T
  std::vector<double> values;           // T + 1
  std::vector<double> advantages;       // T
  std::vector<double> returns;          // T
  double gamma = 0.99;
  double lambda = 0.95;

  std::size_t steps() const { return actions.size(); }
};

// A_t = sum_l (gamma*lambda)^l delta_{t+l} with delta_t =
// r_t + gamma*(1-done_t)*V(s_{t+1}) - V(s_t); the sum truncates at dones.
std::vector<double> gae_advantages(const TrajectoryBatch& batch, double gamma,
                                   double lambda);

// Recomputes values from the critic, then advantages and returns.
void fill_gae(TrajectoryBatch& batch, const MlpParams& critic);

double gaussian_log_prob(const Eigen::VectorXd& a, const Eigen::VectorXd& mu,
                         double sigma);
Eigen::VectorXd sample_gaussian_action(const Eigen::VectorXd& mu, double sigma,
                                       Rng& rng);

struct PpoConfig {
  double clip_eps = 0.2;
  int epochs = 4;
  int minibatch = 64;
  double sigma = 0.1;  // fixed policy stddev; schedules live in trainers
  bool normalize_advantages = false;
};

struct PpoDiagnostics {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  bool aborted = false;
  std::string abort_reason;
};

// Clipped-surrogate loss, -mean_t min(r_t A_t, clip(r_t) A_t).
double ppo_policy_loss(const MlpParams& actor, const TrajectoryBatch& batch,
                       double clip_eps, double sigma);
MlpGrads ppo_policy_gradient(const MlpParams& actor,
                             const TrajectoryBatch& batch, double clip_eps,
                             double sigma);

// Critic MSE against returns.
double ppo_value_loss(const MlpParams& critic, const TrajectoryBatch& batch);
MlpGrads ppo_value_gradient(const MlpParams& critic,
                            const TrajectoryBatch& batch);

// Minibatched clipped-PPO epochs with advantages recomputed per epoch.
// A non-finite loss aborts the update and restores the incoming params.
PpoDiagnostics ppo_update(MlpParams& actor, MlpParams& critic,
                          TrajectoryBatch& batch, const PpoConfig& cfg,
                          AdamState& actor_opt, AdamState& critic_opt,
                          Rng& rng);

// Lowest-index argmax; with probability epsilon a uniform action instead.
int epsilon_greedy(const Eigen::VectorXd& q_values, double epsilon, Rng& rng);

// One double-DQN step: y = r + gamma * Q_target(s', argmax_a Q(s', a)),
// terminals bootstrap nothing. Returns the minibatch loss.
double ddqn_update(MlpParams& online, const MlpParams& target,
                   const ExperienceBuffer& buffer, double gamma,
                   int batch_size, AdamState& opt, Rng& rng);

// mean_i Q(s_i, pi(s_i)); the gradient is of the loss -mean Q so it plugs
// straight into adam_step. The critic consumes the concatenation (s, a).
double ddpg_actor_objective(const MlpParams& actor, const MlpParams& critic,
                            const std::vector<Eigen::VectorXd>& states);
MlpGrads ddpg_actor_gradient(const MlpParams& actor, const MlpParams& critic,
                             const std::vector<Eigen::VectorXd>& states);

struct DdpgDiagnostics {
  double critic_loss = 0.0;
  double actor_objective = 0.0;
};

DdpgDiagnostics ddpg_update(MlpParams& actor, MlpParams& critic,
                            MlpParams& actor_target, MlpParams& critic_target,
                            const ExperienceBuffer& buffer, double gamma,
                            double tau, int batch_size, AdamState& actor_opt,
                            AdamState& critic_opt, Rng& rng);

struct OuState {
  Eigen::VectorXd x;
  double mu = 0.0;
  double sigma = 0.2;
  double theta = 0.15;
  double dt = 1e-2;
};

// x + theta*(mu - x)*dt + sigma*sqrt(dt)*N(0, I).
OuState ou_step(const OuState& st, Rng& rng);

// Buffer-size weighted average. The output is clamped elementwise into the
// hull of the inputs so convexity and idempotence hold exactly.
MlpParams fedavg(const std::vector<MlpParams>& params,
                 const std::vector<std::size_t>& buffer_sizes);

// Versioned JSON checkpoints; numeric round-trips are bit-exact.
std::string mlp_to_json(const MlpParams& p);
MlpParams mlp_from_json(const std::string& text);

struct PolicyBundle {
  std::map<std::string, MlpParams> nets;
  std::map<std::string, double> scalars;
  std::map<std::string, std::string> strings;
};

std::string bundle_to_json(const PolicyBundle& bundle);
PolicyBundle bundle_from_json(const std::string& text);

}  // namespace apsis
