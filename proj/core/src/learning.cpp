#include "apsis/learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace apsis {
namespace {

constexpr double kLogTwoPi = 1.8378770664093453;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

double tanh_safe(double z) { return std::tanh(z); }

void check_shapes(const MlpParams& p) {
  require(!p.w.empty() && p.w.size() == p.b.size(),
          "mlp: empty or mismatched layer lists");
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    require(p.w[l].rows() == p.b[l].size(), "mlp: bias shape mismatch");
    if (l > 0) {
      require(p.w[l].cols() == p.w[l - 1].rows(), "mlp: layer chain mismatch");
    }
  }
  require(p.norm.mean.size() == p.w.front().cols() &&
              p.norm.std.size() == p.w.front().cols(),
          "mlp: normalizer dimension mismatch");
  for (int k = 0; k < p.norm.std.size(); ++k) {
    require(p.norm.std[k] >= kNormalizerEps, "mlp: normalizer std below eps");
  }
}

}  // namespace

void Normalizer::reset(int dim) {
  mean = Eigen::VectorXd::Zero(dim);
  std = Eigen::VectorXd::Ones(dim);
  m2 = Eigen::VectorXd::Zero(dim);
  count = 0.0;
}

void Normalizer::update(const Eigen::VectorXd& x) {
  require(x.size() == mean.size(), "normalizer: arity mismatch");
  count += 1.0;
  const Eigen::VectorXd delta = x - mean;
  mean += delta / count;
  m2.array() += delta.array() * (x - mean).array();
  if (count >= 2.0) {
    std = (m2 / count).array().sqrt().max(kNormalizerEps).matrix();
  }
}

Eigen::VectorXd Normalizer::apply(const Eigen::VectorXd& x) const {
  require(x.size() == mean.size(), "normalizer: arity mismatch");
  return ((x - mean).array() / std.array()).matrix();
}

MlpParams mlp_init(const std::vector<int>& sizes, OutputActivation out_act,
                   Rng& rng) {
  require(sizes.size() >= 2, "mlp_init: need input and output sizes");
  for (int s : sizes) require(s > 0, "mlp_init: non-positive layer size");
  MlpParams p;
  p.out_act = out_act;
  p.norm.reset(sizes.front());
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int fan_in = sizes[l];
    const int fan_out = sizes[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i) {
      for (int j = 0; j < fan_in; ++j) {
        w(i, j) = rng.uniform(-bound, bound);
      }
    }
    p.w.push_back(std::move(w));
    p.b.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return p;
}

Eigen::MatrixXd mlp_forward(const MlpParams& p, const Eigen::MatrixXd& input,
                            MlpCache* cache) {
  check_shapes(p);
  require(input.rows() == p.input_dim(), "mlp_forward: input arity mismatch");
  const Eigen::Index n = input.cols();
  const std::size_t layers = p.w.size();

  std::vector<Eigen::MatrixXd> acts(layers + 1);
  acts[0].resize(p.input_dim(), n);
  for (Eigen::Index c = 0; c < n; ++c) {
    acts[0].col(c) = p.norm.apply(input.col(c));
  }
  for (std::size_t l = 0; l < layers; ++l) {
    acts[l + 1].resize(p.w[l].rows(), n);
    const bool last = (l + 1 == layers);
    const bool tanh_out = !last || p.out_act == OutputActivation::Tanh;
    for (Eigen::Index c = 0; c < n; ++c) {
      Eigen::VectorXd z = p.w[l] * acts[l].col(c) + p.b[l];
      if (tanh_out) {
        for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = tanh_safe(z[k]);
      }
      acts[l + 1].col(c) = z;
    }
  }
  Eigen::MatrixXd out = acts.back();
  if (cache) cache->acts = std::move(acts);
  return out;
}

Eigen::VectorXd mlp_forward1(const MlpParams& p, const Eigen::VectorXd& input) {
  return mlp_forward(p, input, nullptr).col(0);
}

MlpGrads mlp_zero_grads(const MlpParams& p) {
  MlpGrads g;
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    g.w.push_back(Eigen::MatrixXd::Zero(p.w[l].rows(), p.w[l].cols()));
    g.b.push_back(Eigen::VectorXd::Zero(p.b[l].size()));
  }
  return g;
}

MlpGrads mlp_backward(const MlpParams& p, const MlpCache& cache,
                      const Eigen::MatrixXd& output_gradient,
                      Eigen::MatrixXd* input_gradient) {
  check_shapes(p);
  const std::size_t layers = p.w.size();
  require(cache.acts.size() == layers + 1, "mlp_backward: stale cache");
  const Eigen::Index n = cache.acts[0].cols();
  require(output_gradient.rows() == p.output_dim() &&
              output_gradient.cols() == n,
          "mlp_backward: gradient shape mismatch");

  MlpGrads g = mlp_zero_grads(p);
  if (input_gradient) input_gradient->resize(p.input_dim(), n);

  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::VectorXd delta = output_gradient.col(c);
    if (p.out_act == OutputActivation::Tanh) {
      const auto& a = cache.acts[layers].col(c);
      delta.array() *= (1.0 - a.array().square());
    }
    for (std::size_t li = layers; li-- > 0;) {
      g.w[li].noalias() += delta * cache.acts[li].col(c).transpose();
      g.b[li] += delta;
      if (li > 0) {
        Eigen::VectorXd up = p.w[li].transpose() * delta;
        const auto& a = cache.acts[li].col(c);
        up.array() *= (1.0 - a.array().square());
        delta = std::move(up);
      } else if (input_gradient) {
        const Eigen::VectorXd up = p.w[0].transpose() * delta;
        input_gradient->col(c) = (up.array() / p.norm.std.array()).matrix();
      }
    }
  }
  return g;
}

Eigen::VectorXd mlp_flatten(const MlpParams& p) {
  Eigen::Index total = 0;
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    total += p.w[l].size() + p.b[l].size();
  }
  Eigen::VectorXd theta(total);
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    for (Eigen::Index i = 0; i < p.w[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < p.w[l].cols(); ++j) {
        theta[at++] = p.w[l](i, j);
      }
    }
    for (Eigen::Index i = 0; i < p.b[l].size(); ++i) theta[at++] = p.b[l][i];
  }
  return theta;
}

void mlp_unflatten(MlpParams& p, const Eigen::VectorXd& theta) {
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    for (Eigen::Index i = 0; i < p.w[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < p.w[l].cols(); ++j) {
        p.w[l](i, j) = theta[at++];
      }
    }
    for (Eigen::Index i = 0; i < p.b[l].size(); ++i) p.b[l][i] = theta[at++];
  }
  require(at == theta.size(), "mlp_unflatten: size mismatch");
}

Eigen::VectorXd grads_flatten(const MlpGrads& g) {
  Eigen::Index total = 0;
  for (std::size_t l = 0; l < g.w.size(); ++l) {
    total += g.w[l].size() + g.b[l].size();
  }
  Eigen::VectorXd out(total);
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < g.w.size(); ++l) {
    for (Eigen::Index i = 0; i < g.w[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < g.w[l].cols(); ++j) {
        out[at++] = g.w[l](i, j);
      }
    }
    for (Eigen::Index i = 0; i < g.b[l].size(); ++i) out[at++] = g.b[l][i];
  }
  return out;
}

AdamState::AdamState(const MlpParams& p, double learning_rate)
    : lr(learning_rate) {
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    mw.push_back(Eigen::MatrixXd::Zero(p.w[l].rows(), p.w[l].cols()));
    vw.push_back(Eigen::MatrixXd::Zero(p.w[l].rows(), p.w[l].cols()));
    mb.push_back(Eigen::VectorXd::Zero(p.b[l].size()));
    vb.push_back(Eigen::VectorXd::Zero(p.b[l].size()));
  }
}

void adam_step(MlpParams& p, AdamState& opt, const MlpGrads& g) {
  require(opt.mw.size() == p.w.size(), "adam_step: optimizer shape mismatch");
  opt.step += 1;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    opt.mw[l] = opt.beta1 * opt.mw[l] + (1.0 - opt.beta1) * g.w[l];
    opt.vw[l].array() = opt.beta2 * opt.vw[l].array() +
                        (1.0 - opt.beta2) * g.w[l].array().square();
    p.w[l].array() -= opt.lr * (opt.mw[l].array() / c1) /
                      ((opt.vw[l].array() / c2).sqrt() + opt.eps);

    opt.mb[l] = opt.beta1 * opt.mb[l] + (1.0 - opt.beta1) * g.b[l];
    opt.vb[l].array() = opt.beta2 * opt.vb[l].array() +
                        (1.0 - opt.beta2) * g.b[l].array().square();
    p.b[l].array() -= opt.lr * (opt.mb[l].array() / c1) /
                      ((opt.vb[l].array() / c2).sqrt() + opt.eps);
  }
}

void soft_update(MlpParams& target, const MlpParams& online, double tau) {
  require(tau >= 0.0 && tau <= 1.0, "soft_update: tau outside [0,1]");
  require(target.w.size() == online.w.size(), "soft_update: shape mismatch");
  for (std::size_t l = 0; l < target.w.size(); ++l) {
    target.w[l] = tau * online.w[l] + (1.0 - tau) * target.w[l];
    target.b[l] = tau * online.b[l] + (1.0 - tau) * target.b[l];
  }
}

ExperienceBuffer::ExperienceBuffer(std::size_t capacity, bool prioritized)
    : capacity_(capacity), prioritized_(prioritized) {
  require(capacity > 0, "ExperienceBuffer: zero capacity");
  items_.reserve(capacity);
  priorities_.reserve(capacity);
}

void ExperienceBuffer::push(const Transition& t, double priority) {
  require(priority > 0.0 || !prioritized_,
          "ExperienceBuffer: non-positive priority");
  if (items_.size() < capacity_) {
    items_.push_back(t);
    priorities_.push_back(priority);
  } else {
    items_[write_] = t;
    priorities_[write_] = priority;
  }
  write_ = (write_ + 1) % capacity_;
}

void ExperienceBuffer::set_priority(std::size_t index, double priority) {
  require(priority > 0.0, "ExperienceBuffer: non-positive priority");
  priorities_.at(index) = priority;
}

std::vector<std::size_t> ExperienceBuffer::sample_indices(std::size_t n,
                                                          Rng& rng) const {
  require(n > 0, "ExperienceBuffer: empty sample request");
  require(!items_.empty(), "ExperienceBuffer: sample from empty buffer");
  std::vector<std::size_t> out;
  out.reserve(n);
  if (!prioritized_) {
    for (std::size_t k = 0; k < n; ++k) {
      out.push_back(
          static_cast<std::size_t>(rng.uniform_int(static_cast<int>(items_.size()))));
    }
    return out;
  }
  const double total =
      std::accumulate(priorities_.begin(), priorities_.end(), 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double u = rng.uniform() * total;
    std::size_t pick = items_.size() - 1;
    for (std::size_t i = 0; i < priorities_.size(); ++i) {
      u -= priorities_[i];
      if (u <= 0.0) {
        pick = i;
        break;
      }
    }
    out.push_back(pick);
  }
  return out;
}

std::vector<double> gae_advantages(const TrajectoryBatch& batch, double gamma,
                                   double lambda) {
  const std::size_t T = batch.steps();
  require(T > 0, "gae_advantages: empty batch");
  require(batch.values.size() == T + 1, "gae_advantages: missing bootstrap");
  require(batch.rewards.size() == T && batch.dones.size() == T,
          "gae_advantages: misaligned batch");
  std::vector<double> adv(T, 0.0);
  double carry = 0.0;
  for (std::size_t t = T; t-- > 0;) {
    const double not_done = batch.dones[t] ? 0.0 : 1.0;
    const double delta = batch.rewards[t] +
                         gamma * not_done * batch.values[t + 1] -
                         batch.values[t];
    carry = delta + gamma * lambda * not_done * carry;
    adv[t] = carry;
  }
  return adv;
}

void fill_gae(TrajectoryBatch& batch, const MlpParams& critic) {
  const std::size_t T = batch.steps();
  require(batch.states.size() == T + 1, "fill_gae: missing final state");
  batch.values.resize(T + 1);
  for (std::size_t t = 0; t <= T; ++t) {
    batch.values[t] = mlp_forward1(critic, batch.states[t])[0];
  }
  batch.advantages = gae_advantages(batch, batch.gamma, batch.lambda);
  batch.returns.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    batch.returns[t] = batch.advantages[t] + batch.values[t];
  }
}

double gaussian_log_prob(const Eigen::VectorXd& a, const Eigen::VectorXd& mu,
                         double sigma) {
  require(sigma > 0.0, "gaussian_log_prob: non-positive sigma");
  require(a.size() == mu.size(), "gaussian_log_prob: arity mismatch");
  const double d = static_cast<double>(a.size());
  return -0.5 * (a - mu).squaredNorm() / (sigma * sigma) -
         d * std::log(sigma) - 0.5 * d * kLogTwoPi;
}

Eigen::VectorXd sample_gaussian_action(const Eigen::VectorXd& mu, double sigma,
                                       Rng& rng) {
  Eigen::VectorXd a(mu.size());
  for (Eigen::Index k = 0; k < mu.size(); ++k) {
    a[k] = mu[k] + sigma * rng.normal();
  }
  return a;
}

namespace {

// Shared core of the PPO policy loss/gradient over a subset of steps.
// Returns the loss; fills grads when requested.
double ppo_policy_eval(const MlpParams& actor, const TrajectoryBatch& batch,
                       double clip_eps, double sigma,
                       const std::vector<std::size_t>& idx, MlpGrads* grads,
                       double* mean_ratio, double* clip_fraction) {
  require(clip_eps > 0.0 && clip_eps < 1.0, "ppo: clip_eps outside (0,1)");
  require(!idx.empty(), "ppo: empty batch");
  require(batch.advantages.size() == batch.steps(),
          "ppo: advantages not filled");

  const Eigen::Index dim = actor.input_dim();
  Eigen::MatrixXd input(dim, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    input.col(static_cast<Eigen::Index>(k)) = batch.states[idx[k]];
  }
  MlpCache cache;
  const Eigen::MatrixXd mu = mlp_forward(actor, input, &cache);

  const double inv_n = 1.0 / static_cast<double>(idx.size());
  const double s2 = sigma * sigma;
  double loss = 0.0;
  double ratio_sum = 0.0;
  double clipped = 0.0;
  Eigen::MatrixXd gout;
  if (grads) gout = Eigen::MatrixXd::Zero(mu.rows(), mu.cols());

  for (std::size_t k = 0; k < idx.size(); ++k) {
    const std::size_t t = idx[k];
    const Eigen::Index c = static_cast<Eigen::Index>(k);
    const double logp =
        gaussian_log_prob(batch.actions[t], mu.col(c), sigma);
    const double ratio = std::exp(logp - batch.log_probs[t]);
    const double a = batch.advantages[t];
    const double unclipped = ratio * a;
    const double r_clip =
        std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    const double clipped_term = r_clip * a;
    loss -= inv_n * std::min(unclipped, clipped_term);
    ratio_sum += ratio;
    if (ratio < 1.0 - clip_eps || ratio > 1.0 + clip_eps) clipped += 1.0;
    if (grads && unclipped <= clipped_term) {
      // d ratio / d mu = ratio * (a_t - mu) / sigma^2
      gout.col(c) = -inv_n * a * ratio *
                    (batch.actions[t] - mu.col(c)) / s2;
    }
  }
  if (grads) *grads = mlp_backward(actor, cache, gout);
  if (mean_ratio) *mean_ratio = ratio_sum * inv_n;
  if (clip_fraction) *clip_fraction = clipped * inv_n;
  return loss;
}

double ppo_value_eval(const MlpParams& critic, const TrajectoryBatch& batch,
                      const std::vector<std::size_t>& idx, MlpGrads* grads) {
  require(!idx.empty(), "ppo: empty batch");
  require(batch.returns.size() == batch.steps(), "ppo: returns not filled");
  const Eigen::Index dim = critic.input_dim();
  Eigen::MatrixXd input(dim, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    input.col(static_cast<Eigen::Index>(k)) = batch.states[idx[k]];
  }
  MlpCache cache;
  const Eigen::MatrixXd v = mlp_forward(critic, input, &cache);
  const double inv_n = 1.0 / static_cast<double>(idx.size());
  double loss = 0.0;
  Eigen::MatrixXd gout;
  if (grads) gout = Eigen::MatrixXd::Zero(1, v.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Eigen::Index c = static_cast<Eigen::Index>(k);
    const double err = v(0, c) - batch.returns[idx[k]];
    loss += inv_n * err * err;
    if (grads) gout(0, c) = 2.0 * inv_n * err;
  }
  if (grads) *grads = mlp_backward(critic, cache, gout);
  return loss;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

double ppo_policy_loss(const MlpParams& actor, const TrajectoryBatch& batch,
                       double clip_eps, double sigma) {
  return ppo_policy_eval(actor, batch, clip_eps, sigma,
                         all_indices(batch.steps()), nullptr, nullptr,
                         nullptr);
}

MlpGrads ppo_policy_gradient(const MlpParams& actor,
                             const TrajectoryBatch& batch, double clip_eps,
                             double sigma) {
  MlpGrads g;
  ppo_policy_eval(actor, batch, clip_eps, sigma, all_indices(batch.steps()),
                  &g, nullptr, nullptr);
  return g;
}

double ppo_value_loss(const MlpParams& critic, const TrajectoryBatch& batch) {
  return ppo_value_eval(critic, batch, all_indices(batch.steps()), nullptr);
}

MlpGrads ppo_value_gradient(const MlpParams& critic,
                            const TrajectoryBatch& batch) {
  MlpGrads g;
  ppo_value_eval(critic, batch, all_indices(batch.steps()), &g);
  return g;
}

PpoDiagnostics ppo_update(MlpParams& actor, MlpParams& critic,
                          TrajectoryBatch& batch, const PpoConfig& cfg,
                          AdamState& actor_opt, AdamState& critic_opt,
                          Rng& rng) {
  require(cfg.clip_eps > 0.0 && cfg.clip_eps < 1.0,
          "ppo_update: clip_eps outside (0,1)");
  require(cfg.epochs > 0 && cfg.minibatch > 0, "ppo_update: bad schedule");
  const std::size_t T = batch.steps();
  require(T > 0, "ppo_update: empty batch");
  require(batch.states.size() == T + 1, "ppo_update: missing final state");

  const MlpParams actor_in = actor;
  const MlpParams critic_in = critic;
  const AdamState actor_opt_in = actor_opt;
  const AdamState critic_opt_in = critic_opt;

  PpoDiagnostics diag;
  auto abort = [&](const std::string& why) {
    actor = actor_in;
    critic = critic_in;
    actor_opt = actor_opt_in;
    critic_opt = critic_opt_in;
    diag.aborted = true;
    diag.abort_reason = why;
    return diag;
  };

  for (double r : batch.rewards) {
    if (!std::isfinite(r)) return abort("non-finite reward");
  }

  std::vector<std::size_t> order = all_indices(T);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Advantages are refreshed from the current critic every epoch.
    fill_gae(batch, critic);
    if (cfg.normalize_advantages) {
      double m = 0.0, s = 0.0;
      for (double a : batch.advantages) m += a;
      m /= static_cast<double>(T);
      for (double a : batch.advantages) s += (a - m) * (a - m);
      s = std::sqrt(s / static_cast<double>(T)) + 1e-8;
      for (double& a : batch.advantages) a = (a - m) / s;
    }
    for (std::size_t i = T; i-- > 1;) {
      const std::size_t j =
          static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i + 1)));
      std::swap(order[i], order[j]);
    }
    const std::size_t mb = std::min<std::size_t>(cfg.minibatch, T);
    for (std::size_t start = 0; start < T; start += mb) {
      const std::vector<std::size_t> idx(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() +
              static_cast<std::ptrdiff_t>(std::min(start + mb, T)));
      MlpGrads ag;
      const double aloss = ppo_policy_eval(actor, batch, cfg.clip_eps,
                                           cfg.sigma, idx, &ag,
                                           &diag.mean_ratio,
                                           &diag.clip_fraction);
      MlpGrads cg;
      const double closs = ppo_value_eval(critic, batch, idx, &cg);
      if (!std::isfinite(aloss) || !std::isfinite(closs)) {
        return abort("non-finite loss");
      }
      adam_step(actor, actor_opt, ag);
      adam_step(critic, critic_opt, cg);
      diag.actor_loss = aloss;
      diag.critic_loss = closs;
    }
  }
  return diag;
}

int epsilon_greedy(const Eigen::VectorXd& q_values, double epsilon, Rng& rng) {
  require(q_values.size() > 0, "epsilon_greedy: empty action set");
  require(epsilon >= 0.0 && epsilon <= 1.0,
          "epsilon_greedy: epsilon outside [0,1]");
  if (epsilon > 0.0 && rng.uniform() < epsilon) {
    return rng.uniform_int(static_cast<int>(q_values.size()));
  }
  int best = 0;
  for (int k = 1; k < q_values.size(); ++k) {
    if (q_values[k] > q_values[best]) best = k;
  }
  return best;
}

double ddqn_update(MlpParams& online, const MlpParams& target,
                   const ExperienceBuffer& buffer, double gamma,
                   int batch_size, AdamState& opt, Rng& rng) {
  require(batch_size > 0, "ddqn_update: bad batch size");
  require(buffer.size() >= static_cast<std::size_t>(batch_size),
          "ddqn_update: buffer smaller than batch");
  const std::vector<std::size_t> idx =
      buffer.sample_indices(static_cast<std::size_t>(batch_size), rng);

  const Eigen::Index dim = online.input_dim();
  Eigen::MatrixXd s(dim, batch_size), s2(dim, batch_size);
  for (int k = 0; k < batch_size; ++k) {
    s.col(k) = buffer.at(idx[static_cast<std::size_t>(k)]).s;
    s2.col(k) = buffer.at(idx[static_cast<std::size_t>(k)]).s2;
  }

  MlpCache cache;
  const Eigen::MatrixXd q = mlp_forward(online, s, &cache);
  const Eigen::MatrixXd q_next_online = mlp_forward(online, s2);
  const Eigen::MatrixXd q_next_target = mlp_forward(target, s2);

  const double inv_n = 1.0 / static_cast<double>(batch_size);
  Eigen::MatrixXd gout = Eigen::MatrixXd::Zero(q.rows(), q.cols());
  double loss = 0.0;
  for (int k = 0; k < batch_size; ++k) {
    const Transition& tr = buffer.at(idx[static_cast<std::size_t>(k)]);
    require(tr.a.size() >= 1, "ddqn_update: missing action index");
    const int a = static_cast<int>(std::llround(tr.a[0]));
    require(a >= 0 && a < q.rows(), "ddqn_update: action index out of range");
    double y = tr.r;
    if (!tr.done) {
      int a_star = 0;
      for (int j = 1; j < q_next_online.rows(); ++j) {
        if (q_next_online(j, k) > q_next_online(a_star, k)) a_star = j;
      }
      y += gamma * q_next_target(a_star, k);
    }
    const double err = q(a, k) - y;
    loss += inv_n * err * err;
    gout(a, k) = 2.0 * inv_n * err;
  }
  const MlpGrads g = mlp_backward(online, cache, gout);
  adam_step(online, opt, g);
  return loss;
}

double ddpg_actor_objective(const MlpParams& actor, const MlpParams& critic,
                            const std::vector<Eigen::VectorXd>& states) {
  require(!states.empty(), "ddpg: no states");
  double sum = 0.0;
  for (const Eigen::VectorXd& s : states) {
    const Eigen::VectorXd a = mlp_forward1(actor, s);
    Eigen::VectorXd sa(s.size() + a.size());
    sa << s, a;
    sum += mlp_forward1(critic, sa)[0];
  }
  return sum / static_cast<double>(states.size());
}

MlpGrads ddpg_actor_gradient(const MlpParams& actor, const MlpParams& critic,
                             const std::vector<Eigen::VectorXd>& states) {
  require(!states.empty(), "ddpg: no states");
  const Eigen::Index sdim = states.front().size();
  const Eigen::Index adim = actor.output_dim();
  const Eigen::Index n = static_cast<Eigen::Index>(states.size());

  Eigen::MatrixXd sm(sdim, n);
  for (Eigen::Index c = 0; c < n; ++c) sm.col(c) = states[static_cast<std::size_t>(c)];
  MlpCache actor_cache;
  const Eigen::MatrixXd actions = mlp_forward(actor, sm, &actor_cache);

  Eigen::MatrixXd sam(sdim + adim, n);
  sam.topRows(sdim) = sm;
  sam.bottomRows(adim) = actions;
  MlpCache critic_cache;
  (void)mlp_forward(critic, sam, &critic_cache);

  // Objective is maximized: the loss is -mean Q, so dL/dQ = -1/n.
  Eigen::MatrixXd gq =
      Eigen::MatrixXd::Constant(1, n, -1.0 / static_cast<double>(n));
  Eigen::MatrixXd dsa;
  (void)mlp_backward(critic, critic_cache, gq, &dsa);
  const Eigen::MatrixXd da = dsa.bottomRows(adim);
  return mlp_backward(actor, actor_cache, da);
}

DdpgDiagnostics ddpg_update(MlpParams& actor, MlpParams& critic,
                            MlpParams& actor_target, MlpParams& critic_target,
                            const ExperienceBuffer& buffer, double gamma,
                            double tau, int batch_size, AdamState& actor_opt,
                            AdamState& critic_opt, Rng& rng) {
  require(batch_size > 0, "ddpg_update: bad batch size");
  require(buffer.size() >= static_cast<std::size_t>(batch_size),
          "ddpg_update: buffer smaller than batch");
  const std::vector<std::size_t> idx =
      buffer.sample_indices(static_cast<std::size_t>(batch_size), rng);

  const Eigen::Index sdim = buffer.at(idx[0]).s.size();
  const Eigen::Index adim = buffer.at(idx[0]).a.size();
  const Eigen::Index n = batch_size;

  Eigen::MatrixXd s(sdim, n), a(adim, n), s2(sdim, n);
  Eigen::VectorXd r(n);
  std::vector<bool> done(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    const Transition& tr = buffer.at(idx[static_cast<std::size_t>(k)]);
    s.col(k) = tr.s;
    a.col(k) = tr.a;
    s2.col(k) = tr.s2;
    r[k] = tr.r;
    done[static_cast<std::size_t>(k)] = tr.done;
  }

  // Critic regression target from the target pair.
  const Eigen::MatrixXd a2 = mlp_forward(actor_target, s2);
  Eigen::MatrixXd sa2(sdim + adim, n);
  sa2.topRows(sdim) = s2;
  sa2.bottomRows(adim) = a2;
  const Eigen::MatrixXd q2 = mlp_forward(critic_target, sa2);

  Eigen::MatrixXd sa(sdim + adim, n);
  sa.topRows(sdim) = s;
  sa.bottomRows(adim) = a;
  MlpCache critic_cache;
  const Eigen::MatrixXd q = mlp_forward(critic, sa, &critic_cache);

  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::MatrixXd gout(1, n);
  DdpgDiagnostics diag;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double y =
        r[k] + (done[static_cast<std::size_t>(k)] ? 0.0 : gamma * q2(0, k));
    const double err = q(0, k) - y;
    diag.critic_loss += inv_n * err * err;
    gout(0, k) = 2.0 * inv_n * err;
  }
  const MlpGrads cg = mlp_backward(critic, critic_cache, gout);
  adam_step(critic, critic_opt, cg);

  std::vector<Eigen::VectorXd> state_list(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    state_list[static_cast<std::size_t>(k)] = s.col(k);
  }
  diag.actor_objective = ddpg_actor_objective(actor, critic, state_list);
  const MlpGrads ag = ddpg_actor_gradient(actor, critic, state_list);
  adam_step(actor, actor_opt, ag);

  soft_update(actor_target, actor, tau);
  soft_update(critic_target, critic, tau);
  return diag;
}

OuState ou_step(const OuState& st, Rng& rng) {
  require(st.dt > 0.0, "ou_step: non-positive dt");
  require(st.sigma >= 0.0, "ou_step: negative sigma");
  OuState next = st;
  const double root_dt = std::sqrt(st.dt);
  for (Eigen::Index k = 0; k < st.x.size(); ++k) {
    next.x[k] = st.x[k] + st.theta * (st.mu - st.x[k]) * st.dt +
                st.sigma * root_dt * rng.normal();
  }
  return next;
}

MlpParams fedavg(const std::vector<MlpParams>& params,
                 const std::vector<std::size_t>& buffer_sizes) {
  require(!params.empty(), "fedavg: no inputs");
  require(params.size() == buffer_sizes.size(), "fedavg: size list mismatch");
  double total = 0.0;
  for (std::size_t sz : buffer_sizes) {
    require(sz > 0, "fedavg: zero buffer size");
    total += static_cast<double>(sz);
  }
  const MlpParams& head = params.front();
  for (const MlpParams& p : params) {
    require(p.w.size() == head.w.size(), "fedavg: layer count mismatch");
    for (std::size_t l = 0; l < p.w.size(); ++l) {
      require(p.w[l].rows() == head.w[l].rows() &&
                  p.w[l].cols() == head.w[l].cols(),
              "fedavg: layer shape mismatch");
    }
  }

  // Weighted sum, then an elementwise clamp into the input hull: the true
  // convex combination lies inside it, so clamping only removes rounding.
  auto blend = [&](auto read) {
    using T = decltype(read(head));
    T acc = read(params[0]) * (static_cast<double>(buffer_sizes[0]) / total);
    T lo = read(params[0]);
    T hi = read(params[0]);
    for (std::size_t i = 1; i < params.size(); ++i) {
      const double w = static_cast<double>(buffer_sizes[i]) / total;
      acc += read(params[i]) * w;
      lo = lo.cwiseMin(read(params[i]));
      hi = hi.cwiseMax(read(params[i]));
    }
    return T(acc.cwiseMax(lo).cwiseMin(hi));
  };

  MlpParams out = head;
  for (std::size_t l = 0; l < head.w.size(); ++l) {
    out.w[l] = blend([l](const MlpParams& p) { return p.w[l]; });
    out.b[l] = blend([l](const MlpParams& p) { return p.b[l]; });
  }
  out.norm.mean = blend([](const MlpParams& p) { return p.norm.mean; });
  out.norm.std = blend([](const MlpParams& p) { return p.norm.std; });
  out.norm.m2 = blend([](const MlpParams& p) { return p.norm.m2; });
  double csum = 0.0;
  double clo = head.norm.count;
  double chi = head.norm.count;
  for (std::size_t i = 0; i < params.size(); ++i) {
    csum += params[i].norm.count *
            (static_cast<double>(buffer_sizes[i]) / total);
    clo = std::min(clo, params[i].norm.count);
    chi = std::max(chi, params[i].norm.count);
  }
  out.norm.count = std::clamp(csum, clo, chi);
  return out;
}

namespace {

nlohmann::json mlp_to_doc(const MlpParams& p) {
  nlohmann::json doc;
  doc["version"] = 1;
  doc["out_act"] = p.out_act == OutputActivation::Tanh ? "tanh" : "linear";
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    nlohmann::json layer;
    layer["rows"] = p.w[l].rows();
    layer["cols"] = p.w[l].cols();
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(p.w[l].size()));
    for (Eigen::Index i = 0; i < p.w[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < p.w[l].cols(); ++j) {
        w.push_back(p.w[l](i, j));
      }
    }
    layer["w"] = std::move(w);
    layer["b"] = std::vector<double>(p.b[l].data(),
                                     p.b[l].data() + p.b[l].size());
    layers.push_back(std::move(layer));
  }
  doc["layers"] = std::move(layers);
  doc["normalizer"] = {
      {"mean", std::vector<double>(p.norm.mean.data(),
                                   p.norm.mean.data() + p.norm.mean.size())},
      {"std", std::vector<double>(p.norm.std.data(),
                                  p.norm.std.data() + p.norm.std.size())},
      {"m2", std::vector<double>(p.norm.m2.data(),
                                 p.norm.m2.data() + p.norm.m2.size())},
      {"count", p.norm.count}};
  return doc;
}

MlpParams mlp_from_doc(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("version", 0) != 1) {
    throw std::runtime_error("mlp checkpoint: unsupported version");
  }
  MlpParams p;
  const std::string act = doc.at("out_act").get<std::string>();
  if (act == "tanh") {
    p.out_act = OutputActivation::Tanh;
  } else if (act == "linear") {
    p.out_act = OutputActivation::Linear;
  } else {
    throw std::runtime_error("mlp checkpoint: unknown activation " + act);
  }
  for (const auto& layer : doc.at("layers")) {
    const Eigen::Index rows = layer.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = layer.at("cols").get<Eigen::Index>();
    const auto w = layer.at("w").get<std::vector<double>>();
    const auto b = layer.at("b").get<std::vector<double>>();
    if (rows <= 0 || cols <= 0 ||
        w.size() != static_cast<std::size_t>(rows * cols) ||
        b.size() != static_cast<std::size_t>(rows)) {
      throw std::runtime_error("mlp checkpoint: bad layer shape");
    }
    Eigen::MatrixXd wm(rows, cols);
    std::size_t at = 0;
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) wm(i, j) = w[at++];
    }
    p.w.push_back(std::move(wm));
    p.b.push_back(Eigen::Map<const Eigen::VectorXd>(
        b.data(), static_cast<Eigen::Index>(b.size())));
  }
  const auto& norm = doc.at("normalizer");
  const auto mean = norm.at("mean").get<std::vector<double>>();
  const auto stdv = norm.at("std").get<std::vector<double>>();
  const auto m2 = norm.at("m2").get<std::vector<double>>();
  p.norm.mean = Eigen::Map<const Eigen::VectorXd>(
      mean.data(), static_cast<Eigen::Index>(mean.size()));
  p.norm.std = Eigen::Map<const Eigen::VectorXd>(
      stdv.data(), static_cast<Eigen::Index>(stdv.size()));
  p.norm.m2 = Eigen::Map<const Eigen::VectorXd>(
      m2.data(), static_cast<Eigen::Index>(m2.size()));
  p.norm.count = norm.at("count").get<double>();
  check_shapes(p);
  return p;
}

}  // namespace

std::string mlp_to_json(const MlpParams& p) { return mlp_to_doc(p).dump(2); }

MlpParams mlp_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("mlp checkpoint: ") + e.what());
  }
  return mlp_from_doc(doc);
}

std::string bundle_to_json(const PolicyBundle& bundle) {
  nlohmann::json doc;
  doc["version"] = 1;
  nlohmann::json nets = nlohmann::json::object();
  for (const auto& [name, p] : bundle.nets) nets[name] = mlp_to_doc(p);
  doc["nets"] = std::move(nets);
  doc["scalars"] = bundle.scalars;
  doc["strings"] = bundle.strings;
  return doc.dump(2);
}

PolicyBundle bundle_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("policy bundle: ") + e.what());
  }
  if (!doc.is_object() || doc.value("version", 0) != 1) {
    throw std::runtime_error("policy bundle: unsupported version");
  }
  PolicyBundle bundle;
  for (const auto& [name, net] : doc.at("nets").items()) {
    bundle.nets.emplace(name, mlp_from_doc(net));
  }
  if (doc.contains("scalars")) {
    bundle.scalars =
        doc.at("scalars").get<std::map<std::string, double>>();
  }
  if (doc.contains("strings")) {
    bundle.strings =
        doc.at("strings").get<std::map<std::string, std::string>>();
  }
  return bundle;
}

}  // namespace apsis
