#pragma once

// Off-policy soft actor-critic training for N agents: replay buffer, joint
// critic regression, policy updates with the per-agent counterfactual
// baseline, soft target updates and the rollout/update loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <type_traits>
#include <variant>
#include <vector>

#include "maac/agents.hpp"
#include "maac/critics.hpp"
#include "maac/envsim.hpp"
#include "maac/numcore.hpp"

namespace maac {

enum class Algorithm { maac, maac_uniform, maddpg_sac, ddpg };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::maac: return "maac";
    case Algorithm::maac_uniform: return "maac_uniform";
    case Algorithm::maddpg_sac: return "maddpg_sac";
    case Algorithm::ddpg: return "ddpg";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string_view s) {
  if (s == "maac") return Algorithm::maac;
  if (s == "maac_uniform") return Algorithm::maac_uniform;
  if (s == "maddpg_sac") return Algorithm::maddpg_sac;
  if (s == "ddpg") return Algorithm::ddpg;
  throw ConfigError("unknown algorithm '" + std::string(s) + "'");
}

inline bool uses_attention(Algorithm a) {
  return a == Algorithm::maac || a == Algorithm::maac_uniform;
}

struct TrainConfig {
  Algorithm algorithm = Algorithm::maac;
  double gamma = 0.99;
  double tau = 0.005;
  double temperature = 0.01;  // entropy weight
  double lr = 0.001;
  std::size_t batch_size = 1024;
  std::size_t buffer_capacity = 1000000;
  std::size_t num_envs = 12;
  std::size_t episode_length = 100;
  std::size_t steps_per_update = 100;
  std::size_t critic_updates = 4;
  std::size_t policy_updates = 4;
  std::size_t heads = 4;
  std::size_t hidden = 128;
  double gumbel_temperature = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("learner.gamma must lie in [0,1)");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("learner.tau must lie in (0,1]");
    if (!(temperature >= 0.0)) throw ConfigError("learner.temperature must be non-negative");
    if (!(lr >= 0.0)) throw ConfigError("learner.lr must be non-negative");
    if (!(gumbel_temperature > 0.0)) throw ConfigError("learner.gumbel_temperature must be positive");
    const std::pair<std::size_t, const char*> counts[] = {
        {batch_size, "batch_size"},         {buffer_capacity, "buffer_capacity"},
        {num_envs, "num_envs"},             {episode_length, "episode_length"},
        {steps_per_update, "steps_per_update"}, {critic_updates, "critic_updates"},
        {policy_updates, "policy_updates"}, {heads, "heads"},
        {hidden, "hidden"}};
    for (const auto& [v, name] : counts)
      if (v == 0) throw ConfigError(std::string("learner.") + name + " must be positive");
    if (uses_attention(algorithm) && hidden % heads != 0)
      throw ConfigError("learner.hidden must be a multiple of learner.heads");
  }
};

// --- Replay buffer ----------------------------------------------------------

struct Transition {
  std::vector<Observation> obs;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<Observation> next_obs;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("replay buffer capacity must be positive");
  }

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return items_.empty(); }

  void push(Transition t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  // k-th oldest transition.
  const Transition& at(std::size_t k) const { return items_.at((head_ + k) % items_.size()); }

  // Uniform draws with replacement.
  std::vector<const Transition*> sample(std::size_t count, Rng& rng) const {
    if (items_.empty()) throw std::logic_error("ReplayBuffer::sample: buffer is empty");
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    std::vector<const Transition*> out(count);
    for (auto& t : out) t = &items_[pick(rng)];
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // oldest element once full
  std::vector<Transition> items_;
};

// --- Batch helpers ------------------------------------------------------------

using Batch = std::vector<const Transition*>;

inline std::vector<Matrix> stack_observations(const Batch& batch, bool next,
                                              const std::vector<AgentShape>& shapes) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    Matrix m(batch.size(), shapes[i].obs_dim);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Observation& o = next ? batch[b]->next_obs[i] : batch[b]->obs[i];
      if (o.size() != shapes[i].obs_dim) throw DimensionError("batch: observation width mismatch");
      std::copy(o.begin(), o.end(), m.row(b).begin());
    }
    out.push_back(std::move(m));
  }
  return out;
}

inline std::vector<std::vector<int>> stack_actions(const Batch& batch, std::size_t agents) {
  std::vector<std::vector<int>> out(agents, std::vector<int>(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b)
    for (std::size_t i = 0; i < agents; ++i) out[i][b] = batch[b]->actions[i];
  return out;
}

inline std::vector<Matrix> one_hot_actions(const std::vector<std::vector<int>>& actions,
                                           const std::vector<AgentShape>& shapes) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < shapes.size(); ++i) out.push_back(one_hot(actions[i], shapes[i].actions));
  return out;
}

// b = sum_a pi(a|o) Q(o, (a, a_-i))
inline double baseline(std::span<const double> probs, std::span<const double> q_all) {
  if (probs.size() != q_all.size()) throw DimensionError("baseline: width mismatch");
  double b = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) b += probs[k] * q_all[k];
  return b;
}

// target <- (1 - tau) target + tau live, over paired parameter visits.
template <class Model>
void soft_update(Model& target, const Model& live, double tau) {
  std::vector<const ParamTensor*> src;
  live.for_each_param([&](const ParamTensor& p) { src.push_back(&p); });
  std::size_t k = 0;
  target.for_each_param([&](ParamTensor& p) {
    if (k >= src.size() || !p.value.same_shape(src[k]->value))
      throw DimensionError("soft_update: parameter shape mismatch at " + p.name);
    auto t = p.value.data();
    const auto l = src[k]->value.data();
    for (std::size_t e = 0; e < t.size(); ++e) t[e] = (1.0 - tau) * t[e] + tau * l[e];
    ++k;
  });
  if (k != src.size()) throw DimensionError("soft_update: parameter count mismatch");
}

using CriticModel = std::variant<AttentionCritic, ConcatCritic, IndependentCritic>;

inline CriticModel make_critic(Algorithm algo, const std::vector<AgentShape>& shapes,
                               std::size_t hidden, std::size_t heads, Rng& rng) {
  switch (algo) {
    case Algorithm::maac:
      return AttentionCritic(shapes, hidden, heads, AttentionMode::learned, rng);
    case Algorithm::maac_uniform:
      return AttentionCritic(shapes, hidden, heads, AttentionMode::uniform, rng);
    case Algorithm::maddpg_sac: return ConcatCritic(shapes, hidden, rng);
    case Algorithm::ddpg: return IndependentCritic(shapes, hidden, rng);
  }
  throw ConfigError("unknown algorithm");
}

struct PolicySet {
  std::vector<DiscretePolicy> policies;

  template <class F>
  void for_each_param(F&& f) {
    for (auto& p : policies) p.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    for (const auto& p : policies) p.for_each_param(f);
  }
};

// Actions drawn for a policy-gradient step, frozen for reuse.
struct PolicySamples {
  std::vector<DiscretePolicy::Tape> tapes;
  std::vector<std::vector<int>> actions;    // [agent][row]
  std::vector<std::vector<double>> log_probs;
};

struct PolicyStepStats {
  std::vector<double> objective;  // per agent surrogate value
  std::optional<AttentionTrace> trace;
};

class Learner {
 public:
  Learner(std::vector<AgentShape> shapes, TrainConfig cfg)
      : shapes_(std::move(shapes)), cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng init(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
    for (std::size_t i = 0; i < shapes_.size(); ++i)
      policies_.policies.emplace_back("policy." + std::to_string(i), shapes_[i].obs_dim, cfg_.hidden,
                                      shapes_[i].actions, init);
    target_policies_ = policies_;
    critic_ = make_critic(cfg_.algorithm, shapes_, cfg_.hidden, cfg_.heads, init);
    target_critic_ = critic_;
  }

  const TrainConfig& config() const noexcept { return cfg_; }
  TrainConfig& mutable_config() noexcept { return cfg_; }
  const std::vector<AgentShape>& shapes() const noexcept { return shapes_; }
  std::size_t agents() const noexcept { return shapes_.size(); }

  PolicySet& policies() noexcept { return policies_; }
  const PolicySet& policies() const noexcept { return policies_; }
  PolicySet& target_policies() noexcept { return target_policies_; }
  const PolicySet& target_policies() const noexcept { return target_policies_; }
  CriticModel& critic() noexcept { return critic_; }
  const CriticModel& critic() const noexcept { return critic_; }
  CriticModel& target_critic() noexcept { return target_critic_; }
  const CriticModel& target_critic() const noexcept { return target_critic_; }

  AdamConfig adam() const { return AdamConfig{cfg_.lr}; }

  // --- critic ------------------------------------------------------------

  // y_i = r_i + gamma * (Qbar_i(o', a') - alpha log pibar_i(a'_i|o'_i)), a' from the
  // target policies. DDPG drops the entropy term and uses hard Gumbel samples.
  std::vector<std::vector<double>> critic_targets(const Batch& batch, Rng& rng) const {
    if (batch.empty()) throw std::invalid_argument("critic_update: empty batch");
    const std::size_t n = agents(), rows = batch.size();
    JointBatch next;
    next.obs = stack_observations(batch, true, shapes_);
    std::vector<std::vector<int>> next_actions(n, std::vector<int>(rows));
    std::vector<std::vector<double>> next_logp(n, std::vector<double>(rows, 0.0));
    const bool ddpg = cfg_.algorithm == Algorithm::ddpg;
    for (std::size_t i = 0; i < n; ++i) {
      const auto tape = target_policies_.policies[i].forward(next.obs[i]);
      for (std::size_t b = 0; b < rows; ++b) {
        if (ddpg) {
          const auto g = gumbel_softmax(tape.logits.row(b), cfg_.gumbel_temperature, rng, true);
          next_actions[i][b] = static_cast<int>(argmax(g.output));
        } else {
          const auto s = DiscretePolicy::sample_from_logits(tape.logits.row(b), rng);
          next_actions[i][b] = s.action;
          next_logp[i][b] = s.log_prob;
        }
      }
    }
    next.actions = one_hot_actions(next_actions, shapes_);
    const std::vector<Matrix> next_q = std::visit(
        [&](const auto& c) { return c.forward(next).q; }, target_critic_);

    std::vector<std::vector<double>> y(n, std::vector<double>(rows));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t b = 0; b < rows; ++b) {
        const double qn = ddpg ? next_q[i](b, 0)
                               : next_q[i](b, static_cast<std::size_t>(next_actions[i][b]));
        const double soft = ddpg ? qn : qn - cfg_.temperature * next_logp[i][b];
        y[i][b] = batch[b]->rewards[i] + cfg_.gamma * soft;
      }
    }
    return y;
  }

  // sum_i mean_b (Q_i(o,a) - y_i)^2; accumulates critic gradients when asked.
  double critic_loss(const Batch& batch, const std::vector<std::vector<double>>& targets,
                     bool accumulate_grads) {
    if (batch.empty()) throw std::invalid_argument("critic_update: empty batch");
    const std::size_t n = agents(), rows = batch.size();
    JointBatch joint;
    joint.obs = stack_observations(batch, false, shapes_);
    const auto acts = stack_actions(batch, n);
    joint.actions = one_hot_actions(acts, shapes_);
    const bool ddpg = cfg_.algorithm == Algorithm::ddpg;
    return std::visit(
        [&](auto& c) {
          auto pass = c.forward(joint);
          double loss = 0.0;
          std::vector<Matrix> dq;
          for (std::size_t i = 0; i < n; ++i) {
            dq.emplace_back(rows, pass.q[i].cols());
            for (std::size_t b = 0; b < rows; ++b) {
              const std::size_t col = ddpg ? 0 : static_cast<std::size_t>(acts[i][b]);
              const double err = pass.q[i](b, col) - targets[i][b];
              loss += err * err / static_cast<double>(rows);
              dq[i](b, col) = 2.0 * err / static_cast<double>(rows);
            }
          }
          if (accumulate_grads) c.backward(pass, dq);
          return loss;
        },
        critic_);
  }

  double critic_update(const Batch& batch, Rng& rng) {
    const auto y = critic_targets(batch, rng);
    zero_critic_grads();
    const double loss = critic_loss(batch, y, true);
    const AdamConfig opt = adam();
    std::visit([&](auto& c) { c.for_each_param([&](ParamTensor& p) { adam_step(p, opt); }); },
               critic_);
    return loss;
  }

  // --- policies ----------------------------------------------------------

  PolicySamples sample_current_actions(const std::vector<Matrix>& obs, Rng& rng) const {
    PolicySamples s;
    for (std::size_t i = 0; i < agents(); ++i) {
      s.tapes.push_back(policies_.policies[i].forward(obs[i]));
      const auto& tape = s.tapes.back();
      std::vector<int> acts(obs[i].rows());
      std::vector<double> logp(obs[i].rows());
      for (std::size_t b = 0; b < acts.size(); ++b) {
        acts[b] = sample_categorical(tape.probs.row(b), rng);
        logp[b] = std::log(tape.probs(b, static_cast<std::size_t>(acts[b])));
      }
      s.actions.push_back(std::move(acts));
      s.log_probs.push_back(std::move(logp));
    }
    return s;
  }

  // Advantage-weighted score-function weights w = A_i - alpha log pi_i(a_i|o_i),
  // with A_i = Q_i(o, a) - sum_a' pi_i(a'|o_i) Q_i(o, (a', a_-i)).
  std::vector<std::vector<double>> policy_weights(const std::vector<Matrix>& obs,
                                                  const PolicySamples& s,
                                                  AttentionTrace* trace_out = nullptr) const {
    JointBatch joint;
    joint.obs = obs;
    joint.actions = one_hot_actions(s.actions, shapes_);
    std::vector<Matrix> q_all;
    std::visit(
        [&](const auto& c) {
          auto pass = c.forward(joint);
          if constexpr (std::is_same_v<std::decay_t<decltype(c)>, AttentionCritic>) {
            if (trace_out != nullptr) *trace_out = std::move(pass.trace);
          }
          q_all = std::move(pass.q);
        },
        critic_);
    std::vector<std::vector<double>> w(agents());
    for (std::size_t i = 0; i < agents(); ++i) {
      const std::size_t rows = obs[i].rows();
      w[i].resize(rows);
      for (std::size_t b = 0; b < rows; ++b) {
        const auto q = q_all[i].row(b);
        const double adv =
            q[static_cast<std::size_t>(s.actions[i][b])] - baseline(s.tapes[i].probs.row(b), q);
        w[i][b] = adv - cfg_.temperature * s.log_probs[i][b];
      }
    }
    return w;
  }

  // J_i = mean_b log pi_i(a_b|o_b) * w_b for frozen (a, w). With
  // accumulate_grads the gradient of -J_i is added to the policy grads.
  double policy_surrogate(std::size_t i, const Matrix& obs, std::span<const int> actions,
                          std::span<const double> weights, bool accumulate_grads) {
    DiscretePolicy& pol = policies_.policies.at(i);
    const auto tape = pol.forward(obs);
    const std::size_t rows = obs.rows();
    double j = 0.0;
    Matrix dlogits(rows, pol.action_count());
    for (std::size_t b = 0; b < rows; ++b) {
      const auto a = static_cast<std::size_t>(actions[b]);
      const auto logp = log_softmax(tape.logits.row(b));
      j += logp[a] * weights[b] / static_cast<double>(rows);
      const double g = -weights[b] / static_cast<double>(rows);
      for (std::size_t k = 0; k < dlogits.cols(); ++k)
        dlogits(b, k) = g * ((k == a ? 1.0 : 0.0) - tape.probs(b, k));
    }
    if (accumulate_grads) pol.backward(tape, dlogits);
    return j;
  }

  PolicyStepStats policy_update(const Batch& batch, Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("policy_update: empty batch");
    const auto obs = stack_observations(batch, false, shapes_);
    if (cfg_.algorithm == Algorithm::ddpg) return ddpg_policy_update(obs, rng);
    PolicyStepStats stats;
    const PolicySamples s = sample_current_actions(obs, rng);
    AttentionTrace trace;
    const auto w = policy_weights(obs, s, &trace);
    if (uses_attention(cfg_.algorithm)) stats.trace = std::move(trace);
    zero_policy_grads();
    const AdamConfig opt = adam();
    for (std::size_t i = 0; i < agents(); ++i) {
      stats.objective.push_back(policy_surrogate(i, obs[i], s.actions[i], w[i], true));
      policies_.policies[i].for_each_param([&](ParamTensor& p) { adam_step(p, opt); });
    }
    return stats;
  }

  // Deterministic-policy-gradient through straight-through Gumbel samples;
  // the objective is mean_b Q_i(o_i, a_i).
  PolicyStepStats ddpg_policy_update(const std::vector<Matrix>& obs, Rng& rng) {
    auto& critic = std::get<IndependentCritic>(critic_);
    const std::size_t n = agents();
    std::vector<DiscretePolicy::Tape> tapes;
    std::vector<std::vector<GumbelSample>> samples(n);
    JointBatch joint;
    joint.obs = obs;
    for (std::size_t i = 0; i < n; ++i) {
      tapes.push_back(policies_.policies[i].forward(obs[i]));
      Matrix act(obs[i].rows(), shapes_[i].actions);
      for (std::size_t b = 0; b < act.rows(); ++b) {
        samples[i].push_back(
            gumbel_softmax(tapes[i].logits.row(b), cfg_.gumbel_temperature, rng, true));
        std::copy(samples[i][b].output.begin(), samples[i][b].output.end(), act.row(b).begin());
      }
      joint.actions.push_back(std::move(act));
    }
    zero_policy_grads();
    zero_critic_grads();
    auto pass = critic.forward(joint);
    std::vector<Matrix> dq;
    PolicyStepStats stats;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t rows = obs[i].rows();
      double mean_q = 0.0;
      for (std::size_t b = 0; b < rows; ++b) mean_q += pass.q[i](b, 0) / static_cast<double>(rows);
      stats.objective.push_back(mean_q);
      dq.emplace_back(rows, 1, -1.0 / static_cast<double>(rows));
    }
    const auto dact = critic.backward(pass, dq);
    zero_critic_grads();  // only the action gradients are wanted here
    const AdamConfig opt = adam();
    for (std::size_t i = 0; i < n; ++i) {
      Matrix dlogits(obs[i].rows(), shapes_[i].actions);
      for (std::size_t b = 0; b < dlogits.rows(); ++b) {
        const auto dz = gumbel_softmax_backward(samples[i][b], cfg_.gumbel_temperature, dact[i].row(b));
        std::copy(dz.begin(), dz.end(), dlogits.row(b).begin());
      }
      policies_.policies[i].backward(tapes[i], dlogits);
      policies_.policies[i].for_each_param([&](ParamTensor& p) { adam_step(p, opt); });
    }
    return stats;
  }

  void update_targets() {
    soft_update(target_policies_, policies_, cfg_.tau);
    std::visit(
        [&](auto& target) {
          using T = std::decay_t<decltype(target)>;
          soft_update(target, std::get<T>(critic_), cfg_.tau);
        },
        target_critic_);
  }

  void zero_critic_grads() {
    std::visit([](auto& c) { c.for_each_param([](ParamTensor& p) { p.zero_grad(); }); }, critic_);
  }
  void zero_policy_grads() {
    policies_.for_each_param([](ParamTensor& p) { p.zero_grad(); });
  }

  // Visits every tensor with a stable prefix, in checkpoint order.
  template <class F>
  void for_each_named_tensor(F&& f) {
    policies_.for_each_param([&](ParamTensor& p) { f("live/" + p.name, p); });
    target_policies_.for_each_param([&](ParamTensor& p) { f("target/" + p.name, p); });
    std::visit([&](auto& c) { c.for_each_param([&](ParamTensor& p) { f("live/" + p.name, p); }); },
               critic_);
    std::visit(
        [&](auto& c) { c.for_each_param([&](ParamTensor& p) { f("target/" + p.name, p); }); },
        target_critic_);
  }

 private:
  std::vector<AgentShape> shapes_;
  TrainConfig cfg_;
  PolicySet policies_;
  PolicySet target_policies_;
  CriticModel critic_;
  CriticModel target_critic_;
};

inline std::vector<AgentShape> agent_shapes(const ParticleEnv& env) {
  std::vector<AgentShape> out;
  for (std::size_t i = 0; i < env.num_agents(); ++i) out.push_back({env.obs_dim(i), env.action_count(i)});
  return out;
}

// --- Training loop --------------------------------------------------------------

struct EpisodeMetrics {
  std::size_t episode = 0;  // index of the completed episode, counted across rollouts
  std::size_t env = 0;
  std::size_t env_steps = 0;  // total environment steps so far
  std::vector<double> agent_rewards;  // episode return per agent
  double team_reward = 0.0;           // mean of agent_rewards
  std::optional<double> critic_loss;
  std::vector<double> policy_objective;
  std::vector<std::vector<double>> attention_entropy;  // [agent][head]
  std::size_t updates = 0;
};

struct TrainProgress {
  std::size_t episodes_done = 0;
  std::size_t env_steps = 0;
  std::size_t update_blocks = 0;
  std::size_t steps_since_update = 0;
};

// Runs rollouts and update blocks. Rollout sampling and environment stepping
// may run on worker threads; each environment has its own random stream, so
// results do not depend on the thread count.
class Trainer {
 public:
  using Callback = std::function<void(const EpisodeMetrics&)>;

  Trainer(EnvConfig env_cfg, TrainConfig cfg, std::size_t threads = 1)
      : env_cfg_(std::move(env_cfg)),
        threads_(std::max<std::size_t>(threads, 1)),
        learner_(shapes_for(env_cfg_, cfg), cfg),
        buffer_(cfg.buffer_capacity),
        update_rng_(cfg.seed * 0x2545F4914F6CDD1DULL + 17) {
    for (std::size_t e = 0; e < cfg.num_envs; ++e) {
      envs_.emplace_back(env_cfg_);
      env_rngs_.emplace_back(cfg.seed * 1000003ULL + 7919ULL * (e + 1));
    }
  }

  Learner& learner() noexcept { return learner_; }
  const Learner& learner() const noexcept { return learner_; }
  const ReplayBuffer& buffer() const noexcept { return buffer_; }
  const TrainProgress& progress() const noexcept { return progress_; }
  void set_progress(const TrainProgress& p) { progress_ = p; }
  const EnvConfig& env_config() const noexcept { return env_cfg_; }

  // Random streams, exposed so checkpoints can capture and restore them.
  std::vector<Rng>& env_rngs() noexcept { return env_rngs_; }
  Rng& update_rng() noexcept { return update_rng_; }

  // Runs rounds of parallel episodes until `total_episodes` have completed.
  void train(std::size_t total_episodes, const Callback& on_episode) {
    const TrainConfig& cfg = learner_.config();
    const std::size_t n = learner_.agents();
    while (progress_.episodes_done < total_episodes) {
      const std::size_t round = progress_.episodes_done / cfg.num_envs;
      std::vector<WorldState> states(envs_.size());
      std::vector<std::vector<Observation>> obs(envs_.size());
      for (std::size_t e = 0; e < envs_.size(); ++e) {
        auto r = envs_[e].reset(episode_seed(round, e));
        states[e] = std::move(r.state);
        obs[e] = std::move(r.observations);
      }
      std::vector<std::vector<double>> returns(envs_.size(), std::vector<double>(n, 0.0));
      std::optional<double> last_loss;
      std::vector<double> last_objective;
      std::vector<std::vector<double>> last_entropy;
      std::size_t updates = 0;

      for (std::size_t t = 0; t < cfg.episode_length; ++t) {
        std::vector<StepResult> results(envs_.size());
        std::vector<std::vector<int>> actions(envs_.size());
        parallel_for(envs_.size(), [&](std::size_t e) {
          actions[e] = act(obs[e], env_rngs_[e]);
          results[e] = envs_[e].step(states[e], actions[e]);
        });
        for (std::size_t e = 0; e < envs_.size(); ++e) {
          for (std::size_t i = 0; i < n; ++i) returns[e][i] += results[e].rewards[i];
          buffer_.push({obs[e], actions[e], results[e].rewards, results[e].observations});
          obs[e] = std::move(results[e].observations);
          states[e] = std::move(results[e].next_state);
        }
        progress_.env_steps += envs_.size();
        progress_.steps_since_update += envs_.size();
        if (progress_.steps_since_update >= cfg.steps_per_update && buffer_.size() >= cfg.batch_size) {
          double loss = 0.0;
          for (std::size_t k = 0; k < cfg.critic_updates; ++k)
            loss += learner_.critic_update(buffer_.sample(cfg.batch_size, update_rng_), update_rng_);
          last_loss = loss / static_cast<double>(cfg.critic_updates);
          for (std::size_t k = 0; k < cfg.policy_updates; ++k) {
            auto stats =
                learner_.policy_update(buffer_.sample(cfg.batch_size, update_rng_), update_rng_);
            last_objective = stats.objective;
            if (stats.trace) last_entropy = mean_entropies(*stats.trace);
          }
          learner_.update_targets();
          progress_.steps_since_update = 0;
          ++progress_.update_blocks;
          ++updates;
        }
      }

      for (std::size_t e = 0; e < envs_.size() && progress_.episodes_done < total_episodes; ++e) {
        EpisodeMetrics m;
        m.episode = progress_.episodes_done;
        m.env = e;
        m.env_steps = progress_.env_steps;
        m.agent_rewards = returns[e];
        double team = 0.0;
        for (double r : returns[e]) team += r;
        m.team_reward = team / static_cast<double>(n);
        m.critic_loss = last_loss;
        m.policy_objective = last_objective;
        m.attention_entropy = last_entropy;
        m.updates = updates;
        ++progress_.episodes_done;
        if (on_episode) on_episode(m);
      }
    }
  }

  std::vector<int> act(const std::vector<Observation>& obs, Rng& rng) const {
    std::vector<int> a(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i)
      a[i] = learner_.policies().policies[i].sample(obs[i], rng).action;
    return a;
  }

  std::uint64_t episode_seed(std::size_t round, std::size_t env) const {
    return learner_.config().seed * 0x100000001B3ULL + round * 1315423911ULL + env;
  }

  static std::vector<std::vector<double>> mean_entropies(const AttentionTrace& trace) {
    std::vector<std::vector<double>> out(trace.weights.size());
    for (std::size_t i = 0; i < trace.weights.size(); ++i)
      for (std::size_t h = 0; h < trace.weights[i].size(); ++h)
        out[i].push_back(trace.mean_entropy(i, h));
    return out;
  }

 private:
  static std::vector<AgentShape> shapes_for(EnvConfig& env, const TrainConfig& cfg) {
    env.episode_length = static_cast<int>(cfg.episode_length);
    return agent_shapes(ParticleEnv(env));
  }

  template <class F>
  void parallel_for(std::size_t count, F&& f) {
    if (threads_ <= 1 || count <= 1) {
      for (std::size_t k = 0; k < count; ++k) f(k);
      return;
    }
    const std::size_t workers = std::min(threads_, count);
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          try {
            for (std::size_t k = w; k < count; k += workers) f(k);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  EnvConfig env_cfg_;
  std::size_t threads_;
  Learner learner_;
  ReplayBuffer buffer_;
  std::vector<ParticleEnv> envs_;
  std::vector<Rng> env_rngs_;
  Rng update_rng_;
  TrainProgress progress_;
};

}  // namespace maac
