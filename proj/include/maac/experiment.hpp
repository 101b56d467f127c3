#pragma once

// Library side of the command-line front-end. Each command takes a plain
// options struct and returns an exit status, so tests can drive the same code
// paths as the executable.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "maac/checkpoint.hpp"
#include "maac/config.hpp"
#include "maac/learner.hpp"

namespace maac {

inline constexpr std::string_view kVersion = "0.1.0";
inline constexpr int kMetricsSchemaVersion = 1;

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitRuntime = 3 };

// --- configuration resolution ----------------------------------------------------

struct ConfigSource {
  std::optional<std::string> path;  // config file; absent means "use the checkpoint's"
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;  // --seed, wins over MAAC_SEED
};

// Precedence: file < --override < MAAC_SEED < --seed.
inline ExperimentConfig resolve_config(const ConfigSource& src,
                                       const std::optional<ExperimentConfig>& fallback = std::nullopt) {
  ExperimentConfig cfg;
  if (src.path) {
    cfg = load_config(*src.path);
  } else if (fallback) {
    cfg = *fallback;
  } else {
    throw ConfigError("no config file given (--config)");
  }
  for (const auto& o : src.overrides) apply_override(cfg, o);
  if (const char* env_seed = std::getenv("MAAC_SEED"); env_seed != nullptr && *env_seed != '\0')
    apply_override(cfg, std::string("run.seed=") + env_seed);
  if (src.seed) cfg.run.seed = *src.seed;
  cfg.validate();
  return cfg;
}

// --- metrics -------------------------------------------------------------------

inline nlohmann::json metrics_record(const EpisodeMetrics& m, std::size_t update_blocks) {
  nlohmann::json j;
  j["schema_version"] = kMetricsSchemaVersion;
  j["episode"] = m.episode;
  j["env"] = m.env;
  j["env_steps"] = m.env_steps;
  j["agent_rewards"] = m.agent_rewards;
  j["team_reward"] = m.team_reward;
  j["critic_loss"] = m.critic_loss ? nlohmann::json(*m.critic_loss) : nlohmann::json(nullptr);
  j["policy_objective"] = m.policy_objective;
  j["attention_entropy"] = m.attention_entropy;
  j["updates_in_round"] = m.updates;
  j["update_blocks"] = update_blocks;
  return j;
}

// Long-format CSV (episode, env_steps, metric, agent, head, value) for
// external plotting. Empty agent/head cells mean "not applicable".
inline void export_metrics_csv(const std::filesystem::path& metrics, const std::filesystem::path& csv) {
  std::ifstream in(metrics);
  if (!in) throw std::runtime_error("cannot read " + metrics.string());
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  out << std::setprecision(17);
  out << "episode,env_steps,metric,agent,head,value\n";
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const auto ep = j.at("episode").get<std::size_t>();
    const auto steps = j.at("env_steps").get<std::size_t>();
    const auto row = [&](const char* metric, std::string agent, std::string head, double v) {
      out << ep << ',' << steps << ',' << metric << ',' << agent << ',' << head << ',' << v << '\n';
    };
    row("team_reward", "", "", j.at("team_reward").get<double>());
    if (!j.at("critic_loss").is_null()) row("critic_loss", "", "", j.at("critic_loss").get<double>());
    const auto& rewards = j.at("agent_rewards");
    for (std::size_t i = 0; i < rewards.size(); ++i)
      row("agent_reward", std::to_string(i), "", rewards[i].get<double>());
    const auto& obj = j.at("policy_objective");
    for (std::size_t i = 0; i < obj.size(); ++i)
      row("policy_objective", std::to_string(i), "", obj[i].get<double>());
    const auto& ent = j.at("attention_entropy");
    for (std::size_t i = 0; i < ent.size(); ++i)
      for (std::size_t h = 0; h < ent[i].size(); ++h)
        row("attention_entropy", std::to_string(i), std::to_string(h), ent[i][h].get<double>());
  }
}

// --- evaluation ----------------------------------------------------------------

struct EvalSummary {
  std::size_t episodes = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double ci95 = 0.0;  // half-width, 1.96 * sd / sqrt(n)
  std::vector<double> agent_means;
  std::vector<double> episode_rewards;  // team reward per episode

  nlohmann::json to_json() const {
    return {{"episodes", episodes}, {"mean", mean}, {"stddev", stddev}, {"ci95", ci95},
            {"agent_means", agent_means}};
  }
};

inline EvalSummary summarize(const std::vector<double>& team, const std::vector<std::vector<double>>& agents) {
  EvalSummary s;
  s.episodes = team.size();
  s.episode_rewards = team;
  if (team.empty()) return s;
  const double n = static_cast<double>(team.size());
  s.mean = std::accumulate(team.begin(), team.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : team) ss += (r - s.mean) * (r - s.mean);
  s.stddev = team.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  s.ci95 = 1.96 * s.stddev / std::sqrt(n);
  if (!agents.empty()) {
    s.agent_means.assign(agents.front().size(), 0.0);
    for (const auto& a : agents)
      for (std::size_t i = 0; i < a.size(); ++i) s.agent_means[i] += a[i] / n;
  }
  return s;
}

struct RolloutOptions {
  std::size_t episodes = 10;
  std::size_t seeds = 1;
  std::uint64_t base_seed = 1;
  bool greedy = false;
};

// Called once per step with the episode index, the state and observations
// before the step, the chosen actions and the resulting rewards.
using StepObserver = std::function<void(std::size_t, const WorldState&, const std::vector<Observation>&,
                                        const std::vector<int>&, const std::vector<double>&)>;

inline std::vector<int> choose_actions(const Learner& learner, const std::vector<Observation>& obs, bool greedy,
                                       Rng& rng) {
  std::vector<int> a(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto& pol = learner.policies().policies[i];
    a[i] = greedy ? static_cast<int>(argmax(pol.action_distribution(obs[i]))) : pol.sample(obs[i], rng).action;
  }
  return a;
}

// Rolls out the current policies without learning. Episodes run for every
// seed in [base_seed, base_seed + seeds).
inline EvalSummary evaluate(const EnvConfig& env_cfg, const Learner& learner, const RolloutOptions& opt,
                            const StepObserver& observer = {}) {
  ParticleEnv env(env_cfg);
  std::vector<double> team;
  std::vector<std::vector<double>> agents;
  std::size_t episode = 0;
  for (std::size_t s = 0; s < opt.seeds; ++s) {
    const std::uint64_t seed = opt.base_seed + s;
    Rng rng(seed * 0x9E3779B97F4A7C15ULL + 0x51ED27ULL);
    for (std::size_t k = 0; k < opt.episodes; ++k, ++episode) {
      auto r = env.reset(seed * 1000003ULL + k * 7919ULL + 0xE7A1ULL);
      WorldState state = std::move(r.state);
      std::vector<Observation> obs = std::move(r.observations);
      std::vector<double> ret(env.num_agents(), 0.0);
      for (int t = 0; t < env.episode_length(); ++t) {
        const auto actions = choose_actions(learner, obs, opt.greedy, rng);
        auto step = env.step(state, actions);
        if (observer) observer(episode, state, obs, actions, step.rewards);
        for (std::size_t i = 0; i < ret.size(); ++i) ret[i] += step.rewards[i];
        state = std::move(step.next_state);
        obs = std::move(step.observations);
      }
      team.push_back(std::accumulate(ret.begin(), ret.end(), 0.0) / static_cast<double>(ret.size()));
      agents.push_back(std::move(ret));
    }
  }
  return summarize(team, agents);
}

// --- attention inspection ----------------------------------------------------

struct AttentionFocus {
  std::size_t decisions = 0;  // (step, rover) pairs examined
  std::size_t focused = 0;    // paired tower beat every unpaired tower
  double fraction() const { return decisions == 0 ? 0.0 : static_cast<double>(focused) / decisions; }
};

// For each rover, takes the maximum attention weight over heads for every
// tower and checks whether the paired tower scores above all others.
inline void score_attention_focus(const AttentionTrace& trace, const ParticleEnv& env, const WorldState& state,
                                  AttentionFocus& focus) {
  const auto rovers = state.rover_tower.size();
  for (std::size_t r = 0; r < rovers; ++r) {
    const std::size_t rover = env.rover_agent(r);
    const auto& others = trace.others[rover];
    double paired = -1.0;
    double best_unpaired = -1.0;
    for (std::size_t k = 0; k < others.size(); ++k) {
      const std::size_t j = others[k];
      if (j < rovers) continue;  // other rovers are not candidates
      double w = 0.0;
      for (const auto& head : trace.weights[rover]) w = std::max(w, head(0, k));
      if (static_cast<int>(j) == state.rover_tower[r])
        paired = w;
      else
        best_unpaired = std::max(best_unpaired, w);
    }
    ++focus.decisions;
    if (paired > best_unpaired) ++focus.focused;
  }
}

inline JointBatch single_row_batch(const std::vector<AgentShape>& shapes, const std::vector<Observation>& obs,
                                   const std::vector<int>& actions) {
  JointBatch b;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    b.obs.push_back(Matrix::row_vector(obs[i]));
    const int a = actions[i];
    b.actions.push_back(one_hot(std::span<const int>(&a, 1), shapes[i].actions));
  }
  return b;
}

struct InspectSummary {
  std::size_t steps = 0;
  double max_row_sum_error = 0.0;
  std::vector<std::vector<double>> mean_entropy;  // [agent][head]
  std::optional<AttentionFocus> focus;            // rover-tower only
};

// Rolls out episodes and records the live critic's attention weights at
// every step. Writes one JSON line per episode header and per step to `out`.
inline InspectSummary inspect_attention(const EnvConfig& env_cfg, const Learner& learner,
                                        const RolloutOptions& opt, std::ostream* out) {
  const auto* critic = std::get_if<AttentionCritic>(&learner.critic());
  if (critic == nullptr) throw ConfigError("inspect-attention needs an attention-critic checkpoint");
  ParticleEnv env(env_cfg);
  InspectSummary summary;
  const std::size_t n = learner.agents();
  summary.mean_entropy.assign(n, std::vector<double>(critic->heads(), 0.0));
  if (env_cfg.task == Task::rover_tower) summary.focus = AttentionFocus{};
  std::size_t last_episode = std::numeric_limits<std::size_t>::max();

  evaluate(env_cfg, learner, opt,
           [&](std::size_t episode, const WorldState& state, const std::vector<Observation>& obs,
               const std::vector<int>& actions, const std::vector<double>&) {
             if (episode != last_episode) {
               last_episode = episode;
               if (out) {
                 nlohmann::json head{{"type", "episode"}, {"episode", episode}};
                 if (env_cfg.task == Task::rover_tower) {
                   nlohmann::json pairs = nlohmann::json::array();
                   for (std::size_t r = 0; r < state.rover_tower.size(); ++r)
                     pairs.push_back({{"rover", env.rover_agent(r)}, {"tower", state.rover_tower[r]}});
                   head["pairing"] = std::move(pairs);
                 }
                 *out << head.dump() << '\n';
               }
             }
             const auto pass = critic->forward(single_row_batch(learner.shapes(), obs, actions));
             const auto& trace = pass.trace;
             nlohmann::json agents = nlohmann::json::array();
             for (std::size_t i = 0; i < n; ++i) {
               nlohmann::json heads = nlohmann::json::array();
               nlohmann::json entropies = nlohmann::json::array();
               for (std::size_t h = 0; h < trace.weights[i].size(); ++h) {
                 const auto row = trace.weights[i][h].row(0);
                 double sum = 0.0;
                 for (double w : row) sum += w;
                 if (!row.empty())
                   summary.max_row_sum_error = std::max(summary.max_row_sum_error, std::abs(sum - 1.0));
                 const double ent = trace.entropy(i, h, 0);
                 summary.mean_entropy[i][h] += ent;
                 heads.push_back(std::vector<double>(row.begin(), row.end()));
                 entropies.push_back(ent);
               }
               agents.push_back({{"agent", i}, {"others", trace.others[i]}, {"weights", heads},
                                 {"entropy", entropies}});
             }
             if (summary.focus) score_attention_focus(trace, env, state, *summary.focus);
             ++summary.steps;
             if (out)
               *out << nlohmann::json{{"type", "step"}, {"episode", episode}, {"step", state.step_index},
                                      {"agents", agents}}.dump()
                    << '\n';
           });
  for (auto& a : summary.mean_entropy)
    for (double& e : a) e /= static_cast<double>(std::max<std::size_t>(summary.steps, 1));
  return summary;
}

// --- training ---------------------------------------------------------------------

struct TrainOptions {
  ConfigSource config;
  std::optional<std::string> out_dir;  // overrides run.output_dir
  std::optional<std::string> resume;   // checkpoint to resume from
  std::optional<std::string> export_csv;
  std::size_t threads = 1;
};

struct TrainOutcome {
  std::filesystem::path out_dir;
  std::vector<EpisodeMetrics> episodes;  // episodes produced by this invocation
  std::string final_checkpoint;
};

inline std::string checkpoint_name(std::size_t episodes) {
  std::ostringstream os;
  os << "episode_" << std::setw(7) << std::setfill('0') << episodes << ".ckpt";
  return os.str();
}

// Full training run. Throws ConfigError / CheckpointError / std::exception;
// cmd_train maps those onto exit codes.
inline TrainOutcome run_training(const TrainOptions& opt, std::ostream& log,
                                 const Trainer::Callback& on_episode = {}) {
  const ExperimentConfig cfg = resolve_config(opt.config);
  TrainOutcome outcome;
  outcome.out_dir = opt.out_dir ? *opt.out_dir : cfg.run.output_dir;
  const auto ckpt_dir = outcome.out_dir / "checkpoints";
  std::filesystem::create_directories(ckpt_dir);

  Trainer trainer(cfg.env_config(), cfg.train_config(), opt.threads);
  if (opt.resume) restore_trainer(load_checkpoint(*opt.resume), trainer);

  {
    nlohmann::json manifest;
    manifest["schema_version"] = 1;
    manifest["code_version"] = std::string(kVersion);
    manifest["seed"] = cfg.run.seed;
    manifest["config"] = dump_config(cfg);
    manifest["config_hash"] = config_hash(cfg);
    manifest["overrides"] = opt.config.overrides;
    manifest["threads"] = opt.threads;
    manifest["resumed_from"] = opt.resume ? nlohmann::json(*opt.resume) : nlohmann::json(nullptr);
    manifest["resumed_at_episode"] = trainer.progress().episodes_done;
    std::ofstream m(outcome.out_dir / "manifest.json");
    m << manifest.dump(2) << '\n';
    if (!m) throw std::runtime_error("cannot write run manifest");
  }

  const auto mode = opt.resume ? std::ios::app : std::ios::trunc;
  std::ofstream metrics(outcome.out_dir / "metrics.jsonl", mode);
  std::ofstream timing(outcome.out_dir / "timing.jsonl", mode);
  std::ofstream evals(outcome.out_dir / "eval.jsonl", mode);
  if (!metrics || !timing || !evals) throw std::runtime_error("cannot open metrics files in " + outcome.out_dir.string());

  const auto start = std::chrono::steady_clock::now();
  const std::size_t per_round = cfg.learner.num_envs;
  log << "training " << to_string(cfg.learner.algorithm) << " on " << to_string(cfg.env.task) << " for "
      << cfg.run.episodes << " episodes (seed " << cfg.run.seed << ")\n";

  trainer.train(cfg.run.episodes, [&](const EpisodeMetrics& m) {
    metrics << metrics_record(m, trainer.progress().update_blocks).dump() << '\n';
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    timing << nlohmann::json{{"episode", m.episode}, {"wall_clock_s", secs}}.dump() << '\n';
    if (on_episode) on_episode(m);
    outcome.episodes.push_back(m);

    const std::size_t done = m.episode + 1;
    const bool round_end = (m.env + 1 == per_round) || done == cfg.run.episodes;
    if (!round_end) return;
    // The crossing test handles intervals that are not multiples of num_envs.
    const auto crossed = [&](std::size_t interval) {
      return interval > 0 && done / interval != (done - m.env - 1) / interval;
    };
    if (crossed(cfg.run.checkpoint_interval) && done < cfg.run.episodes) {
      metrics.flush();
      write_file_bytes(ckpt_dir / checkpoint_name(done), encode_trainer(cfg, trainer));
    }
    if (crossed(cfg.run.eval_interval)) {
      RolloutOptions ro;
      ro.episodes = cfg.run.eval_episodes;
      ro.base_seed = cfg.run.seed + 1000003ULL;
      const auto s = evaluate(cfg.env_config(), trainer.learner(), ro);
      auto j = s.to_json();
      j["episode"] = done;
      evals << j.dump() << '\n';
      log << "episode " << done << ": eval mean " << s.mean << " +/- " << s.ci95 << '\n';
    }
  });

  metrics.flush();
  const auto final_path = ckpt_dir / "final.ckpt";
  write_file_bytes(final_path, encode_trainer(cfg, trainer));
  outcome.final_checkpoint = final_path.string();
  if (opt.export_csv) {
    metrics.close();
    export_metrics_csv(outcome.out_dir / "metrics.jsonl", *opt.export_csv);
  }
  log << "done: " << trainer.progress().episodes_done << " episodes, " << trainer.progress().env_steps
      << " steps, " << trainer.progress().update_blocks << " update blocks\n";
  return outcome;
}

// Maps exceptions onto exit codes and prints the message to `err`.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

inline int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    run_training(opt, out);
    return kExitOk;
  });
}

// --- eval / inspect share checkpoint loading ------------------------------------------

struct LoadedModel {
  ExperimentConfig cfg;
  std::unique_ptr<Learner> learner;
};

// Builds the model described by the (possibly user-supplied) config and loads
// the checkpoint into it. Shape disagreements surface as CheckpointError.
inline LoadedModel load_model(const std::string& checkpoint, const ConfigSource& src) {
  const Checkpoint c = load_checkpoint(checkpoint);
  LoadedModel m;
  m.cfg = resolve_config(src, checkpoint_config(c));
  const EnvConfig env = m.cfg.env_config();
  m.learner = std::make_unique<Learner>(agent_shapes(ParticleEnv(env)), m.cfg.train_config());
  restore_learner(c, *m.learner);
  return m;
}

struct EvalOptions {
  std::string checkpoint;
  ConfigSource config;
  std::optional<std::size_t> episodes;  // defaults to run.eval_episodes
  std::size_t seeds = 1;
  bool greedy = false;
  std::optional<std::string> dump_trajectory;
  std::optional<std::string> out;  // summary JSON file
};

inline int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    auto model = load_model(opt.checkpoint, opt.config);
    RolloutOptions ro;
    ro.episodes = opt.episodes.value_or(model.cfg.run.eval_episodes);
    ro.seeds = opt.seeds;
    ro.base_seed = model.cfg.run.seed;
    ro.greedy = opt.greedy;
    std::ofstream traj;
    StepObserver observer;
    if (opt.dump_trajectory) {
      traj.open(*opt.dump_trajectory);
      if (!traj) throw std::runtime_error("cannot write " + *opt.dump_trajectory);
      observer = [&](std::size_t episode, const WorldState& s, const std::vector<Observation>&,
                     const std::vector<int>& actions, const std::vector<double>& rewards) {
        auto rec = trajectory_record(s, actions, rewards);
        rec["episode"] = episode;
        traj << rec.dump() << '\n';
      };
    }
    const std::string before = parameter_hash(*model.learner);
    const auto summary = evaluate(model.cfg.env_config(), *model.learner, ro, observer);
    auto j = summary.to_json();
    j["seeds"] = ro.seeds;
    j["greedy"] = ro.greedy;
    j["parameter_hash"] = before;
    if (parameter_hash(*model.learner) != before) throw std::logic_error("evaluation changed the parameters");
    if (opt.out) {
      std::ofstream f(*opt.out);
      f << j.dump(2) << '\n';
    }
    out << std::fixed << std::setprecision(4) << "mean team reward " << summary.mean << " +/- " << summary.ci95
        << " (95% CI, " << summary.episodes << " episodes)\n";
    return kExitOk;
  });
}

struct InspectOptions {
  std::string checkpoint;
  ConfigSource config;
  std::size_t episodes = 1;
  std::string out = "attention.jsonl";
  bool greedy = false;
};

inline int cmd_inspect_attention(const InspectOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    auto model = load_model(opt.checkpoint, opt.config);
    if (!uses_attention(model.cfg.learner.algorithm))
      throw ConfigError("inspect-attention needs an attention-critic checkpoint, got " +
                        std::string(to_string(model.cfg.learner.algorithm)));
    std::ofstream f(opt.out);
    if (!f) throw std::runtime_error("cannot write " + opt.out);
    RolloutOptions ro;
    ro.episodes = opt.episodes;
    ro.base_seed = model.cfg.run.seed;
    ro.greedy = opt.greedy;
    const auto s = inspect_attention(model.cfg.env_config(), *model.learner, ro, &f);
    out << "wrote " << s.steps << " steps to " << opt.out << '\n';
    for (std::size_t i = 0; i < s.mean_entropy.size(); ++i) {
      out << "agent " << i << " mean entropy:";
      for (double e : s.mean_entropy[i]) out << ' ' << std::setprecision(4) << e;
      out << '\n';
    }
    if (s.focus)
      out << "paired tower attended most in " << std::setprecision(4) << 100.0 * s.focus->fraction()
          << "% of rover steps\n";
    return kExitOk;
  });
}

// --- scaling -------------------------------------------------------------------------

struct ScalingRow {
  Task task{};
  int count = 0;
  Algorithm algorithm{};
  double final_mean = 0.0;
  double normalized = 0.0;
  double observed_min = 0.0;
  double observed_max = 0.0;
  std::optional<double> pair_reward_lower;  // RT: bounds of one pair's episode reward
  std::optional<double> pair_reward_upper;
};

struct ScalingOptions {
  ConfigSource config;
  std::vector<int> counts;
  std::vector<Algorithm> algorithms{Algorithm::maac, Algorithm::maddpg_sac};
  std::size_t final_window = 100;
  std::size_t threads = 1;
  std::optional<std::string> out;  // CSV file
};

// Normalizes each row's final mean by the observed min/max of team episode
// rewards across all algorithms at that count.
inline void normalize_rows(std::vector<ScalingRow>& rows) {
  for (auto& r : rows) {
    const double range = r.observed_max - r.observed_min;
    r.normalized = range > 0.0 ? (r.final_mean - r.observed_min) / range : 0.0;
  }
}

inline std::vector<ScalingRow> run_scaling(const ScalingOptions& opt, std::ostream& log) {
  const ExperimentConfig base = resolve_config(opt.config);
  if (opt.counts.empty()) throw ConfigError("scaling: no agent counts given");
  std::vector<ScalingRow> rows;
  for (int count : opt.counts) {
    ExperimentConfig cfg = base;
    set_agent_count(cfg.env, count);
    cfg.validate();
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    const std::size_t first_row = rows.size();
    for (Algorithm algo : opt.algorithms) {
      cfg.learner.algorithm = algo;
      Trainer trainer(cfg.env_config(), cfg.train_config(), opt.threads);
      std::vector<double> team;
      trainer.train(cfg.run.episodes, [&](const EpisodeMetrics& m) { team.push_back(m.team_reward); });
      const std::size_t w = std::min(opt.final_window, team.size());
      ScalingRow row;
      row.task = cfg.env.task;
      row.count = count;
      row.algorithm = algo;
      row.final_mean = std::accumulate(team.end() - static_cast<std::ptrdiff_t>(w), team.end(), 0.0) /
                       static_cast<double>(w);
      for (double r : team) {
        lo = std::min(lo, r);
        hi = std::max(hi, r);
      }
      if (cfg.env.task == Task::rover_tower) {
        const ParticleEnv env(cfg.env_config());
        // Each pair's per-step reward lies in [floor, 0], independent of how
        // many pairs share the arena.
        row.pair_reward_lower = env.rover_tower_pair_reward_floor() * env.episode_length();
        row.pair_reward_upper = 0.0;
      }
      log << "count " << count << ' ' << to_string(algo) << ": final mean " << row.final_mean << '\n';
      rows.push_back(row);
    }
    for (std::size_t k = first_row; k < rows.size(); ++k) {
      rows[k].observed_min = lo;
      rows[k].observed_max = hi;
    }
  }
  normalize_rows(rows);
  return rows;
}

inline void write_scaling_csv(const std::vector<ScalingRow>& rows, std::ostream& out) {
  out << std::setprecision(17);
  out << "task,count,algorithm,final_mean,normalized,observed_min,observed_max,pair_reward_lower,"
         "pair_reward_upper\n";
  for (const auto& r : rows) {
    out << to_string(r.task) << ',' << r.count << ',' << to_string(r.algorithm) << ',' << r.final_mean << ','
        << r.normalized << ',' << r.observed_min << ',' << r.observed_max << ',';
    if (r.pair_reward_lower) out << *r.pair_reward_lower;
    out << ',';
    if (r.pair_reward_upper) out << *r.pair_reward_upper;
    out << '\n';
  }
}

inline int cmd_scaling(const ScalingOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto rows = run_scaling(opt, err);
    if (opt.out) {
      std::ofstream f(*opt.out);
      if (!f) throw std::runtime_error("cannot write " + *opt.out);
      write_scaling_csv(rows, f);
    }
    write_scaling_csv(rows, out);
    return kExitOk;
  });
}

inline int cmd_dump_config(const ConfigSource& src, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    out << dump_config(resolve_config(src));
    return kExitOk;
  });
}

}  // namespace maac
