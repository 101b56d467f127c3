#pragma once

// Experiment configuration: a small TOML subset ([table] headers, key = value
// lines, '#' comments) mapped onto EnvConfig / TrainConfig / RunConfig through
// a field registry. The registry drives parsing, dotted-path overrides,
// canonical dumps and unknown-key rejection.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "maac/envsim.hpp"
#include "maac/learner.hpp"

namespace maac {

struct RunConfig {
  std::size_t episodes = 50000;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  std::size_t eval_interval = 0;  // episodes between evaluations; 0 disables
  std::size_t eval_episodes = 10;
  std::size_t checkpoint_interval = 1000;  // episodes between checkpoints; 0 disables
};

struct ExperimentConfig {
  EnvConfig env;
  TrainConfig learner;
  RunConfig run;

  void validate() const {
    env.validate();
    learner.validate();
    if (run.episodes == 0) throw ConfigError("run.episodes must be positive");
  }

  // TrainConfig with the run seed and episode length applied.
  TrainConfig train_config() const {
    TrainConfig t = learner;
    t.seed = run.seed;
    return t;
  }
  EnvConfig env_config() const {
    EnvConfig e = env;
    e.episode_length = static_cast<int>(learner.episode_length);
    return e;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Strips a trailing comment that is not inside a quoted string.
inline std::string strip_comment(std::string_view s) {
  bool quoted = false;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k] == '"') quoted = !quoted;
    if (s[k] == '#' && !quoted) return std::string(s.substr(0, k));
  }
  return std::string(s);
}

inline std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

template <class T>
T parse_number(const std::string& literal, const std::string& key) {
  T out{};
  const char* first = literal.data();
  const char* last = first + literal.size();
  if (!literal.empty() && literal.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last)
    throw ConfigError("invalid value '" + literal + "' for " + key);
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, ptr);
  if (s.find_first_of(".eE") == std::string::npos && s.find("inf") == std::string::npos &&
      s.find("nan") == std::string::npos)
    s += ".0";
  return s;
}

}  // namespace detail

struct ConfigField {
  std::string key;  // "table.name"
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  bool required = false;
};

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    const auto real = [&f](std::string key, auto member) {
      f.push_back({key,
                   [member, key](ExperimentConfig& c, const std::string& v) {
                     member(c) = detail::parse_number<double>(v, key);
                   },
                   [member](const ExperimentConfig& c) {
                     return detail::format_double(member(const_cast<ExperimentConfig&>(c)));
                   }});
    };
    const auto count = [&f](std::string key, auto member) {
      f.push_back({key,
                   [member, key](ExperimentConfig& c, const std::string& v) {
                     using T = std::decay_t<decltype(member(c))>;
                     const auto parsed = detail::parse_number<long long>(v, key);
                     if (parsed < 0) throw ConfigError(key + " must be non-negative");
                     member(c) = static_cast<T>(parsed);
                   },
                   [member](const ExperimentConfig& c) {
                     return std::to_string(member(const_cast<ExperimentConfig&>(c)));
                   }});
    };
    const auto text = [&f](std::string key, auto member) {
      f.push_back({key,
                   [member](ExperimentConfig& c, const std::string& v) {
                     member(c) = detail::unquote(v);
                   },
                   [member](const ExperimentConfig& c) {
                     return "\"" + member(const_cast<ExperimentConfig&>(c)) + "\"";
                   }});
    };

    f.push_back({"env.task",
                 [](ExperimentConfig& c, const std::string& v) { c.env.task = parse_task(detail::unquote(v)); },
                 [](const ExperimentConfig& c) { return "\"" + std::string(to_string(c.env.task)) + "\""; },
                 true});
    count("env.hunters", [](ExperimentConfig& c) -> int& { return c.env.hunters; });
    count("env.banks", [](ExperimentConfig& c) -> int& { return c.env.banks; });
    count("env.treasures", [](ExperimentConfig& c) -> int& { return c.env.treasures; });
    count("env.rovers", [](ExperimentConfig& c) -> int& { return c.env.rovers; });
    count("env.navigators", [](ExperimentConfig& c) -> int& { return c.env.navigators; });
    real("env.dt", [](ExperimentConfig& c) -> double& { return c.env.physics.dt; });
    real("env.damping", [](ExperimentConfig& c) -> double& { return c.env.physics.damping; });
    real("env.mass", [](ExperimentConfig& c) -> double& { return c.env.physics.mass; });
    real("env.force_gain", [](ExperimentConfig& c) -> double& { return c.env.physics.force_gain; });
    real("env.max_speed", [](ExperimentConfig& c) -> double& { return c.env.physics.max_speed; });
    real("env.arena_half_width",
         [](ExperimentConfig& c) -> double& { return c.env.physics.arena_half_width; });
    real("env.agent_radius", [](ExperimentConfig& c) -> double& { return c.env.physics.agent_radius; });
    real("env.large_radius", [](ExperimentConfig& c) -> double& { return c.env.physics.large_radius; });
    real("env.landmark_radius",
         [](ExperimentConfig& c) -> double& { return c.env.physics.landmark_radius; });
    real("env.contact_stiffness",
         [](ExperimentConfig& c) -> double& { return c.env.physics.contact_stiffness; });
    real("env.boundary_stiffness",
         [](ExperimentConfig& c) -> double& { return c.env.physics.boundary_stiffness; });
    real("env.reward_collect", [](ExperimentConfig& c) -> double& { return c.env.rewards.collect; });
    real("env.reward_deposit", [](ExperimentConfig& c) -> double& { return c.env.rewards.deposit; });
    real("env.reward_collide", [](ExperimentConfig& c) -> double& { return c.env.rewards.collide; });
    real("env.reward_navigation_collide",
         [](ExperimentConfig& c) -> double& { return c.env.rewards.navigation_collide; });

    f.push_back({"learner.algorithm",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.learner.algorithm = parse_algorithm(detail::unquote(v));
                 },
                 [](const ExperimentConfig& c) {
                   return "\"" + std::string(to_string(c.learner.algorithm)) + "\"";
                 }});
    real("learner.gamma", [](ExperimentConfig& c) -> double& { return c.learner.gamma; });
    real("learner.tau", [](ExperimentConfig& c) -> double& { return c.learner.tau; });
    real("learner.temperature", [](ExperimentConfig& c) -> double& { return c.learner.temperature; });
    real("learner.lr", [](ExperimentConfig& c) -> double& { return c.learner.lr; });
    count("learner.batch_size", [](ExperimentConfig& c) -> std::size_t& { return c.learner.batch_size; });
    count("learner.buffer_capacity",
          [](ExperimentConfig& c) -> std::size_t& { return c.learner.buffer_capacity; });
    count("learner.num_envs", [](ExperimentConfig& c) -> std::size_t& { return c.learner.num_envs; });
    count("learner.episode_length",
          [](ExperimentConfig& c) -> std::size_t& { return c.learner.episode_length; });
    count("learner.steps_per_update",
          [](ExperimentConfig& c) -> std::size_t& { return c.learner.steps_per_update; });
    count("learner.critic_updates",
          [](ExperimentConfig& c) -> std::size_t& { return c.learner.critic_updates; });
    count("learner.policy_updates",
          [](ExperimentConfig& c) -> std::size_t& { return c.learner.policy_updates; });
    count("learner.heads", [](ExperimentConfig& c) -> std::size_t& { return c.learner.heads; });
    count("learner.hidden", [](ExperimentConfig& c) -> std::size_t& { return c.learner.hidden; });
    real("learner.gumbel_temperature",
         [](ExperimentConfig& c) -> double& { return c.learner.gumbel_temperature; });

    count("run.episodes", [](ExperimentConfig& c) -> std::size_t& { return c.run.episodes; });
    count("run.seed", [](ExperimentConfig& c) -> std::uint64_t& { return c.run.seed; });
    text("run.output_dir", [](ExperimentConfig& c) -> std::string& { return c.run.output_dir; });
    count("run.eval_interval", [](ExperimentConfig& c) -> std::size_t& { return c.run.eval_interval; });
    count("run.eval_episodes", [](ExperimentConfig& c) -> std::size_t& { return c.run.eval_episodes; });
    count("run.checkpoint_interval",
          [](ExperimentConfig& c) -> std::size_t& { return c.run.checkpoint_interval; });
    return f;
  }();
  return fields;
}

inline const ConfigField* find_field(std::string_view key) {
  for (const auto& f : config_fields())
    if (f.key == key) return &f;
  return nullptr;
}

// Applies `key=value` (dotted path). Throws ConfigError on unknown keys.
inline void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  const std::string key = detail::trim(assignment.substr(0, eq));
  const std::string value = detail::trim(assignment.substr(eq + 1));
  const ConfigField* f = find_field(key);
  if (f == nullptr) throw ConfigError("override: unknown key '" + key + "'");
  try {
    f->set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("override: ") + e.what());
  }
}

// Parses config text. `source` names the file in error messages
// ("file:line: message").
inline ExperimentConfig parse_config(std::string_view text, const std::string& source = "<config>") {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::string table;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  const auto fail = [&](const std::string& msg) {
    throw ConfigError(source + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("malformed table header");
      table = detail::trim(std::string_view(line).substr(1, line.size() - 2));
      if (table != "env" && table != "learner" && table != "run") fail("unknown table '" + table + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    std::string key = detail::trim(std::string_view(line).substr(0, eq));
    const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
    if (value.empty()) fail("missing value for '" + key + "'");
    if (key.find('.') == std::string::npos) {
      if (table.empty()) fail("key '" + key + "' outside of a table");
      key = table + "." + key;
    }
    const ConfigField* f = find_field(key);
    if (f == nullptr) fail("unknown key '" + key + "'");
    if (!seen.insert(key).second) fail("duplicate key '" + key + "'");
    try {
      f->set(cfg, value);
    } catch (const ConfigError& e) {
      fail(e.what());
    }
  }
  for (const auto& f : config_fields())
    if (f.required && !seen.contains(f.key))
      throw ConfigError(source + ": missing required field '" + f.key + "'");
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

// Canonical text form; parse_config(dump_config(c)) reproduces c.
inline std::string dump_config(const ExperimentConfig& cfg) {
  std::string out;
  std::string table;
  for (const auto& f : config_fields()) {
    const auto dot = f.key.find('.');
    const std::string t = f.key.substr(0, dot);
    if (t != table) {
      if (!table.empty()) out += "\n";
      out += "[" + t + "]\n";
      table = t;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int k = 15; k >= 0; --k, v >>= 4) s[static_cast<std::size_t>(k)] = digits[v & 0xf];
  return s;
}

inline std::string config_hash(const ExperimentConfig& cfg) { return hex64(fnv1a(dump_config(cfg))); }

// Default configuration for a task with the task's stock agent counts.
inline ExperimentConfig default_config(Task task) {
  ExperimentConfig c;
  c.env.task = task;
  return c;
}

// Sets the total agent count for scaling studies. CTC keeps its banks and
// uses one treasure per hunter; RT splits the count into rover/tower pairs;
// CN uses one landmark per agent.
inline void set_agent_count(EnvConfig& env, int total) {
  switch (env.task) {
    case Task::treasure_collection:
      if (total <= env.banks) throw ConfigError("agent count too small for the bank count");
      env.hunters = total - env.banks;
      env.treasures = env.hunters;
      break;
    case Task::rover_tower:
      if (total < 2 || total % 2 != 0) throw ConfigError("rover-tower needs an even agent count");
      env.rovers = total / 2;
      break;
    case Task::cooperative_navigation:
      if (total < 1) throw ConfigError("agent count must be positive");
      env.navigators = total;
      break;
  }
}

}  // namespace maac
