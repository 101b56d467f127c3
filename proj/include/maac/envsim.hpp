#pragma once

// 2-D particle world with three multi-agent tasks: cooperative treasure
// collection, rover-tower and cooperative navigation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "maac/numcore.hpp"

namespace maac {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ActionError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2& operator+=(Vec2 o) noexcept {
    x += o.x;
    y += o.y;
    return *this;
  }
  friend Vec2 operator+(Vec2 a, Vec2 b) noexcept { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) noexcept { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) noexcept { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
  double norm() const noexcept { return std::hypot(x, y); }
};

enum class Task { treasure_collection, rover_tower, cooperative_navigation };
enum class EntityKind { hunter, bank, rover, tower, landmark, treasure, generic_agent };

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::treasure_collection: return "treasure_collection";
    case Task::rover_tower: return "rover_tower";
    case Task::cooperative_navigation: return "cooperative_navigation";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  if (s == "treasure_collection" || s == "ctc") return Task::treasure_collection;
  if (s == "rover_tower" || s == "rt") return Task::rover_tower;
  if (s == "cooperative_navigation" || s == "cn") return Task::cooperative_navigation;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

inline std::string_view to_string(EntityKind k) {
  switch (k) {
    case EntityKind::hunter: return "hunter";
    case EntityKind::bank: return "bank";
    case EntityKind::rover: return "rover";
    case EntityKind::tower: return "tower";
    case EntityKind::landmark: return "landmark";
    case EntityKind::treasure: return "treasure";
    case EntityKind::generic_agent: return "agent";
  }
  return "?";
}

struct PhysicsConfig {
  double dt = 0.1;
  double damping = 0.25;
  double mass = 1.0;
  double force_gain = 5.0;
  double max_speed = 1.0;
  double arena_half_width = 1.0;
  double agent_radius = 0.05;
  double large_radius = 0.08;  // banks and towers
  double landmark_radius = 0.05;
  double contact_stiffness = 100.0;
  double boundary_stiffness = 10.0;
};

struct RewardConfig {
  double collect = 5.0;
  double deposit = 5.0;
  double collide = 1.0;
  double navigation_collide = 1.0;
};

struct EnvConfig {
  Task task = Task::rover_tower;
  int hunters = 6;
  int banks = 2;
  int treasures = 6;
  int rovers = 4;  // towers == rovers
  int navigators = 3;  // landmarks == navigators
  int episode_length = 100;
  PhysicsConfig physics;
  RewardConfig rewards;

  void validate() const {
    const auto positive = [](int v, const char* what) {
      if (v <= 0) throw ConfigError(std::string("env.") + what + " must be positive");
    };
    positive(episode_length, "episode_length");
    switch (task) {
      case Task::treasure_collection:
        positive(hunters, "hunters");
        positive(banks, "banks");
        positive(treasures, "treasures");
        break;
      case Task::rover_tower: positive(rovers, "rovers"); break;
      case Task::cooperative_navigation: positive(navigators, "navigators"); break;
    }
    const auto& p = physics;
    if (!(p.dt > 0 && p.mass > 0 && p.max_speed > 0 && p.arena_half_width > 0 &&
          p.agent_radius > 0 && p.large_radius > 0 && p.landmark_radius > 0))
      throw ConfigError("env physics constants must be positive");
    if (!(p.damping >= 0 && p.damping < 1)) throw ConfigError("env.damping must lie in [0,1)");
  }
};

struct EntitySpec {
  std::size_t id = 0;
  EntityKind kind = EntityKind::generic_agent;
  double radius = 0.05;
  bool movable = false;
  bool collide = false;
  int color_tag = 0;
};

// Global state; index order follows ParticleEnv::entities().
struct WorldState {
  std::vector<Vec2> positions;
  std::vector<Vec2> velocities;
  std::vector<int> rover_tower;    // RT: rover -> paired tower (agent index)
  std::vector<int> rover_goal;     // RT: rover -> goal landmark (entity index)
  std::vector<int> last_message;   // RT: per rover, -1 before any message
  std::vector<bool> treasure_alive;  // CTC
  std::vector<int> carrying;       // CTC: per agent, -1 or carried colour
  int step_index = 0;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

using Observation = std::vector<double>;

struct StepResult {
  std::vector<Observation> observations;
  std::vector<double> rewards;
  WorldState next_state;
};

struct ResetResult {
  WorldState state;
  std::vector<Observation> observations;
};

inline constexpr int kMoveActions = 5;  // up, down, left, right, stay
inline constexpr int kMessageCount = 5;

enum MoveAction : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4 };

inline Vec2 move_direction(int action) {
  switch (action) {
    case kUp: return {0.0, 1.0};
    case kDown: return {0.0, -1.0};
    case kLeft: return {-1.0, 0.0};
    case kRight: return {1.0, 0.0};
    default: return {0.0, 0.0};
  }
}

// Contact and boundary forces acting on each entity (zero for immovable ones).
inline std::vector<Vec2> environment_forces(std::span<const EntitySpec> entities,
                                            std::span<const Vec2> positions,
                                            const PhysicsConfig& cfg) {
  std::vector<Vec2> forces(entities.size());
  for (std::size_t a = 0; a < entities.size(); ++a) {
    if (!entities[a].collide) continue;
    for (std::size_t b = a + 1; b < entities.size(); ++b) {
      if (!entities[b].collide) continue;
      if (!entities[a].movable && !entities[b].movable) continue;
      const Vec2 delta = positions[a] - positions[b];
      const double dist = delta.norm();
      const double overlap = entities[a].radius + entities[b].radius - dist;
      if (overlap <= 0.0 || dist == 0.0) continue;
      const Vec2 push = (cfg.contact_stiffness * overlap / dist) * delta;
      if (entities[a].movable) forces[a] += push;
      if (entities[b].movable) forces[b] += -1.0 * push;
    }
  }
  const double edge = cfg.arena_half_width;
  for (std::size_t a = 0; a < entities.size(); ++a) {
    if (!entities[a].movable) continue;
    const auto inward = [&](double p) {
      if (p > edge) return -cfg.boundary_stiffness * (p - edge);
      if (p < -edge) return cfg.boundary_stiffness * (-edge - p);
      return 0.0;
    };
    forces[a] += Vec2{inward(positions[a].x), inward(positions[a].y)};
  }
  return forces;
}

// Integrates one step. `action_forces` holds the controlled force per entity.
inline void physics_step(std::span<const EntitySpec> entities, std::vector<Vec2>& positions,
                         std::vector<Vec2>& velocities, std::span<const Vec2> action_forces,
                         const PhysicsConfig& cfg) {
  const std::vector<Vec2> contact = environment_forces(entities, positions, cfg);
  for (std::size_t a = 0; a < entities.size(); ++a) {
    if (!entities[a].movable) {
      velocities[a] = {};
      continue;
    }
    const Vec2 force = action_forces[a] + contact[a];
    Vec2 v = (1.0 - cfg.damping) * velocities[a] + (cfg.dt / cfg.mass) * force;
    const double speed = v.norm();
    if (speed > cfg.max_speed) v = (cfg.max_speed / speed) * v;
    velocities[a] = v;
    positions[a] += cfg.dt * v;
  }
}

class ParticleEnv {
 public:
  explicit ParticleEnv(EnvConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_entities();
  }

  const EnvConfig& config() const noexcept { return cfg_; }
  const std::vector<EntitySpec>& entities() const noexcept { return entities_; }
  std::size_t num_agents() const noexcept { return num_agents_; }
  std::size_t obs_dim(std::size_t agent) const { return obs_dims_.at(agent); }
  std::size_t action_count(std::size_t) const noexcept { return kMoveActions; }
  const std::vector<std::size_t>& obs_dims() const noexcept { return obs_dims_; }
  std::vector<std::size_t> action_counts() const {
    return std::vector<std::size_t>(num_agents_, kMoveActions);
  }
  int episode_length() const noexcept { return cfg_.episode_length; }

  // Agent index ranges for the rover-tower task.
  std::size_t rover_agent(std::size_t k) const noexcept { return k; }
  std::size_t tower_agent(std::size_t k) const noexcept {
    return static_cast<std::size_t>(cfg_.rovers) + k;
  }
  std::size_t goal_entity(std::size_t k) const noexcept {
    return 2 * static_cast<std::size_t>(cfg_.rovers) + k;
  }

  ResetResult reset(std::uint64_t seed) {
    rng_.seed(seed);
    WorldState s;
    const std::size_t n = entities_.size();
    s.positions.resize(n);
    s.velocities.assign(n, Vec2{});
    for (std::size_t e = 0; e < n; ++e) s.positions[e] = random_position();
    if (cfg_.task == Task::rover_tower) {
      const auto k = static_cast<std::size_t>(cfg_.rovers);
      std::vector<int> perm(k);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = k; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(perm[i - 1], perm[pick(rng_)]);
      }
      s.rover_tower.resize(k);
      s.rover_goal.resize(k);
      for (std::size_t r = 0; r < k; ++r) {
        s.rover_tower[r] = static_cast<int>(tower_agent(static_cast<std::size_t>(perm[r])));
        s.rover_goal[r] = static_cast<int>(goal_entity(r));
      }
      s.last_message.assign(k, -1);
    }
    if (cfg_.task == Task::treasure_collection) {
      s.treasure_alive.assign(static_cast<std::size_t>(cfg_.treasures), true);
      s.carrying.assign(num_agents_, -1);
    }
    s.step_index = 0;
    ResetResult out{s, {}};
    out.observations = observe_all(out.state);
    return out;
  }

  StepResult step(const WorldState& state, std::span<const int> actions) {
    if (state.step_index >= cfg_.episode_length)
      throw ActionError("step: episode already finished");
    if (actions.size() != num_agents_) throw ActionError("step: expected one action per agent");
    for (std::size_t i = 0; i < num_agents_; ++i)
      if (actions[i] < 0 || actions[i] >= static_cast<int>(action_count(i)))
        throw ActionError("step: action " + std::to_string(actions[i]) + " out of range for agent " +
                          std::to_string(i));

    StepResult out;
    WorldState& next = out.next_state;
    next = state;

    std::vector<Vec2> forces(entities_.size());
    for (std::size_t i = 0; i < num_agents_; ++i) {
      if (!entities_[i].movable) continue;
      forces[i] = cfg_.physics.force_gain * move_direction(actions[i]);
    }
    if (cfg_.task == Task::rover_tower) {
      const auto k = static_cast<std::size_t>(cfg_.rovers);
      for (std::size_t r = 0; r < k; ++r) {
        next.last_message[r] = actions[static_cast<std::size_t>(state.rover_tower[r])];
      }
    }
    physics_step(entities_, next.positions, next.velocities, forces, cfg_.physics);
    out.rewards = apply_task_events(next);
    ++next.step_index;
    out.observations = observe_all(next);
    return out;
  }

  Observation observe(const WorldState& s, std::size_t agent) const {
    if (agent >= num_agents_) throw DimensionError("observe: invalid agent index");
    Observation o;
    const auto push = [&o](Vec2 v) {
      o.push_back(v.x);
      o.push_back(v.y);
    };
    const Vec2 self = s.positions[agent];
    switch (cfg_.task) {
      case Task::treasure_collection: {
        const auto colours = static_cast<std::size_t>(cfg_.banks);
        push(self);
        push(s.velocities[agent]);
        append_role_tag(o, agent);
        append_colour(o, s.carrying[agent], colours);
        for (std::size_t j = 0; j < num_agents_; ++j) {
          if (j == agent) continue;
          push(s.positions[j] - self);
          append_role_tag(o, j);
        }
        for (std::size_t t = 0; t < static_cast<std::size_t>(cfg_.treasures); ++t) {
          const std::size_t e = treasure_entity(t);
          if (s.treasure_alive[t]) {
            push(s.positions[e] - self);
            append_colour(o, entities_[e].color_tag, colours);
          } else {
            o.insert(o.end(), 2 + colours, 0.0);
          }
        }
        break;
      }
      case Task::rover_tower: {
        const auto k = static_cast<std::size_t>(cfg_.rovers);
        if (agent < k) {
          push(s.velocities[agent]);
          append_colour(o, s.last_message[agent], kMessageCount);
        } else {
          const std::size_t rover = paired_rover(s, agent);
          push(s.positions[rover] - self);
          push(s.positions[static_cast<std::size_t>(s.rover_goal[rover])] - self);
        }
        break;
      }
      case Task::cooperative_navigation: {
        const auto m = static_cast<std::size_t>(cfg_.navigators);
        push(self);
        push(s.velocities[agent]);
        for (std::size_t l = 0; l < m; ++l) push(s.positions[m + l] - self);
        for (std::size_t j = 0; j < m; ++j)
          if (j != agent) push(s.positions[j] - self);
        break;
      }
    }
    return o;
  }

  std::vector<Observation> observe_all(const WorldState& s) const {
    std::vector<Observation> obs(num_agents_);
    for (std::size_t i = 0; i < num_agents_; ++i) obs[i] = observe(s, i);
    return obs;
  }

  std::size_t paired_rover(const WorldState& s, std::size_t tower) const {
    for (std::size_t r = 0; r < s.rover_tower.size(); ++r)
      if (static_cast<std::size_t>(s.rover_tower[r]) == tower) return r;
    throw std::logic_error("paired_rover: tower has no rover");
  }

  std::size_t treasure_entity(std::size_t t) const noexcept {
    return num_agents_ + t;
  }

  // Worst per-step reward a rover-tower pair can receive while the rover
  // stays inside the arena (the arena diagonal).
  double rover_tower_pair_reward_floor() const noexcept {
    return -2.0 * std::sqrt(2.0) * cfg_.physics.arena_half_width;
  }

 private:
  bool overlapping(const WorldState& s, std::size_t a, std::size_t b) const {
    return (s.positions[a] - s.positions[b]).norm() < entities_[a].radius + entities_[b].radius;
  }

  Vec2 random_position() {
    std::uniform_real_distribution<double> u(-cfg_.physics.arena_half_width,
                                             cfg_.physics.arena_half_width);
    const double x = u(rng_);
    const double y = u(rng_);
    return {x, y};
  }

  void append_role_tag(Observation& o, std::size_t agent) const {
    // hunter, then one slot per bank colour
    const auto colours = static_cast<std::size_t>(cfg_.banks);
    std::vector<double> tag(colours + 1, 0.0);
    if (entities_[agent].kind == EntityKind::hunter) tag[0] = 1.0;
    else tag[1 + static_cast<std::size_t>(entities_[agent].color_tag)] = 1.0;
    o.insert(o.end(), tag.begin(), tag.end());
  }

  static void append_colour(Observation& o, int colour, std::size_t width) {
    const std::size_t start = o.size();
    o.insert(o.end(), width, 0.0);
    if (colour >= 0) o[start + static_cast<std::size_t>(colour)] = 1.0;
  }

  std::vector<double> apply_task_events(WorldState& s) {
    std::vector<double> r(num_agents_, 0.0);
    switch (cfg_.task) {
      case Task::rover_tower: {
        for (std::size_t k = 0; k < s.rover_tower.size(); ++k) {
          const double d =
              (s.positions[k] - s.positions[static_cast<std::size_t>(s.rover_goal[k])]).norm();
          r[k] = -d;
          r[static_cast<std::size_t>(s.rover_tower[k])] = -d;
        }
        break;
      }
      case Task::treasure_collection: {
        const auto hunters = static_cast<std::size_t>(cfg_.hunters);
        const auto& rw = cfg_.rewards;
        std::size_t collected = 0, deposited = 0;
        for (std::size_t h = 0; h < hunters; ++h) {
          if (s.carrying[h] >= 0) {
            for (std::size_t b = hunters; b < num_agents_; ++b) {
              if (entities_[b].color_tag == s.carrying[h] && overlapping(s, h, b)) {
                s.carrying[h] = -1;
                ++deposited;
                break;
              }
            }
          } else {
            for (std::size_t t = 0; t < static_cast<std::size_t>(cfg_.treasures); ++t) {
              const std::size_t e = treasure_entity(t);
              if (s.treasure_alive[t] && overlapping(s, h, e)) {
                s.carrying[h] = entities_[e].color_tag;
                s.positions[e] = random_position();  // respawn immediately
                s.treasure_alive[t] = true;
                ++collected;
                break;
              }
            }
          }
        }
        for (std::size_t h = 0; h < hunters; ++h) r[h] += rw.collect * static_cast<double>(collected);
        for (std::size_t i = 0; i < num_agents_; ++i)
          r[i] += rw.deposit * static_cast<double>(deposited);
        for (std::size_t a = 0; a < hunters; ++a)
          for (std::size_t b = a + 1; b < hunters; ++b)
            if (overlapping(s, a, b)) {
              r[a] -= rw.collide;
              r[b] -= rw.collide;
            }
        break;
      }
      case Task::cooperative_navigation: {
        const auto m = static_cast<std::size_t>(cfg_.navigators);
        double shared = 0.0;
        for (std::size_t l = 0; l < m; ++l) {
          double best = std::numeric_limits<double>::infinity();
          for (std::size_t a = 0; a < m; ++a)
            best = std::min(best, (s.positions[m + l] - s.positions[a]).norm());
          shared -= best;
        }
        for (std::size_t a = 0; a < m; ++a) {
          r[a] = shared;
          for (std::size_t b = 0; b < m; ++b)
            if (b != a && overlapping(s, a, b)) r[a] -= cfg_.rewards.navigation_collide;
        }
        break;
      }
    }
    return r;
  }

  void build_entities() {
    const auto& p = cfg_.physics;
    const auto add = [this](EntityKind kind, double radius, bool movable, bool collide, int colour) {
      entities_.push_back({entities_.size(), kind, radius, movable, collide, colour});
    };
    switch (cfg_.task) {
      case Task::treasure_collection:
        for (int h = 0; h < cfg_.hunters; ++h) add(EntityKind::hunter, p.agent_radius, true, true, 0);
        for (int b = 0; b < cfg_.banks; ++b) add(EntityKind::bank, p.large_radius, true, true, b);
        num_agents_ = entities_.size();
        for (int t = 0; t < cfg_.treasures; ++t)
          add(EntityKind::treasure, p.landmark_radius, false, false, t % cfg_.banks);
        break;
      case Task::rover_tower:
        for (int k = 0; k < cfg_.rovers; ++k) add(EntityKind::rover, p.agent_radius, true, true, k);
        for (int k = 0; k < cfg_.rovers; ++k) add(EntityKind::tower, p.large_radius, false, false, k);
        num_agents_ = entities_.size();
        for (int k = 0; k < cfg_.rovers; ++k)
          add(EntityKind::landmark, p.landmark_radius, false, false, k);
        break;
      case Task::cooperative_navigation:
        for (int a = 0; a < cfg_.navigators; ++a)
          add(EntityKind::generic_agent, p.agent_radius, true, true, 0);
        num_agents_ = entities_.size();
        for (int l = 0; l < cfg_.navigators; ++l)
          add(EntityKind::landmark, p.landmark_radius, false, false, l);
        break;
    }
    // Observation widths follow from a probe state.
    WorldState probe;
    probe.positions.assign(entities_.size(), Vec2{});
    probe.velocities.assign(entities_.size(), Vec2{});
    if (cfg_.task == Task::rover_tower) {
      const auto k = static_cast<std::size_t>(cfg_.rovers);
      for (std::size_t r = 0; r < k; ++r) {
        probe.rover_tower.push_back(static_cast<int>(tower_agent(r)));
        probe.rover_goal.push_back(static_cast<int>(goal_entity(r)));
      }
      probe.last_message.assign(k, -1);
    }
    if (cfg_.task == Task::treasure_collection) {
      probe.treasure_alive.assign(static_cast<std::size_t>(cfg_.treasures), true);
      probe.carrying.assign(num_agents_, -1);
    }
    obs_dims_.clear();
    for (std::size_t i = 0; i < num_agents_; ++i) obs_dims_.push_back(observe(probe, i).size());
  }

  EnvConfig cfg_;
  std::vector<EntitySpec> entities_;
  std::size_t num_agents_ = 0;
  std::vector<std::size_t> obs_dims_;
  Rng rng_{0};
};

// One JSON line of a trajectory dump.
inline nlohmann::json trajectory_record(const WorldState& s, std::span<const int> actions,
                                        std::span<const double> rewards) {
  nlohmann::json pos = nlohmann::json::array(), vel = nlohmann::json::array();
  for (const Vec2& p : s.positions) pos.push_back({p.x, p.y});
  for (const Vec2& v : s.velocities) vel.push_back({v.x, v.y});
  nlohmann::json j;
  j["step"] = s.step_index;
  j["positions"] = pos;
  j["velocities"] = vel;
  j["actions"] = std::vector<int>(actions.begin(), actions.end());
  j["rewards"] = std::vector<double>(rewards.begin(), rewards.end());
  if (!s.rover_tower.empty()) j["rover_tower"] = s.rover_tower;
  if (!s.carrying.empty()) j["carrying"] = s.carrying;
  return j;
}

}  // namespace maac
