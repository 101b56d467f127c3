#pragma once

// Checkpoint container:
//   8-byte magic "MAACCKPT"
//   u64 little-endian header length
//   JSON header (schema version, config hash, config text, counters, random
//   stream states, tensor directory)
//   raw little-endian f64 tensor payloads, in directory order
//
// Every ParamTensor contributes three directory entries (value, first and
// second Adam moments) so a resumed run continues with the same optimizer
// state. The replay buffer is not stored.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "maac/config.hpp"
#include "maac/learner.hpp"

namespace maac {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'M', 'A', 'A', 'C', 'C', 'K', 'P', 'T'};
inline constexpr int kCheckpointSchemaVersion = 1;

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[k])) << (8 * k);
  return v;
}

inline void put_reals(std::string& out, const Matrix& m) {
  for (double x : m.data()) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

inline void get_reals(const char* p, Matrix& m) {
  auto d = m.data();
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = std::bit_cast<double>(get_u64(p + 8 * k));
}

inline std::string rng_state(const Rng& r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

inline void set_rng_state(Rng& r, const std::string& s) {
  std::istringstream is(s);
  is >> r;
  if (!is) throw CheckpointError("corrupt random stream state");
}

}  // namespace detail

struct Checkpoint {
  nlohmann::json header;
  std::string payload;
};

// Serializes the learner (and, when given, the trainer's counters and random
// streams) into container bytes.
inline std::string encode_checkpoint(const ExperimentConfig& cfg, Learner& learner,
                                     const TrainProgress& progress = {},
                                     const std::vector<std::string>& rng_states = {}) {
  nlohmann::json header;
  header["schema_version"] = kCheckpointSchemaVersion;
  header["config_hash"] = config_hash(cfg);
  header["config"] = dump_config(cfg);
  header["algorithm"] = std::string(to_string(learner.config().algorithm));
  header["progress"] = {{"episodes_done", progress.episodes_done},
                        {"env_steps", progress.env_steps},
                        {"update_blocks", progress.update_blocks},
                        {"steps_since_update", progress.steps_since_update}};
  header["rng_states"] = rng_states;
  nlohmann::json directory = nlohmann::json::array();
  std::string payload;
  const auto add = [&](const std::string& name, const Matrix& m, std::int64_t steps) {
    directory.push_back({{"name", name},
                         {"rows", m.rows()},
                         {"cols", m.cols()},
                         {"offset", payload.size()},
                         {"adam_steps", steps}});
    detail::put_reals(payload, m);
  };
  learner.for_each_named_tensor([&](const std::string& name, ParamTensor& p) {
    add(name, p.value, p.step_count);
    add(name + "#adam_m", p.adam_m, p.step_count);
    add(name + "#adam_v", p.adam_v, p.step_count);
  });
  header["tensors"] = std::move(directory);

  const std::string text = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u64(out, text.size());
  out += text;
  out += payload;
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw CheckpointError("not a checkpoint file (bad magic)");
  const std::uint64_t header_len = detail::get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw CheckpointError("truncated checkpoint header");
  Checkpoint c;
  try {
    c.header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  if (c.header.value("schema_version", -1) != kCheckpointSchemaVersion)
    throw CheckpointError("unsupported checkpoint schema version");
  c.payload = bytes.substr(16 + header_len);
  for (const auto& t : c.header.at("tensors")) {
    const std::size_t need = t.at("offset").get<std::size_t>() +
                             8 * t.at("rows").get<std::size_t>() * t.at("cols").get<std::size_t>();
    if (need > c.payload.size()) throw CheckpointError("truncated checkpoint payload");
  }
  return c;
}

inline ExperimentConfig checkpoint_config(const Checkpoint& c) {
  return parse_config(c.header.at("config").get<std::string>(), "<checkpoint config>");
}

inline TrainProgress checkpoint_progress(const Checkpoint& c) {
  const auto& p = c.header.at("progress");
  TrainProgress out;
  out.episodes_done = p.at("episodes_done").get<std::size_t>();
  out.env_steps = p.at("env_steps").get<std::size_t>();
  out.update_blocks = p.at("update_blocks").get<std::size_t>();
  out.steps_since_update = p.at("steps_since_update").get<std::size_t>();
  return out;
}

inline bool checkpoint_uses_attention(const Checkpoint& c) {
  return uses_attention(parse_algorithm(c.header.at("algorithm").get<std::string>()));
}

// Loads tensors into a learner. Every learner tensor must be present with the
// same shape; anything else is a checkpoint/config mismatch.
inline void restore_learner(const Checkpoint& c, Learner& learner) {
  std::map<std::string, const nlohmann::json*> index;
  for (const auto& t : c.header.at("tensors")) index[t.at("name").get<std::string>()] = &t;
  std::size_t used = 0;
  const auto load = [&](const std::string& name, Matrix& m) -> std::int64_t {
    auto it = index.find(name);
    if (it == index.end()) throw CheckpointError("checkpoint/config mismatch: missing tensor " + name);
    const auto& t = *it->second;
    const auto rows = t.at("rows").get<std::size_t>();
    const auto cols = t.at("cols").get<std::size_t>();
    if (rows != m.rows() || cols != m.cols())
      throw CheckpointError("checkpoint/config mismatch: tensor " + name + " is " + std::to_string(rows) +
                            "x" + std::to_string(cols) + ", expected " + shape_str(m));
    detail::get_reals(c.payload.data() + t.at("offset").get<std::size_t>(), m);
    ++used;
    return t.at("adam_steps").get<std::int64_t>();
  };
  learner.for_each_named_tensor([&](const std::string& name, ParamTensor& p) {
    p.step_count = load(name, p.value);
    load(name + "#adam_m", p.adam_m);
    load(name + "#adam_v", p.adam_v);
    p.grad.set_zero();
  });
  if (used != index.size())
    throw CheckpointError("checkpoint/config mismatch: checkpoint has tensors the model does not");
}

inline std::vector<std::string> trainer_rng_states(Trainer& trainer) {
  std::vector<std::string> out{detail::rng_state(trainer.update_rng())};
  for (const auto& r : trainer.env_rngs()) out.push_back(detail::rng_state(r));
  return out;
}

inline std::string encode_trainer(const ExperimentConfig& cfg, Trainer& trainer) {
  return encode_checkpoint(cfg, trainer.learner(), trainer.progress(), trainer_rng_states(trainer));
}

// Restores parameters, optimizer state, counters and random streams.
inline void restore_trainer(const Checkpoint& c, Trainer& trainer) {
  restore_learner(c, trainer.learner());
  trainer.set_progress(checkpoint_progress(c));
  const auto states = c.header.at("rng_states").get<std::vector<std::string>>();
  if (states.empty()) return;
  if (states.size() != trainer.env_rngs().size() + 1)
    throw CheckpointError("checkpoint/config mismatch: environment count differs");
  detail::set_rng_state(trainer.update_rng(), states[0]);
  for (std::size_t e = 0; e < trainer.env_rngs().size(); ++e)
    detail::set_rng_state(trainer.env_rngs()[e], states[e + 1]);
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes through a temporary file and renames, so an interrupted write never
// leaves a truncated checkpoint behind.
inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

// Hash over all parameter values (live and target), used to verify that
// evaluation leaves the model untouched.
inline std::string parameter_hash(Learner& learner) {
  std::string bytes;
  learner.for_each_named_tensor([&](const std::string& name, ParamTensor& p) {
    bytes += name;
    detail::put_reals(bytes, p.value);
  });
  return hex64(fnv1a(bytes));
}

}  // namespace maac
