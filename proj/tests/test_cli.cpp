#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "maac/experiment.hpp"

using namespace maac;
namespace fs = std::filesystem;

namespace {

const char* kTinyRt = R"(# small rover-tower run
[env]
task = "rover_tower"
rovers = 2

[learner]
algorithm = "maac"
hidden = 8
heads = 2
batch_size = 16
num_envs = 2
episode_length = 10
steps_per_update = 4
critic_updates = 1
policy_updates = 1

[run]
episodes = 6
seed = 4
checkpoint_interval = 4
)";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("maac_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    unsetenv("MAAC_SEED");
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) const {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  // Trains the tiny config with extra overrides into `out`.
  TrainOutcome train(const std::string& out, std::vector<std::string> overrides = {},
                     std::optional<std::string> resume = std::nullopt) const {
    TrainOptions opt;
    opt.config.path = (dir_ / "tiny.toml").string();
    opt.config.overrides = std::move(overrides);
    opt.out_dir = (dir_ / out).string();
    opt.resume = std::move(resume);
    std::ostringstream log;
    return run_training(opt, log);
  }

  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MAAC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text, "exp.toml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ConfigParsing, ErrorsNameTheSourceLine) {
  EXPECT_EQ(config_error("[env]\ntask = \"rover_tower\"\nbogus = 3\n"), "exp.toml:3: unknown key 'env.bogus'");
  EXPECT_NE(config_error("[env]\ntask = \"rover_tower\"\n[nope]\n").find("exp.toml:3"), std::string::npos);
  EXPECT_NE(config_error("[env]\ntask = \"rover_tower\"\nrovers = 2\nrovers = 3\n").find("exp.toml:4"),
            std::string::npos);
  EXPECT_NE(config_error("[env]\ntask = \"rover_tower\"\nrovers =\n").find("exp.toml:3"), std::string::npos);
  EXPECT_NE(config_error("[learner]\ngamma = 0.9\n").find("env.task"), std::string::npos);
  EXPECT_NE(config_error("[env]\ntask = \"rover_tower\"\n[learner]\ngamma = abc\n").find("exp.toml:4"),
            std::string::npos);
}

TEST(ConfigParsing, OverridesApplyAndRejectUnknownKeys) {
  ExperimentConfig cfg = parse_config(kTinyRt);
  apply_override(cfg, "learner.gamma=0.5");
  apply_override(cfg, "env.rovers=3");
  EXPECT_EQ(cfg.learner.gamma, 0.5);
  EXPECT_EQ(cfg.env.rovers, 3);
  EXPECT_THROW(apply_override(cfg, "learner.nope=1"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "no_equals_sign"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "learner.algorithm=ppo"), ConfigError);
}

TEST(ConfigParsing, DumpRoundTripsForShippedConfigs) {
  for (const auto& entry : fs::directory_iterator(MAAC_CONFIG_DIR)) {
    if (entry.path().extension() != ".toml") continue;
    const ExperimentConfig cfg = load_config(entry.path().string());
    const std::string text = dump_config(cfg);
    EXPECT_EQ(dump_config(parse_config(text)), text) << entry.path();
    EXPECT_EQ(config_hash(parse_config(text)), config_hash(cfg));
  }
  ExperimentConfig a = parse_config(kTinyRt), b = a;
  b.learner.tau = 0.0051;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST_F(CliTest, SeedPrecedence) {
  const auto path = write("tiny.toml", kTinyRt);
  ConfigSource src;
  src.path = path.string();
  src.overrides = {"run.seed=7"};
  EXPECT_EQ(resolve_config(src).run.seed, 7u);
  setenv("MAAC_SEED", "11", 1);
  EXPECT_EQ(resolve_config(src).run.seed, 11u);
  src.seed = 13;
  EXPECT_EQ(resolve_config(src).run.seed, 13u);
  unsetenv("MAAC_SEED");
}

TEST(ScalingCounts, AgentCountsMapOntoTasks) {
  EnvConfig env;
  env.task = Task::rover_tower;
  set_agent_count(env, 8);
  EXPECT_EQ(env.rovers, 4);
  EXPECT_THROW(set_agent_count(env, 7), ConfigError);
  env.task = Task::treasure_collection;
  set_agent_count(env, 8);
  EXPECT_EQ(env.hunters + env.banks, 8);
  env.task = Task::cooperative_navigation;
  set_agent_count(env, 5);
  EXPECT_EQ(env.navigators, 5);
}

TEST_F(CliTest, TrainingWritesRunArtifactsDeterministically) {
  write("tiny.toml", kTinyRt);
  const auto a = train("a", {"learner.gamma=0.95"});
  const auto b = train("b", {"learner.gamma=0.95"});
  EXPECT_EQ(a.episodes.size(), 6u);
  const std::string ma = slurp(dir_ / "a" / "metrics.jsonl");
  EXPECT_FALSE(ma.empty());
  EXPECT_EQ(ma, slurp(dir_ / "b" / "metrics.jsonl"));

  const auto records = read_jsonl(dir_ / "a" / "metrics.jsonl");
  ASSERT_EQ(records.size(), 6u);
  for (std::size_t k = 0; k < records.size(); ++k) {
    EXPECT_EQ(records[k]["episode"], k);
    EXPECT_EQ(records[k]["schema_version"], 1);
    EXPECT_EQ(records[k]["agent_rewards"].size(), 4u);
  }
  EXPECT_EQ(read_jsonl(dir_ / "a" / "timing.jsonl").size(), 6u);

  const auto manifest = nlohmann::json::parse(slurp(dir_ / "a" / "manifest.json"));
  EXPECT_EQ(manifest["overrides"], nlohmann::json::array({"learner.gamma=0.95"}));
  EXPECT_EQ(manifest["seed"], 4);
  const ExperimentConfig echoed = parse_config(manifest["config"].get<std::string>());
  EXPECT_EQ(echoed.learner.gamma, 0.95);
  EXPECT_EQ(manifest["config_hash"], config_hash(echoed));

  EXPECT_TRUE(fs::exists(dir_ / "a" / "checkpoints" / "episode_0000004.ckpt"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "checkpoints" / "final.ckpt"));
}

TEST_F(CliTest, CheckpointRoundTripIsByteIdentical) {
  write("tiny.toml", kTinyRt);
  const auto run = train("run");
  const std::string bytes = slurp(run.final_checkpoint);
  const Checkpoint c = decode_checkpoint(bytes);
  const ExperimentConfig cfg = checkpoint_config(c);
  Trainer trainer(cfg.env_config(), cfg.train_config());
  restore_trainer(c, trainer);
  EXPECT_EQ(encode_trainer(cfg, trainer), bytes);
  EXPECT_EQ(trainer.progress().episodes_done, 6u);
}

TEST_F(CliTest, CheckpointErrors) {
  write("tiny.toml", kTinyRt);
  const auto run = train("run");
  const std::string bytes = slurp(run.final_checkpoint);
  const Checkpoint c = decode_checkpoint(bytes);

  ExperimentConfig wider = checkpoint_config(c);
  wider.learner.hidden = 16;
  Learner other(agent_shapes(ParticleEnv(wider.env_config())), wider.train_config());
  EXPECT_THROW(restore_learner(c, other), CheckpointError);

  ExperimentConfig concat = checkpoint_config(c);
  concat.learner.algorithm = Algorithm::maddpg_sac;
  Learner different(agent_shapes(ParticleEnv(concat.env_config())), concat.train_config());
  EXPECT_THROW(restore_learner(c, different), CheckpointError);

  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 8)), CheckpointError);
  EXPECT_THROW(decode_checkpoint("NOTACKPT" + bytes.substr(8)), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir_ / "missing.ckpt"), CheckpointError);
}

TEST_F(CliTest, ResumeContinuesFromCheckpoint) {
  write("tiny.toml", kTinyRt);
  const auto first = train("run", {"run.episodes=4"});
  train("run", {"run.episodes=8"}, first.final_checkpoint);
  const auto records = read_jsonl(dir_ / "run" / "metrics.jsonl");
  ASSERT_EQ(records.size(), 8u);
  for (std::size_t k = 0; k < records.size(); ++k) EXPECT_EQ(records[k]["episode"], k);
  EXPECT_EQ(records[4]["env_steps"], 60);
  const auto manifest = nlohmann::json::parse(slurp(dir_ / "run" / "manifest.json"));
  EXPECT_EQ(manifest["resumed_at_episode"], 4);
  const Checkpoint c = load_checkpoint(dir_ / "run" / "checkpoints" / "final.ckpt");
  EXPECT_EQ(checkpoint_progress(c).episodes_done, 8u);
}

TEST_F(CliTest, EvaluationLeavesParametersUntouched) {
  write("tiny.toml", kTinyRt);
  const auto run = train("run");
  EvalOptions opt;
  opt.checkpoint = run.final_checkpoint;
  opt.episodes = 3;
  opt.out = (dir_ / "eval.json").string();
  opt.dump_trajectory = (dir_ / "traj.jsonl").string();
  std::ostringstream out, err;
  ASSERT_EQ(cmd_eval(opt, out, err), kExitOk) << err.str();
  EXPECT_NE(out.str().find("mean team reward"), std::string::npos);
  const auto summary = nlohmann::json::parse(slurp(dir_ / "eval.json"));
  auto model = load_model(run.final_checkpoint, {});
  EXPECT_EQ(summary["parameter_hash"], parameter_hash(*model.learner));
  EXPECT_EQ(summary["episodes"], 3);
  EXPECT_EQ(read_jsonl(dir_ / "traj.jsonl").size(), 30u);
}

TEST_F(CliTest, ConfidenceIntervalShrinksWithMoreEpisodes) {
  ExperimentConfig cfg = parse_config(kTinyRt);
  Learner learner(agent_shapes(ParticleEnv(cfg.env_config())), cfg.train_config());
  RolloutOptions few, many;
  few.episodes = 25;
  many.episodes = 100;
  const auto a = evaluate(cfg.env_config(), learner, few);
  const auto b = evaluate(cfg.env_config(), learner, many);
  EXPECT_NEAR(a.ci95, 1.96 * a.stddev / 5.0, 1e-12);
  const double ratio = b.ci95 / a.ci95;
  EXPECT_GT(ratio, 0.3);
  EXPECT_LT(ratio, 0.75);
  // Untrained policies leave rovers away from their goals.
  EXPECT_LT(b.mean, 0.0);
}

TEST_F(CliTest, InspectAttentionWritesNormalisedWeights) {
  write("tiny.toml", kTinyRt);
  const auto run = train("run");
  InspectOptions opt;
  opt.checkpoint = run.final_checkpoint;
  opt.out = (dir_ / "attention.jsonl").string();
  std::ostringstream out, err;
  ASSERT_EQ(cmd_inspect_attention(opt, out, err), kExitOk) << err.str();
  const auto lines = read_jsonl(opt.out);
  ASSERT_EQ(lines.size(), 11u);
  EXPECT_EQ(lines[0]["type"], "episode");
  EXPECT_EQ(lines[0]["pairing"].size(), 2u);
  for (std::size_t k = 1; k < lines.size(); ++k) {
    EXPECT_EQ(lines[k]["type"], "step");
    for (const auto& agent : lines[k]["agents"]) {
      EXPECT_EQ(agent["others"].size(), 3u);
      for (const auto& head : agent["weights"]) {
        double sum = 0.0;
        for (double w : head) sum += w;
        EXPECT_NEAR(sum, 1.0, 1e-9);
      }
    }
  }
}

TEST_F(CliTest, InspectUniformCheckpointHasMaximalEntropy) {
  write("tiny.toml", kTinyRt);
  const auto run = train("run", {"learner.algorithm=maac_uniform"});
  auto model = load_model(run.final_checkpoint, {});
  RolloutOptions ro;
  ro.episodes = 1;
  const auto s = inspect_attention(model.cfg.env_config(), *model.learner, ro, nullptr);
  for (const auto& agent : s.mean_entropy)
    for (double e : agent) EXPECT_NEAR(e, std::log(3.0), 1e-12);
}

TEST_F(CliTest, InspectRejectsNonAttentionCheckpoints) {
  write("tiny.toml", kTinyRt);
  const auto run = train("run", {"learner.algorithm=maddpg_sac"});
  InspectOptions opt;
  opt.checkpoint = run.final_checkpoint;
  opt.out = (dir_ / "attention.jsonl").string();
  std::ostringstream out, err;
  EXPECT_EQ(cmd_inspect_attention(opt, out, err), kExitConfig);
  EXPECT_NE(err.str().find("attention"), std::string::npos);
}

TEST(Scaling, NormalisationMapsObservedRangeOntoUnitInterval) {
  std::vector<ScalingRow> rows(3);
  for (auto& r : rows) {
    r.observed_min = -200.0;
    r.observed_max = -40.0;
  }
  rows[0].final_mean = -200.0;
  rows[1].final_mean = -40.0;
  rows[2].final_mean = -120.0;
  normalize_rows(rows);
  EXPECT_DOUBLE_EQ(rows[0].normalized, 0.0);
  EXPECT_DOUBLE_EQ(rows[1].normalized, 1.0);
  EXPECT_DOUBLE_EQ(rows[2].normalized, 0.5);
}

TEST_F(CliTest, ScalingProducesOneRowPerCountAndAlgorithm) {
  const auto path = write("tiny.toml", kTinyRt);
  ScalingOptions opt;
  opt.config.path = path.string();
  opt.config.overrides = {"run.episodes=4"};
  opt.counts = {4, 6};
  opt.final_window = 2;
  std::ostringstream log;
  const auto rows = run_scaling(opt, log);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_GE(r.normalized, 0.0);
    EXPECT_LE(r.normalized, 1.0);
    ASSERT_TRUE(r.pair_reward_lower.has_value());
    EXPECT_EQ(*r.pair_reward_lower, *rows[0].pair_reward_lower);
    EXPECT_EQ(*r.pair_reward_upper, 0.0);
  }
  EXPECT_EQ(rows[0].count, 4);
  EXPECT_EQ(rows[2].count, 6);
  std::ostringstream csv;
  write_scaling_csv(rows, csv);
  const std::string text = csv.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
}

TEST_F(CliTest, MetricsCsvExport) {
  write("tiny.toml", kTinyRt);
  TrainOptions opt;
  opt.config.path = (dir_ / "tiny.toml").string();
  opt.out_dir = (dir_ / "run").string();
  opt.export_csv = (dir_ / "metrics.csv").string();
  std::ostringstream log;
  run_training(opt, log);
  std::ifstream in(*opt.export_csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "episode,env_steps,metric,agent,head,value");
  std::size_t team_rows = 0;
  for (std::string line; std::getline(in, line);)
    if (line.find(",team_reward,") != std::string::npos) ++team_rows;
  EXPECT_EQ(team_rows, 6u);
}

TEST_F(CliTest, BinaryExitCodes) {
  const auto good = write("tiny.toml", kTinyRt);
  const auto bad = write("bad.toml", "[env]\ntask = \"rover_tower\"\nbogus = 1\n");
  const auto out = dir_ / "run";
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("dump-config -c " + good.string()), 0);
  EXPECT_EQ(run_cli("dump-config -c " + bad.string()), 2);
  EXPECT_EQ(run_cli("train"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("train -c " + good.string() + " -o learner.gamma=7"), 2);
  EXPECT_EQ(run_cli("eval " + (dir_ / "missing.ckpt").string()), 3);
  ASSERT_EQ(run_cli("train -c " + good.string() + " --out " + out.string() + " --seed 9"), 0);
  const auto ckpt = (out / "checkpoints" / "final.ckpt").string();
  EXPECT_EQ(nlohmann::json::parse(slurp(out / "manifest.json"))["seed"], 9);
  EXPECT_EQ(run_cli("eval " + ckpt + " -n 2"), 0);
  EXPECT_EQ(run_cli("eval " + ckpt + " -o learner.hidden=16"), 3);
  EXPECT_EQ(run_cli("inspect-attention " + ckpt + " --out " + (dir_ / "att.jsonl").string()), 0);
}
