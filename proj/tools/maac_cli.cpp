#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "maac/experiment.hpp"

namespace {

void add_config_flags(CLI::App* cmd, maac::ConfigSource& src, bool required) {
  auto* opt = cmd->add_option("-c,--config", src.path, "experiment config file");
  if (required) opt->required();
  cmd->add_option("-o,--override", src.overrides, "dotted override, e.g. learner.gamma=0.95")
      ->allow_extra_args(false)
      ->take_all();
  cmd->add_option("-s,--seed", src.seed, "run seed (wins over MAAC_SEED)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-actor attention-critic experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(maac::kVersion));

  maac::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "train agents and write metrics and checkpoints");
  add_config_flags(train_cmd, train.config, true);
  train_cmd->add_option("--out", train.out_dir, "output directory (default: run.output_dir)");
  train_cmd->add_option("--resume", train.resume, "checkpoint to resume from");
  train_cmd->add_option("--export-csv", train.export_csv, "write a tidy CSV of the metrics");
  train_cmd->add_option("-t,--threads", train.threads, "rollout threads (1 = deterministic)")
      ->check(CLI::PositiveNumber);

  maac::EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint without learning");
  eval_cmd->add_option("checkpoint", eval.checkpoint, "checkpoint file")->required();
  add_config_flags(eval_cmd, eval.config, false);
  eval_cmd->add_option("-n,--episodes", eval.episodes, "episodes per seed (default: run.eval_episodes)");
  eval_cmd->add_option("--seeds", eval.seeds, "number of evaluation seeds")->check(CLI::PositiveNumber);
  eval_cmd->add_flag("--greedy", eval.greedy, "take the most probable action instead of sampling");
  eval_cmd->add_option("--dump-trajectory", eval.dump_trajectory, "write per-step JSON lines");
  eval_cmd->add_option("--out", eval.out, "write the summary as JSON");

  maac::InspectOptions inspect;
  auto* inspect_cmd = app.add_subcommand("inspect-attention", "dump critic attention weights");
  inspect_cmd->add_option("checkpoint", inspect.checkpoint, "checkpoint file")->required();
  add_config_flags(inspect_cmd, inspect.config, false);
  inspect_cmd->add_option("-n,--episodes", inspect.episodes, "episodes to roll out");
  inspect_cmd->add_option("--out", inspect.out, "JSON-lines output file");
  inspect_cmd->add_flag("--greedy", inspect.greedy, "take the most probable action instead of sampling");

  maac::ScalingOptions scaling;
  std::vector<std::string> algorithms;
  auto* scaling_cmd = app.add_subcommand("scaling", "train each algorithm at several agent counts");
  add_config_flags(scaling_cmd, scaling.config, true);
  scaling_cmd->add_option("--counts", scaling.counts, "total agent counts")->required()->delimiter(',');
  scaling_cmd->add_option("--algorithms", algorithms, "algorithms to compare (default maac,maddpg_sac)")
      ->delimiter(',');
  scaling_cmd->add_option("--final-window", scaling.final_window, "episodes averaged for the final reward")
      ->check(CLI::PositiveNumber);
  scaling_cmd->add_option("-t,--threads", scaling.threads, "rollout threads")->check(CLI::PositiveNumber);
  scaling_cmd->add_option("--out", scaling.out, "CSV output file");

  maac::ConfigSource dump;
  auto* dump_cmd = app.add_subcommand("dump-config", "print the fully resolved config");
  add_config_flags(dump_cmd, dump, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : maac::kExitConfig;
  }

  if (*train_cmd) return maac::cmd_train(train, std::cout, std::cerr);
  if (*eval_cmd) return maac::cmd_eval(eval, std::cout, std::cerr);
  if (*inspect_cmd) return maac::cmd_inspect_attention(inspect, std::cout, std::cerr);
  if (*scaling_cmd) {
    const int rc = maac::guarded(std::cerr, [&] {
      if (!algorithms.empty()) {
        scaling.algorithms.clear();
        for (const auto& a : algorithms) scaling.algorithms.push_back(maac::parse_algorithm(a));
      }
      return 0;
    });
    if (rc != 0) return rc;
    return maac::cmd_scaling(scaling, std::cout, std::cerr);
  }
  if (*dump_cmd) return maac::cmd_dump_config(dump, std::cout, std::cerr);
  return maac::kExitConfig;
}
