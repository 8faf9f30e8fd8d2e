#include <CLI11.hpp>

#include <iostream>

#include "sagate/experiments.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string data_dir = "data";
  std::string checkpoint;
  int64_t seed = -1;
  int threads = 0;

  sagate::ExperimentConfig resolve() const {
    sagate::ExperimentConfig cfg = config_path.empty()
                                       ? sagate::ExperimentConfig{}
                                       : sagate::ExperimentConfig::from_file(config_path);
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (threads > 0) cfg.threads = threads;
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_data, bool with_checkpoint) {
  cmd->add_option("--config", args.config_path, "experiment config file (key=value)");
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--threads", args.threads, "worker threads for sweeps");
  if (with_data) cmd->add_option("--data", args.data_dir, "dataset directory (from `generate`)");
  if (with_checkpoint)
    cmd->add_option("--checkpoint", args.checkpoint, "model checkpoint (.stnc container)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sagate: gated RGB-D fusion experiments on synthetic scenes"};
  app.require_subcommand(1);

  CommonArgs gen, train, eval_a, ablate, sweep, viz, grad;
  std::string suite = "fs";

  add_common(app.add_subcommand("generate", "write train/test dataset shards"), gen, false, false);
  add_common(app.add_subcommand("train", "train a model on a shard"), train, true, false);
  add_common(app.add_subcommand("eval", "evaluate a checkpoint on the test shard"), eval_a, true,
             true);
  CLI::App* ab = app.add_subcommand("ablate", "run an ablation suite");
  add_common(ab, ablate, false, false);
  ab->add_option("--suite", suite, "fs | fa | placement | factors")->required();
  add_common(app.add_subcommand("noise-sweep", "HHA noise robustness sweep"), sweep, false, false);
  add_common(app.add_subcommand("visualize", "export gate and feature-energy maps"), viz, true,
             true);
  add_common(app.add_subcommand("gradcheck", "finite-difference check of the full model"), grad,
             false, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("generate")) {
      auto cfg = gen.resolve();
      sagate::cmd_generate(cfg, cfg.out_dir);
    } else if (app.got_subcommand("train")) {
      auto cfg = train.resolve();
      sagate::cmd_train(cfg, train.data_dir, cfg.out_dir);
    } else if (app.got_subcommand("eval")) {
      auto cfg = eval_a.resolve();
      sagate::cmd_eval(cfg, eval_a.data_dir, eval_a.checkpoint, cfg.out_dir);
    } else if (app.got_subcommand("ablate")) {
      auto cfg = ablate.resolve();
      sagate::cmd_ablate(cfg, suite, cfg.out_dir);
    } else if (app.got_subcommand("noise-sweep")) {
      auto cfg = sweep.resolve();
      sagate::cmd_noise_sweep(cfg, cfg.out_dir);
    } else if (app.got_subcommand("visualize")) {
      auto cfg = viz.resolve();
      sagate::cmd_visualize(cfg, viz.checkpoint, viz.data_dir, cfg.out_dir);
    } else if (app.got_subcommand("gradcheck")) {
      return sagate::cmd_gradcheck(std::cout) == 0 ? 0 : 1;
    }
  } catch (const sagate::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const sagate::Divergence& e) {
    std::cerr << "numeric divergence: " << e.what() << '\n';
    return 3;
  } catch (const sagate::NonFinite& e) {
    std::cerr << "numeric divergence: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
