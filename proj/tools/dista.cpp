#include <CLI11.hpp>

#include "dista/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Spiking transformer with spatiotemporal attention: train, evaluate, check gradients, ablate"};
  app.require_subcommand(1);

  dista::CommandOptions opt;
  std::string config, checkpoint, out_dir;
  std::uint64_t seed = 0;
  std::size_t until = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "run configuration (key = value lines)");
    sub->add_option("--checkpoint", checkpoint, "checkpoint file to resume from / evaluate");
    sub->add_option("--out", out_dir, "output directory (overrides out_dir)");
    sub->add_option("--seed", seed, "training seed (overrides seed)");
  };
  auto* train = app.add_subcommand("train", "train and write metrics.csv plus a checkpoint");
  common(train);
  train->add_option("--until", until, "stop once this many epochs are complete")->check(CLI::PositiveNumber);
  auto* eval = app.add_subcommand("eval", "print test accuracy and loss of a checkpoint");
  common(eval);
  auto* grad = app.add_subcommand("gradcheck", "compare BPTT gradients with finite differences");
  common(grad);
  auto* ablate = app.add_subcommand("ablate", "train once per value of one setting, write ablation.csv");
  common(ablate);
  ablate->add_option("--axis", opt.axis, "timesteps | taw_size | denoise_threshold | adn_blocks")->required();
  ablate->add_option("--values", opt.values, "comma-separated values")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? dista::kExitOk : dista::kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  opt.config = config;
  if (!checkpoint.empty()) opt.checkpoint = checkpoint;
  if (!out_dir.empty()) opt.out_dir = out_dir;
  if (sub->count("--seed")) opt.seed = seed;
  if (sub == train && train->count("--until")) opt.until_epoch = until;
  return dista::run_command(sub->get_name(), opt);
}
