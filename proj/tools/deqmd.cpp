#include <CLI11.hpp>

#include <iostream>

#include "deqmd/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Poisson deblurring by mirror descent with learned regularizers"};
  app.require_subcommand(1);

  std::string config, checkpoint, out;
  std::uint64_t seed = 0;
  const auto common = [&](CLI::App* sub, bool with_checkpoint) {
    sub->add_option("--config", config, "experiment config file")->required()->check(CLI::ExistingFile);
    if (with_checkpoint) sub->add_option("--checkpoint", checkpoint, "trained parameters (.deqp)");
    sub->add_option("--out", out, "output directory (overrides the config)");
    sub->add_option("--seed", seed, "experiment seed (overrides the config)");
  };
  auto* simulate = app.add_subcommand("simulate", "blur and sample measurements, write a manifest");
  auto* train = app.add_subcommand("train", "train a DEQ regularizer");
  auto* reconstruct = app.add_subcommand("reconstruct", "reconstruct images with the configured regularizer");
  auto* evaluate = app.add_subcommand("evaluate", "PSNR/SSIM of reconstructions against clean images");
  auto* benchmark = app.add_subcommand("benchmark", "compare RL, KL+TV, DEQ-S and DEQ-RED");
  common(simulate, false);
  common(train, false);
  common(reconstruct, true);
  common(evaluate, true);
  common(benchmark, false);

  CLI11_PARSE(app, argc, argv);

  try {
    deqmd::ExperimentConfig cfg = deqmd::ExperimentConfig::load(config);
    if (!out.empty()) cfg.output = out;
    for (auto* sub : {simulate, train, reconstruct, evaluate, benchmark})
      if (app.got_subcommand(sub) && sub->count("--seed")) cfg.seed = deqmd::Seed{seed};

    if (app.got_subcommand(simulate)) deqmd::cmd_simulate(cfg);
    if (app.got_subcommand(train)) deqmd::cmd_train(cfg);
    if (app.got_subcommand(reconstruct)) deqmd::cmd_reconstruct(cfg, checkpoint);
    if (app.got_subcommand(evaluate)) deqmd::cmd_evaluate(cfg, checkpoint);
    if (app.got_subcommand(benchmark)) deqmd::cmd_benchmark(cfg);
  } catch (const deqmd::ConfigError& e) {
    std::cerr << "deqmd: config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "deqmd: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
