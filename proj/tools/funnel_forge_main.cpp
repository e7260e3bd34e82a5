#include <cstdint>
#include <string>

#include <CLI11.hpp>

#include "ff/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"funnel-forge: invariant funnels along ODE trajectories via "
               "optimization-based falsifiers, with an exact linear-system oracle"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int threads = 0;
  bool no_dc = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
    cmd->add_option("--out", out_dir, "output directory")->required();
    cmd->add_option("--seed", seed, "override the config seed");
    cmd->add_option("--threads", threads, "parallel restarts inside the falsifier");
    cmd->add_flag("--no-derivative-check", no_dc, "skip the derivative condition");
  };

  CLI::App* synth = app.add_subcommand("synthesize", "run funnel synthesis");
  CLI::App* oracle = app.add_subcommand("oracle", "exact levels for a linear system");
  CLI::App* compare = app.add_subcommand("compare", "synthesis vs the exact oracle");
  CLI::App* trajgen = app.add_subcommand("trajgen", "generate the reference trajectory");
  for (CLI::App* cmd : {synth, oracle, compare, trajgen}) add_common(cmd);

  CLI11_PARSE(app, argc, argv);

  ff::CliOverrides overrides;
  if (synth->count("--seed") || oracle->count("--seed") || compare->count("--seed") ||
      trajgen->count("--seed")) {
    overrides.seed = seed;
  }
  if (threads > 0) overrides.threads = threads;
  overrides.no_derivative_check = no_dc;

  if (synth->parsed()) return ff::cmd_synthesize(config_path, out_dir, overrides);
  if (oracle->parsed()) return ff::cmd_oracle(config_path, out_dir, overrides);
  if (compare->parsed()) return ff::cmd_compare(config_path, out_dir, overrides);
  return ff::cmd_trajgen(config_path, out_dir, overrides);
}
