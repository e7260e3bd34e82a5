#pragma once

#include <optional>
#include <string>

#include "ff/funnel.hpp"
#include "ff/linoracle.hpp"

namespace ff {

/// Command-line overrides applied on top of the config file.
struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool no_derivative_check = false;
};

/// Fully assembled experiment: the funnel problem plus, for linear systems,
/// the matrix of the closed loop in offset coordinates for the exact oracle.
struct Experiment {
  FunnelSpec spec;
  bool linear = false;
  Matrix a_linear;      // valid when `linear`
  std::string resolved;  // resolved config (defaults included), JSON text
};

/// Parses, validates (unknown keys rejected), and assembles an experiment
/// from JSON text. Throws ConfigError on schema violations.
Experiment build_experiment(const std::string& config_text, const CliOverrides& overrides = {});

// Exit codes: 0 success, 1 config error, 2 synthesis error, 3 oracle or
// compare requested for a nonlinear system.
int cmd_synthesize(const std::string& config_path, const std::string& out_dir,
                   const CliOverrides& overrides = {});
int cmd_oracle(const std::string& config_path, const std::string& out_dir,
               const CliOverrides& overrides = {});
int cmd_compare(const std::string& config_path, const std::string& out_dir,
                const CliOverrides& overrides = {});
int cmd_trajgen(const std::string& config_path, const std::string& out_dir,
                const CliOverrides& overrides = {});

}  // namespace ff
