#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dzsl/dataio.hpp"
#include "dzsl/train.hpp"

namespace dzsl::cli {

// Parsed run configuration. Every section that is present must list all of
// its keys; unknown keys are rejected anywhere in the document.
struct RunConfig {
  std::optional<SyntheticSpec> synthetic;
  std::optional<TrainConfig> train;
  std::optional<double> fnr;
  std::optional<std::vector<double>> fnr_grid;
  struct Paths {
    std::optional<std::string> bundle, setnet, zsl, gzsl, ddm, report, curves, attn;
  } paths;
};

// Throws InvalidInputError naming the offending key.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Default configuration with every key present.
std::string default_run_config_json();

// Runs one command. `args` excludes the program name. Returns the process
// exit status; failures print a single `error: ...` line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dzsl::cli
