#pragma once

#include "diffkd/pipeline.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace diffkd {

/// One run-config entry: "[section] key = value" in files, --flag on the CLI.
struct ConfigField {
  std::string section;
  std::string key;
  std::string flag;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;  // throws InvalidArgument on bad text
};

const std::vector<ConfigField>& config_fields();

/// Reads "[section] key = value" text; unknown keys are an error.
void apply_config(std::istream& is, RunConfig& rc);
/// Throws std::runtime_error if the file cannot be read.
void load_config_file(const std::filesystem::path& file, RunConfig& rc);

}  // namespace diffkd
