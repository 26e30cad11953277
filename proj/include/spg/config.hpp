#pragma once

// Run configuration files.
//
// Grammar (one construct per line):
//   line     := blank | comment | section | entry
//   comment  := '#' any*            (also allowed after a value)
//   section  := '[' name ']'
//   entry    := key '=' value
//   list     := value (',' value)*  (for list-valued keys)
// Keys outside a section, duplicate keys and unknown keys are errors. Every
// diagnostic names the file, the line and the key.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "spg/tasks.hpp"
#include "spg/trainer.hpp"
#include "spg/trp_chain.hpp"

namespace spg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigEntry {
  std::string value;
  std::size_t line = 0;
};

/// Parsed file: section -> key -> entry.
struct ConfigFile {
  std::string origin;
  std::map<std::string, std::map<std::string, ConfigEntry>> sections;
};

ConfigFile parse_config(std::string_view text, std::string origin = "<config>");
ConfigFile read_config_file(const std::filesystem::path& path);

struct BaselineConfig {
  std::size_t epochs = 30;
  double lr = 3e-3;
  std::size_t batch_size = 32;
  ad::OptimizerKind optimizer = ad::OptimizerKind::adamw;
  double weight_decay = 0.0;
};

enum class RunMode { baseline, retrain, nas };

struct RunConfig {
  TaskSpec task;
  std::size_t width = 32;
  std::size_t hidden_layers = 1;
  BaselineConfig baseline;
  TrainConfig train;
  TrpConfig trp;
  /// Also evaluate the unstripped chain (π_t per depth) each epoch.
  bool eval_unstripped = false;

  NetworkSpec network() const;
  /// Sets seeds and validates the whole configuration.
  void validate() const;
};

/// Builds a RunConfig from defaults plus the file. `mode` picks the chain
/// variant default (nas for RunMode::nas) and, through it, the schedule
/// default (step decay for nas, constant otherwise).
RunConfig load_run_config(const ConfigFile& file, RunMode mode);

/// Canonical text form; parsing it back yields an identical RunConfig.
std::string echo_config(const RunConfig& config);

}  // namespace spg
