#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "corrnet/network.hpp"
#include "corrnet/synth.hpp"

namespace corrnet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  std::size_t epochs = 12;
  double lr = 2e-3;
  double weight_decay = 1e-3;
  std::size_t batch_size = 2;
  double lr_decay = 5.0;
  std::vector<std::size_t> milestones;  // empty = 50% and 75% of epochs
  std::size_t train_count = 600;
  std::size_t dev_count = 100;
  std::size_t test_count = 100;
  std::uint64_t seed = 1;

  /// Epochs after which the learning rate is divided by lr_decay.
  std::vector<std::size_t> resolved_milestones() const;
  double lr_at(std::size_t epoch) const;  // 1-based epoch
};

/// Everything that defines one experiment. The model's vocabulary always
/// follows the data section.
struct ExperimentConfig {
  network::ModelConfig model;
  synth::SyntheticConfig data;
  TrainConfig train;

  void validate() const;
};

/// One documented `key = value` entry of the `[section]`-structured file.
struct ConfigKey {
  std::string section;
  std::string name;
  std::string doc;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;

  std::string path() const { return section + "." + name; }
};

const std::vector<ConfigKey>& config_keys();

/// Parses INI text. Unknown sections or keys raise ConfigError naming them.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies "section.key=value".
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

/// Canonical text listing every key; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const ExperimentConfig& cfg);

}  // namespace corrnet
