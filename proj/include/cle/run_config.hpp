#pragma once

#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "cle/manifest.hpp"
#include "cle/network.hpp"
#include "cle/trainer.hpp"

namespace cle {

/// Unknown key, malformed value or bad section in a run config.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Everything a CLI run needs. INI layout: [model], [data], [train], [run].
struct RunConfig {
  // model
  Architecture arch = Architecture::Stateless;
  std::string scale = "paper";  // paper | scaled
  std::size_t num_classes = 0;  // 0: taken from the manifest
  std::size_t frame_size = 0;   // 0: 64 for paper, 16 for scaled
  bool peephole = false;
  double dropout = -1.0;  // < 0: architecture default

  // data
  std::string manifest;
  SplitRule split = SplitRule::CrossSubject;
  double test_fraction = 0.3;
  double val_fraction = 0.1;  // 0: validate on the test split
  double max_depth = 4500.0;
  double margin = 0.05;

  // train
  std::size_t batch_size = 0;  // 0: 12 stateless, 6 stateful
  std::size_t clip_len = 8;
  std::vector<std::size_t> bins = BinSchedule::defaults().edges;
  std::size_t epochs = 0;
  std::string schedule = "paper";  // paper | constant | cyclical | step | plateau
  double lr = 1e-4;
  double min_lr = 1e-5, max_lr = 1e-4, half_cycle = 3.0;
  std::string steps;  // "epoch:lr epoch:lr ..."
  std::size_t patience = 4;
  double factor = 0.5;
  std::size_t end_epoch = 0;
  double weight_exponent = 3.0;
  bool carry_state = true;

  // run
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";
  std::size_t threads = 1;
  std::string precision = "float";

  std::set<std::string> explicit_keys;  // keys given in a file or via set_key
};

struct ConfigKey {
  std::string key;  // "section.name"
  std::string doc;
};

const std::vector<ConfigKey>& config_keys();

void set_key(RunConfig& c, const std::string& key, const std::string& value);
std::string get_key(const RunConfig& c, const std::string& key);

RunConfig parse_run_config(const std::string& ini);
RunConfig load_run_config(const std::filesystem::path& path);
/// Resolved config in the same INI form; parse_run_config round-trips it.
std::string to_ini(const RunConfig& c);
/// Key table with defaults, for --help.
std::string config_help();

ModelConfig model_config(const RunConfig& c, std::size_t manifest_classes);
TrainConfig train_config(const RunConfig& c);
SplitSpec split_spec(const RunConfig& c);
PreprocessConfig preprocess_config(const RunConfig& c, std::size_t size);
ScheduleSpec schedule_spec(const RunConfig& c);

}  // namespace cle
