#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "otnas/config_io.hpp"
#include "otnas/pipeline.hpp"

namespace otnas::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kConfigError = 2;
inline constexpr int kIncompatible = 3;
inline constexpr int kNumerical = 4;

struct CliConfig {
  std::filesystem::path zoo_root = "zoo";
  std::filesystem::path dataset_dir = "data";
  std::filesystem::path output_dir = "out";
  OtSettings ot;  // includes the embedding config
  SearchSpaceConfig search_space;
  TrainConfig train;                     // scratch runs and fine-tuning
  std::optional<TrainConfig> pretrain;   // zoo and leave-one-out pretraining; defaults to `train`
  std::optional<TrainConfig> retrain;    // optional genotype retraining check
  std::vector<Seed> seeds{0};
  std::vector<SyntheticTaskSpec> synthetic;
  ReportOptions report;

  const TrainConfig& pretrain_config() const { return pretrain ? *pretrain : train; }
};

/// Relative paths resolve against `base_dir` (the config file's directory).
CliConfig parse_config(const Json& j, const std::filesystem::path& base_dir = {});
CliConfig load_config(const std::filesystem::path& path);

/// Maps a caught exception onto an exit code.
int exit_code_for(const std::exception& e);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace otnas::cli
