#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "poolcf/bprfit.hpp"
#include "poolcf/domain.hpp"
#include "poolcf/mlp.hpp"
#include "poolcf/pipeline.hpp"
#include "poolcf/synthgen.hpp"

namespace poolcf::cli {

struct EvalOptions {
  int folds = 5;
  std::uint64_t kfold_seed = 7;
  int histogram_bins = 20;
};

// Run directories (each holding models/best.json) and the target data dir.
struct TransferPaths {
  std::filesystem::path source_model_dir;
  std::filesystem::path target_data_dir;
  std::filesystem::path target_model_dir;
};

struct ExperimentConfig {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::optional<synth::CityConfig> city;
  mlp::TrainConfig train;
  SplitConfig split;
  bpr::FitOptions bprfit;
  EvalOptions eval;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::optional<TransferPaths> transfer;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);

struct GlobalOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<RoadPriority> priority;
  bool force = false;
};

// Each command reads its inputs, writes its outputs plus a config snapshot and
// a manifest of file hashes, and throws poolcf::Error on failure.
void cmd_gen(const nlohmann::json& raw_config, const GlobalOptions& opts, std::ostream& log);
void cmd_train(const ExperimentConfig& cfg, const GlobalOptions& opts, std::ostream& log);
void cmd_fit_bpr(const ExperimentConfig& cfg, const GlobalOptions& opts, std::ostream& log);
void cmd_eval(const ExperimentConfig& cfg, const GlobalOptions& opts, std::ostream& log);
void cmd_crossval(const ExperimentConfig& cfg, const GlobalOptions& opts, std::ostream& log);
void cmd_transfer(const ExperimentConfig& cfg, const GlobalOptions& opts, std::ostream& log);
void cmd_critdens(const ExperimentConfig& cfg, const GlobalOptions& opts, std::ostream& log);
void cmd_plotdata(const ExperimentConfig& cfg, const GlobalOptions& opts, std::ostream& log);

// Exit codes: 0 ok, 1 runtime failure, 2 usage or config error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int main(int argc, char** argv);

}  // namespace poolcf::cli
