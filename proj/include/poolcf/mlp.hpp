#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "poolcf/domain.hpp"
#include "poolcf/features.hpp"

namespace poolcf::mlp {

// Input, five ELU hidden layers, sigmoid output.
inline const std::vector<int> kDefaultLayerSizes = {static_cast<int>(kNumFeatures), 16, 8, 4, 8, 16, 1};
inline constexpr int kModelSchemaVersion = 1;

double elu(double z);
double elu_derivative(double z);
// Branch form, never overflows.
double sigmoid(double z);

struct LayerView {
  int in = 0;
  int out = 0;
  std::size_t weight_offset = 0;  // out x in, row-major
  std::size_t bias_offset = 0;
};

// Feed-forward regressor of inverse speed. Parameters live in one flat vector,
// layer by layer, weights before biases; gradients use the same layout.
struct MlpModel {
  std::vector<int> layer_sizes = kDefaultLayerSizes;
  std::vector<double> params;
  NormStats norm;
  std::string feature_fingerprint = poolcf::feature_fingerprint();
  std::uint64_t seed = 0;
  RoadPriority priority = RoadPriority::Highway;
  std::string city;

  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  LayerView layer(std::size_t l) const;
  static std::size_t parameter_count(const std::vector<int>& sizes);
};

// Scaled-uniform fan-in/fan-out initialization, zero biases.
MlpModel initialize(std::uint64_t seed, const NormStats& norm, RoadPriority priority, std::string city,
                    const std::vector<int>& layer_sizes = kDefaultLayerSizes);

// Throws DataError if the model was built for a different feature layout.
void check_layout(const MlpModel& m);

// Network output y in (0, 1), an estimate of 1 / speed.
double forward(const MlpModel& m, const FeatureVector& x);

// Squared error in inverse-speed space, (y_hat - 1/v)^2.
double loss(double y_hat, double v);

struct Gradients {
  std::vector<double> grad;  // d(mean batch loss)/d(params)
  double mean_loss = 0.0;
};

Gradients backward(const MlpModel& m, std::span<const TrainingExample> batch);

// Mean of (forward(x) - label)^2 over the examples.
double mean_loss(const MlpModel& m, std::span<const TrainingExample> examples);

struct TrainConfig {
  int batch_size = 256;
  int epochs = 30;
  int shuffle_buffer = 10000;  // recorded only; each epoch uses a full permutation
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);

struct TrainHistory {
  std::vector<double> train_loss;       // mean per-example loss seen during each epoch
  std::vector<double> validation_loss;  // NaN when there is no validation data

  // Final-epoch training loss above the first epoch's.
  bool loss_increased() const;
};

struct TrainResult {
  MlpModel model;
  TrainHistory history;
};

// Adam on shuffled mini-batches. Norm stats are fitted on the training set.
// Deterministic in (cfg, data). Throws TrainingError on a non-finite loss.
TrainResult train(std::span<const TrainingExample> train_set, std::span<const TrainingExample> validation_set,
                  const TrainConfig& cfg, RoadPriority priority, std::string city);

inline constexpr double kMinPredictedSpeed = 1.0;
inline constexpr double kMaxPredictedSpeed = 45.0;

// 1 / forward, clamped to [1, 45] m/s.
double predict_speed(const MlpModel& m, const FeatureVector& x);

// Speeds for every example, in input order.
std::vector<double> predict_speeds(const MlpModel& m, std::span<const TrainingExample> examples);

namespace serial {
std::vector<double> predict_speeds(const MlpModel& m, std::span<const TrainingExample> examples);
}

nlohmann::json to_json(const MlpModel& m);
MlpModel model_from_json(const nlohmann::json& j);
void save_model(const MlpModel& m, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

void write_history_csv(const TrainHistory& h, const std::filesystem::path& path);

}  // namespace poolcf::mlp
