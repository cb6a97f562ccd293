#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poolcf/domain.hpp"

namespace poolcf {

inline constexpr std::size_t kNumFeatures = 12;

// Frozen feature layout. Models record it and refuse any other.
inline constexpr std::array<std::string_view, kNumFeatures> kFeatureNames = {
    "length_m", "lanes",          "width_m",         "speed_limit_mps", "sin_hour",        "cos_hour",
    "sin_dow",  "cos_dow",        "prev_flow_vph",   "prev_speed_mps",  "normalized_flow", "current_flow_vph"};

enum Feature : std::size_t {
  kLength = 0,
  kLanes,
  kWidth,
  kSpeedLimit,
  kSinHour,
  kCosHour,
  kSinDow,
  kCosDow,
  kPrevFlow,
  kPrevSpeed,
  kNormalizedFlow,
  kCurrentFlow,
};

using FeatureVector = std::array<double, kNumFeatures>;

// Comma-joined feature names.
std::string feature_fingerprint();

struct ExampleMeta {
  std::string segment_id;
  HourStamp t;
  double mean_speed_mps = 0.0;
  double speed_limit_mps = 0.0;
  double partial_flow_vph = 0.0;
};

struct TrainingExample {
  FeatureVector x{};
  double label_inv_speed = 0.0;  // 1 / mean speed, in (0, 1)
  ExampleMeta meta;
};

struct TemporalEncoding {
  double sin_hour, cos_hour, sin_dow, cos_dow;
};

TemporalEncoding temporal_encoding(int hour, int dow);

struct BuildStats {
  std::size_t built = 0;
  std::size_t no_previous_hour = 0;
  std::size_t speed_not_above_floor = 0;  // v <= 1 m/s, would put the label at 1
};

struct BuildResult {
  std::vector<TrainingExample> examples;
  BuildStats stats;
};

// One example per observation that has an observation for the previous hour
// of the same day on the same segment. Output is sorted by (segment, time), so
// the input order does not matter.
BuildResult build_examples(const Dataset& d);

struct NormStats {
  FeatureVector mean{};
  FeatureVector stddev{};
  std::array<bool, kNumFeatures> constant{};
};

inline constexpr double kConstantStdThreshold = 1e-9;

// Population statistics over the training examples only.
NormStats fit_norm_stats(std::span<const TrainingExample> train);

FeatureVector normalize(const FeatureVector& x, const NormStats& s);
FeatureVector denormalize(const FeatureVector& z, const NormStats& s);

// examples.csv: the twelve features, label, meta columns, and optionally a
// predicted_speed_mps column.
void write_examples_csv(std::span<const TrainingExample> examples, const std::filesystem::path& path,
                        std::optional<std::span<const double>> predicted_speed = std::nullopt);

}  // namespace poolcf
