#pragma once

#include "json.hpp"
#include "poolcf/domain.hpp"
#include "poolcf/features.hpp"

namespace poolcf {

struct SplitConfig {
  int train_weeks = 5;
  int val_weeks = 1;
  int test_weeks = 1;
};

SplitConfig split_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SplitConfig& s);

// One priority of one city, split by date, with examples built per split.
struct PreparedData {
  RoadPriority priority = RoadPriority::Highway;
  std::string city;
  DateSplit split;
  BuildResult train;
  BuildResult validation;
  BuildResult test;
};

// `filtered` must already have passed filter_dataset.
PreparedData prepare(const Dataset& filtered, RoadPriority priority, const SplitConfig& split);

// Priorities that have at least one segment in d, in enum order.
std::vector<RoadPriority> priorities_present(const Dataset& d);

}  // namespace poolcf
