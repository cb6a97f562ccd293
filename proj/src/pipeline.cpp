#include "poolcf/pipeline.hpp"

#include "json_util.hpp"
#include "poolcf/error.hpp"

namespace poolcf {

SplitConfig split_config_from_json(const nlohmann::json& j) {
  using detail::optional;
  const std::string ctx = "split";
  detail::reject_unknown_keys(j, {"train_weeks", "val_weeks", "test_weeks"}, ctx);
  SplitConfig s;
  s.train_weeks = optional<int>(j, "train_weeks", s.train_weeks, ctx);
  s.val_weeks = optional<int>(j, "val_weeks", s.val_weeks, ctx);
  s.test_weeks = optional<int>(j, "test_weeks", s.test_weeks, ctx);
  if (s.train_weeks < 1 || s.val_weeks < 0 || s.test_weeks < 0) {
    throw ConfigError("split: need train_weeks >= 1 and non-negative val/test weeks");
  }
  return s;
}

nlohmann::json to_json(const SplitConfig& s) {
  return {{"train_weeks", s.train_weeks}, {"val_weeks", s.val_weeks}, {"test_weeks", s.test_weeks}};
}

PreparedData prepare(const Dataset& filtered, RoadPriority priority, const SplitConfig& split) {
  const Dataset subset = select_priority(filtered, priority);
  if (subset.segments.empty()) {
    throw EmptyDatasetError("no " + std::string(to_string(priority)) + " segments in dataset");
  }
  PreparedData p;
  p.priority = priority;
  p.city = subset.segments.begin()->second.city;
  p.split = split_by_date(subset, split.train_weeks, split.val_weeks, split.test_weeks);
  p.train = build_examples(p.split.train);
  p.validation = build_examples(p.split.validation);
  p.test = build_examples(p.split.test);
  if (p.train.examples.empty()) {
    throw EmptyDatasetError("no " + std::string(to_string(priority)) + " training examples");
  }
  return p;
}

std::vector<RoadPriority> priorities_present(const Dataset& d) {
  bool highway = false, arterial = false;
  for (const auto& [id, seg] : d.segments) {
    (seg.priority == RoadPriority::Highway ? highway : arterial) = true;
  }
  std::vector<RoadPriority> out;
  if (highway) out.push_back(RoadPriority::Highway);
  if (arterial) out.push_back(RoadPriority::Arterial);
  return out;
}

}  // namespace poolcf
