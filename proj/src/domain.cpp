#include "poolcf/domain.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>

#include "poolcf/error.hpp"

namespace poolcf {

std::string_view to_string(RoadPriority p) {
  return p == RoadPriority::Highway ? "highway" : "arterial";
}

RoadPriority parse_priority(std::string_view s) {
  if (s == "highway") return RoadPriority::Highway;
  if (s == "arterial") return RoadPriority::Arterial;
  throw DataError("unknown road priority '" + std::string(s) + "' (expected highway|arterial)");
}

namespace {

int parse_int(std::string_view s, std::string_view what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw DataError("bad " + std::string(what) + " in date '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

Date Date::from_iso(std::string_view iso) {
  using namespace std::chrono;
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') {
    throw DataError("date '" + std::string(iso) + "' is not YYYY-MM-DD");
  }
  const year_month_day ymd{year{parse_int(iso.substr(0, 4), "year")},
                           month{static_cast<unsigned>(parse_int(iso.substr(5, 2), "month"))},
                           day{static_cast<unsigned>(parse_int(iso.substr(8, 2), "day"))}};
  if (!ymd.ok()) throw DataError("invalid calendar date '" + std::string(iso) + "'");
  return Date{static_cast<int>(sys_days{ymd}.time_since_epoch().count())};
}

std::string Date::iso() const {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

int Date::weekday() const {
  using namespace std::chrono;
  return static_cast<int>(std::chrono::weekday{sys_days{std::chrono::days{days}}}.iso_encoding()) - 1;
}

bool observation_before(const Observation& a, const Observation& b) {
  if (a.t != b.t) return a.t < b.t;
  return a.segment_id < b.segment_id;
}

void validate(const Dataset& d) {
  for (const auto& o : d.observations) {
    if (!d.segments.contains(o.segment_id)) {
      throw DataError("observation references unknown segment '" + o.segment_id + "'");
    }
  }
}

FilterResult filter_dataset(const Dataset& raw, const FilterRules& rules) {
  validate(raw);
  FilterResult out;
  out.data.range = raw.range;
  for (const auto& [id, seg] : raw.segments) {
    if (seg.length_m < rules.min_length_m) {
      ++out.report.segments_too_short;
    } else {
      out.data.segments.emplace(id, seg);
    }
  }
  out.data.observations.reserve(raw.observations.size());
  for (const auto& o : raw.observations) {
    if (!out.data.segments.contains(o.segment_id)) {
      ++out.report.observations_of_dropped_segments;
    } else if (!(o.mean_speed_mps >= rules.min_speed_mps && o.mean_speed_mps <= rules.max_speed_mps)) {
      ++out.report.observations_speed_out_of_range;
    } else if (o.t.hour < rules.first_hour || o.t.hour > rules.last_hour) {
      ++out.report.observations_outside_hours;
    } else {
      out.data.observations.push_back(o);
    }
  }
  if (out.data.segments.empty() || out.data.observations.empty()) {
    throw EmptyDatasetError("empty dataset after filtering");
  }
  return out;
}

double density_veh_per_m(double partial_flow_vph, double mean_speed_mps) {
  if (!(mean_speed_mps >= 1.0)) {
    throw PreconditionError("density requires speed >= 1 m/s, got " + std::to_string(mean_speed_mps));
  }
  return partial_flow_vph / 3600.0 / mean_speed_mps;
}

double density_veh_per_m(const Observation& obs) {
  return density_veh_per_m(obs.partial_flow_vph, obs.mean_speed_mps);
}

DateSplit split_by_date(const Dataset& d, int train_weeks, int val_weeks, int test_weeks) {
  if (train_weeks < 0 || val_weeks < 0 || test_weeks < 0) {
    throw PreconditionError("split weeks must be non-negative");
  }
  const int required = train_weeks + val_weeks + test_weeks;
  const int available = d.range.days() / 7;
  if (required > available) {
    throw DataError("split needs " + std::to_string(required) + " weeks but dataset spans " +
                    std::to_string(available));
  }
  DateSplit s;
  const Date b0 = d.range.begin;
  const Date b1 = b0 + 7 * train_weeks;
  const Date b2 = b1 + 7 * val_weeks;
  const Date b3 = b2 + 7 * test_weeks;
  s.train.range = {b0, b1};
  s.validation.range = {b1, b2};
  s.test.range = {b2, b3};
  for (Dataset* part : {&s.train, &s.validation, &s.test}) part->segments = d.segments;
  for (const auto& o : d.observations) {
    if (s.train.range.contains(o.t.date)) {
      s.train.observations.push_back(o);
    } else if (s.validation.range.contains(o.t.date)) {
      s.validation.observations.push_back(o);
    } else if (s.test.range.contains(o.t.date)) {
      s.test.observations.push_back(o);
    }
  }
  return s;
}

Dataset select_priority(const Dataset& d, RoadPriority p) {
  std::vector<std::string> ids;
  for (const auto& [id, seg] : d.segments) {
    if (seg.priority == p) ids.push_back(id);
  }
  return select_segments(d, ids);
}

Dataset select_segments(const Dataset& d, const std::vector<std::string>& ids) {
  Dataset out;
  out.range = d.range;
  for (const auto& id : ids) {
    auto it = d.segments.find(id);
    if (it == d.segments.end()) throw DataError("unknown segment '" + id + "'");
    out.segments.emplace(id, it->second);
  }
  for (const auto& o : d.observations) {
    if (out.segments.contains(o.segment_id)) out.observations.push_back(o);
  }
  return out;
}

std::map<std::string, std::vector<Observation>> observations_by_segment(const Dataset& d) {
  std::map<std::string, std::vector<Observation>> out;
  for (const auto& o : d.observations) out[o.segment_id].push_back(o);
  for (auto& [id, obs] : out) {
    std::stable_sort(obs.begin(), obs.end(),
                     [](const Observation& a, const Observation& b) { return a.t < b.t; });
  }
  return out;
}

}  // namespace poolcf
