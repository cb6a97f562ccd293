#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace poolcf {

enum class RoadPriority { Highway, Arterial };

std::string_view to_string(RoadPriority p);
RoadPriority parse_priority(std::string_view s);

// Static roadway record.
struct Segment {
  std::string id;
  std::string city;
  RoadPriority priority = RoadPriority::Highway;
  double length_m = 0.0;
  int lanes = 1;
  double width_m = 0.0;  // sum of lane widths
  double speed_limit_mps = 0.0;
};

// Calendar day as a count of days since 1970-01-01.
struct Date {
  int days = 0;

  static Date from_iso(std::string_view iso);  // YYYY-MM-DD
  std::string iso() const;
  int weekday() const;  // 0 = Monday ... 6 = Sunday

  Date operator+(int n) const { return Date{days + n}; }
  friend int operator-(Date a, Date b) { return a.days - b.days; }
  friend auto operator<=>(const Date&, const Date&) = default;
};

// Hourly interval [hour, hour + 1) on a given day.
struct HourStamp {
  Date date;
  int hour = 0;  // 0..23
  int dow = 0;   // 0 = Monday

  friend bool operator==(const HourStamp& a, const HourStamp& b) {
    return a.date == b.date && a.hour == b.hour;
  }
  friend auto operator<=>(const HourStamp& a, const HourStamp& b) {
    if (auto c = a.date <=> b.date; c != 0) return c;
    return a.hour <=> b.hour;
  }
};

struct Observation {
  std::string segment_id;
  HourStamp t;
  double partial_flow_vph = 0.0;
  double mean_speed_mps = 0.0;
};

// [begin, end)
struct DateRange {
  Date begin;
  Date end;

  int days() const { return end - begin; }
  bool contains(Date d) const { return begin <= d && d < end; }
};

struct Dataset {
  std::map<std::string, Segment> segments;
  std::vector<Observation> observations;  // time-ordered
  DateRange range;

  bool empty() const { return observations.empty(); }
};

// Sort key for observations: time first, then segment id.
bool observation_before(const Observation& a, const Observation& b);

// Throws DataError if any observation references an unknown segment.
void validate(const Dataset& d);

struct FilterRules {
  double min_length_m = 20.0;
  double min_speed_mps = 1.0;
  double max_speed_mps = 45.0;
  int first_hour = 7;  // interval start hours first_hour..last_hour inclusive
  int last_hour = 21;
};

struct FilterReport {
  std::size_t segments_too_short = 0;
  std::size_t observations_of_dropped_segments = 0;
  std::size_t observations_speed_out_of_range = 0;
  std::size_t observations_outside_hours = 0;

  std::size_t dropped_observations() const {
    return observations_of_dropped_segments + observations_speed_out_of_range +
           observations_outside_hours;
  }
};

struct FilterResult {
  Dataset data;
  FilterReport report;
};

// Drops short segments, out-of-range speeds and out-of-window hours.
// Throws EmptyDatasetError when nothing survives.
FilterResult filter_dataset(const Dataset& raw, const FilterRules& rules = {});

// rho = q / (3600 v), vehicles per meter. Requires speed >= 1 m/s.
double density_veh_per_m(double partial_flow_vph, double mean_speed_mps);
double density_veh_per_m(const Observation& obs);

struct DateSplit {
  Dataset train;
  Dataset validation;
  Dataset test;
};

// Contiguous week blocks starting at d.range.begin.
DateSplit split_by_date(const Dataset& d, int train_weeks, int val_weeks, int test_weeks);

// Subset keeping only segments with the given priority (and their observations).
Dataset select_priority(const Dataset& d, RoadPriority p);

// Subset keeping only the listed segment ids.
Dataset select_segments(const Dataset& d, const std::vector<std::string>& ids);

// Observations grouped by segment, each group in time order.
std::map<std::string, std::vector<Observation>> observations_by_segment(const Dataset& d);

}  // namespace poolcf
