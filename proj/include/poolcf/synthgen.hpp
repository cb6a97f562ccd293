#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "poolcf/domain.hpp"

namespace poolcf::synth {

// Linear speed-density law. rho_crit_veh_per_m is the zero-speed density of
// the parabola; the flow maximum sits at rho_crit / 2.
struct Greenshields {
  double v_ff_mps = 0.0;
  double rho_crit_veh_per_m = 0.0;
};

// Piecewise BPR law: 1/v = 1/v_ff below rho_crit, 1/v_ff + c (rho/rho_crit - 1)^p above.
struct Bpr {
  double v_ff_mps = 0.0;
  double rho_crit_veh_per_m = 0.0;
  double c = 0.0;
  double p = 1.0;
};

using GroundTruthFd = std::variant<Greenshields, Bpr>;

struct SpeedResult {
  double speed_mps = 0.0;
  bool clamped = false;  // hit the 1 m/s congested floor
};

inline constexpr double kMinSpeedMps = 1.0;

SpeedResult greenshields_speed(double rho, const Greenshields& fd);
SpeedResult bpr_speed(double rho, const Bpr& fd);
SpeedResult true_speed(double rho, const GroundTruthFd& fd);

// Rho at which the law's total flow rho * v(rho) peaks.
double flow_peak_density(const GroundTruthFd& fd);

enum class FdFamily { Greenshields, Bpr };

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct IntInterval {
  int lo = 0;
  int hi = 0;
};

struct HourRange {
  int first = 0;  // inclusive
  int last = 0;   // inclusive
};

// Demand is expressed as a fraction of the segment's rho_crit.
struct DemandProfile {
  double base_density_fraction = 0.25;
  double peak_density_fraction = 0.7;
  std::vector<HourRange> peak_hours = {{8, 9}, {17, 18}};
  double weekend_scale = 0.8;
  double noise_sigma = 0.05;       // multiplicative lognormal jitter on the fraction
  double grid_step = 0.1;          // fractions are snapped to multiples of this
  double max_density_fraction = 0.85;
  Interval segment_scale{1.0, 1.0};  // per-segment demand multiplier
};

struct PriorityAttributes {
  int count = 0;
  Interval length_m{200.0, 2000.0};
  IntInterval lanes{2, 4};
  Interval lane_width_m{3.5, 3.7};
  Interval speed_limit_mps{24.6, 33.5};
  Interval v_ff_factor{0.9, 1.1};
  Interval rho_crit_per_lane{0.1, 0.1};  // veh/m per lane
  Interval bpr_c{0.05, 0.2};
  Interval bpr_p{1.5, 3.0};
};

struct CityConfig {
  std::string name;
  std::uint64_t seed = 0;
  Date start_date;
  int weeks = 7;
  double penetration = 1.0;
  double speed_noise_sigma = 0.0;
  FdFamily fd_family = FdFamily::Greenshields;
  DemandProfile demand;
  PriorityAttributes highway;
  PriorityAttributes arterial;
  // Fraction of segments per priority that only report a few hours per week.
  double undersampled_fraction = 0.0;
  int undersampled_hours_per_week = 3;
};

// Throws ConfigError on invariant violations.
void validate(const CityConfig& cfg);

CityConfig city_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CityConfig& cfg);

struct SyntheticCity {
  Dataset data;
  std::map<std::string, GroundTruthFd> truth;
  std::size_t clamped_speeds = 0;
};

// Deterministic in cfg. Segments are generated in parallel; each one draws
// from its own substream keyed by (seed, segment index) so the schedule does
// not affect the output.
SyntheticCity generate_city(const CityConfig& cfg);

namespace serial {
SyntheticCity generate_city(const CityConfig& cfg);
}

// truth.csv: segment_id,fd_kind,v_ff_mps,rho_crit_veh_per_m,c,p
void write_truth_csv(const std::map<std::string, GroundTruthFd>& truth, const std::filesystem::path& path);
std::map<std::string, GroundTruthFd> read_truth_csv(const std::filesystem::path& path);

// segments.csv, observations.csv and truth.csv into dir.
void write_city(const SyntheticCity& city, const std::filesystem::path& dir);

}  // namespace poolcf::synth
