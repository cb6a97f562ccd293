#include "poolcf/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "json_util.hpp"
#include "poolcf/error.hpp"
#include "poolcf/io.hpp"

namespace poolcf::synth {

SpeedResult greenshields_speed(double rho, const Greenshields& fd) {
  if (rho < 0) throw PreconditionError("density must be non-negative");
  const double v = fd.v_ff_mps * (1.0 - rho / fd.rho_crit_veh_per_m);
  if (v < kMinSpeedMps) return {kMinSpeedMps, true};
  return {v, false};
}

SpeedResult bpr_speed(double rho, const Bpr& fd) {
  if (rho < 0) throw PreconditionError("density must be non-negative");
  if (rho < fd.rho_crit_veh_per_m) return {fd.v_ff_mps, false};
  const double inv = 1.0 / fd.v_ff_mps + fd.c * std::pow(rho / fd.rho_crit_veh_per_m - 1.0, fd.p);
  const double v = 1.0 / inv;
  if (v < kMinSpeedMps) return {kMinSpeedMps, true};
  return {v, false};
}

SpeedResult true_speed(double rho, const GroundTruthFd& fd) {
  return std::visit(
      [rho](const auto& law) {
        if constexpr (std::is_same_v<std::decay_t<decltype(law)>, Greenshields>) {
          return greenshields_speed(rho, law);
        } else {
          return bpr_speed(rho, law);
        }
      },
      fd);
}

double flow_peak_density(const GroundTruthFd& fd) {
  if (const auto* g = std::get_if<Greenshields>(&fd)) return g->rho_crit_veh_per_m / 2.0;
  const auto& b = std::get<Bpr>(fd);
  // d(rho v)/d rho = 0  <=>  1/v_ff - c y^(p-1) ((p-1) y + p) = 0,  y = rho/rho_crit - 1.
  const double a = 1.0 / b.v_ff_mps;
  auto g = [&](double y) { return a - b.c * std::pow(y, b.p - 1.0) * ((b.p - 1.0) * y + b.p); };
  if (g(0.0) <= 0.0) return b.rho_crit_veh_per_m;
  double lo = 0.0, hi = 1.0;
  while (g(hi) > 0.0) {
    hi *= 2.0;
    if (hi > 1e6) return std::numeric_limits<double>::infinity();
  }
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) > 0.0 ? lo : hi) = mid;
  }
  return b.rho_crit_veh_per_m * (1.0 + 0.5 * (lo + hi));
}

// ---------------------------------------------------------------------------
// Config

namespace {

using detail::json;
using detail::optional;
using detail::reject_unknown_keys;
using detail::required;

void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("city config: " + what);
}

void check_interval(const Interval& r, const std::string& name) {
  check(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi, name + " must satisfy lo <= hi");
}

Interval interval_from_json(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(ctx + ": expected [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

IntInterval int_interval_from_json(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(ctx + ": expected [lo, hi]");
  return {j[0].get<int>(), j[1].get<int>()};
}

PriorityAttributes attributes_from_json(const json& j, const std::string& ctx) {
  reject_unknown_keys(j,
                      {"count", "length_m", "lanes", "lane_width_m", "speed_limit_mps", "v_ff_factor",
                       "rho_crit_per_lane", "bpr_c", "bpr_p"},
                      ctx);
  PriorityAttributes a;
  a.count = required<int>(j, "count", ctx);
  a.length_m = interval_from_json(required<json>(j, "length_m", ctx), ctx + ".length_m");
  a.lanes = int_interval_from_json(required<json>(j, "lanes", ctx), ctx + ".lanes");
  a.lane_width_m = interval_from_json(required<json>(j, "lane_width_m", ctx), ctx + ".lane_width_m");
  a.speed_limit_mps = interval_from_json(required<json>(j, "speed_limit_mps", ctx), ctx + ".speed_limit_mps");
  a.v_ff_factor = interval_from_json(required<json>(j, "v_ff_factor", ctx), ctx + ".v_ff_factor");
  a.rho_crit_per_lane = interval_from_json(required<json>(j, "rho_crit_per_lane", ctx), ctx + ".rho_crit_per_lane");
  a.bpr_c = interval_from_json(required<json>(j, "bpr_c", ctx), ctx + ".bpr_c");
  a.bpr_p = interval_from_json(required<json>(j, "bpr_p", ctx), ctx + ".bpr_p");
  return a;
}

json to_json(const Interval& r) { return json::array({r.lo, r.hi}); }
json to_json(const IntInterval& r) { return json::array({r.lo, r.hi}); }

json to_json(const PriorityAttributes& a) {
  return json{{"count", a.count},
              {"length_m", to_json(a.length_m)},
              {"lanes", to_json(a.lanes)},
              {"lane_width_m", to_json(a.lane_width_m)},
              {"speed_limit_mps", to_json(a.speed_limit_mps)},
              {"v_ff_factor", to_json(a.v_ff_factor)},
              {"rho_crit_per_lane", to_json(a.rho_crit_per_lane)},
              {"bpr_c", to_json(a.bpr_c)},
              {"bpr_p", to_json(a.bpr_p)}};
}

void validate_attributes(const PriorityAttributes& a, const std::string& name) {
  check(a.count >= 0, name + ".count must be >= 0");
  check_interval(a.length_m, name + ".length_m");
  check(a.length_m.lo > 0, name + ".length_m must be positive");
  check(a.lanes.lo >= 1 && a.lanes.lo <= a.lanes.hi, name + ".lanes must satisfy 1 <= lo <= hi");
  check_interval(a.lane_width_m, name + ".lane_width_m");
  check(a.lane_width_m.lo >= 2.0, name + ".lane_width_m must be >= 2 m");
  check_interval(a.speed_limit_mps, name + ".speed_limit_mps");
  check_interval(a.v_ff_factor, name + ".v_ff_factor");
  check(a.speed_limit_mps.lo * a.v_ff_factor.lo >= 1.0 && a.speed_limit_mps.hi * a.v_ff_factor.hi <= 45.0,
        name + ": free-flow speed must stay within [1, 45] m/s");
  check_interval(a.rho_crit_per_lane, name + ".rho_crit_per_lane");
  check(a.rho_crit_per_lane.lo > 0, name + ".rho_crit_per_lane must be positive");
  check_interval(a.bpr_c, name + ".bpr_c");
  check(a.bpr_c.lo >= 0, name + ".bpr_c must be >= 0");
  check_interval(a.bpr_p, name + ".bpr_p");
  check(a.bpr_p.lo >= 1, name + ".bpr_p must be >= 1");
}

}  // namespace

void validate(const CityConfig& cfg) {
  check(!cfg.name.empty() && cfg.name.find_first_of(",\n") == std::string::npos,
        "name must be non-empty and contain no commas");
  check(cfg.highway.count + cfg.arterial.count >= 1, "need at least one segment");
  check(cfg.weeks >= 1, "weeks must be >= 1");
  check(cfg.penetration > 0 && cfg.penetration <= 1, "penetration must be in (0, 1]");
  check(cfg.speed_noise_sigma >= 0, "speed_noise_sigma must be >= 0");
  const auto& d = cfg.demand;
  check(d.base_density_fraction > 0, "demand.base_density_fraction must be positive");
  check(d.peak_density_fraction >= d.base_density_fraction,
        "demand.peak_density_fraction must be >= base_density_fraction");
  for (const auto& h : d.peak_hours) {
    check(h.first >= 0 && h.first <= h.last && h.last <= 23, "demand.peak_hours ranges must lie in 0..23");
  }
  check(d.weekend_scale > 0 && d.weekend_scale <= 1, "demand.weekend_scale must be in (0, 1]");
  check(d.noise_sigma >= 0, "demand.noise_sigma must be >= 0");
  check(d.grid_step > 0, "demand.grid_step must be positive");
  check(d.max_density_fraction >= d.grid_step, "demand.max_density_fraction must be >= grid_step");
  check_interval(d.segment_scale, "demand.segment_scale");
  check(d.segment_scale.lo > 0, "demand.segment_scale must be positive");
  if (cfg.fd_family == FdFamily::Greenshields) {
    check(d.max_density_fraction < 1.0, "greenshields demand must stay below the zero-speed density");
  }
  validate_attributes(cfg.highway, "highway");
  validate_attributes(cfg.arterial, "arterial");
  check(cfg.undersampled_fraction >= 0 && cfg.undersampled_fraction <= 1,
        "undersampled_fraction must be in [0, 1]");
  check(cfg.undersampled_hours_per_week >= 1 && cfg.undersampled_hours_per_week <= 15,
        "undersampled_hours_per_week must be in 1..15");
}

CityConfig city_config_from_json(const json& j) {
  const std::string ctx = "city";
  reject_unknown_keys(j,
                      {"name", "seed", "start_date", "weeks", "penetration", "speed_noise_sigma", "fd_family",
                       "demand", "highway", "arterial", "undersampled_fraction",
                       "undersampled_hours_per_week"},
                      ctx);
  CityConfig c;
  c.name = required<std::string>(j, "name", ctx);
  c.seed = required<std::uint64_t>(j, "seed", ctx);
  c.start_date = Date::from_iso(required<std::string>(j, "start_date", ctx));
  c.weeks = required<int>(j, "weeks", ctx);
  c.penetration = required<double>(j, "penetration", ctx);
  c.speed_noise_sigma = required<double>(j, "speed_noise_sigma", ctx);
  const auto family = required<std::string>(j, "fd_family", ctx);
  if (family == "greenshields") {
    c.fd_family = FdFamily::Greenshields;
  } else if (family == "bpr") {
    c.fd_family = FdFamily::Bpr;
  } else {
    throw ConfigError("city.fd_family must be 'greenshields' or 'bpr'");
  }

  const json& dj = required<json>(j, "demand", ctx);
  const std::string dctx = "city.demand";
  reject_unknown_keys(dj,
                      {"base_density_fraction", "peak_density_fraction", "peak_hours", "weekend_scale",
                       "noise_sigma", "grid_step", "max_density_fraction", "segment_scale"},
                      dctx);
  c.demand.base_density_fraction = required<double>(dj, "base_density_fraction", dctx);
  c.demand.peak_density_fraction = required<double>(dj, "peak_density_fraction", dctx);
  c.demand.peak_hours.clear();
  for (const auto& h : required<json>(dj, "peak_hours", dctx)) {
    auto r = int_interval_from_json(h, dctx + ".peak_hours");
    c.demand.peak_hours.push_back({r.lo, r.hi});
  }
  c.demand.weekend_scale = required<double>(dj, "weekend_scale", dctx);
  c.demand.noise_sigma = required<double>(dj, "noise_sigma", dctx);
  c.demand.grid_step = required<double>(dj, "grid_step", dctx);
  c.demand.max_density_fraction = required<double>(dj, "max_density_fraction", dctx);
  c.demand.segment_scale = interval_from_json(required<json>(dj, "segment_scale", dctx), dctx + ".segment_scale");

  c.highway = attributes_from_json(required<json>(j, "highway", ctx), "city.highway");
  c.arterial = attributes_from_json(required<json>(j, "arterial", ctx), "city.arterial");
  c.undersampled_fraction = optional<double>(j, "undersampled_fraction", 0.0, ctx);
  c.undersampled_hours_per_week = optional<int>(j, "undersampled_hours_per_week", 3, ctx);
  validate(c);
  return c;
}

nlohmann::json to_json(const CityConfig& c) {
  json peaks = json::array();
  for (const auto& h : c.demand.peak_hours) peaks.push_back(json::array({h.first, h.last}));
  return json{{"name", c.name},
              {"seed", c.seed},
              {"start_date", c.start_date.iso()},
              {"weeks", c.weeks},
              {"penetration", c.penetration},
              {"speed_noise_sigma", c.speed_noise_sigma},
              {"fd_family", c.fd_family == FdFamily::Greenshields ? "greenshields" : "bpr"},
              {"demand",
               {{"base_density_fraction", c.demand.base_density_fraction},
                {"peak_density_fraction", c.demand.peak_density_fraction},
                {"peak_hours", peaks},
                {"weekend_scale", c.demand.weekend_scale},
                {"noise_sigma", c.demand.noise_sigma},
                {"grid_step", c.demand.grid_step},
                {"max_density_fraction", c.demand.max_density_fraction},
                {"segment_scale", to_json(c.demand.segment_scale)}}},
              {"highway", to_json(c.highway)},
              {"arterial", to_json(c.arterial)},
              {"undersampled_fraction", c.undersampled_fraction},
              {"undersampled_hours_per_week", c.undersampled_hours_per_week}};
}

// ---------------------------------------------------------------------------
// Generation

namespace {

constexpr int kFirstHour = 7;
constexpr int kLastHour = 21;
constexpr int kUndersampledDow = 2;  // Wednesday
constexpr int kUndersampledFirstHour = 16;

enum Stream : std::uint64_t { kAttributes = 0, kDemand = 1, kSpeedNoise = 2, kCountNoise = 3, kSelection = 4 };

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t index, Stream tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& g, const Interval& r) {
  return std::uniform_real_distribution<double>(r.lo, r.hi)(g);
}

struct SegmentPlan {
  std::size_t index = 0;  // global, determines the substreams
  RoadPriority priority = RoadPriority::Highway;
  int ordinal = 0;  // within priority
  bool undersampled = false;
};

struct SegmentOutput {
  Segment segment;
  GroundTruthFd fd;
  std::vector<Observation> observations;
  std::size_t clamped = 0;
};

bool in_peak(const DemandProfile& d, int hour) {
  return std::any_of(d.peak_hours.begin(), d.peak_hours.end(),
                     [hour](const HourRange& r) { return hour >= r.first && hour <= r.last; });
}

bool next_to_peak(const DemandProfile& d, int hour) {
  return std::any_of(d.peak_hours.begin(), d.peak_hours.end(),
                     [hour](const HourRange& r) { return hour == r.first - 1 || hour == r.last + 1; });
}

double nominal_fraction(const DemandProfile& d, int dow, int hour) {
  if (dow >= 5) return d.base_density_fraction * d.weekend_scale;
  if (in_peak(d, hour)) return d.peak_density_fraction;
  if (next_to_peak(d, hour)) return 0.5 * (d.base_density_fraction + d.peak_density_fraction);
  return d.base_density_fraction;
}

double snap(double fraction, const DemandProfile& d) {
  const double snapped = std::round(fraction / d.grid_step) * d.grid_step;
  return std::clamp(snapped, d.grid_step, d.max_density_fraction);
}

std::vector<SegmentPlan> plan_segments(const CityConfig& cfg) {
  std::vector<SegmentPlan> plans;
  auto add = [&](RoadPriority p, int count) {
    std::vector<SegmentPlan> group;
    for (int i = 0; i < count; ++i) {
      group.push_back({plans.size() + group.size(), p, i, false});
    }
    const auto k = static_cast<std::size_t>(std::llround(cfg.undersampled_fraction * count));
    if (k > 0) {
      std::vector<std::size_t> order(group.size());
      std::iota(order.begin(), order.end(), 0);
      auto g = substream(cfg.seed, static_cast<std::uint64_t>(p), kSelection);
      std::shuffle(order.begin(), order.end(), g);
      for (std::size_t i = 0; i < k; ++i) group[order[i]].undersampled = true;
    }
    plans.insert(plans.end(), group.begin(), group.end());
  };
  add(RoadPriority::Highway, cfg.highway.count);
  add(RoadPriority::Arterial, cfg.arterial.count);
  return plans;
}

std::string segment_id(const CityConfig& cfg, const SegmentPlan& plan) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-%c%05d", plan.priority == RoadPriority::Highway ? 'h' : 'a', plan.ordinal);
  return cfg.name + buf;
}

SegmentOutput generate_segment(const CityConfig& cfg, const SegmentPlan& plan) {
  const PriorityAttributes& attrs = plan.priority == RoadPriority::Highway ? cfg.highway : cfg.arterial;
  auto attr_rng = substream(cfg.seed, plan.index, kAttributes);
  auto demand_rng = substream(cfg.seed, plan.index, kDemand);
  auto speed_rng = substream(cfg.seed, plan.index, kSpeedNoise);
  auto count_rng = substream(cfg.seed, plan.index, kCountNoise);

  SegmentOutput out;
  Segment& s = out.segment;
  s.id = segment_id(cfg, plan);
  s.city = cfg.name;
  s.priority = plan.priority;
  s.length_m = uniform(attr_rng, attrs.length_m);
  s.lanes = std::uniform_int_distribution<int>(attrs.lanes.lo, attrs.lanes.hi)(attr_rng);
  s.width_m = s.lanes * uniform(attr_rng, attrs.lane_width_m);
  s.speed_limit_mps = uniform(attr_rng, attrs.speed_limit_mps);
  // Every parameter is drawn regardless of family so both families share the
  // same attribute stream.
  const double v_ff = s.speed_limit_mps * uniform(attr_rng, attrs.v_ff_factor);
  const double rho_crit = s.lanes * uniform(attr_rng, attrs.rho_crit_per_lane);
  const double c = uniform(attr_rng, attrs.bpr_c);
  const double p = uniform(attr_rng, attrs.bpr_p);
  const double demand_scale = uniform(attr_rng, cfg.demand.segment_scale);
  if (cfg.fd_family == FdFamily::Greenshields) {
    out.fd = Greenshields{v_ff, rho_crit};
  } else {
    out.fd = Bpr{v_ff, rho_crit, c, p};
  }

  // One distribution object per engine: normal_distribution caches a spare draw.
  std::normal_distribution<double> demand_normal(0.0, 1.0);
  std::normal_distribution<double> speed_normal(0.0, 1.0);
  const int days = cfg.weeks * 7;
  for (int day = 0; day < days; ++day) {
    const Date date = cfg.start_date + day;
    const int dow = date.weekday();
    for (int hour = kFirstHour; hour <= kLastHour; ++hour) {
      // Draws happen unconditionally so that noise settings and undersampling
      // never shift the demand stream.
      const double demand_z = demand_normal(demand_rng);
      const double speed_z = speed_normal(speed_rng);
      const double fraction = snap(
          nominal_fraction(cfg.demand, dow, hour) * demand_scale * std::exp(cfg.demand.noise_sigma * demand_z),
          cfg.demand);
      const double rho = fraction * rho_crit;
      const SpeedResult truth = true_speed(rho, out.fd);
      if (truth.clamped) ++out.clamped;
      const double total_flow = rho * truth.speed_mps * 3600.0;
      double observed_flow = total_flow;
      if (cfg.penetration < 1.0) {
        std::poisson_distribution<long long> counts(cfg.penetration * total_flow);
        observed_flow = static_cast<double>(counts(count_rng));
      }
      const double observed_speed =
          std::clamp(truth.speed_mps * std::exp(cfg.speed_noise_sigma * speed_z), kMinSpeedMps, 45.0);

      if (plan.undersampled &&
          (dow != kUndersampledDow || hour < kUndersampledFirstHour ||
           hour >= kUndersampledFirstHour + cfg.undersampled_hours_per_week)) {
        continue;
      }
      out.observations.push_back({s.id, HourStamp{date, hour, dow}, observed_flow, observed_speed});
    }
  }
  return out;
}

SyntheticCity assemble(const CityConfig& cfg, std::vector<SegmentOutput>&& parts) {
  SyntheticCity city;
  city.data.range = {cfg.start_date, cfg.start_date + cfg.weeks * 7};
  std::size_t total = 0;
  for (const auto& part : parts) total += part.observations.size();
  city.data.observations.reserve(total);
  for (auto& part : parts) {
    city.truth.emplace(part.segment.id, part.fd);
    city.clamped_speeds += part.clamped;
    city.data.segments.emplace(part.segment.id, std::move(part.segment));
    std::move(part.observations.begin(), part.observations.end(), std::back_inserter(city.data.observations));
  }
  std::stable_sort(city.data.observations.begin(), city.data.observations.end(), observation_before);
  return city;
}

}  // namespace

SyntheticCity generate_city(const CityConfig& cfg) {
  validate(cfg);
  const auto plans = plan_segments(cfg);
  std::vector<SegmentOutput> parts(plans.size());
  const auto n = static_cast<std::ptrdiff_t>(plans.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    parts[i] = generate_segment(cfg, plans[i]);
  }
  return assemble(cfg, std::move(parts));
}

namespace serial {

SyntheticCity generate_city(const CityConfig& cfg) {
  validate(cfg);
  const auto plans = plan_segments(cfg);
  std::vector<SegmentOutput> parts;
  parts.reserve(plans.size());
  for (const auto& plan : plans) parts.push_back(generate_segment(cfg, plan));
  return assemble(cfg, std::move(parts));
}

}  // namespace serial

// ---------------------------------------------------------------------------
// Files

void write_truth_csv(const std::map<std::string, GroundTruthFd>& truth, const std::filesystem::path& path) {
  io::CsvWriter w({"segment_id", "fd_kind", "v_ff_mps", "rho_crit_veh_per_m", "c", "p"});
  for (const auto& [id, fd] : truth) {
    w.add(id);
    if (const auto* g = std::get_if<Greenshields>(&fd)) {
      w.add("greenshields").add(g->v_ff_mps).add(g->rho_crit_veh_per_m).add_empty().add_empty();
    } else {
      const auto& b = std::get<Bpr>(fd);
      w.add("bpr").add(b.v_ff_mps).add(b.rho_crit_veh_per_m).add(b.c).add(b.p);
    }
    w.end_row();
  }
  w.write(path);
}

std::map<std::string, GroundTruthFd> read_truth_csv(const std::filesystem::path& path) {
  const auto t = io::read_csv(path);
  io::expect_header(t, {"segment_id", "fd_kind", "v_ff_mps", "rho_crit_veh_per_m", "c", "p"}, path);
  std::map<std::string, GroundTruthFd> out;
  for (const auto& r : t.rows) {
    if (r[1] == "greenshields") {
      out.emplace(r[0], Greenshields{io::parse_real(r[2]), io::parse_real(r[3])});
    } else if (r[1] == "bpr") {
      out.emplace(r[0], Bpr{io::parse_real(r[2]), io::parse_real(r[3]), io::parse_real(r[4]), io::parse_real(r[5])});
    } else {
      throw DataError(path.string() + ": unknown fd_kind '" + r[1] + "'");
    }
  }
  return out;
}

void write_city(const SyntheticCity& city, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_segments_csv(city.data, dir / "segments.csv");
  io::write_observations_csv(city.data, dir / "observations.csv");
  write_truth_csv(city.truth, dir / "truth.csv");
}

}  // namespace poolcf::synth
