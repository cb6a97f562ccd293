#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "poolcf/domain.hpp"

namespace poolcf::bpr {

struct BprParams {
  double v_ff_mps = 0.0;
  double rho_crit_veh_per_m = 0.0;
  double c = 0.0;
  double p = 1.0;
};

// 1/v_ff below rho_crit (strictly), 1/v_ff + c (rho/rho_crit - 1)^p otherwise.
double bpr_inverse_speed(double rho, const BprParams& params);

// 1 / bpr_inverse_speed, clamped to [1, 45] m/s.
double bpr_predict_speed(const BprParams& params, double rho);

struct Box {
  std::array<double, 4> lo = {1.0, 1e-5, 0.0, 1.0};
  std::array<double, 4> hi = {45.0, 1.0, 100.0, 10.0};

  bool contains(const BprParams& p) const;
};

struct FitOptions {
  std::size_t min_samples = 20;
  double min_density_ratio = 2.0;
  int max_iterations = 200;
  double step_tolerance = 1e-10;
  double rss_tolerance = 1e-12;
  Box box;
};

FitOptions fit_options_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FitOptions& o);

struct DensitySpeed {
  double rho = 0.0;
  double speed_mps = 0.0;
};

enum class NoFitReason { TooFewSamples, NoDensitySpread, DidNotConverge };

std::string_view to_string(NoFitReason r);

struct Fitted {
  BprParams params;
  double rss = 0.0;  // sum of squared inverse-speed residuals
  std::size_t n = 0;
  int iterations = 0;
  bool converged = false;
};

struct NoFit {
  NoFitReason reason;
};

using FitOutcome = std::variant<Fitted, NoFit>;

// Sum over samples of (bpr_inverse_speed(rho) - 1/v)^2.
double residual_sum_of_squares(std::span<const DensitySpeed> samples, const BprParams& params);

// The three multi-start points (data heuristic, classic BPR shape, box
// midpoint), already inside the box. Requires a nonempty sample set.
std::array<BprParams, 3> initial_guesses(std::span<const DensitySpeed> samples, const Box& box);

// Bounded Levenberg-Marquardt with reflective steps at the box, best of three
// starts. Samples are sorted internally so ordering never matters.
FitOutcome fit_segment(std::span<const DensitySpeed> samples, const FitOptions& opts = {});

// One fit per segment, densities computed from observed flow and speed.
std::map<std::string, FitOutcome> fit_city(const Dataset& d, const FitOptions& opts = {});

namespace serial {
std::map<std::string, FitOutcome> fit_city(const Dataset& d, const FitOptions& opts = {});
}

std::vector<DensitySpeed> segment_samples(std::span<const Observation> obs);

struct FitSummary {
  std::size_t segments = 0;
  std::size_t fitted = 0;
  std::size_t no_fit = 0;

  double no_fit_fraction() const { return segments ? static_cast<double>(no_fit) / segments : 0.0; }
};

FitSummary summarize(const std::map<std::string, FitOutcome>& fits);

// bpr_fits.csv: segment_id,status,reason,v_ff_mps,rho_crit_veh_per_m,c,p,rss,n,iterations
void write_fits_csv(const std::map<std::string, FitOutcome>& fits, const std::filesystem::path& path);
std::map<std::string, FitOutcome> read_fits_csv(const std::filesystem::path& path);

}  // namespace poolcf::bpr
