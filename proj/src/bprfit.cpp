#include "poolcf/bprfit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json_util.hpp"
#include "poolcf/error.hpp"
#include "poolcf/io.hpp"

namespace poolcf::bpr {

double bpr_inverse_speed(double rho, const BprParams& params) {
  if (rho < params.rho_crit_veh_per_m) return 1.0 / params.v_ff_mps;
  return 1.0 / params.v_ff_mps + params.c * std::pow(rho / params.rho_crit_veh_per_m - 1.0, params.p);
}

double bpr_predict_speed(const BprParams& params, double rho) {
  return std::clamp(1.0 / bpr_inverse_speed(rho, params), 1.0, 45.0);
}

bool Box::contains(const BprParams& p) const {
  const std::array<double, 4> x = {p.v_ff_mps, p.rho_crit_veh_per_m, p.c, p.p};
  for (int i = 0; i < 4; ++i) {
    if (!(x[i] >= lo[i] && x[i] <= hi[i])) return false;
  }
  return true;
}

std::string_view to_string(NoFitReason r) {
  switch (r) {
    case NoFitReason::TooFewSamples:
      return "too_few_samples";
    case NoFitReason::NoDensitySpread:
      return "no_density_spread";
    case NoFitReason::DidNotConverge:
      return "did_not_converge";
  }
  return "unknown";
}

FitOptions fit_options_from_json(const nlohmann::json& j) {
  using detail::optional;
  const std::string ctx = "bprfit";
  detail::reject_unknown_keys(
      j, {"min_samples", "min_density_ratio", "max_iterations", "step_tolerance", "rss_tolerance"}, ctx);
  FitOptions o;
  o.min_samples = optional<std::size_t>(j, "min_samples", o.min_samples, ctx);
  o.min_density_ratio = optional<double>(j, "min_density_ratio", o.min_density_ratio, ctx);
  o.max_iterations = optional<int>(j, "max_iterations", o.max_iterations, ctx);
  o.step_tolerance = optional<double>(j, "step_tolerance", o.step_tolerance, ctx);
  o.rss_tolerance = optional<double>(j, "rss_tolerance", o.rss_tolerance, ctx);
  if (o.max_iterations < 1) throw ConfigError("bprfit.max_iterations must be >= 1");
  return o;
}

nlohmann::json to_json(const FitOptions& o) {
  return {{"min_samples", o.min_samples},
          {"min_density_ratio", o.min_density_ratio},
          {"max_iterations", o.max_iterations},
          {"step_tolerance", o.step_tolerance},
          {"rss_tolerance", o.rss_tolerance}};
}

namespace {

// Residuals of noiseless data sit at the rounding floor, so they are formed
// in extended precision.
long double inverse_speed_ld(double rho, const BprParams& q) {
  long double inv = 1.0L / q.v_ff_mps;
  if (rho >= q.rho_crit_veh_per_m) {
    inv += q.c * std::pow(static_cast<long double>(rho) / q.rho_crit_veh_per_m - 1.0L,
                          static_cast<long double>(q.p));
  }
  return inv;
}

}  // namespace

double residual_sum_of_squares(std::span<const DensitySpeed> samples, const BprParams& params) {
  long double rss = 0.0L;
  for (const auto& s : samples) {
    const long double r = inverse_speed_ld(s.rho, params) - 1.0L / s.speed_mps;
    rss += r * r;
  }
  return static_cast<double>(rss);
}

namespace {

using Vec4 = std::array<double, 4>;

Vec4 to_vec(const BprParams& p) { return {p.v_ff_mps, p.rho_crit_veh_per_m, p.c, p.p}; }
BprParams to_params(const Vec4& x) { return {x[0], x[1], x[2], x[3]}; }

Vec4 clamp_into(const Vec4& x, const Box& box) {
  Vec4 out;
  for (int i = 0; i < 4; ++i) out[i] = std::clamp(x[i], box.lo[i], box.hi[i]);
  return out;
}

// Mirror an overshoot back into the box, then clip anything still outside.
double reflect(double y, double lo, double hi) {
  if (y < lo) y = lo + (lo - y);
  if (y > hi) y = hi - (y - hi);
  return std::clamp(y, lo, hi);
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(i);
  return i + 1 < v.size() ? v[i] + frac * (v[i + 1] - v[i]) : v[i];
}

struct Evaluation {
  double rss = 0.0;
  Vec4 g{};                       // J^T r
  std::array<Vec4, 4> jtj{};      // J^T J
  bool finite = true;
};

Evaluation evaluate(std::span<const DensitySpeed> samples, const Vec4& x, bool with_jacobian) {
  Evaluation e;
  const double vff = x[0], rc = x[1], c = x[2], p = x[3];
  long double rss = 0.0L;
  for (const auto& s : samples) {
    Vec4 j{-1.0 / (vff * vff), 0.0, 0.0, 0.0};
    long double model = 1.0L / vff;
    if (s.rho >= rc) {
      // Congested branch, also used for the one-sided derivative at rho == rho_crit.
      const long double u = static_cast<long double>(s.rho) / rc - 1.0L;
      const long double up = std::pow(u, static_cast<long double>(p));
      model += c * up;
      if (with_jacobian) {
        const double ud = static_cast<double>(u);
        j[1] = -c * p * std::pow(ud, p - 1.0) * s.rho / (rc * rc);
        j[2] = static_cast<double>(up);
        j[3] = ud > 0.0 ? c * static_cast<double>(up) * std::log(ud) : 0.0;
      }
    }
    const long double rl = model - 1.0L / s.speed_mps;
    rss += rl * rl;
    const double r = static_cast<double>(rl);
    if (with_jacobian) {
      for (int a = 0; a < 4; ++a) {
        e.g[a] += j[a] * r;
        for (int b = 0; b < 4; ++b) e.jtj[a][b] += j[a] * j[b];
      }
    }
  }
  e.rss = static_cast<double>(rss);
  e.finite = std::isfinite(e.rss);
  if (with_jacobian) {
    for (int a = 0; a < 4; ++a) {
      e.finite = e.finite && std::isfinite(e.g[a]);
      for (int b = 0; b < 4; ++b) e.finite = e.finite && std::isfinite(e.jtj[a][b]);
    }
  }
  return e;
}

// Solves A x = b restricted to the free coordinates with Gaussian elimination
// and partial pivoting. Returns false on a singular system.
bool solve_free(std::array<Vec4, 4> a, Vec4 b, const std::array<bool, 4>& free, Vec4& x) {
  std::array<int, 4> idx{};
  int n = 0;
  for (int i = 0; i < 4; ++i) {
    if (free[i]) idx[n++] = i;
  }
  x = {0, 0, 0, 0};
  if (n == 0) return false;
  double m[4][5];
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) m[r][c] = a[idx[r]][idx[c]];
    m[r][n] = b[idx[r]];
  }
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    }
    if (!(std::abs(m[piv][col]) > 0.0)) return false;
    if (piv != col) {
      for (int c = 0; c <= n; ++c) std::swap(m[piv][c], m[col][c]);
    }
    for (int r = col + 1; r < n; ++r) {
      const double f = m[r][col] / m[col][col];
      for (int c = col; c <= n; ++c) m[r][c] -= f * m[col][c];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    double s = m[r][n];
    for (int c = r + 1; c < n; ++c) s -= m[r][c] * m[c][n];
    m[r][n] = s / m[r][r];
  }
  for (int r = 0; r < n; ++r) x[idx[r]] = m[r][n];
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

struct LocalFit {
  Vec4 x{};
  double rss = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  bool finite = false;
};

constexpr int kPolishSteps = 10;

LocalFit levenberg_marquardt(std::span<const DensitySpeed> samples, const Vec4& start, const FitOptions& opts) {
  const Box& box = opts.box;
  LocalFit fit;
  fit.x = clamp_into(start, box);
  Evaluation cur = evaluate(samples, fit.x, true);
  if (!cur.finite) return fit;
  fit.finite = true;
  fit.rss = cur.rss;

  // Marquardt diagonal scaling, non-decreasing. Columns that vanish at the
  // start (e.g. c when every sample is free-flowing) get a floor relative to
  // the largest one.
  Vec4 scale{};
  double max_diag = 0.0;
  for (int i = 0; i < 4; ++i) max_diag = std::max(max_diag, cur.jtj[i][i]);
  for (int i = 0; i < 4; ++i) scale[i] = std::max({cur.jtj[i][i], 1e-10 * max_diag, 1e-300});
  double lambda = 1e-3;
  int polish = 0;

  while (fit.iterations < opts.max_iterations) {
    if (fit.rss == 0.0) {
      fit.converged = true;
      break;
    }
    ++fit.iterations;
    // Coordinates pinned at a bound with the descent direction pointing out
    // of the box stay fixed for this iteration.
    std::array<bool, 4> free{};
    for (int i = 0; i < 4; ++i) {
      const double span = box.hi[i] - box.lo[i];
      const bool at_lo = fit.x[i] <= box.lo[i] + 1e-15 * span && cur.g[i] > 0.0;
      const bool at_hi = fit.x[i] >= box.hi[i] - 1e-15 * span && cur.g[i] < 0.0;
      free[i] = !(at_lo || at_hi);
    }

    bool accepted = false;
    while (!accepted) {
      std::array<Vec4, 4> a = cur.jtj;
      for (int i = 0; i < 4; ++i) a[i][i] += lambda * scale[i];
      Vec4 rhs{};
      for (int i = 0; i < 4; ++i) rhs[i] = -cur.g[i];
      Vec4 step{};
      if (!solve_free(a, rhs, free, step)) {
        lambda *= 10.0;
        if (lambda > 1e20) break;
        continue;
      }
      Vec4 trial{};
      for (int i = 0; i < 4; ++i) trial[i] = reflect(fit.x[i] + step[i], box.lo[i], box.hi[i]);
      const Evaluation next = evaluate(samples, trial, false);
      if (next.finite && next.rss < fit.rss) {
        double step_norm = 0.0;
        for (int i = 0; i < 4; ++i) {
          const double typical = std::max(std::abs(fit.x[i]), 1e-6 * (box.hi[i] - box.lo[i]));
          const double d = (trial[i] - fit.x[i]) / typical;
          step_norm += d * d;
        }
        step_norm = std::sqrt(step_norm);
        const double improvement = (fit.rss - next.rss) / fit.rss;
        fit.x = trial;
        fit.rss = next.rss;
        cur = evaluate(samples, fit.x, true);
        for (int i = 0; i < 4; ++i) scale[i] = std::max(scale[i], cur.jtj[i][i]);
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (step_norm < opts.step_tolerance || improvement < opts.rss_tolerance) fit.converged = true;
        if (fit.converged) ++polish;
      } else {
        lambda *= 4.0;
        if (lambda > 1e20) break;
      }
    }
    // No downhill step at any damping: the point is stationary within the box.
    if (!accepted) {
      fit.converged = true;
      break;
    }
    // Once converged keep taking steps while they still lower the RSS, which
    // matters when the data are exact and the optimum is at the rounding floor.
    if (polish >= kPolishSteps) break;
  }
  return fit;
}

}  // namespace

std::array<BprParams, 3> initial_guesses(std::span<const DensitySpeed> samples, const Box& box) {
  if (samples.empty()) throw PreconditionError("initial_guesses: no samples");
  std::vector<double> speeds, rhos;
  for (const auto& s : samples) {
    speeds.push_back(s.speed_mps);
    rhos.push_back(s.rho);
  }
  const double v_ff = quantile(speeds, 0.9);
  const double rho_crit = std::max(quantile(rhos, 0.5), box.lo[1]);
  const double rho_max = *std::max_element(rhos.begin(), rhos.end());
  const double v_min = *std::min_element(speeds.begin(), speeds.end());
  const double excess = std::max(rho_max / rho_crit - 1.0, 1e-6);
  const double c = std::max(1.0 / v_min - 1.0 / v_ff, 0.0) / (excess * excess);

  const Vec4 heuristic = clamp_into({v_ff, rho_crit, c, 2.0}, box);
  const Vec4 classic = clamp_into({v_ff, rho_crit, 0.15, 4.0}, box);
  Vec4 mid{};
  for (int i = 0; i < 4; ++i) mid[i] = 0.5 * (box.lo[i] + box.hi[i]);
  return {to_params(heuristic), to_params(classic), to_params(mid)};
}

FitOutcome fit_segment(std::span<const DensitySpeed> input, const FitOptions& opts) {
  if (input.size() < opts.min_samples) return NoFit{NoFitReason::TooFewSamples};
  std::vector<DensitySpeed> samples(input.begin(), input.end());
  std::sort(samples.begin(), samples.end(), [](const DensitySpeed& a, const DensitySpeed& b) {
    return a.rho != b.rho ? a.rho < b.rho : a.speed_mps < b.speed_mps;
  });
  double min_pos = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) {
    if (s.rho > 0.0) min_pos = std::min(min_pos, s.rho);
  }
  const double max_rho = samples.back().rho;
  if (!std::isfinite(min_pos) || max_rho / min_pos < opts.min_density_ratio) {
    return NoFit{NoFitReason::NoDensitySpread};
  }

  LocalFit best;
  int total_iterations = 0;
  for (const auto& start : initial_guesses(samples, opts.box)) {
    const LocalFit f = levenberg_marquardt(samples, to_vec(start), opts);
    total_iterations += f.iterations;
    if (f.finite && f.rss < best.rss) best = f;
  }
  if (!best.finite) return NoFit{NoFitReason::DidNotConverge};
  return Fitted{to_params(best.x), best.rss, samples.size(), total_iterations, best.converged};
}

std::vector<DensitySpeed> segment_samples(std::span<const Observation> obs) {
  std::vector<DensitySpeed> out;
  out.reserve(obs.size());
  for (const auto& o : obs) out.push_back({density_veh_per_m(o), o.mean_speed_mps});
  return out;
}

std::map<std::string, FitOutcome> fit_city(const Dataset& d, const FitOptions& opts) {
  const auto grouped = observations_by_segment(d);
  std::vector<std::string> ids;
  for (const auto& [id, seg] : d.segments) ids.push_back(id);
  std::vector<FitOutcome> outcomes(ids.size(), NoFit{NoFitReason::TooFewSamples});
  const auto n = static_cast<std::ptrdiff_t>(ids.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    auto it = grouped.find(ids[i]);
    if (it != grouped.end()) outcomes[i] = fit_segment(segment_samples(it->second), opts);
  }
  std::map<std::string, FitOutcome> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], outcomes[i]);
  return out;
}

namespace serial {

std::map<std::string, FitOutcome> fit_city(const Dataset& d, const FitOptions& opts) {
  const auto grouped = observations_by_segment(d);
  std::map<std::string, FitOutcome> out;
  for (const auto& [id, seg] : d.segments) {
    auto it = grouped.find(id);
    out.emplace(id, it == grouped.end() ? FitOutcome{NoFit{NoFitReason::TooFewSamples}}
                                        : fit_segment(segment_samples(it->second), opts));
  }
  return out;
}

}  // namespace serial

FitSummary summarize(const std::map<std::string, FitOutcome>& fits) {
  FitSummary s;
  for (const auto& [id, f] : fits) {
    ++s.segments;
    if (std::holds_alternative<Fitted>(f)) {
      ++s.fitted;
    } else {
      ++s.no_fit;
    }
  }
  return s;
}

namespace {
const std::vector<std::string> kFitsHeader = {"segment_id", "status", "reason", "v_ff_mps", "rho_crit_veh_per_m",
                                              "c",          "p",      "rss",    "n",        "iterations"};
}

void write_fits_csv(const std::map<std::string, FitOutcome>& fits, const std::filesystem::path& path) {
  io::CsvWriter w(kFitsHeader);
  for (const auto& [id, f] : fits) {
    w.add(id);
    if (const auto* fit = std::get_if<Fitted>(&f)) {
      w.add("fitted").add_empty();
      w.add(fit->params.v_ff_mps).add(fit->params.rho_crit_veh_per_m).add(fit->params.c).add(fit->params.p);
      w.add(fit->rss).add(fit->n).add(fit->iterations);
    } else {
      w.add("no_fit").add(to_string(std::get<NoFit>(f).reason));
      for (int i = 0; i < 7; ++i) w.add_empty();
    }
    w.end_row();
  }
  w.write(path);
}

std::map<std::string, FitOutcome> read_fits_csv(const std::filesystem::path& path) {
  const auto t = io::read_csv(path);
  io::expect_header(t, kFitsHeader, path);
  std::map<std::string, FitOutcome> out;
  for (const auto& r : t.rows) {
    if (r[1] == "fitted") {
      Fitted f;
      f.params = {io::parse_real(r[3]), io::parse_real(r[4]), io::parse_real(r[5]), io::parse_real(r[6])};
      f.rss = io::parse_real(r[7]);
      f.n = static_cast<std::size_t>(io::parse_integer(r[8]));
      f.iterations = static_cast<int>(io::parse_integer(r[9]));
      f.converged = true;
      out.emplace(r[0], f);
    } else if (r[1] == "no_fit") {
      NoFitReason reason;
      if (r[2] == "too_few_samples") {
        reason = NoFitReason::TooFewSamples;
      } else if (r[2] == "no_density_spread") {
        reason = NoFitReason::NoDensitySpread;
      } else if (r[2] == "did_not_converge") {
        reason = NoFitReason::DidNotConverge;
      } else {
        throw DataError(path.string() + ": unknown no-fit reason '" + r[2] + "'");
      }
      out.emplace(r[0], NoFit{reason});
    } else {
      throw DataError(path.string() + ": unknown status '" + r[1] + "'");
    }
  }
  return out;
}

}  // namespace poolcf::bpr
