#include "poolcf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "poolcf/error.hpp"

namespace poolcf::eval {

double mae(std::span<const ScoredSample> samples) {
  if (samples.empty()) throw DataError("mae: no samples");
  double sum = 0.0;
  for (const auto& s : samples) sum += std::abs(s.observed_mps - s.predicted_mps);
  return sum / static_cast<double>(samples.size());
}

double mape(std::span<const ScoredSample> samples) {
  if (samples.empty()) throw DataError("mape: no samples");
  double sum = 0.0;
  for (const auto& s : samples) {
    if (!(s.observed_mps >= 1.0)) throw PreconditionError("mape: observed speed below 1 m/s");
    sum += std::abs(s.observed_mps - s.predicted_mps) / s.observed_mps;
  }
  return sum / static_cast<double>(samples.size());
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile: no values");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

QuartileBreakdown quartile_disaggregate(std::span<const ScoredSample> samples) {
  if (samples.size() < 4) throw DataError("quartile_disaggregate: need at least 4 samples");
  std::vector<double> normalized;
  normalized.reserve(samples.size());
  for (const auto& s : samples) normalized.push_back(s.observed_mps / s.speed_limit_mps);

  QuartileBreakdown out;
  out.boundaries = {percentile(normalized, 0.25), percentile(normalized, 0.5), percentile(normalized, 0.75)};
  out.degenerate = out.boundaries[0] == out.boundaries[2];
  std::array<double, 4> abs_sum{};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::size_t q = 0;
    if (!out.degenerate) {
      while (q < 3 && normalized[i] >= out.boundaries[q]) ++q;
    }
    ++out.quartiles[q].n;
    abs_sum[q] += std::abs(samples[i].observed_mps - samples[i].predicted_mps);
  }
  for (std::size_t q = 0; q < 4; ++q) {
    out.quartiles[q].mae_mps = out.quartiles[q].n ? abs_sum[q] / static_cast<double>(out.quartiles[q].n)
                                                   : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

std::string_view to_string(SplitTag t) {
  switch (t) {
    case SplitTag::All:
      return "all";
    case SplitTag::BprFitted:
      return "bpr_fitted";
    case SplitTag::BprNoFit:
      return "bpr_no_fit";
  }
  return "unknown";
}

MetricReport make_report(std::span<const ScoredSample> samples, SplitTag split) {
  MetricReport r;
  r.split = split;
  r.n = samples.size();
  r.mae_mps = mae(samples);
  r.mape = mape(samples);
  if (samples.size() >= 4) r.quartiles = quartile_disaggregate(samples);
  return r;
}

std::vector<ScoredSample> score(std::span<const TrainingExample> examples, std::span<const double> predicted) {
  if (examples.size() != predicted.size()) throw PreconditionError("score: prediction count mismatch");
  std::vector<ScoredSample> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    out.push_back({examples[i].meta.mean_speed_mps, predicted[i], examples[i].meta.speed_limit_mps});
  }
  return out;
}

std::vector<ScoredSample> score_model(const mlp::MlpModel& m, std::span<const TrainingExample> examples) {
  return score(examples, mlp::predict_speeds(m, examples));
}

std::vector<ScoredSample> score_bpr(const std::map<std::string, bpr::FitOutcome>& fits,
                                    std::span<const TrainingExample> examples) {
  std::vector<ScoredSample> out;
  for (const auto& ex : examples) {
    auto it = fits.find(ex.meta.segment_id);
    if (it == fits.end()) continue;
    const auto* fit = std::get_if<bpr::Fitted>(&it->second);
    if (!fit) continue;
    const double rho = density_veh_per_m(ex.meta.partial_flow_vph, ex.meta.mean_speed_mps);
    out.push_back({ex.meta.mean_speed_mps, bpr::bpr_predict_speed(fit->params, rho), ex.meta.speed_limit_mps});
  }
  return out;
}

std::vector<MethodReport> aggregate_comparison(const mlp::MlpModel& m,
                                               const std::map<std::string, bpr::FitOutcome>& fits,
                                               std::span<const TrainingExample> test_examples) {
  const auto predicted = mlp::predict_speeds(m, test_examples);
  std::vector<ScoredSample> all, fitted, no_fit;
  for (std::size_t i = 0; i < test_examples.size(); ++i) {
    const auto& ex = test_examples[i];
    const ScoredSample s{ex.meta.mean_speed_mps, predicted[i], ex.meta.speed_limit_mps};
    all.push_back(s);
    auto it = fits.find(ex.meta.segment_id);
    const bool has_fit = it != fits.end() && std::holds_alternative<bpr::Fitted>(it->second);
    (has_fit ? fitted : no_fit).push_back(s);
  }
  std::vector<MethodReport> out;
  if (!all.empty()) out.push_back({"all_seg_ml", make_report(all, SplitTag::All)});
  if (!fitted.empty()) out.push_back({"all_seg_ml", make_report(fitted, SplitTag::BprFitted)});
  if (!no_fit.empty()) out.push_back({"all_seg_ml", make_report(no_fit, SplitTag::BprNoFit)});
  const auto bpr_scores = score_bpr(fits, test_examples);
  if (!bpr_scores.empty()) out.push_back({"per_seg_bpr", make_report(bpr_scores, SplitTag::BprFitted)});
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::string>> kfold_split(std::vector<std::string> ids, int k, std::uint64_t seed) {
  if (k < 2) throw PreconditionError("kfold_split: k must be >= 2");
  if (ids.size() < static_cast<std::size_t>(k)) {
    throw DataError("kfold_split: " + std::to_string(ids.size()) + " segments cannot fill " + std::to_string(k) +
                    " folds");
  }
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<std::vector<std::string>> folds(static_cast<std::size_t>(k));
  const std::size_t base = ids.size() / k;
  const std::size_t extra = ids.size() % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    folds[f].assign(ids.begin() + static_cast<std::ptrdiff_t>(pos),
                    ids.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(folds[f].begin(), folds[f].end());
    pos += size;
  }
  return folds;
}

double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median: no values");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

CrossValResult cross_validate(const Dataset& d, int k, std::uint64_t fold_seed, const ProtocolConfig& cfg) {
  std::vector<std::string> ids;
  for (const auto& [id, seg] : d.segments) ids.push_back(id);
  const auto folds = kfold_split(ids, k, fold_seed);
  const DateSplit split = split_by_date(d, cfg.split.train_weeks, cfg.split.val_weeks, cfg.split.test_weeks);
  const RoadPriority priority = d.segments.begin()->second.priority;
  const std::string city = d.segments.begin()->second.city;

  CrossValResult result;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::string> train_ids;
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (g != f) train_ids.insert(train_ids.end(), folds[g].begin(), folds[g].end());
    }
    const auto train_ex = build_examples(select_segments(split.train, train_ids)).examples;
    const auto val_ex = build_examples(select_segments(split.validation, train_ids)).examples;
    const auto held_out = build_examples(select_segments(split.test, folds[f])).examples;
    const auto same = build_examples(select_segments(split.test, train_ids)).examples;
    if (held_out.empty() || same.empty()) {
      throw DataError("cross_validate: fold " + std::to_string(f) + " has no test examples");
    }
    mlp::TrainResult trained;
    try {
      trained = mlp::train(train_ex, val_ex, cfg.train, priority, city);
    } catch (const Error& e) {
      throw TrainingError("cross_validate: fold " + std::to_string(f) + ": " + e.what());
    }
    const auto cv_scores = score_model(trained.model, held_out);
    const auto same_scores = score_model(trained.model, same);
    FoldReport r;
    r.fold = static_cast<int>(f);
    r.train_segments = train_ids.size();
    r.test_segments = folds[f].size();
    r.test_examples = held_out.size();
    r.cv_mape = mape(cv_scores);
    r.cv_mae_mps = mae(cv_scores);
    r.same_segment_mape = mape(same_scores);
    r.same_segment_mae_mps = mae(same_scores);
    result.folds.push_back(r);
  }
  std::vector<double> cv, same;
  for (const auto& r : result.folds) {
    cv.push_back(r.cv_mape);
    same.push_back(r.same_segment_mape);
  }
  result.median_cv_mape = median(cv);
  result.median_same_segment_mape = median(same);
  return result;
}

// ---------------------------------------------------------------------------

MetricReport transfer_eval(const mlp::MlpModel& source_model, const Dataset& test_target) {
  for (const auto& [id, seg] : test_target.segments) {
    if (seg.priority != source_model.priority) {
      throw DataError("transfer_eval: model is " + std::string(to_string(source_model.priority)) +
                      " but segment '" + id + "' is " + std::string(to_string(seg.priority)));
    }
  }
  const auto examples = build_examples(test_target).examples;
  if (examples.empty()) throw EmptyDatasetError("transfer_eval: no test examples in target");
  return make_report(score_model(source_model, examples));
}

TransferResult transfer_pair(const mlp::MlpModel& source_model, const mlp::MlpModel& target_model,
                             const Dataset& test_target) {
  if (source_model.priority != target_model.priority) {
    throw DataError("transfer_pair: source and target models have different priorities");
  }
  TransferResult r;
  r.source_city = source_model.city;
  r.target_city = target_model.city;
  r.priority = source_model.priority;
  r.transfer = transfer_eval(source_model, test_target);
  r.local = transfer_eval(target_model, test_target);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

// argmax of flow with ties broken towards the smallest density.
CriticalDensity argmax_flow(std::span<const double> rho, std::span<const double> flow) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < rho.size(); ++i) {
    if (flow[i] > flow[best] || (flow[i] == flow[best] && rho[i] < rho[best])) best = i;
  }
  const double max_rho = *std::max_element(rho.begin(), rho.end());
  return {rho[best], rho[best] < max_rho};
}

}  // namespace

CriticalDensity critical_density_from_predictions(std::span<const TrainingExample> samples,
                                                  std::span<const double> predicted_speed) {
  if (samples.size() != predicted_speed.size()) {
    throw PreconditionError("critical_density: prediction count mismatch");
  }
  if (samples.size() < kMinCriticalDensitySamples) {
    throw DataError("critical_density: need at least " + std::to_string(kMinCriticalDensitySamples) +
                    " samples, got " + std::to_string(samples.size()));
  }
  std::vector<double> rho, flow;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double r = density_veh_per_m(samples[i].meta.partial_flow_vph, samples[i].meta.mean_speed_mps);
    rho.push_back(r);
    flow.push_back(3600.0 * r * predicted_speed[i]);
  }
  return argmax_flow(rho, flow);
}

CriticalDensity critical_density_ml(const mlp::MlpModel& m, std::span<const TrainingExample> samples) {
  return critical_density_from_predictions(samples, mlp::predict_speeds(m, samples));
}

CriticalDensity critical_density_gt(std::span<const Observation> samples) {
  if (samples.size() < kMinCriticalDensitySamples) {
    throw DataError("critical_density_gt: need at least " + std::to_string(kMinCriticalDensitySamples) +
                    " samples, got " + std::to_string(samples.size()));
  }
  std::vector<double> rho, flow;
  for (const auto& o : samples) {
    rho.push_back(density_veh_per_m(o));
    flow.push_back(o.partial_flow_vph);
  }
  return argmax_flow(rho, flow);
}

CritDensityReport compare_critical_densities(std::vector<SegmentCriticalDensity> segments) {
  std::sort(segments.begin(), segments.end(),
            [](const auto& a, const auto& b) { return a.segment_id < b.segment_id; });
  CritDensityReport report;
  using Getter = std::optional<double> SegmentCriticalDensity::*;
  const struct {
    const char* name;
    Getter first;
    Getter second;
  } comparisons[] = {{"gt_vs_bpr", &SegmentCriticalDensity::gt, &SegmentCriticalDensity::bpr},
                     {"gt_vs_ml", &SegmentCriticalDensity::gt, &SegmentCriticalDensity::ml},
                     {"ml_vs_bpr", &SegmentCriticalDensity::ml, &SegmentCriticalDensity::bpr}};
  bool any = false;
  for (RoadPriority p : {RoadPriority::Highway, RoadPriority::Arterial}) {
    bool present = false;
    for (const auto& s : segments) present = present || s.priority == p;
    if (!present) continue;
    for (const auto& cmp : comparisons) {
      PairStat stat;
      stat.priority = p;
      stat.comparison = cmp.name;
      double abs_sum = 0.0, rel_sum = 0.0;
      for (const auto& s : segments) {
        const auto& a = s.*(cmp.first);
        const auto& b = s.*(cmp.second);
        if (s.priority != p || !a || !b) continue;
        ++stat.n;
        abs_sum += std::abs(*a - *b);
        rel_sum += std::abs(*a - *b) / *a;
      }
      if (stat.n) {
        any = true;
        stat.mae_veh_per_m = abs_sum / static_cast<double>(stat.n);
        stat.mape = rel_sum / static_cast<double>(stat.n);
      } else {
        stat.mae_veh_per_m = stat.mape = std::numeric_limits<double>::quiet_NaN();
      }
      report.pairs.push_back(stat);
    }
  }
  if (!any) throw DataError("compare_critical_densities: no segment has two methods available");
  report.segments = std::move(segments);
  return report;
}

std::vector<SegmentCriticalDensity> collect_critical_densities(
    const Dataset& data, const mlp::MlpModel& model, std::span<const TrainingExample> test_examples,
    const std::map<std::string, bpr::FitOutcome>& fits) {
  const auto grouped = observations_by_segment(data);
  std::map<std::string, std::vector<TrainingExample>> test_by_segment;
  for (const auto& ex : test_examples) test_by_segment[ex.meta.segment_id].push_back(ex);

  std::vector<SegmentCriticalDensity> out;
  for (const auto& [id, seg] : data.segments) {
    SegmentCriticalDensity s;
    s.segment_id = id;
    s.priority = seg.priority;
    if (auto it = grouped.find(id); it != grouped.end() && it->second.size() >= kMinCriticalDensitySamples) {
      s.gt = critical_density_gt(it->second).rho_veh_per_m;
    }
    if (auto it = test_by_segment.find(id);
        it != test_by_segment.end() && it->second.size() >= kMinCriticalDensitySamples) {
      s.ml = critical_density_ml(model, it->second).rho_veh_per_m;
    }
    if (auto it = fits.find(id); it != fits.end()) {
      if (const auto* f = std::get_if<bpr::Fitted>(&it->second)) s.bpr = f->params.rho_crit_veh_per_m;
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------

SeedSweep run_seed_sweep(const PreparedData& data, const mlp::TrainConfig& base,
                         std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw PreconditionError("run_seed_sweep: no seeds");
  SeedSweep sweep;
  for (std::uint64_t seed : seeds) {
    mlp::TrainConfig cfg = base;
    cfg.seed = seed;
    SweepRun run;
    run.seed = seed;
    run.result = mlp::train(data.train.examples, data.validation.examples, cfg, data.priority, data.city);
    const auto& h = run.result.history;
    run.selection_loss = std::isnan(h.validation_loss.back()) ? h.train_loss.back() : h.validation_loss.back();
    sweep.runs.push_back(std::move(run));
  }
  for (std::size_t i = 1; i < sweep.runs.size(); ++i) {
    if (sweep.runs[i].selection_loss < sweep.runs[sweep.best].selection_loss) sweep.best = i;
  }
  return sweep;
}

}  // namespace poolcf::eval
