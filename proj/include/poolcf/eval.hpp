#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poolcf/bprfit.hpp"
#include "poolcf/domain.hpp"
#include "poolcf/features.hpp"
#include "poolcf/mlp.hpp"
#include "poolcf/pipeline.hpp"

namespace poolcf::eval {

// One evaluated sample: observed speed, predicted speed, and the segment's
// speed limit (for normalized-speed disaggregation).
struct ScoredSample {
  double observed_mps = 0.0;
  double predicted_mps = 0.0;
  double speed_limit_mps = 0.0;
};

// Mean |v - v_hat| in m/s. Throws DataError on empty input.
double mae(std::span<const ScoredSample> samples);
// Mean |v - v_hat| / v as a fraction. Requires every v >= 1.
double mape(std::span<const ScoredSample> samples);

// Linear-interpolation percentile (position q * (n - 1) in sorted order).
double percentile(std::vector<double> values, double q);

struct QuartileStat {
  std::size_t n = 0;
  double mae_mps = 0.0;  // NaN when n == 0
};

// Bins by normalized speed v / speed_limit at the empirical 25/50/75th
// percentiles: [min, b1), [b1, b2), [b2, b3), [b3, max]. When all three
// boundaries coincide every sample goes to the first quartile and the result
// is flagged degenerate.
struct QuartileBreakdown {
  std::array<double, 3> boundaries{};
  std::array<QuartileStat, 4> quartiles{};
  bool degenerate = false;
};

QuartileBreakdown quartile_disaggregate(std::span<const ScoredSample> samples);

enum class SplitTag { All, BprFitted, BprNoFit };
std::string_view to_string(SplitTag t);

struct MetricReport {
  SplitTag split = SplitTag::All;
  std::size_t n = 0;
  double mae_mps = 0.0;
  double mape = 0.0;
  std::optional<QuartileBreakdown> quartiles;  // present when n >= 4
};

MetricReport make_report(std::span<const ScoredSample> samples, SplitTag split = SplitTag::All);

std::vector<ScoredSample> score(std::span<const TrainingExample> examples, std::span<const double> predicted);

// Model predictions for the examples, paired with their labels.
std::vector<ScoredSample> score_model(const mlp::MlpModel& m, std::span<const TrainingExample> examples);

// Per-segment BPR predictions at each example's observed density. Examples of
// segments without a fit are skipped.
std::vector<ScoredSample> score_bpr(const std::map<std::string, bpr::FitOutcome>& fits,
                                    std::span<const TrainingExample> examples);

// The aggregate comparison table: pooled model on all / BPR-fitted / BPR-no-fit
// segments, and per-segment BPR on its fitted segments.
struct MethodReport {
  std::string method;  // "all_seg_ml" or "per_seg_bpr"
  MetricReport report;
};

std::vector<MethodReport> aggregate_comparison(const mlp::MlpModel& m,
                                               const std::map<std::string, bpr::FitOutcome>& fits,
                                               std::span<const TrainingExample> test_examples);

// ---------------------------------------------------------------------------
// Cross-validation over segments

// Seeded permutation of the ids cut into k folds whose sizes differ by at most one.
std::vector<std::vector<std::string>> kfold_split(std::vector<std::string> segment_ids, int k,
                                                  std::uint64_t seed);

struct ProtocolConfig {
  SplitConfig split;
  mlp::TrainConfig train;
};

struct FoldReport {
  int fold = 0;
  std::size_t train_segments = 0;
  std::size_t test_segments = 0;
  std::size_t test_examples = 0;
  double cv_mape = 0.0;            // held-out segments, test week
  double cv_mae_mps = 0.0;
  double same_segment_mape = 0.0;  // the fold's training segments, test week
  double same_segment_mae_mps = 0.0;
};

struct CrossValResult {
  std::vector<FoldReport> folds;
  double median_cv_mape = 0.0;
  double median_same_segment_mape = 0.0;
};

double median(std::vector<double> v);

// `d` must be filtered and single-priority.
CrossValResult cross_validate(const Dataset& d, int k, std::uint64_t fold_seed, const ProtocolConfig& cfg);

// ---------------------------------------------------------------------------
// Zero-shot transfer

// Applies a model trained elsewhere to `test_target` (its own norm stats, no
// refitting). Throws DataError if the target's priority differs from the model's.
MetricReport transfer_eval(const mlp::MlpModel& source_model, const Dataset& test_target);

struct TransferResult {
  std::string source_city;
  std::string target_city;
  RoadPriority priority = RoadPriority::Highway;
  MetricReport transfer;
  MetricReport local;
};

TransferResult transfer_pair(const mlp::MlpModel& source_model, const mlp::MlpModel& target_model,
                             const Dataset& test_target);

// ---------------------------------------------------------------------------
// Critical density

inline constexpr std::size_t kMinCriticalDensitySamples = 10;

struct CriticalDensity {
  double rho_veh_per_m = 0.0;
  bool interior_max = true;  // false when the argmax is the densest sample
};

// Observed density of each example paired with a predicted speed; returns the
// density that maximizes predicted flow 3600 * rho * v_hat (ties: smallest rho).
CriticalDensity critical_density_from_predictions(std::span<const TrainingExample> samples,
                                                  std::span<const double> predicted_speed);

CriticalDensity critical_density_ml(const mlp::MlpModel& m, std::span<const TrainingExample> samples);

// Density at which observed partial flow peaks over all of a segment's samples.
CriticalDensity critical_density_gt(std::span<const Observation> samples);

struct SegmentCriticalDensity {
  std::string segment_id;
  RoadPriority priority = RoadPriority::Highway;
  std::optional<double> gt;
  std::optional<double> ml;
  std::optional<double> bpr;
};

struct PairStat {
  RoadPriority priority = RoadPriority::Highway;
  std::string comparison;  // "gt_vs_bpr", "gt_vs_ml", "ml_vs_bpr"
  std::size_t n = 0;
  double mae_veh_per_m = 0.0;
  double mape = 0.0;  // relative to the first method of the pair
};

struct CritDensityReport {
  std::vector<SegmentCriticalDensity> segments;
  std::vector<PairStat> pairs;
};

// Pairwise stats over segments where both methods have a value. Throws
// DataError when no segment has two methods.
CritDensityReport compare_critical_densities(std::vector<SegmentCriticalDensity> segments);

// Ground truth from all of a segment's filtered observations, ML from its test
// examples, BPR from the fitted rho_crit.
std::vector<SegmentCriticalDensity> collect_critical_densities(
    const Dataset& filtered_priority_data, const mlp::MlpModel& model,
    std::span<const TrainingExample> test_examples, const std::map<std::string, bpr::FitOutcome>& fits);

// ---------------------------------------------------------------------------
// Seed sweep

struct SweepRun {
  std::uint64_t seed = 0;
  mlp::TrainResult result;
  double selection_loss = 0.0;  // final validation loss, or training loss without validation data
};

struct SeedSweep {
  std::vector<SweepRun> runs;
  std::size_t best = 0;
};

SeedSweep run_seed_sweep(const PreparedData& data, const mlp::TrainConfig& base, std::span<const std::uint64_t> seeds);

}  // namespace poolcf::eval
