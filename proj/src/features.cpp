#include "poolcf/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "poolcf/error.hpp"
#include "poolcf/io.hpp"

namespace poolcf {

std::string feature_fingerprint() {
  std::string out;
  for (auto name : kFeatureNames) {
    if (!out.empty()) out += ',';
    out += name;
  }
  return out;
}

TemporalEncoding temporal_encoding(int hour, int dow) {
  if (hour < 0 || hour > 23) throw PreconditionError("hour out of range: " + std::to_string(hour));
  if (dow < 0 || dow > 6) throw PreconditionError("day of week out of range: " + std::to_string(dow));
  const double h = 2.0 * std::numbers::pi * hour / 24.0;
  const double d = 2.0 * std::numbers::pi * dow / 7.0;
  return {std::sin(h), std::cos(h), std::sin(d), std::cos(d)};
}

BuildResult build_examples(const Dataset& d) {
  BuildResult out;
  std::optional<RoadPriority> priority;
  for (const auto& [segment_id, obs] : observations_by_segment(d)) {
    const Segment& seg = d.segments.at(segment_id);
    if (priority && *priority != seg.priority) {
      throw DataError("build_examples: dataset mixes road priorities");
    }
    priority = seg.priority;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const Observation& cur = obs[i];
      // Observations are time-sorted, so the previous hour can only be obs[i - 1].
      const bool has_prev = i > 0 && obs[i - 1].t.date == cur.t.date && obs[i - 1].t.hour == cur.t.hour - 1;
      if (!has_prev) {
        ++out.stats.no_previous_hour;
        continue;
      }
      if (!(cur.mean_speed_mps > 1.0)) {
        ++out.stats.speed_not_above_floor;
        continue;
      }
      const Observation& prev = obs[i - 1];
      const auto enc = temporal_encoding(cur.t.hour, cur.t.dow);
      TrainingExample ex;
      ex.x[kLength] = seg.length_m;
      ex.x[kLanes] = seg.lanes;
      ex.x[kWidth] = seg.width_m;
      ex.x[kSpeedLimit] = seg.speed_limit_mps;
      ex.x[kSinHour] = enc.sin_hour;
      ex.x[kCosHour] = enc.cos_hour;
      ex.x[kSinDow] = enc.sin_dow;
      ex.x[kCosDow] = enc.cos_dow;
      ex.x[kPrevFlow] = prev.partial_flow_vph;
      ex.x[kPrevSpeed] = prev.mean_speed_mps;
      ex.x[kNormalizedFlow] = cur.partial_flow_vph / (seg.length_m * seg.lanes);
      ex.x[kCurrentFlow] = cur.partial_flow_vph;
      ex.label_inv_speed = 1.0 / cur.mean_speed_mps;
      ex.meta = {segment_id, cur.t, cur.mean_speed_mps, seg.speed_limit_mps, cur.partial_flow_vph};
      out.examples.push_back(std::move(ex));
    }
  }
  out.stats.built = out.examples.size();
  return out;
}

NormStats fit_norm_stats(std::span<const TrainingExample> train) {
  if (train.empty()) throw DataError("fit_norm_stats: no training examples");
  NormStats s;
  const double n = static_cast<double>(train.size());
  for (std::size_t k = 0; k < kNumFeatures; ++k) {
    double sum = 0.0;
    for (const auto& ex : train) sum += ex.x[k];
    const double mean = sum / n;
    double sq = 0.0;
    for (const auto& ex : train) sq += (ex.x[k] - mean) * (ex.x[k] - mean);
    s.mean[k] = mean;
    s.stddev[k] = std::sqrt(sq / n);
    s.constant[k] = s.stddev[k] < kConstantStdThreshold;
  }
  return s;
}

FeatureVector normalize(const FeatureVector& x, const NormStats& s) {
  FeatureVector z;
  for (std::size_t k = 0; k < kNumFeatures; ++k) {
    z[k] = s.constant[k] ? x[k] : (x[k] - s.mean[k]) / s.stddev[k];
  }
  return z;
}

FeatureVector denormalize(const FeatureVector& z, const NormStats& s) {
  FeatureVector x;
  for (std::size_t k = 0; k < kNumFeatures; ++k) {
    x[k] = s.constant[k] ? z[k] : z[k] * s.stddev[k] + s.mean[k];
  }
  return x;
}

void write_examples_csv(std::span<const TrainingExample> examples, const std::filesystem::path& path,
                        std::optional<std::span<const double>> predicted_speed) {
  std::vector<std::string> header(kFeatureNames.begin(), kFeatureNames.end());
  for (const char* extra : {"label_inv_speed", "segment_id", "date", "hour", "dow", "mean_speed_mps",
                            "speed_limit_mps", "partial_flow_vph"}) {
    header.emplace_back(extra);
  }
  if (predicted_speed) {
    if (predicted_speed->size() != examples.size()) {
      throw PreconditionError("write_examples_csv: prediction count mismatch");
    }
    header.emplace_back("predicted_speed_mps");
  }
  io::CsvWriter w(header);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    for (double v : ex.x) w.add(v);
    w.add(ex.label_inv_speed)
        .add(ex.meta.segment_id)
        .add(ex.meta.t.date.iso())
        .add(ex.meta.t.hour)
        .add(ex.meta.t.dow)
        .add(ex.meta.mean_speed_mps)
        .add(ex.meta.speed_limit_mps)
        .add(ex.meta.partial_flow_vph);
    if (predicted_speed) w.add((*predicted_speed)[i]);
    w.end_row();
  }
  w.write(path);
}

}  // namespace poolcf
