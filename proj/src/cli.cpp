#include "poolcf/cli.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json_util.hpp"
#include "poolcf/error.hpp"
#include "poolcf/eval.hpp"
#include "poolcf/features.hpp"
#include "poolcf/io.hpp"

namespace poolcf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

EvalOptions eval_options_from_json(const json& j) {
  using detail::optional;
  const std::string ctx = "eval";
  detail::reject_unknown_keys(j, {"folds", "kfold_seed", "histogram_bins"}, ctx);
  EvalOptions e;
  e.folds = optional<int>(j, "folds", e.folds, ctx);
  e.kfold_seed = optional<std::uint64_t>(j, "kfold_seed", e.kfold_seed, ctx);
  e.histogram_bins = optional<int>(j, "histogram_bins", e.histogram_bins, ctx);
  if (e.folds < 2) throw ConfigError("eval.folds must be >= 2");
  if (e.histogram_bins < 1) throw ConfigError("eval.histogram_bins must be >= 1");
  return e;
}

TransferPaths transfer_paths_from_json(const json& j) {
  using detail::required;
  const std::string ctx = "transfer";
  detail::reject_unknown_keys(j, {"source_model_dir", "target_data_dir", "target_model_dir"}, ctx);
  return {required<std::string>(j, "source_model_dir", ctx), required<std::string>(j, "target_data_dir", ctx),
          required<std::string>(j, "target_model_dir", ctx)};
}

json read_json_file(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("config file not found: " + path.string());
  try {
    return json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string hash_of(const json& j) { return io::fnv1a_hex(j.dump()); }

// Records inputs and outputs by content hash. No timestamps, so a rerun with
// the same config reproduces the manifest byte for byte.
class Manifest {
 public:
  Manifest(std::string command, const json& config) : command_(std::move(command)), config_hash_(hash_of(config)) {}

  void input(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("missing input: " + path.string());
    inputs_[path.generic_string()] = io::file_hash(path);
  }

  void output(const fs::path& dir, const fs::path& path) {
    if (!fs::exists(path) || fs::file_size(path) == 0) {
      throw IoError("output was not written: " + path.string());
    }
    outputs_[fs::relative(path, dir).generic_string()] = io::file_hash(path);
  }

  void write(const fs::path& dir) const {
    json j = {{"command", command_}, {"config_hash", config_hash_}, {"inputs", inputs_}, {"outputs", outputs_}};
    io::write_text(dir / ("manifest." + command_ + ".json"), j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::string config_hash_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

void guard_outputs(const std::vector<fs::path>& paths, bool force) {
  if (force) return;
  for (const auto& p : paths) {
    if (fs::exists(p)) throw Error(p.string() + " already exists; pass --force to overwrite");
  }
}

// The effective config (flag overrides applied) is what gets snapshotted.
ExperimentConfig apply_overrides(ExperimentConfig cfg, const GlobalOptions& opts) {
  if (opts.out) cfg.out_dir = *opts.out;
  if (opts.seed) cfg.seeds = {*opts.seed};
  return cfg;
}

void write_snapshot(const fs::path& dir, const std::string& command, const json& j) {
  io::write_text(dir / ("config." + command + ".json"), j.dump(2) + "\n");
}

struct LoadedData {
  Dataset filtered;
  fs::path dir;
};

LoadedData load_data(const fs::path& dir, std::ostream& log) {
  for (const char* name : {"segments.csv", "observations.csv"}) {
    if (!fs::exists(dir / name)) throw IoError("missing input: " + (dir / name).string());
  }
  std::vector<std::string> warnings;
  Dataset raw = io::read_dataset(dir, &warnings);
  for (const auto& w : warnings) log << "warning: " << w << "\n";
  auto filtered = filter_dataset(raw);
  log << "loaded " << raw.segments.size() << " segments, " << raw.observations.size() << " observations; filter kept "
      << filtered.data.segments.size() << " segments, " << filtered.data.observations.size() << " observations\n";
  return {std::move(filtered.data), dir};
}

void record_data(Manifest& m, const fs::path& dir) {
  m.input(dir / "segments.csv");
  m.input(dir / "observations.csv");
}

std::vector<RoadPriority> requested_priorities(const Dataset& d, const GlobalOptions& opts) {
  auto present = priorities_present(d);
  if (!opts.priority) return present;
  if (std::find(present.begin(), present.end(), *opts.priority) == present.end()) {
    throw EmptyDatasetError("no " + std::string(to_string(*opts.priority)) + " segments in dataset");
  }
  return {*opts.priority};
}

std::string model_file(RoadPriority p, std::uint64_t seed) {
  return std::string(to_string(p)) + "/seed-" + std::to_string(seed) + ".json";
}

fs::path best_path(const fs::path& run_dir) { return run_dir / "models" / "best.json"; }

json read_best(const fs::path& run_dir) {
  const fs::path p = best_path(run_dir);
  if (!fs::exists(p)) throw IoError("missing input: " + p.string() + " (run train first)");
  return read_json_file(p);
}

struct LoadedModel {
  mlp::MlpModel model;
  fs::path path;
};

std::optional<LoadedModel> best_model(const fs::path& run_dir, const json& best, RoadPriority p) {
  auto it = best.find(std::string(to_string(p)));
  if (it == best.end()) return std::nullopt;
  const fs::path path = run_dir / "models" / it->at("model").get<std::string>();
  auto model = mlp::load_model(path);
  if (model.priority != p) throw DataError(path.string() + " is not a " + std::string(to_string(p)) + " model");
  return LoadedModel{std::move(model), path};
}

LoadedModel require_model(const fs::path& run_dir, const json& best, RoadPriority p) {
  auto m = best_model(run_dir, best, p);
  if (!m) {
    throw IoError("no " + std::string(to_string(p)) + " model in " + best_path(run_dir).string());
  }
  return std::move(*m);
}

std::map<std::string, bpr::FitOutcome> load_fits(const fs::path& out, Manifest& m) {
  const fs::path p = out / "bpr_fits.csv";
  if (!fs::exists(p)) throw IoError("missing input: " + p.string() + " (run fit-bpr first)");
  m.input(p);
  return bpr::read_fits_csv(p);
}

std::string tsv_real(double v) { return io::format_real(v); }

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig experiment_config_from_json(const json& j) {
  using detail::optional;
  using detail::required;
  const std::string ctx = "experiment";
  detail::reject_unknown_keys(
      j, {"data_dir", "out_dir", "city", "train", "split", "bprfit", "eval", "seeds", "transfer"}, ctx);
  ExperimentConfig cfg;
  cfg.data_dir = required<std::string>(j, "data_dir", ctx);
  cfg.out_dir = required<std::string>(j, "out_dir", ctx);
  if (j.contains("city")) cfg.city = synth::city_config_from_json(j.at("city"));
  if (j.contains("train")) cfg.train = mlp::train_config_from_json(j.at("train"));
  if (j.contains("split")) cfg.split = split_config_from_json(j.at("split"));
  if (j.contains("bprfit")) cfg.bprfit = bpr::fit_options_from_json(j.at("bprfit"));
  if (j.contains("eval")) cfg.eval = eval_options_from_json(j.at("eval"));
  cfg.seeds = optional<std::vector<std::uint64_t>>(j, "seeds", cfg.seeds, ctx);
  if (cfg.seeds.empty()) throw ConfigError("experiment.seeds must not be empty");
  if (j.contains("transfer")) cfg.transfer = transfer_paths_from_json(j.at("transfer"));
  return cfg;
}

json to_json(const ExperimentConfig& cfg) {
  json j = {{"data_dir", cfg.data_dir.generic_string()},
            {"out_dir", cfg.out_dir.generic_string()},
            {"train", mlp::to_json(cfg.train)},
            {"split", to_json(cfg.split)},
            {"bprfit", bpr::to_json(cfg.bprfit)},
            {"eval",
             {{"folds", cfg.eval.folds},
              {"kfold_seed", cfg.eval.kfold_seed},
              {"histogram_bins", cfg.eval.histogram_bins}}},
            {"seeds", cfg.seeds}};
  if (cfg.city) j["city"] = synth::to_json(*cfg.city);
  if (cfg.transfer) {
    j["transfer"] = {{"source_model_dir", cfg.transfer->source_model_dir.generic_string()},
                     {"target_data_dir", cfg.transfer->target_data_dir.generic_string()},
                     {"target_model_dir", cfg.transfer->target_model_dir.generic_string()}};
  }
  return j;
}

// ---------------------------------------------------------------------------

void cmd_gen(const json& raw, const GlobalOptions& opts, std::ostream& log) {
  synth::CityConfig city;
  fs::path out;
  if (raw.is_object() && (raw.contains("data_dir") || raw.contains("out_dir"))) {
    const auto cfg = experiment_config_from_json(raw);
    if (!cfg.city) throw ConfigError("experiment: gen needs a 'city' section");
    city = *cfg.city;
    out = cfg.data_dir;
  } else {
    city = synth::city_config_from_json(raw);
  }
  if (opts.out) out = *opts.out;
  if (out.empty()) throw ConfigError("gen: no output directory (use --out)");
  if (opts.seed) city.seed = *opts.seed;
  synth::validate(city);

  const std::vector<fs::path> outputs = {out / "segments.csv", out / "observations.csv", out / "truth.csv"};
  guard_outputs(outputs, opts.force);
  const json snapshot = synth::to_json(city);
  const auto generated = synth::generate_city(city);
  synth::write_city(generated, out);
  write_snapshot(out, "gen", snapshot);

  Manifest m("gen", snapshot);
  for (const auto& p : outputs) m.output(out, p);
  m.output(out, out / "config.gen.json");
  m.write(out);
  log << "generated " << generated.data.segments.size() << " segments, " << generated.data.observations.size()
      << " observations into " << out.string();
  if (generated.clamped_speeds) log << " (" << generated.clamped_speeds << " speeds clamped at the floor)";
  log << "\n";
}

void cmd_train(const ExperimentConfig& base, const GlobalOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = apply_overrides(base, opts);
  const fs::path out = cfg.out_dir;
  const auto data = load_data(cfg.data_dir, log);
  const auto priorities = requested_priorities(data.filtered, opts);

  std::vector<fs::path> outputs;
  for (RoadPriority p : priorities) {
    for (auto seed : cfg.seeds) outputs.push_back(out / "models" / model_file(p, seed));
  }
  guard_outputs(outputs, opts.force);

  json best = json::object();
  if (fs::exists(best_path(out))) best = read_json_file(best_path(out));

  Manifest m("train", to_json(cfg));
  record_data(m, cfg.data_dir);
  for (RoadPriority p : priorities) {
    const std::string pname(to_string(p));
    const auto prepared = prepare(data.filtered, p, cfg.split);
    log << pname << ": " << prepared.train.examples.size() << " train, " << prepared.validation.examples.size()
        << " validation, " << prepared.test.examples.size() << " test examples ("
        << prepared.train.stats.no_previous_hour << " train rows without a previous hour)\n";
    const auto sweep = eval::run_seed_sweep(prepared, cfg.train, cfg.seeds);

    io::CsvWriter sweep_csv({"seed", "final_train_loss", "final_validation_loss", "selected"});
    for (std::size_t i = 0; i < sweep.runs.size(); ++i) {
      const auto& run = sweep.runs[i];
      const fs::path model_path = out / "models" / model_file(p, run.seed);
      mlp::save_model(run.result.model, model_path);
      fs::path history_path = model_path;
      history_path.replace_extension(".history.csv");
      mlp::write_history_csv(run.result.history, history_path);
      m.output(out, model_path);
      m.output(out, history_path);
      if (run.result.history.loss_increased()) {
        log << "warning: " << pname << " seed " << run.seed << " ended with a higher training loss than it started\n";
      }
      sweep_csv.add(static_cast<long long>(run.seed))
          .add(run.result.history.train_loss.back())
          .add(run.result.history.validation_loss.back())
          .add(i == sweep.best ? 1 : 0);
      sweep_csv.end_row();
    }
    const fs::path sweep_path = out / "models" / pname / "sweep.csv";
    sweep_csv.write(sweep_path);
    m.output(out, sweep_path);

    const auto& chosen = sweep.runs[sweep.best];
    best[pname] = {{"seed", chosen.seed},
                   {"model", model_file(p, chosen.seed)},
                   {"selection_loss", chosen.selection_loss}};
    log << pname << ": best seed " << chosen.seed << " (selection loss " << io::format_real(chosen.selection_loss)
        << ")\n";
  }
  io::write_text(best_path(out), best.dump(2) + "\n");
  m.output(out, best_path(out));
  write_snapshot(out, "train", to_json(cfg));
  m.write(out);
}

void cmd_fit_bpr(const ExperimentConfig& base, const GlobalOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = apply_overrides(base, opts);
  const fs::path out = cfg.out_dir;
  const fs::path fits_path = out / "bpr_fits.csv";
  guard_outputs({fits_path}, opts.force);
  const auto data = load_data(cfg.data_dir, log);
  const auto priorities = requested_priorities(data.filtered, opts);

  const auto split = split_by_date(data.filtered, cfg.split.train_weeks, cfg.split.val_weeks, cfg.split.test_weeks);
  std::map<std::string, bpr::FitOutcome> fits;
  for (RoadPriority p : priorities) {
    auto part = bpr::fit_city(select_priority(split.train, p), cfg.bprfit);
    const auto s = bpr::summarize(part);
    log << to_string(p) << ": " << s.fitted << " fitted, " << s.no_fit << " without a fit ("
        << io::format_real(s.no_fit_fraction()) << ")\n";
    fits.merge(part);
  }
  bpr::write_fits_csv(fits, fits_path);

  Manifest m("fit-bpr", to_json(cfg));
  record_data(m, cfg.data_dir);
  m.output(out, fits_path);
  write_snapshot(out, "fit-bpr", to_json(cfg));
  m.write(out);
}

void cmd_eval(const ExperimentConfig& base, const GlobalOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = apply_overrides(base, opts);
  const fs::path out = cfg.out_dir;
  const fs::path report_path = out / "report.csv";
  const fs::path examples_path = out / "examples.csv";
  guard_outputs({report_path, examples_path}, opts.force);

  Manifest m("eval", to_json(cfg));
  const auto data = load_data(cfg.data_dir, log);
  record_data(m, cfg.data_dir);
  const auto best = read_best(out);
  m.input(best_path(out));
  const auto fits = load_fits(out, m);

  io::CsvWriter report({"priority", "method", "split", "scope", "n", "mae_mps", "mape_fraction",
                        "normalized_speed_lo", "normalized_speed_hi", "degenerate"});
  std::vector<TrainingExample> all_examples;
  std::vector<double> all_predicted;
  bool any = false;
  for (RoadPriority p : requested_priorities(data.filtered, opts)) {
    auto loaded = best_model(out, best, p);
    if (!loaded) {
      if (opts.priority) require_model(out, best, p);
      log << "skipping " << to_string(p) << ": no trained model\n";
      continue;
    }
    m.input(loaded->path);
    const auto prepared = prepare(data.filtered, p, cfg.split);
    const auto& test = prepared.test.examples;
    if (test.empty()) throw EmptyDatasetError("no " + std::string(to_string(p)) + " test examples");
    const auto rows = eval::aggregate_comparison(loaded->model, fits, test);
    for (const auto& row : rows) {
      const auto& r = row.report;
      report.add(to_string(p)).add(row.method).add(eval::to_string(r.split)).add("all").add(r.n).add(r.mae_mps).add(
          r.mape);
      report.add_empty().add_empty().add_empty();
      report.end_row();
      if (!r.quartiles) continue;
      const auto& q = *r.quartiles;
      for (std::size_t k = 0; k < 4; ++k) {
        report.add(to_string(p)).add(row.method).add(eval::to_string(r.split)).add("q" + std::to_string(k + 1));
        report.add(q.quartiles[k].n).add(q.quartiles[k].mae_mps).add_empty();
        if (k == 0) {
          report.add_empty();
        } else {
          report.add(q.boundaries[k - 1]);
        }
        if (k == 3) {
          report.add_empty();
        } else {
          report.add(q.boundaries[k]);
        }
        report.add(q.degenerate ? 1 : 0);
        report.end_row();
      }
      log << to_string(p) << " " << row.method << " [" << eval::to_string(r.split) << "] n=" << r.n
          << " MAE=" << io::format_real(r.mae_mps) << " m/s MAPE=" << io::format_real(r.mape) << "\n";
    }
    const auto predicted = mlp::predict_speeds(loaded->model, test);
    all_examples.insert(all_examples.end(), test.begin(), test.end());
    all_predicted.insert(all_predicted.end(), predicted.begin(), predicted.end());
    any = true;
  }
  if (!any) throw IoError("no trained model matches the data in " + cfg.data_dir.string());
  report.write(report_path);
  write_examples_csv(all_examples, examples_path, std::span<const double>(all_predicted));
  m.output(out, report_path);
  m.output(out, examples_path);
  write_snapshot(out, "eval", to_json(cfg));
  m.write(out);
}

void cmd_crossval(const ExperimentConfig& base, const GlobalOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = apply_overrides(base, opts);
  const fs::path out = cfg.out_dir;
  const fs::path path = out / "crossval.csv";
  guard_outputs({path}, opts.force);
  const auto data = load_data(cfg.data_dir, log);

  io::CsvWriter csv({"priority", "fold", "train_segments", "test_segments", "test_examples", "cv_mape_fraction",
                     "cv_mae_mps", "same_segment_mape_fraction", "same_segment_mae_mps"});
  for (RoadPriority p : requested_priorities(data.filtered, opts)) {
    const auto subset = select_priority(data.filtered, p);
    const auto result =
        eval::cross_validate(subset, cfg.eval.folds, cfg.eval.kfold_seed, {cfg.split, cfg.train});
    for (const auto& f : result.folds) {
      csv.add(to_string(p)).add(f.fold).add(f.train_segments).add(f.test_segments).add(f.test_examples);
      csv.add(f.cv_mape).add(f.cv_mae_mps).add(f.same_segment_mape).add(f.same_segment_mae_mps);
      csv.end_row();
    }
    csv.add(to_string(p)).add("median").add_empty().add_empty().add_empty();
    csv.add(result.median_cv_mape).add_empty().add(result.median_same_segment_mape).add_empty();
    csv.end_row();
    log << to_string(p) << ": median CV MAPE " << io::format_real(result.median_cv_mape) << ", same-segment MAPE "
        << io::format_real(result.median_same_segment_mape) << "\n";
  }
  csv.write(path);
  Manifest m("crossval", to_json(cfg));
  record_data(m, cfg.data_dir);
  m.output(out, path);
  write_snapshot(out, "crossval", to_json(cfg));
  m.write(out);
}

void cmd_transfer(const ExperimentConfig& base, const GlobalOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = apply_overrides(base, opts);
  if (!cfg.transfer) throw ConfigError("experiment: transfer needs a 'transfer' section");
  const auto& t = *cfg.transfer;
  const fs::path out = cfg.out_dir;
  const fs::path path = out / "transfer.csv";
  guard_outputs({path}, opts.force);

  Manifest m("transfer", to_json(cfg));
  const auto source_best = read_best(t.source_model_dir);
  const auto target_best = read_best(t.target_model_dir);
  m.input(best_path(t.source_model_dir));
  m.input(best_path(t.target_model_dir));
  const auto target = load_data(t.target_data_dir, log);
  record_data(m, t.target_data_dir);
  const auto split = split_by_date(target.filtered, cfg.split.train_weeks, cfg.split.val_weeks, cfg.split.test_weeks);

  io::CsvWriter csv({"priority", "source_city", "target_city", "transfer_n", "transfer_mae_mps",
                     "transfer_mape_fraction", "local_n", "local_mae_mps", "local_mape_fraction"});
  bool any = false;
  for (RoadPriority p : requested_priorities(target.filtered, opts)) {
    auto source = best_model(t.source_model_dir, source_best, p);
    auto local = best_model(t.target_model_dir, target_best, p);
    if (!source || !local) {
      if (opts.priority) throw IoError("no " + std::string(to_string(p)) + " model pair for transfer");
      log << "skipping " << to_string(p) << ": missing source or target model\n";
      continue;
    }
    m.input(source->path);
    m.input(local->path);
    const auto r = eval::transfer_pair(source->model, local->model, select_priority(split.test, p));
    csv.add(to_string(p)).add(r.source_city).add(r.target_city);
    csv.add(r.transfer.n).add(r.transfer.mae_mps).add(r.transfer.mape);
    csv.add(r.local.n).add(r.local.mae_mps).add(r.local.mape);
    csv.end_row();
    log << to_string(p) << " " << r.source_city << " -> " << r.target_city << ": transfer MAE "
        << io::format_real(r.transfer.mae_mps) << ", local MAE " << io::format_real(r.local.mae_mps) << "\n";
    any = true;
  }
  if (!any) throw IoError("no priority has both a source and a target model");
  csv.write(path);
  m.output(out, path);
  write_snapshot(out, "transfer", to_json(cfg));
  m.write(out);
}

void cmd_critdens(const ExperimentConfig& base, const GlobalOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = apply_overrides(base, opts);
  const fs::path out = cfg.out_dir;
  const fs::path per_segment = out / "critdens.csv";
  const fs::path summary = out / "critdens_summary.csv";
  guard_outputs({per_segment, summary}, opts.force);

  Manifest m("critdens", to_json(cfg));
  const auto data = load_data(cfg.data_dir, log);
  record_data(m, cfg.data_dir);
  const auto best = read_best(out);
  m.input(best_path(out));
  const auto fits = load_fits(out, m);

  std::vector<eval::SegmentCriticalDensity> segments;
  for (RoadPriority p : requested_priorities(data.filtered, opts)) {
    auto loaded = best_model(out, best, p);
    if (!loaded) {
      if (opts.priority) require_model(out, best, p);
      log << "skipping " << to_string(p) << ": no trained model\n";
      continue;
    }
    m.input(loaded->path);
    const auto prepared = prepare(data.filtered, p, cfg.split);
    auto part = eval::collect_critical_densities(select_priority(data.filtered, p), loaded->model,
                                                 prepared.test.examples, fits);
    segments.insert(segments.end(), part.begin(), part.end());
  }
  const auto report = eval::compare_critical_densities(std::move(segments));

  io::CsvWriter seg_csv({"segment_id", "priority", "rho_gt_veh_per_m", "rho_ml_veh_per_m", "rho_bpr_veh_per_m"});
  for (const auto& s : report.segments) {
    seg_csv.add(s.segment_id).add(to_string(s.priority));
    for (const auto& v : {s.gt, s.ml, s.bpr}) {
      if (v) {
        seg_csv.add(*v);
      } else {
        seg_csv.add_empty();
      }
    }
    seg_csv.end_row();
  }
  seg_csv.write(per_segment);

  io::CsvWriter sum_csv({"priority", "comparison", "n", "mae_veh_per_m", "mape_fraction"});
  for (const auto& pair : report.pairs) {
    sum_csv.add(to_string(pair.priority)).add(pair.comparison).add(pair.n);
    if (pair.n) {
      sum_csv.add(pair.mae_veh_per_m).add(pair.mape);
    } else {
      sum_csv.add_empty().add_empty();
    }
    sum_csv.end_row();
    log << to_string(pair.priority) << " " << pair.comparison << ": n=" << pair.n;
    if (pair.n) log << " MAE=" << io::format_real(pair.mae_veh_per_m) << " veh/m MAPE=" << io::format_real(pair.mape);
    log << "\n";
  }
  sum_csv.write(summary);

  m.output(out, per_segment);
  m.output(out, summary);
  write_snapshot(out, "critdens", to_json(cfg));
  m.write(out);
}

void cmd_plotdata(const ExperimentConfig& base, const GlobalOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = apply_overrides(base, opts);
  const fs::path out = cfg.out_dir;
  const fs::path plots = out / "plots";
  Manifest m("plotdata", to_json(cfg));
  std::vector<std::pair<fs::path, std::string>> files;

  const auto wanted = [&](const std::string& col_value) {
    return !opts.priority || col_value == to_string(*opts.priority);
  };

  if (fs::exists(out / "report.csv")) {
    m.input(out / "report.csv");
    const auto t = io::read_csv(out / "report.csv");
    const auto c_pri = t.column("priority"), c_method = t.column("method"), c_split = t.column("split"),
               c_scope = t.column("scope"), c_n = t.column("n"), c_mae = t.column("mae_mps");
    std::ostringstream s;
    s << "# MAE by quartile of normalized speed (v / speed limit)\n";
    s << "priority\tmethod\tsplit\tx\tquartile\tn\tmae_mps\n";
    for (const auto& row : t.rows) {
      if (row[c_scope] == "all" || !wanted(row[c_pri])) continue;
      s << row[c_pri] << '\t' << row[c_method] << '\t' << row[c_split] << '\t' << row[c_scope].substr(1) << '\t'
        << row[c_scope] << '\t' << row[c_n] << '\t' << row[c_mae] << '\n';
    }
    files.emplace_back(plots / "disagg_mae.tsv", s.str());
  }

  if (fs::exists(out / "crossval.csv")) {
    m.input(out / "crossval.csv");
    const auto t = io::read_csv(out / "crossval.csv");
    const auto c_pri = t.column("priority"), c_fold = t.column("fold"), c_cv = t.column("cv_mape_fraction"),
               c_same = t.column("same_segment_mape_fraction");
    std::ostringstream s;
    s << "# x: same-segment test MAPE, y: held-out fold test MAPE (fractions)\n";
    s << "priority\tfold\tx_same_segment_mape\ty_cv_mape\tx_eq_y\n";
    for (const auto& row : t.rows) {
      if (!wanted(row[c_pri])) continue;
      s << row[c_pri] << '\t' << row[c_fold] << '\t' << row[c_same] << '\t' << row[c_cv] << '\t' << row[c_same]
        << '\n';
    }
    files.emplace_back(plots / "cv_scatter.tsv", s.str());
  }

  if (fs::exists(out / "transfer.csv")) {
    m.input(out / "transfer.csv");
    const auto t = io::read_csv(out / "transfer.csv");
    const auto c_pri = t.column("priority"), c_src = t.column("source_city"), c_tgt = t.column("target_city"),
               c_tr = t.column("transfer_mae_mps"), c_lo = t.column("local_mae_mps");
    std::ostringstream s;
    s << "# x: local MAE (m/s), y: zero-shot transfer MAE (m/s)\n";
    s << "priority\tsource_city\ttarget_city\tx_local_mae_mps\ty_transfer_mae_mps\tx_eq_y\n";
    for (const auto& row : t.rows) {
      if (!wanted(row[c_pri])) continue;
      s << row[c_pri] << '\t' << row[c_src] << '\t' << row[c_tgt] << '\t' << row[c_lo] << '\t' << row[c_tr] << '\t'
        << row[c_lo] << '\n';
    }
    files.emplace_back(plots / "transfer_scatter.tsv", s.str());
  }

  if (fs::exists(out / "critdens.csv")) {
    m.input(out / "critdens.csv");
    const auto t = io::read_csv(out / "critdens.csv");
    const auto c_pri = t.column("priority");
    const std::array<std::pair<const char*, std::size_t>, 3> methods = {
        {{"gt", t.column("rho_gt_veh_per_m")}, {"ml", t.column("rho_ml_veh_per_m")},
         {"bpr", t.column("rho_bpr_veh_per_m")}}};
    std::ostringstream s;
    s << "# critical density histograms (veh/m)\n";
    std::ostringstream body;
    body << "priority\tbin\tlo\thi\tgt_count\tml_count\tbpr_count\n";
    for (RoadPriority p : {RoadPriority::Highway, RoadPriority::Arterial}) {
      const std::string pname(to_string(p));
      if (!wanted(pname)) continue;
      std::array<std::vector<double>, 3> values;
      for (const auto& row : t.rows) {
        if (row[c_pri] != pname) continue;
        for (std::size_t k = 0; k < 3; ++k) {
          if (!row[methods[k].second].empty()) values[k].push_back(io::parse_real(row[methods[k].second]));
        }
      }
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (const auto& v : values) {
        for (double x : v) {
          lo = std::min(lo, x);
          hi = std::max(hi, x);
        }
      }
      if (!(lo <= hi)) continue;
      if (lo == hi) hi = lo + 1e-6;
      const int bins = cfg.eval.histogram_bins;
      std::vector<double> edges(static_cast<std::size_t>(bins) + 1);
      for (int b = 0; b <= bins; ++b) edges[b] = lo + (hi - lo) * b / bins;
      edges.back() = hi;
      s << "# " << pname << " bin_edges:";
      for (double e : edges) s << ' ' << tsv_real(e);
      s << '\n';
      std::array<std::vector<int>, 3> counts;
      for (std::size_t k = 0; k < 3; ++k) {
        counts[k].assign(static_cast<std::size_t>(bins), 0);
        for (double x : values[k]) {
          auto b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), x) - edges.begin());
          b = std::clamp<std::size_t>(b, 1, static_cast<std::size_t>(bins)) - 1;
          ++counts[k][b];
        }
      }
      for (int b = 0; b < bins; ++b) {
        body << pname << '\t' << b << '\t' << tsv_real(edges[b]) << '\t' << tsv_real(edges[b + 1]);
        for (std::size_t k = 0; k < 3; ++k) body << '\t' << counts[k][b];
        body << '\n';
      }
    }
    files.emplace_back(plots / "critdens_hist.tsv", s.str() + body.str());
  }

  if (files.empty()) {
    throw IoError("no reports in " + out.string() +
                  " (expected any of report.csv, crossval.csv, transfer.csv, critdens.csv)");
  }
  for (const auto& [path, text] : files) {
    guard_outputs({path}, opts.force);
  }
  for (const auto& [path, text] : files) {
    io::write_text(path, text);
    m.output(out, path);
    log << "wrote " << path.string() << "\n";
  }
  write_snapshot(out, "plotdata", to_json(cfg));
  m.write(out);
}

// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pooled congestion-function experiments on synthetic city data"};
  app.fallthrough();
  app.require_subcommand(1);

  GlobalOptions opts;
  std::string config_path, out_path, priority;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "experiment or city config (JSON)")->required();
  auto* out_opt = app.add_option("--out", out_path, "output directory override");
  auto* seed_opt = app.add_option("--seed", seed, "seed override (city seed for gen, single training seed otherwise)");
  auto* pri_opt = app.add_option("--priority", priority, "restrict to one road priority")
                      ->check(CLI::IsMember({"highway", "arterial"}));
  app.add_flag("--force", opts.force, "overwrite existing outputs");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen", "generate a synthetic city"},
      {"train", "train pooled models over the seed sweep"},
      {"fit-bpr", "fit per-segment BPR curves"},
      {"eval", "aggregate and quartile metrics for both methods"},
      {"crossval", "k-fold cross-validation over segments"},
      {"transfer", "zero-shot transfer between cities"},
      {"critdens", "critical density comparison"},
      {"plotdata", "tab-separated plot series from the reports"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  opts.config = config_path;
  if (*out_opt) opts.out = out_path;
  if (*seed_opt) opts.seed = seed;
  if (*pri_opt) opts.priority = parse_priority(priority);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    const json raw = read_json_file(opts.config);
    if (command == "gen") {
      cmd_gen(raw, opts, out);
      return 0;
    }
    const auto cfg = experiment_config_from_json(raw);
    if (command == "train") cmd_train(cfg, opts, out);
    if (command == "fit-bpr") cmd_fit_bpr(cfg, opts, out);
    if (command == "eval") cmd_eval(cfg, opts, out);
    if (command == "crossval") cmd_crossval(cfg, opts, out);
    if (command == "transfer") cmd_transfer(cfg, opts, out);
    if (command == "critdens") cmd_critdens(cfg, opts, out);
    if (command == "plotdata") cmd_plotdata(cfg, opts, out);
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace poolcf::cli
