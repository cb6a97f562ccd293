#include "poolcf/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "json_util.hpp"
#include "poolcf/error.hpp"
#include "poolcf/io.hpp"

namespace poolcf::mlp {

double elu(double z) { return z >= 0.0 ? z : std::expm1(z); }

double elu_derivative(double z) { return z >= 0.0 ? 1.0 : std::exp(z); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

LayerView MlpModel::layer(std::size_t l) const {
  std::size_t offset = 0;
  for (std::size_t i = 0; i < l; ++i) {
    offset += static_cast<std::size_t>(layer_sizes[i] + 1) * layer_sizes[i + 1];
  }
  LayerView v;
  v.in = layer_sizes[l];
  v.out = layer_sizes[l + 1];
  v.weight_offset = offset;
  v.bias_offset = offset + static_cast<std::size_t>(v.in) * v.out;
  return v;
}

std::size_t MlpModel::parameter_count(const std::vector<int>& sizes) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) n += static_cast<std::size_t>(sizes[i] + 1) * sizes[i + 1];
  return n;
}

MlpModel initialize(std::uint64_t seed, const NormStats& norm, RoadPriority priority, std::string city,
                    const std::vector<int>& layer_sizes) {
  if (layer_sizes.size() < 2 || layer_sizes.front() != static_cast<int>(kNumFeatures) || layer_sizes.back() != 1) {
    throw PreconditionError("layer sizes must start at the feature count and end at 1");
  }
  MlpModel m;
  m.layer_sizes = layer_sizes;
  m.params.assign(MlpModel::parameter_count(layer_sizes), 0.0);
  m.norm = norm;
  m.seed = seed;
  m.priority = priority;
  m.city = std::move(city);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const LayerView v = m.layer(l);
    const double limit = std::sqrt(6.0 / (v.in + v.out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t i = 0; i < static_cast<std::size_t>(v.in) * v.out; ++i) {
      m.params[v.weight_offset + i] = dist(rng);
    }
  }
  return m;
}

void check_layout(const MlpModel& m) {
  if (m.feature_fingerprint != feature_fingerprint()) {
    throw DataError("model feature layout '" + m.feature_fingerprint + "' does not match '" +
                    feature_fingerprint() + "'");
  }
  if (m.layer_sizes.size() < 2 || m.layer_sizes.front() != static_cast<int>(kNumFeatures) ||
      m.layer_sizes.back() != 1 || m.params.size() != MlpModel::parameter_count(m.layer_sizes)) {
    throw DataError("model layer sizes do not match its parameter vector");
  }
}

namespace {

// Pre-activations and activations of every layer for one example.
struct Trace {
  std::vector<std::vector<double>> z;  // z[l] for layer l (0-based over dense layers)
  std::vector<std::vector<double>> a;  // a[0] = normalized input, a[l + 1] = act(z[l])

  explicit Trace(const std::vector<int>& sizes) {
    a.emplace_back(sizes.front());
    for (std::size_t l = 1; l < sizes.size(); ++l) {
      z.emplace_back(sizes[l]);
      a.emplace_back(sizes[l]);
    }
  }
};

double run_forward(const MlpModel& m, const FeatureVector& x, Trace& t) {
  const FeatureVector nx = normalize(x, m.norm);
  std::copy(nx.begin(), nx.end(), t.a[0].begin());
  const std::size_t last = m.num_layers() - 1;
  for (std::size_t l = 0; l <= last; ++l) {
    const LayerView v = m.layer(l);
    const double* w = m.params.data() + v.weight_offset;
    const double* b = m.params.data() + v.bias_offset;
    const std::vector<double>& in = t.a[l];
    for (int o = 0; o < v.out; ++o) {
      double s = b[o];
      const double* row = w + static_cast<std::size_t>(o) * v.in;
      for (int i = 0; i < v.in; ++i) s += row[i] * in[i];
      t.z[l][o] = s;
      t.a[l + 1][o] = l == last ? sigmoid(s) : elu(s);
    }
  }
  return t.a.back()[0];
}

}  // namespace

double forward(const MlpModel& m, const FeatureVector& x) {
  check_layout(m);
  Trace t(m.layer_sizes);
  return run_forward(m, x, t);
}

double loss(double y_hat, double v) {
  if (!(y_hat > 0.0 && y_hat < 1.0)) throw PreconditionError("loss: prediction must lie in (0, 1)");
  if (!(v > 1.0)) throw PreconditionError("loss: speed must exceed 1 m/s");
  const double d = y_hat - 1.0 / v;
  return d * d;
}

Gradients backward(const MlpModel& m, std::span<const TrainingExample> batch) {
  check_layout(m);
  if (batch.empty()) throw PreconditionError("backward: empty batch");
  Gradients g;
  g.grad.assign(m.params.size(), 0.0);
  Trace t(m.layer_sizes);
  std::vector<std::vector<double>> delta(m.num_layers());
  for (std::size_t l = 0; l < m.num_layers(); ++l) delta[l].resize(m.layer_sizes[l + 1]);
  const double scale = 1.0 / static_cast<double>(batch.size());
  const std::size_t last = m.num_layers() - 1;

  for (const auto& ex : batch) {
    const double y = run_forward(m, ex.x, t);
    const double r = y - ex.label_inv_speed;
    g.mean_loss += r * r;
    delta[last][0] = 2.0 * r * scale * y * (1.0 - y);
    for (std::size_t l = last + 1; l-- > 0;) {
      const LayerView v = m.layer(l);
      const double* w = m.params.data() + v.weight_offset;
      double* gw = g.grad.data() + v.weight_offset;
      double* gb = g.grad.data() + v.bias_offset;
      for (int o = 0; o < v.out; ++o) {
        const double d = delta[l][o];
        gb[o] += d;
        double* grow = gw + static_cast<std::size_t>(o) * v.in;
        for (int i = 0; i < v.in; ++i) grow[i] += d * t.a[l][i];
      }
      if (l == 0) break;
      for (int i = 0; i < v.in; ++i) {
        double s = 0.0;
        for (int o = 0; o < v.out; ++o) s += w[static_cast<std::size_t>(o) * v.in + i] * delta[l][o];
        delta[l - 1][i] = s * elu_derivative(t.z[l - 1][i]);
      }
    }
  }
  g.mean_loss *= scale;
  return g;
}

double mean_loss(const MlpModel& m, std::span<const TrainingExample> examples) {
  check_layout(m);
  if (examples.empty()) return std::numeric_limits<double>::quiet_NaN();
  Trace t(m.layer_sizes);
  double sum = 0.0;
  for (const auto& ex : examples) {
    const double r = run_forward(m, ex.x, t) - ex.label_inv_speed;
    sum += r * r;
  }
  return sum / static_cast<double>(examples.size());
}

// ---------------------------------------------------------------------------
// Training

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (cfg.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (cfg.shuffle_buffer < 1) throw ConfigError("train.shuffle_buffer must be >= 1");
  if (!(cfg.learning_rate > 0)) throw ConfigError("train.learning_rate must be positive");
  if (!(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1)) {
    throw ConfigError("train.beta1/beta2 must be in [0, 1)");
  }
  if (!(cfg.epsilon > 0)) throw ConfigError("train.epsilon must be positive");
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  using detail::optional;
  const std::string ctx = "train";
  detail::reject_unknown_keys(
      j, {"batch_size", "epochs", "shuffle_buffer", "learning_rate", "beta1", "beta2", "epsilon", "seed"}, ctx);
  TrainConfig c;
  c.batch_size = optional<int>(j, "batch_size", c.batch_size, ctx);
  c.epochs = optional<int>(j, "epochs", c.epochs, ctx);
  c.shuffle_buffer = optional<int>(j, "shuffle_buffer", c.shuffle_buffer, ctx);
  c.learning_rate = optional<double>(j, "learning_rate", c.learning_rate, ctx);
  c.beta1 = optional<double>(j, "beta1", c.beta1, ctx);
  c.beta2 = optional<double>(j, "beta2", c.beta2, ctx);
  c.epsilon = optional<double>(j, "epsilon", c.epsilon, ctx);
  c.seed = optional<std::uint64_t>(j, "seed", c.seed, ctx);
  validate(c);
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"epochs", c.epochs},   {"shuffle_buffer", c.shuffle_buffer},
          {"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2},
          {"epsilon", c.epsilon},       {"seed", c.seed}};
}

bool TrainHistory::loss_increased() const {
  return !train_loss.empty() && train_loss.back() > train_loss.front();
}

namespace {

class Adam {
 public:
  Adam(std::size_t n, const TrainConfig& cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  long long t_ = 0;
};

}  // namespace

TrainResult train(std::span<const TrainingExample> train_set, std::span<const TrainingExample> validation_set,
                  const TrainConfig& cfg, RoadPriority priority, std::string city) {
  validate(cfg);
  if (train_set.empty()) throw DataError("train: empty training set");
  TrainResult result{initialize(cfg.seed, fit_norm_stats(train_set), priority, std::move(city)), {}};
  MlpModel& model = result.model;

  // Separate engine for shuffling so the initial weights depend only on the seed.
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Adam adam(model.params.size(), cfg);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TrainingExample> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
      Gradients g = backward(model, batch);
      if (!std::isfinite(g.mean_loss) ||
          !std::all_of(g.grad.begin(), g.grad.end(), [](double x) { return std::isfinite(x); })) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(batch_index));
      }
      loss_sum += g.mean_loss * static_cast<double>(batch.size());
      adam.step(model.params, g.grad);
    }
    result.history.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
    result.history.validation_loss.push_back(mean_loss(model, validation_set));
  }
  return result;
}

double predict_speed(const MlpModel& m, const FeatureVector& x) {
  const double y = forward(m, x);
  return std::clamp(1.0 / y, kMinPredictedSpeed, kMaxPredictedSpeed);
}

std::vector<double> predict_speeds(const MlpModel& m, std::span<const TrainingExample> examples) {
  check_layout(m);
  std::vector<double> out(examples.size());
  const auto n = static_cast<std::ptrdiff_t>(examples.size());
#pragma omp parallel
  {
    Trace t(m.layer_sizes);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      out[i] = std::clamp(1.0 / run_forward(m, examples[i].x, t), kMinPredictedSpeed, kMaxPredictedSpeed);
    }
  }
  return out;
}

namespace serial {

std::vector<double> predict_speeds(const MlpModel& m, std::span<const TrainingExample> examples) {
  std::vector<double> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(predict_speed(m, ex.x));
  return out;
}

}  // namespace serial

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const MlpModel& m) {
  using nlohmann::json;
  json layers = json::array();
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const LayerView v = m.layer(l);
    const auto w0 = m.params.begin() + static_cast<std::ptrdiff_t>(v.weight_offset);
    const auto b0 = m.params.begin() + static_cast<std::ptrdiff_t>(v.bias_offset);
    layers.push_back({{"in", v.in},
                      {"out", v.out},
                      {"activation", l + 1 == m.num_layers() ? "sigmoid" : "elu"},
                      {"weights", std::vector<double>(w0, w0 + static_cast<std::ptrdiff_t>(v.in) * v.out)},
                      {"biases", std::vector<double>(b0, b0 + v.out)}});
  }
  std::vector<std::string> order(kFeatureNames.begin(), kFeatureNames.end());
  return {{"schema_version", kModelSchemaVersion},
          {"city", m.city},
          {"priority", std::string(to_string(m.priority))},
          {"seed", m.seed},
          {"feature_order", order},
          {"feature_fingerprint", m.feature_fingerprint},
          {"layer_sizes", m.layer_sizes},
          {"layers", layers},
          {"norm",
           {{"mean", m.norm.mean}, {"std", m.norm.stddev}, {"constant", m.norm.constant}}}};
}

MlpModel model_from_json(const nlohmann::json& j) {
  using detail::json;
  using detail::required;
  const std::string ctx = "model";
  detail::reject_unknown_keys(j,
                              {"schema_version", "city", "priority", "seed", "feature_order",
                               "feature_fingerprint", "layer_sizes", "layers", "norm"},
                              ctx);
  if (required<int>(j, "schema_version", ctx) != kModelSchemaVersion) {
    throw DataError("unsupported model schema version");
  }
  MlpModel m;
  m.city = required<std::string>(j, "city", ctx);
  m.priority = parse_priority(required<std::string>(j, "priority", ctx));
  m.seed = required<std::uint64_t>(j, "seed", ctx);
  m.feature_fingerprint = required<std::string>(j, "feature_fingerprint", ctx);
  const auto order = required<std::vector<std::string>>(j, "feature_order", ctx);
  std::string joined;
  for (const auto& name : order) joined += (joined.empty() ? "" : ",") + name;
  if (joined != m.feature_fingerprint) throw DataError("model feature_order disagrees with its fingerprint");
  m.layer_sizes = required<std::vector<int>>(j, "layer_sizes", ctx);
  const auto& layers = required<json>(j, "layers", ctx);
  if (!layers.is_array() || layers.size() + 1 != m.layer_sizes.size()) {
    throw DataError("model layer count disagrees with layer_sizes");
  }
  m.params.assign(MlpModel::parameter_count(m.layer_sizes), 0.0);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerView v = m.layer(l);
    const auto w = required<std::vector<double>>(layers[l], "weights", ctx);
    const auto b = required<std::vector<double>>(layers[l], "biases", ctx);
    if (w.size() != static_cast<std::size_t>(v.in) * v.out || b.size() != static_cast<std::size_t>(v.out)) {
      throw DataError("model layer " + std::to_string(l) + " has wrong parameter counts");
    }
    std::copy(w.begin(), w.end(), m.params.begin() + static_cast<std::ptrdiff_t>(v.weight_offset));
    std::copy(b.begin(), b.end(), m.params.begin() + static_cast<std::ptrdiff_t>(v.bias_offset));
  }
  const auto& norm = required<json>(j, "norm", ctx);
  m.norm.mean = required<FeatureVector>(norm, "mean", ctx);
  m.norm.stddev = required<FeatureVector>(norm, "std", ctx);
  m.norm.constant = required<std::array<bool, kNumFeatures>>(norm, "constant", ctx);
  check_layout(m);
  return m;
}

void save_model(const MlpModel& m, const std::filesystem::path& path) {
  io::write_text(path, to_json(m).dump(1) + "\n");
}

MlpModel load_model(const std::filesystem::path& path) {
  try {
    return model_from_json(nlohmann::json::parse(io::read_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_history_csv(const TrainHistory& h, const std::filesystem::path& path) {
  io::CsvWriter w({"epoch", "train_loss", "validation_loss"});
  for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
    w.add(e + 1).add(h.train_loss[e]);
    if (std::isnan(h.validation_loss[e])) {
      w.add_empty();
    } else {
      w.add(h.validation_loss[e]);
    }
    w.end_row();
  }
  w.write(path);
}

}  // namespace poolcf::mlp
