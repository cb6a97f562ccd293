#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "poolcf/error.hpp"
#include "poolcf/mlp.hpp"
#include "test_util.hpp"

using namespace poolcf;
using namespace poolcf::mlp;
using poolcf::testing::make_example;

namespace {

// Forward pass written against the JSON layer representation rather than the
// flat parameter layout, so layout bugs cannot cancel out.
double oracle_forward(const nlohmann::json& model, const FeatureVector& x) {
  const auto& norm = model.at("norm");
  std::vector<double> a(kNumFeatures);
  for (std::size_t k = 0; k < kNumFeatures; ++k) {
    const bool constant = norm.at("constant")[k].get<bool>();
    a[k] = constant ? x[k] : (x[k] - norm.at("mean")[k].get<double>()) / norm.at("std")[k].get<double>();
  }
  for (const auto& layer : model.at("layers")) {
    const int in = layer.at("in"), out = layer.at("out");
    const auto& w = layer.at("weights");
    const auto& b = layer.at("biases");
    std::vector<double> next(out);
    for (int o = 0; o < out; ++o) {
      long double s = b[o].get<double>();
      for (int i = 0; i < in; ++i) s += static_cast<long double>(w[o * in + i].get<double>()) * a[i];
      const double z = static_cast<double>(s);
      next[o] = layer.at("activation") == "elu" ? (z > 0 ? z : std::exp(z) - 1.0) : 1.0 / (1.0 + std::exp(-z));
    }
    a = next;
  }
  return a[0];
}

std::vector<TrainingExample> random_set(std::mt19937_64& g, int n) {
  std::vector<TrainingExample> out;
  for (int i = 0; i < n; ++i) out.push_back(make_example(g));
  return out;
}

// Smooth target so the network has something learnable.
std::vector<TrainingExample> learnable_set(std::mt19937_64& g, int n) {
  auto out = random_set(g, n);
  for (auto& ex : out) {
    const double v = 5.0 + 20.0 / (1.0 + ex.x[kCurrentFlow] / 500.0);
    ex.label_inv_speed = 1.0 / v;
    ex.meta.mean_speed_mps = v;
  }
  return out;
}

}  // namespace

TEST(Activation, Values) {
  EXPECT_EQ(elu(2.0), 2.0);
  EXPECT_NEAR(elu(-1.0), std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_EQ(elu_derivative(0.5), 1.0);
  EXPECT_NEAR(elu_derivative(-2.0), std::exp(-2.0), 1e-15);
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(-800.0), 0.0, 1e-300);
  EXPECT_EQ(sigmoid(800.0), 1.0);
  EXPECT_NEAR(sigmoid(3.0) + sigmoid(-3.0), 1.0, 1e-15);
}

TEST(Model, LayoutAndInit) {
  std::mt19937_64 g(1);
  const auto set = random_set(g, 50);
  const auto m = initialize(5, fit_norm_stats(set), RoadPriority::Highway, "c");
  EXPECT_EQ(m.layer_sizes, (std::vector<int>{12, 16, 8, 4, 8, 16, 1}));
  EXPECT_EQ(m.params.size(), MlpModel::parameter_count(m.layer_sizes));
  EXPECT_EQ(m.params.size(), 13u * 16 + 17 * 8 + 9 * 4 + 5 * 8 + 9 * 16 + 17 * 1);
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const auto v = m.layer(l);
    const double limit = std::sqrt(6.0 / (v.in + v.out));
    for (int i = 0; i < v.in * v.out; ++i) EXPECT_LE(std::abs(m.params[v.weight_offset + i]), limit);
    for (int o = 0; o < v.out; ++o) EXPECT_EQ(m.params[v.bias_offset + o], 0.0);
  }
  EXPECT_EQ(initialize(5, m.norm, RoadPriority::Highway, "c").params, m.params);
  EXPECT_NE(initialize(6, m.norm, RoadPriority::Highway, "c").params, m.params);
}

TEST(Model, ForwardMatchesOracle) {
  std::mt19937_64 g(2);
  const auto set = random_set(g, 100);
  auto m = initialize(9, fit_norm_stats(set), RoadPriority::Arterial, "c");
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& p : m.params) p += n(g);  // non-zero biases too
  const auto j = to_json(m);
  for (const auto& ex : set) {
    const double y = forward(m, ex.x);
    EXPECT_GT(y, 0.0);
    EXPECT_LT(y, 1.0);
    EXPECT_NEAR(y, oracle_forward(j, ex.x), 1e-12);
  }
}

TEST(Model, LossDomain) {
  EXPECT_DOUBLE_EQ(loss(0.1, 5.0), 0.01);
  EXPECT_THROW(loss(0.0, 5.0), PreconditionError);
  EXPECT_THROW(loss(1.0, 5.0), PreconditionError);
  EXPECT_THROW(loss(0.5, 1.0), PreconditionError);
}

TEST(Model, GradientMatchesFiniteDifferences) {
  std::mt19937_64 g(3);
  const auto set = random_set(g, 64);
  auto m = initialize(1, fit_norm_stats(set), RoadPriority::Highway, "c");
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& p : m.params) p += n(g);
  const std::span<const TrainingExample> batch(set.data(), 8);
  const auto grad = backward(m, batch);
  EXPECT_NEAR(grad.mean_loss, mean_loss(m, batch), 1e-15);
  const double h = 1e-5;
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    auto plus = m, minus = m;
    plus.params[i] += h;
    minus.params[i] -= h;
    const double fd = (mean_loss(plus, batch) - mean_loss(minus, batch)) / (2 * h);
    const double err = std::abs(fd - grad.grad[i]);
    EXPECT_TRUE(err <= 1e-8 || err <= 1e-4 * std::max(std::abs(fd), std::abs(grad.grad[i])))
        << "param " << i << " fd " << fd << " bp " << grad.grad[i];
  }
}

TEST(Training, DeterministicAndLearns) {
  std::mt19937_64 g(4);
  const auto train_set = learnable_set(g, 600);
  const auto val_set = learnable_set(g, 200);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 32;
  cfg.learning_rate = 3e-3;
  cfg.seed = 21;
  const auto a = train(train_set, val_set, cfg, RoadPriority::Highway, "c");
  const auto b = train(train_set, val_set, cfg, RoadPriority::Highway, "c");
  EXPECT_EQ(a.model.params, b.model.params);
  EXPECT_EQ(a.history.train_loss, b.history.train_loss);
  ASSERT_EQ(a.history.train_loss.size(), 15u);
  EXPECT_LT(a.history.train_loss.back(), 0.5 * a.history.train_loss.front());
  EXPECT_FALSE(a.history.loss_increased());
  EXPECT_LT(a.history.validation_loss.back(), a.history.validation_loss.front());
  cfg.seed = 22;
  EXPECT_NE(train(train_set, val_set, cfg, RoadPriority::Highway, "c").model.params, a.model.params);
}

TEST(Training, NoValidationGivesNaN) {
  std::mt19937_64 g(5);
  const auto set = learnable_set(g, 50);
  TrainConfig cfg;
  cfg.epochs = 2;
  const auto r = train(set, {}, cfg, RoadPriority::Highway, "c");
  EXPECT_TRUE(std::isnan(r.history.validation_loss.back()));
}

TEST(Training, NonFiniteLossAborts) {
  std::mt19937_64 g(6);
  auto set = learnable_set(g, 40);
  set[7].x[kPrevFlow] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train(set, {}, cfg, RoadPriority::Highway, "c");
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
  EXPECT_THROW(train({}, {}, cfg, RoadPriority::Highway, "c"), DataError);
}

TEST(Prediction, ClampedToPlausibleSpeeds) {
  std::mt19937_64 g(7);
  const auto set = random_set(g, 20);
  auto m = initialize(1, fit_norm_stats(set), RoadPriority::Highway, "c");
  const auto last = m.layer(m.num_layers() - 1);
  m.params[last.bias_offset] = 50.0;  // y near 1: speed near 1 m/s
  for (double v : predict_speeds(m, set)) EXPECT_EQ(v, 1.0);
  m.params[last.bias_offset] = -50.0;  // y near 0: speed would be huge
  for (double v : predict_speeds(m, set)) EXPECT_EQ(v, 45.0);
}

TEST(Serialization, RoundTripIsBitExact) {
  poolcf::testing::TempDir tmp("model");
  std::mt19937_64 g(8);
  const auto set = learnable_set(g, 100);
  TrainConfig cfg;
  cfg.epochs = 2;
  const auto m = train(set, {}, cfg, RoadPriority::Arterial, "town").model;
  save_model(m, tmp / "m.json");
  const auto back = load_model(tmp / "m.json");
  EXPECT_EQ(back.params, m.params);
  EXPECT_EQ(back.norm.mean, m.norm.mean);
  EXPECT_EQ(back.norm.stddev, m.norm.stddev);
  EXPECT_EQ(back.priority, RoadPriority::Arterial);
  EXPECT_EQ(back.city, "town");
  for (const auto& ex : set) EXPECT_EQ(predict_speed(back, ex.x), predict_speed(m, ex.x));
}

TEST(Serialization, RejectsForeignLayouts) {
  std::mt19937_64 g(9);
  const auto set = random_set(g, 20);
  const auto m = initialize(1, fit_norm_stats(set), RoadPriority::Highway, "c");
  auto j = to_json(m);
  auto reordered = j;
  std::swap(reordered["feature_order"][0], reordered["feature_order"][1]);
  EXPECT_THROW(model_from_json(reordered), DataError);
  auto extra = j;
  extra["dropout"] = 0.1;
  EXPECT_THROW(model_from_json(extra), ConfigError);
  auto truncated = j;
  truncated["layers"][2]["weights"].erase(0);
  EXPECT_THROW(model_from_json(truncated), DataError);
  auto fingerprint = j;
  fingerprint["feature_fingerprint"] = "a,b";
  fingerprint["feature_order"] = {"a", "b"};
  EXPECT_THROW(model_from_json(fingerprint), DataError);
}

TEST(Config, TrainConfigJson) {
  const auto c = train_config_from_json(nlohmann::json{{"epochs", 3}, {"seed", 4}});
  EXPECT_EQ(c.epochs, 3);
  EXPECT_EQ(c.batch_size, 256);
  EXPECT_EQ(train_config_from_json(to_json(c)).seed, 4u);
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"epoch", 3}}), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"learning_rate", -1}}), ConfigError);
}
