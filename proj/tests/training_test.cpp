#include <gtest/gtest.h>

#include "lgrin/training.hpp"
#include "support.hpp"

namespace {

using namespace lgrin;

ModelConfig tiny(std::size_t classes = 3) {
  ModelConfig c;
  c.nodes = 8;
  c.feature_dim = 3;
  c.num_classes = classes;
  c.inception_layers = 1;
  c.etas = {{8, 4}};
  return c;
}

GraphDataset tiny_data(std::size_t classes = 3, std::size_t per_class = 6, double noise = 0.05,
                       std::uint64_t seed = 1) {
  return synth_generate({classes, per_class, 8, 3, noise, seed});
}

TEST(Schedule, StepDecay) {
  const TrainConfig cfg;
  EXPECT_EQ(lr_at_epoch(cfg, 0), 0.01);
  EXPECT_EQ(lr_at_epoch(cfg, 49), 0.01);
  EXPECT_EQ(lr_at_epoch(cfg, 50), 0.005);
  EXPECT_EQ(lr_at_epoch(cfg, 100), 0.0025);
  for (std::size_t e = 0; e < 400; ++e) EXPECT_LE(lr_at_epoch(cfg, e + 1), lr_at_epoch(cfg, e));
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.epochs = 7;
  cfg.loss_weights.lambda3 = 0.5;
  EXPECT_EQ(nlohmann::json(cfg).get<TrainConfig>(), cfg);
  nlohmann::json j = cfg;
  j["momentum"] = 0.9;
  EXPECT_THROW(j.get<TrainConfig>(), std::exception);
}

TEST(Adam, ZeroGradientIsAFixedPoint) {
  std::vector<Parameter> params{{"w", Tensor::vector({1, -2, 3})}};
  const auto before = params;
  AdamState state;
  adam_step(params, {{0, Tensor::zeros({3})}}, state, 0.01, TrainConfig{});
  EXPECT_EQ(params, before);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Parameter> params{{"x", Tensor::scalar(0.3)}};
  AdamState state;
  adam_step(params, {{0, Tensor::scalar(1.0)}}, state, 0.01, TrainConfig{});
  EXPECT_NEAR(params[0].value.item(), 0.3 - 0.01, 1e-9);
}

TEST(Adam, MatchesReferenceRecurrence) {
  const TrainConfig cfg;
  std::vector<Parameter> params{{"x", Tensor::scalar(1.0)}};
  AdamState state;
  double x = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 20; ++t) {
    const double g = 2.0 * x - 0.5;
    adam_step(params, {{0, Tensor::scalar(2.0 * params[0].value.item() - 0.5)}}, state, 0.05, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(params[0].value.item(), x, 1e-14);
  }
}

TEST(Adam, DeterministicAndStrict) {
  auto run = [] {
    std::vector<Parameter> params{{"w", lgrin::testing::random_tensor({4, 2}, 1)}};
    AdamState state;
    for (int i = 0; i < 5; ++i) adam_step(params, {{0, lgrin::testing::random_tensor({4, 2}, 10 + i)}}, state, 0.01, {});
    return params;
  };
  EXPECT_EQ(run(), run());
  std::vector<Parameter> params{{"w", Tensor::zeros({2})}, {"b", Tensor::zeros({2})}};
  AdamState state;
  EXPECT_THROW(adam_step(params, {{0, Tensor::zeros({2})}}, state, 0.01, {}), ContractError);
}

TEST(Evaluate, HandCount) {
  const std::vector<std::size_t> pred{0, 1, 1, 0}, labels{0, 1, 0, 0};
  const Evaluation e = evaluate_predictions(pred, labels, 2);
  EXPECT_EQ(e.unweighted_accuracy, 0.75);
  EXPECT_EQ(e.confusion, (std::vector<std::vector<std::size_t>>{{2, 1}, {0, 1}}));
}

TEST(Evaluate, PerfectCaseAndCountingInvariants) {
  const std::vector<std::size_t> labels{0, 2, 1, 2, 2};
  const Evaluation perfect = evaluate_predictions(labels, labels, 3);
  EXPECT_EQ(perfect.unweighted_accuracy, 1.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) {
        EXPECT_EQ(perfect.confusion[i][j], 0u);
      }

  const Model m = build_lgrin(tiny());
  const GraphDataset ds = tiny_data();
  const Evaluation e = evaluate(m, ds);
  std::size_t total = 0, off = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    std::size_t row = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      row += e.confusion[i][j];
      if (i != j) off += e.confusion[i][j];
    }
    EXPECT_EQ(row, ds.class_counts()[i]);
    total += row;
  }
  EXPECT_EQ(total, ds.size());
  EXPECT_DOUBLE_EQ(e.unweighted_accuracy, 1.0 - static_cast<double>(off) / static_cast<double>(total));
}

TEST(Evaluate, TiesPredictLowestIndex) { EXPECT_EQ(predict(Tensor::vector({1, 3, 3, 0})), 1u); }

TEST(Train, OneEpochOneBatchIsOneStep) {
  Model m = build_lgrin(tiny(4));
  TrainConfig cfg;
  cfg.epochs = 1;
  const TrainReport r = train(m, synth_generate({4, 4, 8, 3, 0.05, 2}), cfg);
  EXPECT_EQ(r.optimizer_steps, 1u);
  EXPECT_EQ(r.loss.size(), 1u);
  EXPECT_EQ(r.accuracy.size(), 1u);
}

TEST(Train, LossDecreasesAndParametersStayFinite) {
  Model m = build_lgrin(tiny(4));
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.seed = 3;
  std::size_t checked = 0;
  TrainOptions opts;
  opts.on_epoch_end = [&checked](std::size_t, const Model& model) {
    for (const auto& p : model.parameters) ASSERT_TRUE(p.value.all_finite()) << p.name;
    ++checked;
  };
  const TrainReport r = train(m, synth_generate({4, 4, 8, 3, 0.05, 2}), cfg, opts);
  EXPECT_EQ(checked, 50u);
  EXPECT_LT(r.loss.back(), r.loss.front());
}

TEST(Train, DeterministicCurves) {
  auto run = [] {
    Model m = build_lgrin(tiny());
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 5;
    cfg.seed = 8;
    return std::pair{train(m, tiny_data(), cfg), m.parameters};
  };
  const auto [a, pa] = run();
  const auto [b, pb] = run();
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(pa, pb);
}

TEST(Train, ReportedAccuracyMatchesEvaluate) {
  Model m = build_lgrin(tiny());
  TrainConfig cfg;
  cfg.epochs = 3;
  const GraphDataset ds = tiny_data();
  const TrainReport r = train(m, ds, cfg, {{}, &ds, {}});
  EXPECT_EQ(r.final_train_accuracy, evaluate(m, ds).unweighted_accuracy);
  ASSERT_TRUE(r.final_test_accuracy);
  EXPECT_EQ(*r.final_test_accuracy, r.final_train_accuracy);
}

TEST(Train, DatasetMismatch) {
  Model m = build_lgrin(tiny());
  EXPECT_THROW(train(m, synth_generate({3, 2, 8, 4, 0.0, 0}), TrainConfig{}), ConfigError);
  EXPECT_THROW(train(m, synth_generate({3, 2, 9, 3, 0.0, 0}), TrainConfig{}), ConfigError);
}

TEST(Train, BaselineTrains) {
  ModelConfig c = tiny();
  c.architecture = Architecture::gcn_baseline;
  c.gcn_width = 8;
  Model m = build_model(c);
  TrainConfig cfg;
  cfg.epochs = 20;
  const TrainReport r = train(m, tiny_data(), cfg);
  EXPECT_LT(r.loss.back(), r.loss.front());
}

TEST(FineTune, OnlyHeadChanges) {
  Model m = build_lgrin(tiny());
  TrainConfig cfg;
  cfg.epochs = 5;
  train(m, tiny_data(), cfg);
  const Model before = m;
  fine_tune_head(m, tiny_data(3, 6, 0.1, 9), cfg);
  for (std::size_t i = 0; i < m.parameters.size(); ++i) {
    const auto& p = m.parameters[i];
    if (is_head_parameter(p)) continue;
    ASSERT_EQ(p.value.size(), before.parameters[i].value.size());
    EXPECT_EQ(std::memcmp(p.value.values().data(), before.parameters[i].value.values().data(),
                          p.value.size() * sizeof(double)),
              0)
        << p.name;
  }
  EXPECT_NE(m["head.w"], before["head.w"]);
}

TEST(FineTune, NewClassCountReshapesHead) {
  Model m = build_lgrin(tiny());
  TrainConfig cfg;
  cfg.epochs = 2;
  fine_tune_head(m, synth_generate({5, 2, 8, 3, 0.0, 4}), cfg);
  EXPECT_EQ(m["head.w"].shape(), (Shape{head_input_width(m.config), 5}));
  EXPECT_EQ(m["head.b"].shape(), (Shape{5}));
  EXPECT_EQ(m.config.num_classes, 5u);
}

TEST(FineTune, Mismatches) {
  Model m = build_lgrin(tiny());
  EXPECT_THROW(fine_tune_head(m, synth_generate({3, 2, 8, 5, 0.0, 0}), TrainConfig{}), ConfigError);
  EXPECT_THROW(fine_tune_head(m, synth_generate({3, 2, 7, 3, 0.0, 0}), TrainConfig{}), ConfigError);
}

TEST(FineTune, RetrainingOnOwnCorpusKeepsAccuracy) {
  Model m = build_lgrin(tiny());
  TrainConfig cfg;
  cfg.epochs = 30;
  const GraphDataset ds = tiny_data(3, 8, 0.1, 5);
  train(m, ds, cfg);
  const double frozen = evaluate(m, ds).unweighted_accuracy;
  TrainConfig ft = cfg;
  ft.epochs = 10;
  fine_tune_head(m, ds, ft);
  EXPECT_GE(evaluate(m, ds).unweighted_accuracy, frozen - 1.0 / 24.0);
}

Model kink_free_gradcheck_model(const SequenceSample& s) {
  ModelConfig c = ModelConfig::gradcheck();
  Model m = build_lgrin(c);
  while (kink_margin(m, s, {}) < kKinkClearance) {
    ++c.seed;
    m = build_lgrin(c);
  }
  return m;
}

TEST(GradCheck, SmallModelPasses) {
  const SequenceSample s = synth_generate({3, 1, 6, 5, 0.1, 0}).samples[1];
  const Model m = kink_free_gradcheck_model(s);
  const GradCheckReport r = grad_check(m, s, {});
  EXPECT_TRUE(r.passed()) << r.max_relative_error;
  ASSERT_EQ(r.groups.size(), m.parameters.size());
  for (std::size_t i = 0; i < m.parameters.size(); ++i) EXPECT_EQ(r.groups[i].name, m.parameters[i].name);
  EXPECT_GE(r.kink_margin, kKinkClearance);
}

TEST(GradCheck, CorruptedGradientFails) {
  const SequenceSample s = synth_generate({3, 1, 6, 5, 0.1, 0}).samples[0];
  const Model m = kink_free_gradcheck_model(s);
  const GradCheckReport r = grad_check(m, s, {}, 1e-5, [](GradientMap& g) { g.at(0)[0] += 0.5; });
  EXPECT_FALSE(r.passed());
}

TEST(GradCheck, DeterministicPerSeed) {
  const SequenceSample s = synth_generate({3, 1, 6, 5, 0.1, 0}).samples[2];
  const Model m = kink_free_gradcheck_model(s);
  EXPECT_EQ(grad_check(m, s, {}).max_relative_error, grad_check(m, s, {}).max_relative_error);
}

TEST(CrossValidate, OneAccuracyPerFold) {
  TrainConfig cfg;
  cfg.epochs = 2;
  const CrossValidationReport r = cross_validate(tiny(), tiny_data(3, 4), 4, cfg, 0);
  ASSERT_EQ(r.fold_accuracy.size(), 4u);
  for (double a : r.fold_accuracy) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

}  // namespace
