#include <cmath>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>

#include "mldcn/checkpoint.hpp"
#include "mldcn/train.hpp"
#include "test_util.hpp"

using namespace mldcn;
using mldcn::testing::expect_error;
using mldcn::testing::TempDir;

namespace {

double brute_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double num = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / pairs;
}

SyntheticTaskSpec tiny_task() {
  SyntheticTaskSpec s;
  s.schema = FeatureSchema::make(4, {{"site", 8, 2}});
  s.teacher_degree = 2;
  s.n_terms = 5;
  s.seed = 3;
  return s;
}

ModelConfig tiny_model(BlockKind kind = BlockKind::mldcn) {
  ModelConfig m;
  m.schema = tiny_task().schema;
  m.block = {kind, m.schema.width(), 2, 3, 0.5, 2, MaskComponents::full};
  m.head = {4, 1};
  m.seed = 5;
  return m;
}

TrainConfig tiny_train(std::size_t steps = 30) {
  TrainConfig t;
  t.batch_size = 32;
  t.steps = steps;
  t.eval_every = 10;
  t.learning_rate = 1e-2;
  t.seed = 2;
  return t;
}

struct Data {
  Dataset train, test;
};

const Data& tiny_data() {
  static const Data d = [] {
    auto [a, b] = split(synth_generate(tiny_task(), 2000), 0.8, 4);
    return Data{std::move(a), std::move(b)};
  }();
  return d;
}

}  // namespace

// ---- AUC -------------------------------------------------------------------

TEST(Auc, WorkedExamples) {
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.1}, std::vector<std::uint8_t>{1, 0}), 1.0);
  EXPECT_EQ(auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, std::vector<std::uint8_t>{1, 0, 1, 0}), 0.5);
  EXPECT_EQ(auc(std::vector<double>{0.8, 0.2, 0.6}, std::vector<std::uint8_t>{0, 0, 1}), 0.5);
  EXPECT_EQ(auc(std::vector<double>{0.1, 0.9}, std::vector<std::uint8_t>{1, 0}), 0.0);
}

TEST(Auc, MatchesBruteForceOnRandomSets) {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(199);
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse scores so ties are common.
      s[i] = static_cast<double>(rng.below(trial % 2 ? 5 : 1000));
      y[i] = rng.bernoulli(0.4);
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_EQ(auc(s, y), brute_auc(s, y)) << "trial " << trial;
  }
}

TEST(Auc, InvariantUnderIncreasingTransforms) {
  Rng rng(2);
  std::vector<double> s(500);
  std::vector<std::uint8_t> y(500);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.normal();
    y[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-s[i])));
  }
  const double base = auc(s, y);
  std::vector<double> t(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) t[i] = std::exp(3.0 * s[i]) + 7.0;
  EXPECT_EQ(auc(t, y), base);
}

TEST(Auc, Errors) {
  expect_error(ErrorCode::metric, [] { auc(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{1, 1}); });
  expect_error(ErrorCode::metric, [] { auc(std::vector<double>{0.1}, std::vector<std::uint8_t>{1, 0}); });
  expect_error(ErrorCode::metric, [] { auc(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{1, 2}); });
  expect_error(ErrorCode::metric,
               [] { auc(std::vector<double>{0.1, std::nan("")}, std::vector<std::uint8_t>{1, 0}); });
}

TEST(LogLoss, ClosedForm) {
  EXPECT_NEAR(log_loss(std::vector<double>{0.5, 0.5}, std::vector<std::uint8_t>{1, 0}), std::log(2.0), 1e-15);
  EXPECT_NEAR(log_loss(std::vector<double>{0.9}, std::vector<std::uint8_t>{0}), -std::log(0.1), 1e-12);
}

// ---- Adam ------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Param p("w", Matrix::from_rows({{1.5, -2.0}}));
  Adam adam({&p}, TrainConfig{});
  for (std::size_t t = 1; t <= 5; ++t) adam.step(t);
  EXPECT_EQ(p.value, Matrix::from_rows({{1.5, -2.0}}));
}

TEST(Adam, SingleStepClosedForm) {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  Param p("w", Matrix::from_rows({{1.0, 1.0, 1.0}}));
  p.grad = Matrix::from_rows({{0.3, -2.0, 1e-9}});
  Adam adam({&p}, cfg);
  adam.step(1);
  for (std::size_t k = 0; k < 3; ++k) {
    const double g = p.grad[k];
    EXPECT_NEAR(p.value[k], 1.0 - 0.01 * g / (std::abs(g) + 1e-8), 1e-15);
  }
}

TEST(Adam, ConstantGradientStepTendsToLearningRate) {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  Param p("w", Matrix(1, 2));
  Adam adam({&p}, cfg);
  double before0 = 0.0, before1 = 0.0;
  for (std::size_t t = 1; t <= 3000; ++t) {
    p.grad = Matrix::from_rows({{0.7, -4.0}});
    before0 = p.value[0];
    before1 = p.value[1];
    adam.step(t);
  }
  EXPECT_NEAR(p.value[0] - before0, -1e-3, 1e-9);
  EXPECT_NEAR(p.value[1] - before1, 1e-3, 1e-9);
}

TEST(BceLoss, GradientIsSigmoidMinusLabel) {
  Tape t;
  Param z("z", Matrix::from_rows({{-3.0}, {0.0}, {2.5}, {20.0}}));
  const std::vector<double> y{1, 0, 0, 1};
  const Var loss = bce_with_logits(t.param(z), y);
  t.backward(loss);
  for (std::size_t i = 0; i < 4; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-z.value[i]));
    EXPECT_NEAR(z.grad[i], (s - y[i]) / 4.0, 1e-10);
  }
}

// ---- training --------------------------------------------------------------

TEST(TrainRun, OneStepRunsExactlyOneUpdate) {
  const auto& d = tiny_data();
  TrainConfig cfg = tiny_train(1);
  const TrainRun run = train_run(tiny_model(), cfg, d.train, d.test);
  EXPECT_EQ(run.summary.steps, 1u);
  ASSERT_EQ(run.summary.history.size(), 1u);
  EXPECT_EQ(run.summary.history[0].step, 1u);
  EXPECT_EQ(run.summary.first_train_loss, run.summary.final_train_loss);

  // Replay the single step by hand: the first batch is the first 32 rows of
  // the seeded permutation.
  Model model(tiny_model());
  Adam adam(model.params(), cfg);
  std::vector<std::size_t> order(d.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(cfg.seed, 1));
  rng.shuffle(order);
  order.resize(cfg.batch_size);
  const Batch b = Batch::gather(d.train, order);
  Tape tape;
  const Var loss = bce_with_logits(model.forward(tape, b.dense, b.ids), b.labels);
  tape.backward(loss);
  adam.step(1);
  EXPECT_EQ(loss.value()[0], run.summary.first_train_loss);
  for (std::size_t i = 0; i < model.params().size(); ++i)
    EXPECT_EQ(model.params()[i]->value, run.model.params()[i]->value) << model.params()[i]->name;
}

TEST(TrainRun, SameSeedsGiveIdenticalSummaries) {
  const auto& d = tiny_data();
  const TrainRun a = train_run(tiny_model(), tiny_train(), d.train, d.test);
  const TrainRun b = train_run(tiny_model(), tiny_train(), d.train, d.test);
  EXPECT_EQ(a.summary, b.summary);
  EXPECT_EQ(to_json(a.summary).dump(), to_json(b.summary).dump());
  TrainConfig other = tiny_train();
  other.seed = 3;
  EXPECT_NE(train_run(tiny_model(), other, d.train, d.test).summary.final_train_loss, a.summary.final_train_loss);
}

TEST(TrainRun, SummaryFields) {
  const auto& d = tiny_data();
  const TrainRun run = train_run(tiny_model(), tiny_train(25), d.train, d.test);
  const TrainingSummary& s = run.summary;
  ASSERT_EQ(s.history.size(), 3u);  // steps 10, 20 and the final 25
  EXPECT_EQ(s.history[2].step, 25u);
  EXPECT_GE(s.test_auc, 0.0);
  EXPECT_LE(s.test_auc, 1.0);
  EXPECT_EQ(s.test_auc, s.history.back().test_auc);
  ASSERT_TRUE(s.teacher_auc.has_value());
  EXPECT_EQ(*s.teacher_auc, teacher_auc(d.test));
  EXPECT_EQ(s.flops, flops_report(tiny_model()).model_total);
  EXPECT_EQ(s.params, param_count(tiny_model()));
  EXPECT_EQ(s.wall_s, 0.0);
  EXPECT_GT(train_run(tiny_model(), tiny_train(2), d.train, d.test, {true}).summary.wall_s, 0.0);
}

TEST(TrainRun, LearnsSomething) {
  const auto& d = tiny_data();
  TrainConfig cfg = tiny_train(300);
  cfg.eval_every = 100;
  const TrainingSummary s = train_run(tiny_model(), cfg, d.train, d.test).summary;
  EXPECT_LT(s.final_train_loss, s.first_train_loss);
  EXPECT_GT(s.test_auc, 0.6);
}

TEST(TrainRun, InvalidConfigsAreRejected) {
  const auto& d = tiny_data();
  TrainConfig cfg = tiny_train();
  cfg.steps = 0;
  expect_error(ErrorCode::config, [&] { train_run(tiny_model(), cfg, d.train, d.test); });
  cfg = tiny_train();
  cfg.batch_size = 0;
  expect_error(ErrorCode::config, [&] { train_run(tiny_model(), cfg, d.train, d.test); });
  cfg = tiny_train();
  cfg.learning_rate = 0.0;
  expect_error(ErrorCode::config, [&] { train_run(tiny_model(), cfg, d.train, d.test); });
  ModelConfig other = tiny_model();
  other.schema.fields[0].cardinality = 9;
  expect_error(ErrorCode::config, [&] { train_run(other, tiny_train(), d.train, d.test); });
}

TEST(TrainRun, DivergenceNamesTheStep) {
  const auto& d = tiny_data();
  TrainConfig cfg = tiny_train();
  cfg.learning_rate = 1e300;
  const std::string msg = expect_error(ErrorCode::training, [&] { train_run(tiny_model(BlockKind::lowrank), cfg, d.train, d.test); });
  EXPECT_NE(msg.find("step 2"), std::string::npos) << msg;
}

TEST(TrainRun, NanInputDivergesAtFirstStep) {
  Data d = tiny_data();
  for (double& v : d.train.dense.data()) v = std::nan("");
  const std::string msg = expect_error(ErrorCode::training, [&] { train_run(tiny_model(), tiny_train(), d.train, d.test); });
  EXPECT_NE(msg.find("step 1"), std::string::npos) << msg;
}

// ---- checkpoints -----------------------------------------------------------

TEST(Checkpoint, RoundTripReproducesOutputsExactly) {
  TempDir dir;
  const auto& d = tiny_data();
  const TrainRun run = train_run(tiny_model(), tiny_train(20), d.train, d.test);
  const std::string path = dir.file("m.ckpt");
  checkpoint_save(run.model, path, tiny_train(20));
  const Model back = checkpoint_load(path);
  EXPECT_EQ(back.config(), run.model.config());
  EXPECT_EQ(predict_logits(back, d.test), predict_logits(run.model, d.test));

  const std::string again = dir.file("m2.ckpt");
  checkpoint_save(back, again, tiny_train(20));
  std::ifstream a(path, std::ios::binary), b(again, std::ios::binary);
  const std::string sa{std::istreambuf_iterator<char>(a), {}}, sb{std::istreambuf_iterator<char>(b), {}};
  EXPECT_EQ(sa, sb);
}

TEST(Checkpoint, HeaderOnlyRead) {
  TempDir dir;
  const Model m(tiny_model());
  const std::string path = dir.file("h.ckpt");
  checkpoint_save(m, path, tiny_train());
  // Drop most of the payload: the header alone must still parse.
  std::ifstream in(path, std::ios::binary);
  std::string header;
  std::getline(in, header);
  std::ofstream(dir.file("only.ckpt"), std::ios::binary) << header << '\n';
  const CheckpointHeader h = checkpoint_read_header(dir.file("only.ckpt"));
  EXPECT_EQ(h.model, tiny_model());
  ASSERT_TRUE(h.train.has_value());
  EXPECT_EQ(*h.train, tiny_train());
  EXPECT_EQ(h.manifest.size(), m.params().size());
  EXPECT_EQ(h.payload_bytes, 8 * m.param_count());
  EXPECT_EQ(h.manifest[1].offset, 8 * m.params()[0]->value.size());
}

TEST(Checkpoint, TruncatedPayloadIsCorruption) {
  TempDir dir;
  const std::string path = dir.file("t.ckpt");
  checkpoint_save(Model(tiny_model()), path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes{std::istreambuf_iterator<char>(in), {}};
  bytes.resize(bytes.size() - 5);
  std::ofstream(dir.file("cut.ckpt"), std::ios::binary) << bytes;
  expect_error(ErrorCode::corruption, [&] { checkpoint_load(dir.file("cut.ckpt")); });
  std::ofstream(dir.file("junk.ckpt"), std::ios::binary) << "not json\n";
  expect_error(ErrorCode::corruption, [&] { checkpoint_read_header(dir.file("junk.ckpt")); });
  expect_error(ErrorCode::io, [&] { checkpoint_read_header(dir.file("absent.ckpt")); });
}

TEST(Checkpoint, ExtraPayloadIsCorruption) {
  TempDir dir;
  const std::string path = dir.file("x.ckpt");
  checkpoint_save(Model(tiny_model()), path);
  std::ofstream(path, std::ios::binary | std::ios::app) << "12345678";
  expect_error(ErrorCode::corruption, [&] { checkpoint_load(path); });
}

TEST(Checkpoint, ConfigMismatchOnLoadIntoIsConfigError) {
  TempDir dir;
  const std::string path = dir.file("c.ckpt");
  checkpoint_save(Model(tiny_model()), path);
  ModelConfig other = tiny_model();
  other.seed = 99;
  Model m(other);
  expect_error(ErrorCode::config, [&] { checkpoint_load_into(m, path); });
}
