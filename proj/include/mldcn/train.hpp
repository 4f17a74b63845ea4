#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mldcn/analysis.hpp"
#include "mldcn/blocks.hpp"
#include "mldcn/data.hpp"
#include "mldcn/metrics.hpp"

namespace mldcn {

// Adam with bias correction; first/second moment state lives here, one pair
// of buffers per parameter.
class Adam {
 public:
  Adam(std::vector<Param*> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (Param* p : params_) {
      m_.emplace_back(p->value.rows(), p->value.cols());
      v_.emplace_back(p->value.rows(), p->value.cols());
    }
  }

  // step_index is 1-based.
  void step(std::size_t step_index) {
    const double t = static_cast<double>(step_index);
    const double c1 = 1.0 - std::pow(cfg_.beta1, t);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param& p = *params_[i];
      Matrix& m = m_[i];
      Matrix& v = v_[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad[k];
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        p.value[k] -= cfg_.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.adam_eps);
      }
    }
  }

 private:
  std::vector<Param*> params_;
  TrainConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

struct EvalPoint {
  std::size_t step = 0;
  double train_loss = 0.0;  // mean over the steps since the previous point
  double test_auc = 0.0;

  friend bool operator==(const EvalPoint&, const EvalPoint&) = default;
};

struct TrainingSummary {
  std::size_t steps = 0;
  double first_train_loss = 0.0;
  double final_train_loss = 0.0;
  double test_auc = 0.0;
  double test_logloss = 0.0;
  std::optional<double> teacher_auc;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
  double wall_s = 0.0;  // 0 unless timing was requested
  std::vector<EvalPoint> history;

  friend bool operator==(const TrainingSummary&, const TrainingSummary&) = default;
};

inline json to_json(const TrainingSummary& s) {
  json hist = json::array();
  for (const auto& h : s.history)
    hist.push_back({{"step", h.step}, {"train_loss", h.train_loss}, {"test_auc", h.test_auc}});
  return {{"steps", s.steps},
          {"first_train_loss", s.first_train_loss},
          {"final_train_loss", s.final_train_loss},
          {"test_auc", s.test_auc},
          {"test_logloss", s.test_logloss},
          {"teacher_auc", s.teacher_auc ? json(*s.teacher_auc) : json(nullptr)},
          {"flops", s.flops},
          {"params", s.params},
          {"wall_s", s.wall_s},
          {"history", hist}};
}

struct TrainOptions {
  bool record_timing = false;
};

struct TrainRun {
  Model model;
  TrainingSummary summary;
};

// Gathers rows into a dense matrix, id table and label vector.
struct Batch {
  Matrix dense;
  IdTable ids;
  std::vector<double> labels;

  static Batch gather(const Dataset& ds, std::span<const std::size_t> rows) {
    Batch b;
    b.dense = Matrix(rows.size(), ds.dense.cols());
    b.ids = IdTable(rows.size(), ds.ids.cols);
    b.labels.resize(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const std::size_t i = rows[k];
      std::copy(ds.dense.row(i).begin(), ds.dense.row(i).end(), b.dense.row(k).begin());
      for (std::size_t j = 0; j < ds.ids.cols; ++j) b.ids(k, j) = ds.ids(i, j);
      b.labels[k] = ds.labels[i];
    }
    return b;
  }
};

// Logits for every row of a dataset, evaluated in chunks.
inline std::vector<double> predict_logits(const Model& model, const Dataset& ds, std::size_t chunk = 8192) {
  std::vector<double> out;
  out.reserve(ds.size());
  std::vector<std::size_t> rows;
  for (std::size_t begin = 0; begin < ds.size(); begin += chunk) {
    const std::size_t end = std::min(ds.size(), begin + chunk);
    rows.resize(end - begin);
    std::iota(rows.begin(), rows.end(), begin);
    const Batch b = Batch::gather(ds, rows);
    const Matrix logits = model.predict_logits(b.dense, b.ids);
    out.insert(out.end(), logits.data().begin(), logits.data().end());
  }
  return out;
}

inline double evaluate_auc(const Model& model, const Dataset& ds) { return auc(predict_logits(model, ds), ds.labels); }

// Trains a fresh model built from model_cfg on `train` and evaluates on
// `test`. Everything is a pure function of the configs and data: batches are
// drawn from per-epoch permutations seeded by train_cfg.seed.
inline TrainRun train_run(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const Dataset& train,
                          const Dataset& test, const TrainOptions& options = {}) {
  train_cfg.validate();
  if (!(train.schema == model_cfg.schema) || !(test.schema == model_cfg.schema)) {
    fail(ErrorCode::config, "train_run: dataset schema does not match the model schema");
  }
  if (train.size() == 0 || test.size() == 0) fail(ErrorCode::config, "train_run: empty train or test set");
  const auto t0 = std::chrono::steady_clock::now();

  Model model(model_cfg);
  Adam adam(model.params(), train_cfg);
  Rng order_rng(mix_seed(train_cfg.seed, 1));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  order_rng.shuffle(order);
  std::size_t cursor = 0;
  std::vector<std::size_t> rows(train_cfg.batch_size);

  TrainingSummary s;
  s.steps = train_cfg.steps;
  double window_loss = 0.0;
  std::size_t window_steps = 0;
  for (std::size_t step = 1; step <= train_cfg.steps; ++step) {
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      rows[k] = order[cursor++];
    }
    const Batch batch = Batch::gather(train, rows);
    model.zero_grads();
    Tape tape;
    const Var loss = bce_with_logits(model.forward(tape, batch.dense, batch.ids), batch.labels);
    const double lv = loss.value()[0];
    if (!std::isfinite(lv)) {
      fail(ErrorCode::training, "training diverged at step " + std::to_string(step) + " (loss " +
                                    std::to_string(lv) + ")");
    }
    tape.backward(loss);
    adam.step(step);
    if (step == 1) s.first_train_loss = lv;
    window_loss += lv;
    ++window_steps;
    if (step % train_cfg.eval_every == 0 || step == train_cfg.steps) {
      s.history.push_back({step, window_loss / static_cast<double>(window_steps), evaluate_auc(model, test)});
      window_loss = 0.0;
      window_steps = 0;
    }
  }
  s.final_train_loss = s.history.back().train_loss;
  const std::vector<double> logits = predict_logits(model, test);
  s.test_auc = auc(logits, test.labels);
  std::vector<double> probs(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) probs[i] = detail::stable_sigmoid(logits[i]);
  s.test_logloss = log_loss(probs, test.labels);
  if (test.has_teacher()) s.teacher_auc = teacher_auc(test);
  s.flops = flops_report(model_cfg).model_total;
  s.params = model.param_count();
  if (options.record_timing)
    s.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(model), std::move(s)};
}

}  // namespace mldcn
