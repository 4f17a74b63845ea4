#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <deque>
#include <vector>

#include "mldcn/error.hpp"
#include "mldcn/matrix.hpp"

namespace mldcn {

// A trainable tensor. The gradient accumulates across every use of the
// parameter on a tape and is cleared explicitly with zero_grad().
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

// Handle to a node recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
// every node's inputs precede it; backward() walks the nodes in exact reverse
// order. Parameters bound with param() must outlive the tape.
//
// The tape also counts floating-point operations for every recorded op under
// a fixed convention (mul-add = 2, elementwise = 1 per entry, LayerNorm and
// softmax = 5 per entry, lookups and reshapes free).
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  // With grad_enabled = false no backward rules are kept (inference).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, {}, false});
    return {this, nodes_.size() - 1};
  }

  Var param(Param& p) {
    nodes_.push_back(Node{{}, &p, {}, {}, grad_enabled_});
    return {this, nodes_.size() - 1};
  }

  // Appends an op output. `needs_grad` should be true when any input needs a
  // gradient; `backward` reads grad(self) and accumulates into the inputs.
  Var record(Matrix value, bool needs_grad, BackwardFn backward, std::uint64_t flops) {
    flops_ += flops;
    nodes_.push_back(Node{std::move(value), nullptr, {}, needs_grad ? std::move(backward) : BackwardFn{},
                          needs_grad});
    return {this, nodes_.size() - 1};
  }

  const Matrix& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param != nullptr ? n.param->value : n.value;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  // Gradient buffer of a node, allocated as zeros on first access. For a
  // parameter leaf this is the parameter's own grad.
  Matrix& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.param != nullptr) return n.param->grad;
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var loss) {
    if (loss.tape != this) fail(ErrorCode::contract, "backward: loss belongs to another tape");
    const Matrix& lv = value(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1) {
      fail(ErrorCode::contract, "backward: loss must be scalar, got " + lv.shape());
    }
    grad(loss.id)(0, 0) += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, i);
    }
  }

  std::uint64_t flops() const noexcept { return flops_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Sign pattern of every ReLU input seen so far, used by gradcheck to skip
  // finite differences that straddle a kink.
  void set_track_kinks(bool on) { track_kinks_ = on; }
  bool tracking_kinks() const noexcept { return track_kinks_; }
  void note_kink_signs(const Matrix& pre) {
    for (double v : pre.data()) kinks_.push_back(static_cast<std::int8_t>((v > 0) - (v < 0)));
  }
  const std::vector<std::int8_t>& kink_signs() const noexcept { return kinks_; }

 private:
  struct Node {
    Matrix value;
    Param* param;
    Matrix grad;
    BackwardFn backward;
    bool needs_grad;
  };

  std::deque<Node> nodes_;  // deque: value() references survive later records
  bool grad_enabled_ = true;
  std::uint64_t flops_ = 0;
  bool track_kinks_ = false;
  std::vector<std::int8_t> kinks_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

}  // namespace mldcn
