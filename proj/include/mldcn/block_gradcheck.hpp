#pragma once

#include <cstdint>
#include <optional>

#include "mldcn/blocks.hpp"
#include "mldcn/gradcheck.hpp"

namespace mldcn {

struct BlockCheckSpec {
  BlockConfig block;
  std::size_t experts = 0;  // > 0 wraps the stack in a single-gate MMoE
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  double step = 1e-5;
};

// Finite-difference check of one interaction stack on random inputs. Every
// parameter is jittered away from its initial value (zero biases, unit LN
// gains) and the input X0 is itself a checked parameter. The loss is
// sum(out * C) for a fixed random C.
inline GradcheckResult block_gradcheck(const BlockCheckSpec& spec) {
  spec.block.validate("block");
  if (spec.batch < 1) fail(ErrorCode::config, "batch: must be >= 1");
  ParamStore store;
  Rng rng(spec.seed);
  std::optional<BlockStack> stack;
  std::optional<Mmoe> mmoe;
  if (spec.experts > 0) {
    Mmoe m;
    for (std::size_t e = 0; e < spec.experts; ++e)
      m.experts.push_back(make_block_stack(spec.block, store, rng, "mmoe.expert" + std::to_string(e)));
    m.gate = make_linear(store, rng, "mmoe.gate", spec.block.d, spec.experts);
    mmoe = std::move(m);
  } else {
    stack = make_block_stack(spec.block, store, rng, "block");
  }
  for (Param* p : store.params())
    for (double& v : p->value.data()) v += 0.1 * rng.normal();

  Param& x0 = store.add("x0", normal_matrix(spec.batch, spec.block.d, 1.0, rng));
  const Matrix weights = normal_matrix(spec.batch, spec.block.output_width(), 1.0, rng);
  const LossFn loss = [&](Tape& tape) {
    const Var x = tape.param(x0);
    const Var out = mmoe ? mmoe_combine(x, *mmoe) : stack_forward(x, *stack);
    return sum_all(hadamard(out, tape.constant(weights)));
  };
  const auto params = store.params();
  return gradcheck(loss, params, spec.step);
}

}  // namespace mldcn
