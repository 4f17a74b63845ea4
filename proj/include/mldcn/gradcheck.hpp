#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mldcn/tape.hpp"

namespace mldcn {

struct GradcheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // entries whose +-step crosses a ReLU kink
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Builds the scalar loss on the given tape.
using LossFn = std::function<Var(Tape&)>;

// Compares reverse-mode gradients against central differences
// (f(x+h) - f(x-h)) / 2h for every entry of every parameter. The relative
// error uses max(|analytic|, |numeric|, 1e-8) as denominator.
inline GradcheckResult gradcheck(const LossFn& loss_fn, std::span<Param* const> params,
                                 double step = 1e-5) {
  if (!(step > 0.0)) fail(ErrorCode::contract, "gradcheck: step must be positive");

  struct Eval {
    double value;
    std::vector<std::int8_t> kinks;
  };
  auto evaluate = [&]() {
    Tape tape;
    tape.set_track_kinks(true);
    const Var loss = loss_fn(tape);
    if (loss.value().size() != 1) fail(ErrorCode::contract, "gradcheck: loss must be scalar");
    return Eval{loss.value()[0], tape.kink_signs()};
  };

  for (Param* p : params) p->zero_grad();
  Eval base;
  {
    Tape tape;
    tape.set_track_kinks(true);
    const Var loss = loss_fn(tape);
    tape.backward(loss);
    base = Eval{loss.value()[0], tape.kink_signs()};
  }
  const Eval again = evaluate();
  if (again.value != base.value || again.kinks != base.kinks) {
    fail(ErrorCode::contract, "gradcheck: forward is not deterministic");
  }

  GradcheckResult result;
  for (Param* p : params) {
    const Matrix analytic = p->grad;
    for (std::size_t k = 0; k < p->value.size(); ++k) {
      const double saved = p->value[k];
      p->value[k] = saved + step;
      const Eval plus = evaluate();
      p->value[k] = saved - step;
      const Eval minus = evaluate();
      p->value[k] = saved;
      if (plus.kinks != base.kinks || minus.kinks != base.kinks) {
        ++result.excluded;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * step);
      const double a = analytic[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_param = p->name;
        result.worst_index = k;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace mldcn
