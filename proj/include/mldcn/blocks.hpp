#pragma once

#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mldcn/config.hpp"
#include "mldcn/id_table.hpp"
#include "mldcn/ops.hpp"
#include "mldcn/random.hpp"

namespace mldcn {

// Owns parameters with stable addresses; registration order is the order
// used by the optimizer and by checkpoints.
class ParamStore {
 public:
  Param& add(std::string name, Matrix value) {
    params_.push_back(std::make_unique<Param>(std::move(name), std::move(value)));
    return *params_.back();
  }

  std::vector<Param*> params() const {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

// ---- layer parameter bundles (non-owning) ----------------------------------

struct Linear {
  Param* weight = nullptr;  // in x out
  Param* bias = nullptr;    // 1 x out, optional
};

struct MaskParams {
  MaskComponents mode = MaskComponents::full;
  Linear aggregate;  // d x k (d x r for the single-layer modes)
  Linear project;    // k x out, full mode only
};

struct DcnLayerParams {
  Param* w = nullptr;  // d x d
  Param* b = nullptr;  // 1 x d
};

struct LowRankParams {
  Param* u = nullptr;  // d x r
  Param* v = nullptr;  // d x r
  Param* b = nullptr;  // 1 x d
};

struct MoeLayerParams {
  std::vector<LowRankParams> experts;
  Linear gate;  // d x K
};

struct MlDcnLayerParams {
  LowRankParams cross;
  MaskParams mask;
  Param* ln_gain = nullptr;
  Param* ln_bias = nullptr;
};

struct MaskBlockParams {
  MaskParams mask;
  Param* w3 = nullptr;  // d x d
  Param* ln_in_gain = nullptr;
  Param* ln_in_bias = nullptr;
  Param* ln_out_gain = nullptr;
  Param* ln_out_bias = nullptr;
};

using LayerParams = std::variant<DcnLayerParams, LowRankParams, MoeLayerParams, MaskBlockParams, MlDcnLayerParams>;

struct BlockStack {
  BlockConfig config;
  std::vector<LayerParams> layers;
};

struct Head {
  std::vector<Linear> layers;
};

struct Mmoe {
  std::vector<BlockStack> experts;
  Linear gate;  // d x n_experts
};

// ---- forward ops -----------------------------------------------------------

namespace detail {

inline void require_cross_inputs(Var x0, Var xl, const char* op) {
  if (!x0.value().same_shape(xl.value())) {
    fail(ErrorCode::shape, std::string(op) + ": X0 " + x0.value().shape() + " vs Xl " + xl.value().shape());
  }
}

}  // namespace detail

inline Var linear(Var x, const Linear& p) {
  Tape& t = *x.tape;
  Var y = matmul(x, t.param(*p.weight));
  if (p.bias != nullptr) y = add_row_bias(y, t.param(*p.bias));
  return y;
}

// X_{l+1} = X0 * (Xl W + b) + Xl
inline Var dcnv2_layer(Var x0, Var xl, const DcnLayerParams& p) {
  detail::require_cross_inputs(x0, xl, "dcnv2_layer");
  Tape& t = *xl.tape;
  Var inner = add_row_bias(matmul(xl, t.param(*p.w)), t.param(*p.b));
  return add(hadamard(x0, inner), xl);
}

// (Xl V) U^T + b, the low-rank replacement of Xl W + b.
inline Var lowrank_inner(Var xl, const LowRankParams& p, std::optional<Var> mask = std::nullopt) {
  Tape& t = *xl.tape;
  Var projected = matmul(xl, t.param(*p.v));
  if (mask) projected = hadamard(projected, *mask);
  return add_row_bias(matmul_nt(projected, t.param(*p.u)), t.param(*p.b));
}

// X_{l+1} = X0 * ((Xl V) U^T + b) + Xl
inline Var lowrank_layer(Var x0, Var xl, const LowRankParams& p) {
  detail::require_cross_inputs(x0, xl, "lowrank_layer");
  return add(hadamard(x0, lowrank_inner(xl, p)), xl);
}

// X_{l+1} = Xl + sum_i G_i(Xl) * E_i(Xl), E_i = X0 * ((Xl V_i) U_i^T + b_i),
// G = softmax(Xl W_g + b_g) per instance, broadcast over the width.
inline Var moe_lowrank_layer(Var x0, Var xl, const MoeLayerParams& p) {
  detail::require_cross_inputs(x0, xl, "moe_lowrank_layer");
  if (p.experts.empty()) fail(ErrorCode::config, "moe_lowrank_layer: no experts");
  Var gate = softmax_rows(linear(xl, p.gate));
  if (gate.cols() != p.experts.size()) {
    fail(ErrorCode::shape, "moe_lowrank_layer: gate width " + std::to_string(gate.cols()) + " vs " +
                               std::to_string(p.experts.size()) + " experts");
  }
  std::optional<Var> mixed;
  for (std::size_t i = 0; i < p.experts.size(); ++i) {
    Var expert = hadamard(x0, lowrank_inner(xl, p.experts[i]));
    Var weighted = scale_rows(expert, column(gate, i));
    mixed = mixed ? add(*mixed, weighted) : weighted;
  }
  return add(xl, *mixed);
}

// Instance-guided mask: ReLU(Xl W1 + b1) W2 + b2 in full mode. There is no
// activation after the projection, so the mask may be negative.
inline Var mask_generate(Var xl, const MaskParams& p) {
  switch (p.mode) {
    case MaskComponents::none:
      fail(ErrorCode::config, "mask_generate: mask disabled");
    case MaskComponents::mlp1:
      return linear(xl, p.aggregate);
    case MaskComponents::mlp1_relu:
      return relu(linear(xl, p.aggregate));
    case MaskComponents::full:
      return linear(relu(linear(xl, p.aggregate)), p.project);
  }
  fail(ErrorCode::config, "mask_generate: bad mode");
}

// MaskBlock: ReLU(LN(X_mask * LN(Xl) W3)).
inline Var maskblock(Var xl, const MaskBlockParams& p) {
  Tape& t = *xl.tape;
  Var mask = mask_generate(xl, p.mask);
  Var normed = layernorm_rows(xl, t.param(*p.ln_in_gain), t.param(*p.ln_in_bias));
  Var masked = hadamard(mask, normed);
  Var hidden = matmul(masked, t.param(*p.w3));
  return relu(layernorm_rows(hidden, t.param(*p.ln_out_gain), t.param(*p.ln_out_bias)));
}

// X_{l+1} = LN(X0 * (((Xl V) * X_mask) U^T + b) + Xl), with X_mask of width r
// computed from Xl. With mask mode `none` the mask is the all-ones matrix and
// is skipped.
inline Var mldcn_layer(Var x0, Var xl, const MlDcnLayerParams& p) {
  detail::require_cross_inputs(x0, xl, "mldcn_layer");
  Tape& t = *xl.tape;
  std::optional<Var> mask;
  if (p.mask.mode != MaskComponents::none) {
    mask = mask_generate(xl, p.mask);
    if (mask->cols() != p.cross.v->value.cols()) {
      fail(ErrorCode::shape, "mldcn_layer: mask " + mask->value().shape() + " does not match rank " +
                                 std::to_string(p.cross.v->value.cols()));
    }
  }
  Var crossed = add(hadamard(x0, lowrank_inner(xl, p.cross, mask)), xl);
  return layernorm_rows(crossed, t.param(*p.ln_gain), t.param(*p.ln_bias));
}

// Serial: X0 -> X1 -> ... -> Xl. Parallel: every block reads X0 and the
// outputs are concatenated (width l*d).
inline Var masknet_forward(Var x0, const BlockStack& stack) {
  const bool parallel = stack.config.kind == BlockKind::masknet_parallel;
  if (!parallel && stack.config.kind != BlockKind::masknet_serial) {
    fail(ErrorCode::config, "masknet_forward: not a masknet stack");
  }
  std::vector<Var> outputs;
  Var x = x0;
  for (const auto& layer : stack.layers) {
    const auto& p = std::get<MaskBlockParams>(layer);
    if (parallel) {
      outputs.push_back(maskblock(x0, p));
    } else {
      x = maskblock(x, p);
    }
  }
  if (!parallel) return x;
  if (outputs.size() == 1) return outputs.front();
  return concat_cols(outputs);
}

inline Var stack_forward(Var x0, const BlockStack& stack) {
  switch (stack.config.kind) {
    case BlockKind::identity:
      return x0;
    case BlockKind::masknet_serial:
    case BlockKind::masknet_parallel:
      return masknet_forward(x0, stack);
    case BlockKind::dcnv2:
    case BlockKind::lowrank:
    case BlockKind::moe_lowrank:
    case BlockKind::mldcn:
      break;
  }
  Var x = x0;
  for (const auto& layer : stack.layers) {
    x = std::visit(
        [&](const auto& p) -> Var {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, DcnLayerParams>) return dcnv2_layer(x0, x, p);
          else if constexpr (std::is_same_v<P, LowRankParams>) return lowrank_layer(x0, x, p);
          else if constexpr (std::is_same_v<P, MoeLayerParams>) return moe_lowrank_layer(x0, x, p);
          else if constexpr (std::is_same_v<P, MlDcnLayerParams>) return mldcn_layer(x0, x, p);
          else fail(ErrorCode::config, "stack_forward: maskblock inside a crossing stack");
        },
        layer);
  }
  return x;
}

// MLP with ReLU between layers and a linear last layer producing one logit.
inline Var head_forward(Var x, const Head& head) {
  for (std::size_t i = 0; i < head.layers.size(); ++i) {
    x = linear(x, head.layers[i]);
    if (i + 1 < head.layers.size()) x = relu(x);
  }
  return x;
}

// Single-gate MMoE: softmax(X0 W_g + b_g) weights the expert stacks.
inline Var mmoe_combine(Var x0, const Mmoe& mmoe) {
  if (mmoe.experts.empty()) fail(ErrorCode::config, "mmoe: no experts");
  Var gate = softmax_rows(linear(x0, mmoe.gate));
  std::optional<Var> mixed;
  for (std::size_t i = 0; i < mmoe.experts.size(); ++i) {
    Var out = stack_forward(x0, mmoe.experts[i]);
    if (mixed && out.cols() != mixed->cols()) {
      fail(ErrorCode::shape, "mmoe: expert " + std::to_string(i) + " width " + std::to_string(out.cols()) +
                                 " vs " + std::to_string(mixed->cols()));
    }
    Var weighted = scale_rows(out, column(gate, i));
    mixed = mixed ? add(*mixed, weighted) : weighted;
  }
  return *mixed;
}

inline Var mmoe_forward(Var x0, const Mmoe& mmoe, const Head& head) {
  return head_forward(mmoe_combine(x0, mmoe), head);
}

// Concatenates dense features with one embedding lookup per categorical
// field. `tables` holds one cardinality x emb_dim table per field.
inline Var assemble_x0(Tape& tape, const Matrix& dense, const IdTable& ids, std::span<Param* const> tables,
                       const FeatureSchema& schema) {
  if (dense.cols() != schema.n_dense() || ids.cols != schema.n_fields() || tables.size() != schema.n_fields() ||
      (schema.n_fields() > 0 && ids.rows != dense.rows())) {
    fail(ErrorCode::shape, "assemble_x0: dense " + dense.shape() + ", ids [" + std::to_string(ids.rows) + "x" +
                               std::to_string(ids.cols) + "] do not match the schema");
  }
  std::vector<Var> parts;
  if (dense.cols() > 0) parts.push_back(tape.constant(dense));
  for (std::size_t j = 0; j < schema.n_fields(); ++j) {
    const auto column_ids = ids.column(j);
    parts.push_back(embedding_lookup(tape.param(*tables[j]), column_ids, schema.fields[j].name));
  }
  if (parts.size() == 1) return parts.front();
  return concat_cols(parts);
}

// ---- construction ----------------------------------------------------------

inline Linear make_linear(ParamStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                          bool bias = true, double bias_init = 0.0) {
  Linear l;
  l.weight = &store.add(name + ".weight", glorot_uniform(in, out, rng));
  if (bias) l.bias = &store.add(name + ".bias", Matrix(1, out, bias_init));
  return l;
}

inline LowRankParams make_lowrank(ParamStore& store, Rng& rng, const std::string& name, std::size_t d,
                                  std::size_t r) {
  LowRankParams p;
  p.u = &store.add(name + ".U", glorot_uniform(d, r, rng));
  p.v = &store.add(name + ".V", glorot_uniform(d, r, rng));
  p.b = &store.add(name + ".b", Matrix(1, d));
  return p;
}

// The mask's output bias starts at 1 so training begins near the identity
// mask.
inline MaskParams make_mask(ParamStore& store, Rng& rng, const std::string& name, MaskComponents mode,
                            std::size_t d, std::size_t k, std::size_t out) {
  MaskParams m;
  m.mode = mode;
  switch (mode) {
    case MaskComponents::none:
      break;
    case MaskComponents::mlp1:
    case MaskComponents::mlp1_relu:
      m.aggregate = make_linear(store, rng, name + ".mlp1", d, out, true, 1.0);
      break;
    case MaskComponents::full:
      m.aggregate = make_linear(store, rng, name + ".aggregate", d, k);
      m.project = make_linear(store, rng, name + ".project", k, out, true, 1.0);
      break;
  }
  return m;
}

inline BlockStack make_block_stack(const BlockConfig& cfg, ParamStore& store, Rng& rng, const std::string& prefix) {
  cfg.validate(prefix);
  BlockStack stack{cfg, {}};
  if (cfg.kind == BlockKind::identity) return stack;
  const std::size_t d = cfg.d;
  for (std::size_t i = 0; i < cfg.l; ++i) {
    const std::string name = prefix + ".layer" + std::to_string(i);
    switch (cfg.kind) {
      case BlockKind::identity:
        break;
      case BlockKind::dcnv2: {
        DcnLayerParams p;
        p.w = &store.add(name + ".W", glorot_uniform(d, d, rng));
        p.b = &store.add(name + ".b", Matrix(1, d));
        stack.layers.emplace_back(p);
        break;
      }
      case BlockKind::lowrank:
        stack.layers.emplace_back(make_lowrank(store, rng, name, d, cfg.r));
        break;
      case BlockKind::moe_lowrank: {
        MoeLayerParams p;
        for (std::size_t e = 0; e < cfg.K; ++e)
          p.experts.push_back(make_lowrank(store, rng, name + ".expert" + std::to_string(e), d, cfg.r));
        p.gate = make_linear(store, rng, name + ".gate", d, cfg.K);
        stack.layers.emplace_back(std::move(p));
        break;
      }
      case BlockKind::masknet_serial:
      case BlockKind::masknet_parallel: {
        MaskBlockParams p;
        p.mask = make_mask(store, rng, name + ".mask", MaskComponents::full, d, cfg.k_mask(), d);
        p.w3 = &store.add(name + ".W3", glorot_uniform(d, d, rng));
        p.ln_in_gain = &store.add(name + ".ln_in.gain", Matrix(1, d, 1.0));
        p.ln_in_bias = &store.add(name + ".ln_in.bias", Matrix(1, d));
        p.ln_out_gain = &store.add(name + ".ln_out.gain", Matrix(1, d, 1.0));
        p.ln_out_bias = &store.add(name + ".ln_out.bias", Matrix(1, d));
        stack.layers.emplace_back(p);
        break;
      }
      case BlockKind::mldcn: {
        MlDcnLayerParams p;
        p.cross = make_lowrank(store, rng, name, d, cfg.r);
        p.mask = make_mask(store, rng, name + ".mask", cfg.mask_components, d, cfg.k_mask(), cfg.r);
        p.ln_gain = &store.add(name + ".ln.gain", Matrix(1, d, 1.0));
        p.ln_bias = &store.add(name + ".ln.bias", Matrix(1, d));
        stack.layers.emplace_back(p);
        break;
      }
    }
  }
  return stack;
}

inline Head make_head(ParamStore& store, Rng& rng, const std::string& prefix, std::size_t in,
                      const std::vector<std::size_t>& widths) {
  Head h;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    h.layers.push_back(make_linear(store, rng, prefix + "." + std::to_string(i), in, widths[i]));
    in = widths[i];
  }
  return h;
}

// Complete CTR model: embeddings -> interaction stack (optionally wrapped in
// a single-gate MMoE) -> MLP head producing one logit per row.
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    for (const auto& f : cfg_.schema.fields)
      tables_.push_back(&store_.add("embedding." + f.name, normal_matrix(f.cardinality, f.emb_dim, 0.01, rng)));
    if (cfg_.mmoe_experts > 0) {
      Mmoe m;
      for (std::size_t e = 0; e < cfg_.mmoe_experts; ++e)
        m.experts.push_back(make_block_stack(cfg_.block, store_, rng, "mmoe.expert" + std::to_string(e)));
      m.gate = make_linear(store_, rng, "mmoe.gate", cfg_.block.d, cfg_.mmoe_experts);
      mmoe_ = std::move(m);
    } else {
      stack_ = make_block_stack(cfg_.block, store_, rng, "block");
    }
    head_ = make_head(store_, rng, "head", cfg_.block.output_width(), cfg_.head);
  }

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param*> params() const { return store_.params(); }
  std::size_t param_count() const { return store_.scalar_count(); }
  void zero_grads() { store_.zero_grads(); }

  Var assemble(Tape& tape, const Matrix& dense, const IdTable& ids) const {
    return assemble_x0(tape, dense, ids, tables_, cfg_.schema);
  }

  Var interaction(Var x0) const { return mmoe_ ? mmoe_combine(x0, *mmoe_) : stack_forward(x0, *stack_); }

  // Logits, B x 1.
  Var forward(Tape& tape, const Matrix& dense, const IdTable& ids) const {
    return head_forward(interaction(assemble(tape, dense, ids)), head_);
  }

  Matrix predict_logits(const Matrix& dense, const IdTable& ids) const {
    Tape tape(false);
    return forward(tape, dense, ids).value();
  }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  std::vector<Param*> tables_;
  std::optional<BlockStack> stack_;
  std::optional<Mmoe> mmoe_;
  Head head_;
};

}  // namespace mldcn
