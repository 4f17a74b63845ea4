#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mldcn/config.hpp"
#include "mldcn/json_reader.hpp"

namespace mldcn {

// FLOPs convention, per single inference (B = 1):
//   linear m->n            2mn + n (mul-add = 2, bias add = n; no bias: 2mn)
//   elementwise op, n wide n
//   LayerNorm over d       5d
//   softmax over K         5K
//   embedding lookup       0 (concatenation is free as well)

struct FlopsTerm {
  std::string name;
  std::uint64_t flops = 0;
};

struct LayerFlops {
  std::size_t index = 0;
  std::string label;
  std::vector<FlopsTerm> terms;

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (const auto& t : terms) s += t.flops;
    return s;
  }
};

struct FlopsReport {
  std::vector<LayerFlops> per_layer;
  std::uint64_t block_total = 0;
  std::uint64_t head_flops = 0;
  std::uint64_t embed_flops = 0;
  std::uint64_t model_total = 0;
  std::uint64_t param_count = 0;

  // Every total equals the sum of its breakdown.
  bool consistent() const {
    std::uint64_t s = 0;
    for (const auto& l : per_layer) s += l.total();
    return s == block_total && model_total == embed_flops + block_total + head_flops;
  }
};

namespace detail {

inline std::uint64_t linear_flops(std::uint64_t in, std::uint64_t out, bool bias = true) {
  return 2 * in * out + (bias ? out : 0);
}

inline std::vector<FlopsTerm> mask_terms(MaskComponents mode, std::uint64_t d, std::uint64_t k, std::uint64_t out) {
  switch (mode) {
    case MaskComponents::none:
      return {};
    case MaskComponents::mlp1:
      return {{"mask_mlp1", linear_flops(d, out)}};
    case MaskComponents::mlp1_relu:
      return {{"mask_mlp1", linear_flops(d, out)}, {"mask_relu", out}};
    case MaskComponents::full:
      return {{"mask_aggregate", linear_flops(d, k)}, {"mask_relu", k}, {"mask_project", linear_flops(k, out)}};
  }
  return {};
}

inline std::uint64_t mask_params(MaskComponents mode, std::uint64_t d, std::uint64_t k, std::uint64_t out) {
  switch (mode) {
    case MaskComponents::none: return 0;
    case MaskComponents::mlp1:
    case MaskComponents::mlp1_relu: return d * out + out;
    case MaskComponents::full: return d * k + k + k * out + out;
  }
  return 0;
}

}  // namespace detail

// Term breakdown of one layer of the given block kind.
inline std::vector<FlopsTerm> layer_flops_terms(const BlockConfig& b) {
  const std::uint64_t d = b.d, r = b.r, k = b.k_mask(), K = b.K;
  switch (b.kind) {
    case BlockKind::identity:
      return {};
    case BlockKind::dcnv2:
      return {{"cross_matmul", 2 * d * d}, {"bias", d}, {"x0_hadamard", d}, {"residual", d}};
    case BlockKind::lowrank:
      return {{"project_v", 2 * d * r}, {"expand_u", 2 * d * r}, {"bias", d}, {"x0_hadamard", d}, {"residual", d}};
    case BlockKind::moe_lowrank:
      return {{"gate_linear", detail::linear_flops(d, K)},
              {"gate_softmax", 5 * K},
              {"experts_lowrank", K * (4 * d * r + d)},
              {"experts_x0_hadamard", K * d},
              {"gate_scale", K * d},
              {"expert_sum", (K - 1) * d},
              {"residual", d}};
    case BlockKind::masknet_serial:
    case BlockKind::masknet_parallel: {
      auto terms = detail::mask_terms(MaskComponents::full, d, k, d);
      terms.insert(terms.end(), {{"ln_in", 5 * d},
                                 {"mask_hadamard", d},
                                 {"w3_matmul", 2 * d * d},
                                 {"ln_out", 5 * d},
                                 {"relu", d}});
      return terms;
    }
    case BlockKind::mldcn: {
      std::vector<FlopsTerm> terms{{"project_v", 2 * d * r}};
      const auto mask = detail::mask_terms(b.mask_components, d, k, r);
      terms.insert(terms.end(), mask.begin(), mask.end());
      if (b.mask_components != MaskComponents::none) terms.push_back({"mask_hadamard", r});
      terms.insert(terms.end(), {{"expand_u", 2 * d * r},
                                 {"bias", d},
                                 {"x0_hadamard", d},
                                 {"residual", d},
                                 {"layernorm", 5 * d}});
      return terms;
    }
  }
  fail(ErrorCode::config, "flops: unknown block kind");
}

inline std::uint64_t layer_param_count(const BlockConfig& b) {
  const std::uint64_t d = b.d, r = b.r, k = b.k_mask(), K = b.K;
  switch (b.kind) {
    case BlockKind::identity: return 0;
    case BlockKind::dcnv2: return d * d + d;
    case BlockKind::lowrank: return 2 * d * r + d;
    case BlockKind::moe_lowrank: return K * (2 * d * r + d) + d * K + K;
    case BlockKind::masknet_serial:
    case BlockKind::masknet_parallel: return detail::mask_params(MaskComponents::full, d, k, d) + d * d + 4 * d;
    case BlockKind::mldcn: return 2 * d * r + d + detail::mask_params(b.mask_components, d, k, r) + 2 * d;
  }
  fail(ErrorCode::config, "param_count: unknown block kind");
}

inline std::uint64_t head_flops(std::size_t in, const std::vector<std::size_t>& widths) {
  std::uint64_t f = 0;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    f += detail::linear_flops(in, widths[i]);
    if (i + 1 < widths.size()) f += widths[i];  // ReLU
    in = widths[i];
  }
  return f;
}

inline std::uint64_t head_params(std::size_t in, const std::vector<std::size_t>& widths) {
  std::uint64_t p = 0;
  for (std::size_t w : widths) {
    p += static_cast<std::uint64_t>(in) * w + w;
    in = w;
  }
  return p;
}

inline std::uint64_t embedding_params(const FeatureSchema& s) {
  std::uint64_t p = 0;
  for (const auto& f : s.fields) p += static_cast<std::uint64_t>(f.cardinality) * f.emb_dim;
  return p;
}

inline std::uint64_t stack_param_count(const BlockConfig& b) {
  return b.kind == BlockKind::identity ? 0 : b.l * layer_param_count(b);
}

inline std::uint64_t param_count(const ModelConfig& m) {
  m.validate();
  std::uint64_t p = embedding_params(m.schema) + head_params(m.block.output_width(), m.head);
  if (m.mmoe_experts > 0) {
    p += m.mmoe_experts * stack_param_count(m.block) + m.block.d * m.mmoe_experts + m.mmoe_experts;
  } else {
    p += stack_param_count(m.block);
  }
  return p;
}

inline FlopsReport flops_report(const ModelConfig& m) {
  m.validate();
  FlopsReport rep;
  const auto& b = m.block;
  const std::size_t layers = b.kind == BlockKind::identity ? 0 : b.l;
  const std::size_t experts = m.mmoe_experts > 0 ? m.mmoe_experts : 1;
  std::size_t index = 0;
  for (std::size_t e = 0; e < experts; ++e) {
    for (std::size_t i = 0; i < layers; ++i) {
      std::string label = "layer" + std::to_string(i);
      if (m.mmoe_experts > 0) label = "expert" + std::to_string(e) + "." + label;
      rep.per_layer.push_back({index++, std::move(label), layer_flops_terms(b)});
    }
  }
  if (m.mmoe_experts > 0) {
    const std::uint64_t d = b.d, E = m.mmoe_experts, w = b.output_width();
    rep.per_layer.push_back({index++,
                             "mmoe_gate",
                             {{"gate_linear", detail::linear_flops(d, E)},
                              {"gate_softmax", 5 * E},
                              {"gate_scale", E * w},
                              {"expert_sum", (E - 1) * w}}});
  }
  for (const auto& l : rep.per_layer) rep.block_total += l.total();
  rep.head_flops = head_flops(b.output_width(), m.head);
  rep.embed_flops = 0;
  rep.model_total = rep.embed_flops + rep.block_total + rep.head_flops;
  rep.param_count = param_count(m);
  return rep;
}

inline json to_json(const FlopsReport& r) {
  json layers = json::array();
  for (const auto& l : r.per_layer) {
    json terms = json::array();
    for (const auto& t : l.terms) terms.push_back({{"name", t.name}, {"flops", t.flops}});
    layers.push_back({{"index", l.index}, {"label", l.label}, {"terms", terms}, {"total", l.total()}});
  }
  return {{"per_layer", layers},          {"block_total", r.block_total}, {"head_flops", r.head_flops},
          {"embed_flops", r.embed_flops}, {"model_total", r.model_total}, {"param_count", r.param_count}};
}

// ---- polynomial interaction order ------------------------------------------

struct DegreeBound {
  std::vector<std::uint64_t> per_layer;  // degree of X_1 .. X_l
  std::uint64_t final = 0;
};

// Degree algebra over the entries of X0: X0 has degree 1, linear maps,
// ReLU and LayerNorm preserve degree (piecewise-linear / normalizing reading),
// Hadamard products add degrees and sums take the maximum.
namespace degree {

inline std::uint64_t product(std::uint64_t a, std::uint64_t b) { return a + b; }
inline std::uint64_t sum(std::uint64_t a, std::uint64_t b) { return std::max(a, b); }

// X0 * (inner) + Xl, where inner = linear(Xl) optionally multiplied by a
// mask computed from Xl.
inline std::uint64_t cross_layer(std::uint64_t x0, std::uint64_t xl, bool masked) {
  std::uint64_t inner = xl;
  if (masked) inner = product(inner, xl);
  return sum(product(x0, inner), xl);
}

}  // namespace degree

// The MoE gate is a softmax-normalized weight and is treated as degree 0,
// so the mixture keeps the low-rank recurrence D + 1.
inline DegreeBound degree_bound(BlockKind kind, std::size_t l,
                                MaskComponents mask = MaskComponents::full) {
  if (l < 1) fail(ErrorCode::config, "degree_bound: l must be >= 1");
  bool masked = false;
  switch (kind) {
    case BlockKind::dcnv2:
    case BlockKind::lowrank:
    case BlockKind::moe_lowrank:
      break;
    case BlockKind::mldcn:
      masked = mask != MaskComponents::none;
      break;
    default:
      fail(ErrorCode::unsupported, "degree_bound: no interaction-order bound for kind '" +
                                       std::string(to_string(kind)) + "'");
  }
  DegreeBound out;
  const std::uint64_t x0 = 1;
  std::uint64_t x = x0;
  for (std::size_t i = 0; i < l; ++i) {
    x = degree::cross_layer(x0, x, masked);
    out.per_layer.push_back(x);
  }
  out.final = x;
  return out;
}

inline json to_json(const DegreeBound& d) { return {{"per_layer", d.per_layer}, {"final", d.final}}; }

}  // namespace mldcn
