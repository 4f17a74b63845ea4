#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mldcn/error.hpp"
#include "mldcn/json_reader.hpp"

namespace mldcn {

enum class BlockKind {
  identity,  // empty interaction stack: the head sees X0 directly
  dcnv2,
  lowrank,
  moe_lowrank,
  masknet_serial,
  masknet_parallel,
  mldcn,
};

// Which parts of the instance-guided mask an ML-DCN layer uses.
//   none      - mask fixed to all ones (plain low-rank crossing + LayerNorm)
//   mlp1      - X W1 + b1 projected straight to width r
//   mlp1_relu - ReLU(X W1 + b1), width r
//   full      - ReLU(X W1 + b1) W2 + b2 with an aggregation layer of width k
enum class MaskComponents { none, mlp1, mlp1_relu, full };

inline std::string_view to_string(BlockKind k) {
  switch (k) {
    case BlockKind::identity: return "identity";
    case BlockKind::dcnv2: return "dcnv2";
    case BlockKind::lowrank: return "lowrank";
    case BlockKind::moe_lowrank: return "moe_lowrank";
    case BlockKind::masknet_serial: return "masknet_serial";
    case BlockKind::masknet_parallel: return "masknet_parallel";
    case BlockKind::mldcn: return "mldcn";
  }
  return "?";
}

inline BlockKind parse_block_kind(std::string_view s, const std::string& path = "kind") {
  for (BlockKind k : {BlockKind::identity, BlockKind::dcnv2, BlockKind::lowrank, BlockKind::moe_lowrank,
                      BlockKind::masknet_serial, BlockKind::masknet_parallel, BlockKind::mldcn}) {
    if (to_string(k) == s) return k;
  }
  fail(ErrorCode::config, path + ": unknown block kind '" + std::string(s) + "'");
}

inline std::string_view to_string(MaskComponents m) {
  switch (m) {
    case MaskComponents::none: return "none";
    case MaskComponents::mlp1: return "mlp1";
    case MaskComponents::mlp1_relu: return "mlp1_relu";
    case MaskComponents::full: return "full";
  }
  return "?";
}

inline MaskComponents parse_mask_components(std::string_view s, const std::string& path = "mask_components") {
  for (MaskComponents m : {MaskComponents::none, MaskComponents::mlp1, MaskComponents::mlp1_relu,
                           MaskComponents::full}) {
    if (to_string(m) == s) return m;
  }
  fail(ErrorCode::config, path + ": unknown mask components '" + std::string(s) + "'");
}

inline bool uses_rank(BlockKind k) {
  return k == BlockKind::lowrank || k == BlockKind::moe_lowrank || k == BlockKind::mldcn;
}
inline bool uses_mask(BlockKind k) {
  return k == BlockKind::masknet_serial || k == BlockKind::masknet_parallel || k == BlockKind::mldcn;
}

struct BlockConfig {
  BlockKind kind = BlockKind::mldcn;
  std::size_t d = 0;  // input width
  std::size_t l = 1;
  std::size_t r = 1;
  double t = 0.5;
  std::size_t K = 1;
  MaskComponents mask_components = MaskComponents::full;

  // Width of the mask's aggregation layer: round(t*r) for ML-DCN,
  // round(t*d) for MaskNet, never below 1.
  std::size_t k_mask() const {
    const double base = kind == BlockKind::mldcn ? static_cast<double>(r) : static_cast<double>(d);
    const auto k = static_cast<long long>(std::llround(t * base));
    return k < 1 ? 1 : static_cast<std::size_t>(k);
  }

  // Width of the stack output.
  std::size_t output_width() const {
    if (kind == BlockKind::masknet_parallel) return l * d;
    return d;
  }

  void validate(const std::string& path = "block") const {
    if (d == 0) fail(ErrorCode::config, path + ".d: input width must be >= 1");
    if (kind == BlockKind::identity) return;
    if (l < 1) fail(ErrorCode::config, path + ".l: layer count must be >= 1");
    if (uses_rank(kind) && r < 1) fail(ErrorCode::config, path + ".r: rank must be >= 1");
    if (uses_mask(kind) && !(t > 0.0)) fail(ErrorCode::config, path + ".t: mask ratio must be > 0");
    if (kind == BlockKind::moe_lowrank && K < 1) fail(ErrorCode::config, path + ".K: expert count must be >= 1");
    if (kind != BlockKind::mldcn && mask_components != MaskComponents::full) {
      fail(ErrorCode::config, path + ".mask_components: only supported for mldcn");
    }
  }

  friend bool operator==(const BlockConfig&, const BlockConfig&) = default;
};

struct CategoricalField {
  std::string name;
  std::uint32_t cardinality = 1;
  std::size_t emb_dim = 1;

  friend bool operator==(const CategoricalField&, const CategoricalField&) = default;
};

struct FeatureSchema {
  std::vector<std::string> dense_names;
  std::vector<CategoricalField> fields;

  static FeatureSchema make(std::size_t n_dense, std::vector<CategoricalField> fields) {
    FeatureSchema s;
    for (std::size_t i = 0; i < n_dense; ++i) s.dense_names.push_back("d" + std::to_string(i));
    for (std::size_t j = 0; j < fields.size(); ++j)
      if (fields[j].name.empty()) fields[j].name = "c" + std::to_string(j);
    s.fields = std::move(fields);
    return s;
  }

  std::size_t n_dense() const { return dense_names.size(); }
  std::size_t n_fields() const { return fields.size(); }

  std::size_t width() const {
    std::size_t w = n_dense();
    for (const auto& f : fields) w += f.emb_dim;
    return w;
  }

  void validate(const std::string& path = "schema") const {
    if (width() == 0) fail(ErrorCode::config, path + ": schema has no features");
    std::vector<std::string> seen;
    auto check_name = [&](const std::string& n, const std::string& where) {
      if (n.empty()) fail(ErrorCode::config, where + ": empty column name");
      if (n == "label" || n == "teacher_prob") fail(ErrorCode::config, where + ": reserved column name '" + n + "'");
      for (const auto& s : seen)
        if (s == n) fail(ErrorCode::config, where + ": duplicate column name '" + n + "'");
      seen.push_back(n);
    };
    for (std::size_t i = 0; i < dense_names.size(); ++i)
      check_name(dense_names[i], path + ".dense_names[" + std::to_string(i) + "]");
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const std::string p = path + ".fields[" + std::to_string(j) + "]";
      check_name(fields[j].name, p + ".name");
      if (fields[j].cardinality < 1) fail(ErrorCode::config, p + ".cardinality: must be >= 1");
      if (fields[j].emb_dim < 1) fail(ErrorCode::config, p + ".emb_dim: must be >= 1");
    }
  }

  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;
};

struct ModelConfig {
  FeatureSchema schema;
  BlockConfig block;
  std::size_t mmoe_experts = 0;  // 0: no MMoE wrapper
  std::vector<std::size_t> head = {1};  // layer widths, last one is the logit
  std::uint64_t seed = 0;

  void validate() const {
    schema.validate("schema");
    if (block.d != schema.width()) {
      fail(ErrorCode::config, "block.d: " + std::to_string(block.d) + " does not match schema width " +
                                  std::to_string(schema.width()));
    }
    block.validate("block");
    if (head.empty() || head.back() != 1) fail(ErrorCode::config, "head: last layer must have width 1");
    for (std::size_t i = 0; i < head.size(); ++i)
      if (head[i] == 0) fail(ErrorCode::config, "head[" + std::to_string(i) + "]: width must be >= 1");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TrainConfig {
  std::size_t batch_size = 512;
  std::size_t steps = 2000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t eval_every = 500;
  std::uint64_t seed = 0;
  double train_frac = 0.8;

  void validate() const {
    if (batch_size < 1) fail(ErrorCode::config, "train.batch_size: must be >= 1");
    if (steps < 1) fail(ErrorCode::config, "train.steps: must be >= 1");
    if (!(learning_rate > 0.0)) fail(ErrorCode::config, "train.learning_rate: must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) fail(ErrorCode::config, "train.beta1: must be in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) fail(ErrorCode::config, "train.beta2: must be in [0,1)");
    if (!(adam_eps > 0.0)) fail(ErrorCode::config, "train.adam_eps: must be > 0");
    if (eval_every < 1) fail(ErrorCode::config, "train.eval_every: must be >= 1");
    if (!(train_frac > 0.0 && train_frac < 1.0)) fail(ErrorCode::config, "train.train_frac: must be in (0,1)");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// ---- JSON ------------------------------------------------------------------

inline json to_json(const FeatureSchema& s) {
  json fields = json::array();
  for (const auto& f : s.fields)
    fields.push_back({{"name", f.name}, {"cardinality", f.cardinality}, {"emb_dim", f.emb_dim}});
  return {{"dense_names", s.dense_names}, {"fields", fields}};
}

inline FeatureSchema schema_from_json(const json& j, const std::string& path = "schema") {
  JsonReader r(j, path);
  std::vector<std::string> dense_names;
  if (r.has("dense_names")) {
    const json& names = r.get_array("dense_names");
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (!names[i].is_string())
        fail(ErrorCode::config, r.field("dense_names") + "[" + std::to_string(i) + "]: expected a string");
      dense_names.push_back(names[i].get<std::string>());
    }
  }
  std::size_t n_dense = dense_names.size();
  if (r.has("n_dense")) {
    n_dense = r.get_uint("n_dense");
    if (!dense_names.empty() && dense_names.size() != n_dense)
      fail(ErrorCode::config, r.field("n_dense") + ": does not match dense_names length");
  } else {
    r.mark("n_dense");
  }
  std::vector<CategoricalField> fields;
  if (r.has("fields")) {
    const json& arr = r.get_array("fields");
    for (std::size_t j2 = 0; j2 < arr.size(); ++j2) {
      JsonReader fr(arr[j2], r.field("fields") + "[" + std::to_string(j2) + "]");
      CategoricalField f;
      f.name = fr.get_string("name", "");
      const std::uint64_t card = fr.get_uint("cardinality");
      if (card < 1 || card > 0xFFFFFFFFull) fail(ErrorCode::config, fr.field("cardinality") + ": out of range");
      f.cardinality = static_cast<std::uint32_t>(card);
      f.emb_dim = fr.get_uint("emb_dim");
      fr.finish();
      fields.push_back(std::move(f));
    }
  } else {
    r.mark("fields");
  }
  r.finish();
  FeatureSchema s = FeatureSchema::make(n_dense, std::move(fields));
  if (!dense_names.empty()) s.dense_names = std::move(dense_names);
  s.validate(path);
  return s;
}

inline json to_json(const BlockConfig& b) {
  return {{"kind", std::string(to_string(b.kind))},
          {"d", b.d},
          {"l", b.l},
          {"r", b.r},
          {"t", b.t},
          {"K", b.K},
          {"mask_components", std::string(to_string(b.mask_components))}};
}

// `width` supplies d when the document omits it.
inline BlockConfig block_config_from_json(const json& j, std::size_t width, const std::string& path = "block") {
  JsonReader r(j, path);
  BlockConfig b;
  b.kind = parse_block_kind(r.get_string("kind"), r.field("kind"));
  b.d = r.get_uint("d", width);
  if (width != 0 && b.d != width)
    fail(ErrorCode::config, r.field("d") + ": " + std::to_string(b.d) + " does not match schema width " +
                                std::to_string(width));
  b.l = r.get_uint("l", 1);
  b.r = r.get_uint("r", 1);
  b.t = r.get_double("t", 0.5);
  b.K = r.get_uint("K", 1);
  b.mask_components = parse_mask_components(r.get_string("mask_components", "full"), r.field("mask_components"));
  r.finish();
  b.validate(path);
  return b;
}

inline json to_json(const ModelConfig& m) {
  json j = {{"schema", to_json(m.schema)}, {"block", to_json(m.block)}, {"head", m.head}, {"seed", m.seed}};
  j["mmoe"] = m.mmoe_experts == 0 ? json(nullptr) : json{{"n_experts", m.mmoe_experts}};
  return j;
}

inline ModelConfig model_config_from_json(const json& j) {
  JsonReader r(j, "");
  ModelConfig m;
  m.schema = schema_from_json(r.raw("schema"), "schema");
  m.block = block_config_from_json(r.raw("block"), m.schema.width(), "block");
  if (r.has("mmoe")) {
    JsonReader mr = r.object("mmoe");
    m.mmoe_experts = mr.get_uint("n_experts");
    if (m.mmoe_experts < 1) fail(ErrorCode::config, "mmoe.n_experts: must be >= 1");
    mr.finish();
  } else {
    r.mark("mmoe");
  }
  r.mark("head");
  if (r.has("head")) {
    m.head.clear();
    const json& h = r.get_array("head");
    for (std::size_t i = 0; i < h.size(); ++i) m.head.push_back(json_uint(h[i], "head[" + std::to_string(i) + "]"));
  }
  m.seed = r.get_uint("seed", 0);
  r.finish();
  m.validate();
  return m;
}

inline json to_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size}, {"steps", t.steps},     {"learning_rate", t.learning_rate},
          {"beta1", t.beta1},           {"beta2", t.beta2},     {"adam_eps", t.adam_eps},
          {"eval_every", t.eval_every}, {"seed", t.seed},       {"train_frac", t.train_frac}};
}

inline TrainConfig train_config_from_json(const json& j, const std::string& path = "train") {
  JsonReader r(j, path);
  TrainConfig t;
  t.batch_size = r.get_uint("batch_size", t.batch_size);
  t.steps = r.get_uint("steps", t.steps);
  t.learning_rate = r.get_double("learning_rate", t.learning_rate);
  t.beta1 = r.get_double("beta1", t.beta1);
  t.beta2 = r.get_double("beta2", t.beta2);
  t.adam_eps = r.get_double("adam_eps", t.adam_eps);
  t.eval_every = r.get_uint("eval_every", t.eval_every);
  t.seed = r.get_uint("seed", t.seed);
  t.train_frac = r.get_double("train_frac", t.train_frac);
  r.finish();
  t.validate();
  return t;
}

}  // namespace mldcn
