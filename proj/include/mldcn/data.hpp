#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "mldcn/config.hpp"
#include "mldcn/id_table.hpp"
#include "mldcn/matrix.hpp"
#include "mldcn/metrics.hpp"
#include "mldcn/random.hpp"

namespace mldcn {

struct Dataset {
  FeatureSchema schema;
  Matrix dense;                       // N x n_dense
  IdTable ids;                        // N x n_fields
  std::vector<std::uint8_t> labels;   // 0/1
  std::vector<double> teacher_probs;  // empty when unknown (external data)

  std::size_t size() const { return labels.size(); }
  bool has_teacher() const { return !teacher_probs.empty(); }

  void validate() const {
    const std::size_t n = size();
    if (dense.rows() != n || dense.cols() != schema.n_dense() || ids.rows != n || ids.cols != schema.n_fields() ||
        (has_teacher() && teacher_probs.size() != n)) {
      fail(ErrorCode::shape, "dataset: column lengths disagree with " + std::to_string(n) + " labels");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] > 1) fail(ErrorCode::contract, "dataset: non-binary label at row " + std::to_string(i));
      for (std::size_t j = 0; j < ids.cols; ++j)
        if (ids(i, j) >= schema.fields[j].cardinality)
          fail(ErrorCode::lookup, "dataset: field '" + schema.fields[j].name + "' id " + std::to_string(ids(i, j)) +
                                      " out of range");
    }
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.schema = schema;
    out.dense = Matrix(rows.size(), dense.cols());
    out.ids = IdTable(rows.size(), ids.cols);
    out.labels.resize(rows.size());
    if (has_teacher()) out.teacher_probs.resize(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const std::size_t i = rows[k];
      std::copy(dense.row(i).begin(), dense.row(i).end(), out.dense.row(k).begin());
      for (std::size_t j = 0; j < ids.cols; ++j) out.ids(k, j) = ids(i, j);
      out.labels[k] = labels[i];
      if (has_teacher()) out.teacher_probs[k] = teacher_probs[i];
    }
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---- synthetic teacher -----------------------------------------------------

struct SyntheticTaskSpec {
  FeatureSchema schema;
  std::size_t teacher_degree = 2;  // p
  std::size_t n_terms = 8;
  double coef_scale = 1.0;  // standard deviation of the normalized teacher logit
  double label_noise = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    schema.validate("task");
    if (teacher_degree < 1) fail(ErrorCode::config, "task.teacher_degree: must be >= 1");
    if (n_terms < 1) fail(ErrorCode::config, "task.n_terms: must be >= 1");
    if (!(coef_scale > 0.0)) fail(ErrorCode::config, "task.coef_scale: must be > 0");
    if (!(label_noise >= 0.0 && label_noise < 1.0)) fail(ErrorCode::config, "task.label_noise: must be in [0,1)");
  }
};

inline json to_json(const SyntheticTaskSpec& s) {
  json j = to_json(s.schema);
  j["teacher_degree"] = s.teacher_degree;
  j["n_terms"] = s.n_terms;
  j["coef_scale"] = s.coef_scale;
  j["label_noise"] = s.label_noise;
  j["seed"] = s.seed;
  return j;
}

inline SyntheticTaskSpec task_spec_from_json(const json& j, const std::string& path = "task") {
  if (!j.is_object()) fail(ErrorCode::config, path + ": expected an object");
  json schema_part = json::object();
  json rest = json::object();
  for (const auto& [key, value] : j.items()) {
    if (key == "n_dense" || key == "dense_names" || key == "fields") {
      schema_part[key] = value;
    } else {
      rest[key] = value;
    }
  }
  SyntheticTaskSpec s;
  s.schema = schema_from_json(schema_part, path);
  JsonReader r(rest, path);
  s.teacher_degree = r.get_uint("teacher_degree");
  s.n_terms = r.get_uint("n_terms", s.n_terms);
  s.coef_scale = r.get_double("coef_scale", s.coef_scale);
  s.label_noise = r.get_double("label_noise", s.label_noise);
  s.seed = r.get_uint("seed", s.seed);
  r.finish();
  s.validate();
  return s;
}

struct Monomial {
  double coef = 0.0;
  std::vector<std::uint32_t> coords;  // with repetition; size = degree
};

// Ground-truth click model: z = [dense, fixed per-id vectors], logit = sum of
// random monomials over z, probability = sigmoid(logit / normalizer).
struct Teacher {
  FeatureSchema schema;
  std::vector<Matrix> tables;  // per field, cardinality x emb_dim, N(0,1)
  std::vector<Monomial> monomials;
  double normalizer = 1.0;

  double raw_logit(std::span<const double> dense, std::span<const std::uint32_t> ids, std::vector<double>& z) const {
    z.assign(dense.begin(), dense.end());
    for (std::size_t j = 0; j < ids.size(); ++j) {
      auto row = tables[j].row(ids[j]);
      z.insert(z.end(), row.begin(), row.end());
    }
    double logit = 0.0;
    for (const auto& m : monomials) {
      double v = m.coef;
      for (std::uint32_t c : m.coords) v *= z[c];
      logit += v;
    }
    return logit;
  }

  double probability(std::span<const double> dense, std::span<const std::uint32_t> ids, std::vector<double>& z) const {
    const double x = raw_logit(dense, ids, z) / normalizer;
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
};

namespace detail {

inline constexpr std::uint64_t kTeacherStream = 0;
inline constexpr std::uint64_t kProbeStream = 0xFFFF'FFFF'FFFF'FFFFull;
inline constexpr std::size_t kProbeRows = 10000;
inline constexpr std::size_t kChunkRows = 4096;

inline void draw_features(const FeatureSchema& schema, Rng& rng, std::span<double> dense,
                          std::span<std::uint32_t> ids) {
  for (double& v : dense) v = rng.normal();
  for (std::size_t j = 0; j < ids.size(); ++j)
    ids[j] = static_cast<std::uint32_t>(rng.below(schema.fields[j].cardinality));
}

}  // namespace detail

inline Teacher make_teacher(const SyntheticTaskSpec& spec) {
  spec.validate();
  Teacher t;
  t.schema = spec.schema;
  Rng rng(mix_seed(spec.seed, detail::kTeacherStream));
  for (const auto& f : spec.schema.fields) t.tables.push_back(normal_matrix(f.cardinality, f.emb_dim, 1.0, rng));
  const std::uint64_t width = spec.schema.width();
  for (std::size_t k = 0; k < spec.n_terms; ++k) {
    // The first term always has the full degree p; coordinates are drawn
    // with replacement, so powers are possible.
    const std::size_t deg = k == 0 ? spec.teacher_degree : 1 + rng.below(spec.teacher_degree);
    Monomial m;
    m.coef = rng.normal();
    for (std::size_t q = 0; q < deg; ++q) m.coords.push_back(static_cast<std::uint32_t>(rng.below(width)));
    t.monomials.push_back(std::move(m));
  }
  // Standardize the logit on a probe sample, then scale to coef_scale.
  Rng probe(mix_seed(spec.seed, detail::kProbeStream));
  std::vector<double> dense(spec.schema.n_dense()), z;
  std::vector<std::uint32_t> ids(spec.schema.n_fields());
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < detail::kProbeRows; ++i) {
    detail::draw_features(spec.schema, probe, dense, ids);
    const double v = t.raw_logit(dense, ids, z);
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(detail::kProbeRows);
  const double mean = sum / n;
  const double sd = std::sqrt(std::max(sum_sq / n - mean * mean, 0.0));
  t.normalizer = (sd > 0.0 ? sd : 1.0) / spec.coef_scale;
  return t;
}

// Rows are generated in fixed-size chunks, each from its own stream seeded by
// mix_seed(seed, chunk + 1), so the result does not depend on `workers`.
inline Dataset synth_generate(const SyntheticTaskSpec& spec, std::size_t n, std::size_t workers = 1) {
  if (n < 1) fail(ErrorCode::config, "synth_generate: n must be >= 1");
  const Teacher teacher = make_teacher(spec);
  Dataset ds;
  ds.schema = spec.schema;
  ds.dense = Matrix(n, spec.schema.n_dense());
  ds.ids = IdTable(n, spec.schema.n_fields());
  ds.labels.resize(n);
  ds.teacher_probs.resize(n);

  const std::size_t chunks = (n + detail::kChunkRows - 1) / detail::kChunkRows;
  auto run_chunk = [&](std::size_t c) {
    Rng rng(mix_seed(spec.seed, c + 1));
    std::vector<double> z;
    const std::size_t begin = c * detail::kChunkRows;
    const std::size_t end = std::min(n, begin + detail::kChunkRows);
    for (std::size_t i = begin; i < end; ++i) {
      std::span<std::uint32_t> id_row(ds.ids.ids.data() + i * ds.ids.cols, ds.ids.cols);
      detail::draw_features(spec.schema, rng, ds.dense.row(i), id_row);
      const double p = teacher.probability(ds.dense.row(i), id_row, z);
      ds.teacher_probs[i] = p;
      bool label = rng.bernoulli(p);
      if (rng.bernoulli(spec.label_noise)) label = !label;
      ds.labels[i] = label ? 1 : 0;
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, chunks));
  if (workers == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < chunks; c += workers) run_chunk(c);
      });
    for (auto& th : pool) th.join();
  }
  return ds;
}

// AUC of the teacher's own probabilities: the ceiling for any model.
inline double teacher_auc(const Dataset& ds) {
  if (!ds.has_teacher()) fail(ErrorCode::metric, "teacher_auc: dataset has no teacher probabilities");
  return auc(ds.teacher_probs, ds.labels);
}

// ---- partitioning ----------------------------------------------------------

// Seeded disjoint partition; each side keeps the original row order.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) fail(ErrorCode::config, "split: train_frac must be in (0,1)");
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) {
    fail(ErrorCode::config, "split: train_frac " + std::to_string(train_frac) + " leaves an empty side for N=" +
                                std::to_string(n));
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(perm);
  std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train), ds.subset(test)};
}

// Contiguous shards of near-equal size.
inline std::vector<Dataset> shard(const Dataset& ds, std::size_t n_shards) {
  if (n_shards < 1 || n_shards > ds.size()) {
    fail(ErrorCode::config, "shard: n_shards must be in [1, " + std::to_string(ds.size()) + "]");
  }
  std::vector<Dataset> out;
  const std::size_t n = ds.size();
  for (std::size_t s = 0; s < n_shards; ++s) {
    const std::size_t begin = s * n / n_shards, end = (s + 1) * n / n_shards;
    std::vector<std::size_t> rows(end - begin);
    std::iota(rows.begin(), rows.end(), begin);
    out.push_back(ds.subset(rows));
  }
  return out;
}

// ---- delimited text --------------------------------------------------------

// Categorical hash: h = FNV-1a-64(bytes of the cell), then multiply-shift
// into range: id = ((h * 0x9E3779B97F4A7C15 mod 2^64) * cardinality) >> 64.
inline std::uint32_t hash_category(std::string_view value, std::uint32_t cardinality) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : value) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  const std::uint64_t mixed = h * 0x9E3779B97F4A7C15ull;
  return static_cast<std::uint32_t>((static_cast<unsigned __int128>(mixed) * cardinality) >> 64);
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

// Reads a comma-separated file with a header row. Columns are matched to the
// schema by name: dense columns parse as floats, categorical columns are
// hashed into [0, cardinality), `label` must be 0/1 and an optional
// `teacher_prob` column is kept. Quoted cells are not supported.
inline Dataset load_delimited(const std::string& path, const FeatureSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open '" + path + "'");
  enum class Role { dense, categorical, label, teacher };
  struct Column {
    Role role;
    std::size_t index;
  };
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::parse, path + ": line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_commas(line);
  std::vector<Column> columns;
  std::vector<std::uint8_t> dense_seen(schema.n_dense()), field_seen(schema.n_fields());
  std::uint8_t label_seen = 0, teacher_seen = 0;
  for (auto name : header) {
    bool matched = false;
    auto claim = [&](std::uint8_t& seen, Column c) {
      if (seen) fail(ErrorCode::schema, path + ": duplicate column '" + std::string(name) + "'");
      seen = 1;
      columns.push_back(c);
      matched = true;
    };
    if (name == "label") claim(label_seen, {Role::label, 0});
    else if (name == "teacher_prob") claim(teacher_seen, {Role::teacher, 0});
    for (std::size_t i = 0; !matched && i < schema.n_dense(); ++i)
      if (schema.dense_names[i] == name) claim(dense_seen[i], {Role::dense, i});
    for (std::size_t j = 0; !matched && j < schema.n_fields(); ++j)
      if (schema.fields[j].name == name) claim(field_seen[j], {Role::categorical, j});
    if (!matched) fail(ErrorCode::schema, path + ": unknown column '" + std::string(name) + "'");
  }
  if (!label_seen) fail(ErrorCode::schema, path + ": missing column 'label'");
  for (std::size_t i = 0; i < dense_seen.size(); ++i)
    if (!dense_seen[i]) fail(ErrorCode::schema, path + ": missing column '" + schema.dense_names[i] + "'");
  for (std::size_t j = 0; j < field_seen.size(); ++j)
    if (!field_seen[j]) fail(ErrorCode::schema, path + ": missing column '" + schema.fields[j].name + "'");

  std::vector<double> dense;
  std::vector<std::uint32_t> ids;
  Dataset ds;
  ds.schema = schema;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_commas(line);
    const std::string where = path + ": line " + std::to_string(line_no);
    if (cells.size() != columns.size()) {
      fail(ErrorCode::parse, where + ": expected " + std::to_string(columns.size()) + " cells, got " +
                                 std::to_string(cells.size()));
    }
    const std::size_t dense_base = dense.size(), id_base = ids.size();
    dense.resize(dense_base + schema.n_dense());
    ids.resize(id_base + schema.n_fields());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const Column& col = columns[c];
      const std::string_view cell = cells[c];
      switch (col.role) {
        case Role::dense:
          if (!detail::parse_double(cell, dense[dense_base + col.index]))
            fail(ErrorCode::parse, where + ": column '" + schema.dense_names[col.index] + "': not a number: '" +
                                       std::string(cell) + "'");
          break;
        case Role::categorical:
          ids[id_base + col.index] = hash_category(cell, schema.fields[col.index].cardinality);
          break;
        case Role::label:
          if (cell != "0" && cell != "1")
            fail(ErrorCode::parse, where + ": label must be 0 or 1, got '" + std::string(cell) + "'");
          ds.labels.push_back(cell == "1" ? 1 : 0);
          break;
        case Role::teacher: {
          double p = 0.0;
          if (!detail::parse_double(cell, p) || p <= 0.0 || p >= 1.0)
            fail(ErrorCode::parse, where + ": teacher_prob must be in (0,1), got '" + std::string(cell) + "'");
          ds.teacher_probs.push_back(p);
          break;
        }
      }
    }
  }
  const std::size_t n = ds.labels.size();
  ds.dense = Matrix(n, schema.n_dense(), std::move(dense));
  ds.ids.rows = n;
  ds.ids.cols = schema.n_fields();
  ds.ids.ids = std::move(ids);
  ds.validate();
  return ds;
}

// Writes the format read by load_delimited. Categorical ids are written as
// integers (they are re-hashed on load).
inline void write_delimited(std::ostream& out, const Dataset& ds) {
  std::string line;
  auto sep = [&] {
    if (!line.empty()) line += ',';
  };
  for (const auto& n : ds.schema.dense_names) sep(), line += n;
  for (const auto& f : ds.schema.fields) sep(), line += f.name;
  sep(), line += "label";
  if (ds.has_teacher()) line += ",teacher_prob";
  out << line << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    line.clear();
    for (double v : ds.dense.row(i)) sep(), line += detail::format_double(v);
    for (std::uint32_t id : ds.ids.row(i)) sep(), line += std::to_string(id);
    sep(), line += ds.labels[i] ? '1' : '0';
    if (ds.has_teacher()) line += ',' + detail::format_double(ds.teacher_probs[i]);
    out << line << '\n';
  }
}

inline void write_delimited(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write '" + path + "'");
  write_delimited(out, ds);
  if (!out) fail(ErrorCode::io, "write failed for '" + path + "'");
}

}  // namespace mldcn
