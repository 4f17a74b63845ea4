#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mldcn/analysis.hpp"
#include "mldcn/data.hpp"
#include "mldcn/train.hpp"

namespace mldcn {

// One point of the interaction-architecture grid.
struct SweepCell {
  BlockKind kind = BlockKind::mldcn;
  std::size_t l = 1;
  std::size_t r = 1;
  double t = 0.5;
  std::size_t K = 1;
  MaskComponents mask_components = MaskComponents::full;
  std::size_t experts = 0;

  friend bool operator==(const SweepCell&, const SweepCell&) = default;
};

struct SweepSpec {
  SyntheticTaskSpec task;
  std::size_t n = 10000;
  std::vector<std::size_t> head = {1};
  TrainConfig train;
  std::vector<SweepCell> grid;  // expanded, in document order
  std::vector<std::uint64_t> seeds = {0};
  std::optional<SweepCell> reference;
};

inline ModelConfig model_config_for(const SweepSpec& spec, const SweepCell& c, std::uint64_t seed) {
  ModelConfig m;
  m.schema = spec.task.schema;
  m.block = {c.kind, spec.task.schema.width(), c.l, c.r, c.t, c.K, c.mask_components};
  m.mmoe_experts = c.experts;
  m.head = spec.head;
  m.seed = seed;
  m.validate();
  return m;
}

// 16 hex digits of FNV-1a-64 over the canonical JSON of the seed-free
// model configuration.
inline std::string config_id(const ModelConfig& cfg) {
  ModelConfig c = cfg;
  c.seed = 0;
  const std::string text = to_json(c).dump();
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Smallest-budget low-rank DCN over the grid's layer counts and ranks.
inline SweepCell default_reference(const std::vector<SweepCell>& grid) {
  SweepCell ref;
  ref.kind = BlockKind::lowrank;
  std::optional<std::size_t> l, r;
  for (const auto& c : grid) {
    if (c.kind != BlockKind::identity) l = l ? std::min(*l, c.l) : c.l;
    if (uses_rank(c.kind)) r = r ? std::min(*r, c.r) : c.r;
  }
  ref.l = l.value_or(1);
  ref.r = r.value_or(1);
  return ref;
}

namespace detail {

// Accepts either a scalar or a list of scalars.
template <typename T, typename Parse>
std::vector<T> scalar_or_list(JsonReader& r, const std::string& key, std::vector<T> fallback, Parse parse) {
  r.mark(key);
  if (!r.has(key)) return fallback;
  const json& v = r.raw(key);
  std::vector<T> out;
  if (v.is_array()) {
    if (v.empty()) fail(ErrorCode::config, r.field(key) + ": list must not be empty");
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(parse(v[i], r.field(key) + "[" + std::to_string(i) + "]"));
  } else {
    out.push_back(parse(v, r.field(key)));
  }
  return out;
}

inline std::size_t parse_size(const json& v, const std::string& path) { return json_uint(v, path); }
inline double parse_real(const json& v, const std::string& path) { return json_double(v, path); }
inline MaskComponents parse_mask(const json& v, const std::string& path) {
  if (!v.is_string()) fail(ErrorCode::config, path + ": expected a string");
  return parse_mask_components(v.get<std::string>(), path);
}

inline std::vector<SweepCell> expand_grid_entry(const json& j, const std::string& path) {
  JsonReader r(j, path);
  const BlockKind kind = parse_block_kind(r.get_string("kind"), r.field("kind"));
  const std::string preset = r.get_string("preset", "");
  std::vector<MaskComponents> masks{MaskComponents::full};
  if (preset == "mask_ablation") {
    if (kind != BlockKind::mldcn) fail(ErrorCode::config, r.field("preset") + ": mask_ablation requires kind mldcn");
    if (r.has("mask_components"))
      fail(ErrorCode::config, r.field("mask_components") + ": cannot be combined with preset mask_ablation");
    r.mark("mask_components");
    masks = {MaskComponents::none, MaskComponents::mlp1, MaskComponents::mlp1_relu, MaskComponents::full};
  } else if (!preset.empty()) {
    fail(ErrorCode::config, r.field("preset") + ": unknown preset '" + preset + "'");
  } else {
    masks = scalar_or_list<MaskComponents>(r, "mask_components", masks, parse_mask);
  }
  const auto ls = scalar_or_list<std::size_t>(r, "l", {1}, parse_size);
  const auto rs = scalar_or_list<std::size_t>(r, "r", {1}, parse_size);
  const auto ts = scalar_or_list<double>(r, "t", {0.5}, parse_real);
  const auto Ks = scalar_or_list<std::size_t>(r, "K", {1}, parse_size);
  const auto es = scalar_or_list<std::size_t>(r, "mmoe_experts", {0}, parse_size);
  r.finish();

  std::vector<SweepCell> out;
  for (std::size_t e : es)
    for (std::size_t l : ls)
      for (std::size_t rank : rs)
        for (double t : ts)
          for (std::size_t K : Ks)
            for (MaskComponents m : masks) out.push_back({kind, l, rank, t, K, m, e});
  return out;
}

inline SweepCell parse_reference(const json& j, const std::string& path) {
  JsonReader r(j, path);
  SweepCell c;
  c.kind = parse_block_kind(r.get_string("kind"), r.field("kind"));
  c.l = r.get_uint("l", c.l);
  c.r = r.get_uint("r", c.r);
  c.t = r.get_double("t", c.t);
  c.K = r.get_uint("K", c.K);
  c.mask_components = parse_mask_components(r.get_string("mask_components", "full"), r.field("mask_components"));
  c.experts = r.get_uint("mmoe_experts", 0);
  r.finish();
  return c;
}

inline json cell_to_json(const SweepCell& c) {
  return {{"kind", std::string(to_string(c.kind))},
          {"l", c.l},
          {"r", c.r},
          {"t", c.t},
          {"K", c.K},
          {"mask_components", std::string(to_string(c.mask_components))},
          {"mmoe_experts", c.experts}};
}

}  // namespace detail

inline SweepSpec sweep_spec_from_json(const json& j) {
  JsonReader r(j, "");
  SweepSpec s;
  s.task = task_spec_from_json(r.raw("task"), "task");
  s.n = r.get_uint("n", s.n);
  if (r.has("head")) {
    s.head.clear();
    const json& h = r.get_array("head");
    for (std::size_t i = 0; i < h.size(); ++i) s.head.push_back(json_uint(h[i], "head[" + std::to_string(i) + "]"));
  } else {
    r.mark("head");
  }
  if (r.has("train")) {
    s.train = train_config_from_json(r.raw("train"), "train");
  } else {
    r.mark("train");
  }
  const json& grid = r.get_array("grid");
  if (grid.empty()) fail(ErrorCode::config, "grid: must not be empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto cells = detail::expand_grid_entry(grid[i], "grid[" + std::to_string(i) + "]");
    s.grid.insert(s.grid.end(), cells.begin(), cells.end());
  }
  if (r.has("seeds")) {
    s.seeds.clear();
    const json& seeds = r.get_array("seeds");
    if (seeds.empty()) fail(ErrorCode::config, "seeds: must not be empty");
    for (std::size_t i = 0; i < seeds.size(); ++i)
      s.seeds.push_back(json_uint(seeds[i], "seeds[" + std::to_string(i) + "]"));
  } else {
    r.mark("seeds");
  }
  if (r.has("reference")) {
    s.reference = detail::parse_reference(r.raw("reference"), "reference");
  } else {
    r.mark("reference");
  }
  r.finish();

  std::map<std::string, std::size_t> ids;
  for (std::size_t i = 0; i < s.grid.size(); ++i) {
    const ModelConfig m = model_config_for(s, s.grid[i], 0);
    if (!ids.emplace(config_id(m), i).second)
      fail(ErrorCode::config, "grid: duplicate configuration " + detail::cell_to_json(s.grid[i]).dump());
  }
  for (std::size_t i = 0; i < s.seeds.size(); ++i)
    for (std::size_t k = 0; k < i; ++k)
      if (s.seeds[i] == s.seeds[k]) fail(ErrorCode::config, "seeds: duplicate seed " + std::to_string(s.seeds[i]));
  return s;
}

struct BenchmarkRow {
  std::string config_id;
  SweepCell cell;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
  std::uint64_t seed = 0;
  std::optional<double> test_auc;
  std::optional<double> auc_gain;
  double wall_s = 0.0;
  std::string status = "ok";
};

struct SweepResult {
  std::vector<BenchmarkRow> rows;  // sorted by (config_id, seed)
  std::string reference_id;
  json aggregate;
};

struct SweepOptions {
  std::size_t workers = 1;
  bool record_timing = false;
};

inline SweepResult run_sweep(const SweepSpec& spec, const SweepOptions& options = {}) {
  const Dataset full = synth_generate(spec.task, spec.n);
  const auto [train, test] = split(full, spec.train.train_frac, mix_seed(spec.task.seed, 0x5B1D));

  const SweepCell reference = spec.reference.value_or(default_reference(spec.grid));
  const std::string reference_id = config_id(model_config_for(spec, reference, 0));

  // The reference joins the cell list unless it already is a grid point.
  std::vector<SweepCell> configs = spec.grid;
  bool reference_in_grid = false;
  for (const auto& c : configs) reference_in_grid |= c == reference;
  if (!reference_in_grid) configs.push_back(reference);

  struct Task {
    std::size_t config;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < configs.size(); ++c)
    for (std::uint64_t seed : spec.seeds) tasks.push_back({c, seed});

  std::vector<std::string> ids;
  for (const auto& c : configs) ids.push_back(config_id(model_config_for(spec, c, 0)));

  std::vector<BenchmarkRow> rows(tasks.size());
  auto run_task = [&](std::size_t i) {
    const Task& task = tasks[i];
    BenchmarkRow& row = rows[i];
    row.cell = configs[task.config];
    row.seed = task.seed;
    row.config_id = ids[task.config];
    try {
      const ModelConfig m = model_config_for(spec, row.cell, task.seed);
      const FlopsReport rep = flops_report(m);
      row.flops = rep.model_total;
      row.params = rep.param_count;
      TrainConfig tc = spec.train;
      tc.seed = task.seed;
      const TrainRun run = train_run(m, tc, train, test, {options.record_timing});
      row.test_auc = run.summary.test_auc;
      row.wall_s = run.summary.wall_s;
    } catch (const Error& e) {
      row.status = std::string(error_code_name(e.code()));
    } catch (const std::exception&) {
      row.status = "E_INTERNAL";
    }
  };

  std::atomic<std::size_t> next{0};
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, tasks.size()));
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) run_task(i);
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::map<std::uint64_t, std::optional<double>> reference_auc;
  for (const auto& row : rows)
    if (row.config_id == reference_id) reference_auc[row.seed] = row.test_auc;
  SweepResult out;
  out.reference_id = reference_id;
  for (auto& row : rows) {
    if (!reference_in_grid && row.config_id == reference_id) continue;
    const auto& ref = reference_auc[row.seed];
    if (row.test_auc && ref) {
      row.auc_gain = *row.test_auc - *ref;
    } else if (row.test_auc) {
      row.status = "E_REFERENCE";
    }
    out.rows.push_back(row);
  }
  std::stable_sort(out.rows.begin(), out.rows.end(), [](const BenchmarkRow& a, const BenchmarkRow& b) {
    return a.config_id != b.config_id ? a.config_id < b.config_id : a.seed < b.seed;
  });

  // Per-config mean and sample standard deviation over successful seeds.
  auto mean_std = [](const std::vector<double>& v) -> std::pair<json, json> {
    if (v.empty()) return {nullptr, nullptr};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return {m, sd};
  };
  json configs_json = json::array();
  for (std::size_t i = 0; i < out.rows.size();) {
    std::size_t j = i;
    std::vector<double> aucs, gains;
    while (j < out.rows.size() && out.rows[j].config_id == out.rows[i].config_id) {
      if (out.rows[j].test_auc) aucs.push_back(*out.rows[j].test_auc);
      if (out.rows[j].auc_gain) gains.push_back(*out.rows[j].auc_gain);
      ++j;
    }
    const BenchmarkRow& r = out.rows[i];
    json c = detail::cell_to_json(r.cell);
    c["config_id"] = r.config_id;
    c["flops"] = r.flops;
    c["params"] = r.params;
    c["runs"] = j - i;
    c["ok"] = gains.size();
    std::tie(c["mean_test_auc"], c["std_test_auc"]) = mean_std(aucs);
    std::tie(c["mean_auc_gain"], c["std_auc_gain"]) = mean_std(gains);
    configs_json.push_back(std::move(c));
    i = j;
  }
  json ref = detail::cell_to_json(reference);
  ref["config_id"] = reference_id;
  out.aggregate = {{"reference", ref}, {"seeds", spec.seeds}, {"configs", configs_json}};
  return out;
}

inline constexpr const char* kSweepCsvHeader =
    "config_id,kind,l,r,t,K,experts,flops,params,seed,test_auc,auc_gain,wall_s,status";

inline void write_sweep_csv(std::ostream& out, const std::vector<BenchmarkRow>& rows) {
  auto num = [](const std::optional<double>& v) { return v ? detail::format_double(*v) : std::string(); };
  out << kSweepCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.config_id << ',' << to_string(r.cell.kind) << ',' << r.cell.l << ',' << r.cell.r << ','
        << detail::format_double(r.cell.t) << ',' << r.cell.K << ',' << r.cell.experts << ',' << r.flops << ','
        << r.params << ',' << r.seed << ',' << num(r.test_auc) << ',' << num(r.auc_gain) << ','
        << detail::format_double(r.wall_s) << ',' << r.status << '\n';
  }
}

}  // namespace mldcn
