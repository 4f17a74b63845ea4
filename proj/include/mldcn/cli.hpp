#pragma once

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "mldcn/analysis.hpp"
#include "mldcn/block_gradcheck.hpp"
#include "mldcn/checkpoint.hpp"
#include "mldcn/data.hpp"
#include "mldcn/sweep.hpp"
#include "mldcn/train.hpp"

// Command implementations behind the `mldcn` executable. Each command writes
// its JSON report to `out` and throws mldcn::Error on failure.
namespace mldcn::cli {

inline constexpr double kGradcheckTolerance = 1e-4;

inline json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::parse, path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write '" + path + "'");
  out << text;
  if (!out) fail(ErrorCode::io, "write failed for '" + path + "'");
}

// Prints the report and mirrors it to `out_path` when one is given.
inline void emit(std::ostream& out, const json& report, const std::optional<std::string>& out_path) {
  const std::string text = report.dump(2) + "\n";
  out << text;
  if (out_path) write_text_file(*out_path, text);
}

struct DatagenArgs {
  std::string config;
  std::size_t n = 1000;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
};

inline void cmd_datagen(const DatagenArgs& a, std::ostream& out) {
  SyntheticTaskSpec spec = task_spec_from_json(read_json_file(a.config));
  if (a.seed) spec.seed = *a.seed;
  const Dataset ds = synth_generate(spec, a.n, a.workers);
  write_delimited(a.out, ds);
  out << json{{"rows", ds.size()}, {"path", a.out}, {"teacher_auc", teacher_auc(ds)}}.dump(2) << "\n";
}

struct TrainArgs {
  std::string config;
  std::optional<std::string> train_config;
  std::string data;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  std::optional<std::uint64_t> seed;
  bool timing = false;
};

// Loads the data file with the model's schema, splits it with the training
// seed, trains and reports.
inline void cmd_train(const TrainArgs& a, std::ostream& out) {
  ModelConfig model = model_config_from_json(read_json_file(a.config));
  TrainConfig train;
  if (a.train_config) train = train_config_from_json(read_json_file(*a.train_config));
  if (a.seed) {
    model.seed = *a.seed;
    train.seed = *a.seed;
  }
  const Dataset ds = load_delimited(a.data, model.schema);
  const auto [train_set, test_set] = split(ds, train.train_frac, mix_seed(train.seed, 0x5B1D));
  TrainRun run = train_run(model, train, train_set, test_set, {a.timing});
  if (a.checkpoint) checkpoint_save(run.model, *a.checkpoint, train);
  json report = to_json(run.summary);
  report["config_id"] = config_id(model);
  emit(out, report, a.out);
}

struct FlopsArgs {
  std::string config;
  std::optional<std::string> out;
};

inline void cmd_flops(const FlopsArgs& a, std::ostream& out) {
  const ModelConfig model = model_config_from_json(read_json_file(a.config));
  const FlopsReport rep = flops_report(model);
  if (!rep.consistent()) fail(ErrorCode::contract, "flops: report totals disagree with their breakdown");
  emit(out, to_json(rep), a.out);
}

struct DegreeArgs {
  std::string kind;
  std::size_t l = 1;
  std::string mask_components = "full";
};

inline void cmd_degree(const DegreeArgs& a, std::ostream& out) {
  const BlockKind kind = parse_block_kind(a.kind, "kind");
  const DegreeBound d = degree_bound(kind, a.l, parse_mask_components(a.mask_components, "mask_components"));
  json report = to_json(d);
  report["kind"] = a.kind;
  report["l"] = a.l;
  out << report.dump(2) << "\n";
}

struct SweepArgs {
  std::string config;
  std::string out;
  std::size_t workers = 1;
  std::optional<std::uint64_t> seed;  // overrides the task seed
  bool timing = false;
};

// Path of the aggregate JSON written next to the CSV.
inline std::string aggregate_path(const std::string& csv_path) {
  const std::string ext = ".csv";
  if (csv_path.size() > ext.size() && csv_path.compare(csv_path.size() - ext.size(), ext.size(), ext) == 0)
    return csv_path.substr(0, csv_path.size() - ext.size()) + ".json";
  return csv_path + ".json";
}

inline void cmd_sweep(const SweepArgs& a, std::ostream& out) {
  SweepSpec spec = sweep_spec_from_json(read_json_file(a.config));
  if (a.seed) spec.task.seed = *a.seed;
  const SweepResult result = run_sweep(spec, {a.workers, a.timing});
  std::ostringstream csv;
  write_sweep_csv(csv, result.rows);
  write_text_file(a.out, csv.str());
  write_text_file(aggregate_path(a.out), result.aggregate.dump(2) + "\n");
  std::size_t failed = 0;
  for (const auto& r : result.rows) failed += r.status != "ok";
  out << json{{"rows", result.rows.size()}, {"failed", failed}, {"csv", a.out}, {"aggregate", aggregate_path(a.out)}}
             .dump(2)
      << "\n";
}

struct GradcheckArgs {
  std::string kind = "mldcn";
  std::size_t d = 16;
  std::size_t l = 1;
  std::size_t r = 4;
  double t = 0.5;
  std::size_t K = 2;
  std::string mask_components = "full";
  std::size_t experts = 0;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
};

// Throws a gradcheck error after printing the report when the worst relative
// error reaches the tolerance.
inline void cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  BlockCheckSpec spec;
  spec.block = {parse_block_kind(a.kind, "kind"), a.d, a.l, a.r, a.t, a.K,
                parse_mask_components(a.mask_components, "mask_components")};
  spec.experts = a.experts;
  spec.batch = a.batch;
  spec.seed = a.seed;
  const GradcheckResult res = block_gradcheck(spec);
  const bool pass = res.max_relative_error < kGradcheckTolerance;
  out << json{{"kind", a.kind},
              {"max_relative_error", res.max_relative_error},
              {"checked", res.checked},
              {"excluded", res.excluded},
              {"worst_param", res.worst_param},
              {"worst_index", res.worst_index},
              {"worst_analytic", res.worst_analytic},
              {"worst_numeric", res.worst_numeric},
              {"tolerance", kGradcheckTolerance},
              {"pass", pass}}
             .dump(2)
      << "\n";
  if (!pass) {
    std::ostringstream msg;
    msg << "max relative error " << res.max_relative_error << " >= " << kGradcheckTolerance << " at "
        << res.worst_param << "[" << res.worst_index << "]";
    fail(ErrorCode::gradcheck, msg.str());
  }
}

// Runs `fn`, translating failures into one "<CODE>: message" line on `err`.
template <typename Fn>
int guarded(Fn&& fn, std::ostream& err) {
  auto one_line = [](std::string s) {
    for (char& c : s)
      if (c == '\n' || c == '\r') c = ' ';
    return s;
  };
  try {
    fn();
    return 0;
  } catch (const Error& e) {
    err << error_code_name(e.code()) << ": " << one_line(e.what()) << "\n";
  } catch (const std::exception& e) {
    err << "E_INTERNAL: " << one_line(e.what()) << "\n";
  }
  return 1;
}

}  // namespace mldcn::cli
