#pragma once

// Command runners behind the ptwd executable. Each runner takes a fully
// resolved RunConfig and returns the JSON report; writing files and mapping
// errors to exit codes is left to the caller.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptwd/error.hpp"
#include "ptwd/metrics.hpp"
#include "ptwd/pid_sgd.hpp"
#include "ptwd/synthgen.hpp"
#include "ptwd/tensor_store.hpp"
#include "ptwd/twd.hpp"

namespace ptwd::cli {

using json = nlohmann::json;

struct RunConfig {
  std::string command;
  std::string input;
  std::string output;  // prefix for split, COO path for synth
  std::string checkpoint;
  std::string truth;  // ground-truth checkpoint written by synth
  std::string report;

  std::optional<Dims> dims;
  bool keep_last = false;
  bool normalize = true;
  bool raw_domain_metrics = false;

  std::array<unsigned, 3> split_ratios{1, 2, 7};
  Ranks ranks = Ranks::from_dimension(5);
  HyperParams hp;
  std::size_t reps = 10;

  std::vector<double> grid_etas{0.1, 0.03, 0.01};
  std::vector<double> grid_lambdas{0.0, 0.001, 0.01};

  double density = 0.3;
  double noise = 0.0;
  double value_scale = 1.0;
};

inline std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// The report path is left out so a report rerun from its own embedded
/// config reproduces byte for byte wherever it is written.
inline json to_json(const RunConfig& c) {
  json j;
  j["command"] = c.command;
  j["input"] = c.input;
  j["output"] = c.output;
  j["checkpoint"] = c.checkpoint;
  j["truth"] = c.truth;
  j["dims"] = c.dims ? json::array({c.dims->i, c.dims->j, c.dims->k}) : json(nullptr);
  j["keep_last"] = c.keep_last;
  j["normalize"] = c.normalize;
  j["raw_domain_metrics"] = c.raw_domain_metrics;
  j["split"] = c.split_ratios;
  j["ranks"] = {c.ranks.r[0], c.ranks.r[1], c.ranks.r[2], c.ranks.h[0], c.ranks.h[1], c.ranks.h[2]};
  j["eta"] = c.hp.eta;
  j["lambda"] = c.hp.lambda;
  j["cp"] = c.hp.cp;
  j["ci"] = c.hp.ci;
  j["cd"] = c.hp.cd;
  j["epochs"] = c.hp.max_epochs;
  j["patience"] = c.hp.patience;
  j["seed"] = c.hp.seed;
  j["init_scale"] = c.hp.init_scale;
  j["early_stopping"] = c.hp.early_stopping;
  j["reps"] = c.reps;
  j["grid_etas"] = c.grid_etas;
  j["grid_lambdas"] = c.grid_lambdas;
  j["density"] = c.density;
  j["noise"] = c.noise;
  j["value_scale"] = c.value_scale;
  return j;
}

/// Inverse of to_json. Accepts either a bare config object or a report that
/// embeds one under "config". Missing keys keep their defaults.
inline RunConfig config_from_json(const json& in) {
  const json& j = in.contains("config") ? in.at("config") : in;
  RunConfig c;
  auto get = [&j](const char* key, auto& dst) {
    if (j.contains(key) && !j.at(key).is_null()) j.at(key).get_to(dst);
  };
  get("command", c.command);
  get("input", c.input);
  get("output", c.output);
  get("checkpoint", c.checkpoint);
  get("truth", c.truth);
  if (j.contains("dims") && !j.at("dims").is_null()) {
    auto d = j.at("dims").get<std::array<std::size_t, 3>>();
    c.dims = Dims{d[0], d[1], d[2]};
  }
  get("keep_last", c.keep_last);
  get("normalize", c.normalize);
  get("raw_domain_metrics", c.raw_domain_metrics);
  get("split", c.split_ratios);
  if (j.contains("ranks")) {
    auto r = j.at("ranks").get<std::array<std::size_t, 6>>();
    c.ranks = Ranks{{r[0], r[1], r[2]}, {r[3], r[4], r[5]}};
  }
  get("eta", c.hp.eta);
  get("lambda", c.hp.lambda);
  get("cp", c.hp.cp);
  get("ci", c.hp.ci);
  get("cd", c.hp.cd);
  get("epochs", c.hp.max_epochs);
  get("patience", c.hp.patience);
  get("seed", c.hp.seed);
  get("init_scale", c.hp.init_scale);
  get("early_stopping", c.hp.early_stopping);
  get("reps", c.reps);
  get("grid_etas", c.grid_etas);
  get("grid_lambdas", c.grid_lambdas);
  get("density", c.density);
  get("noise", c.noise);
  get("value_scale", c.value_scale);
  return c;
}

inline json to_json(const TrainReport& r) {
  return {{"loss_history", r.loss_history},
          {"valid_rmse_history", r.valid_rmse_history},
          {"epochs_run", r.epochs_run},
          {"converged_at", r.converged_at},
          {"init_fingerprint", hex64(r.init_fingerprint)}};
}

inline json to_json(const EvalReport& e) { return {{"rmse", e.rmse}, {"mae", e.mae}, {"count", e.count}}; }

inline IngestOptions ingest_options(const RunConfig& c) { return {c.dims, c.keep_last}; }

inline SparseTensor load_input(const RunConfig& c) {
  if (c.input.empty()) throw ParameterError("--input is required");
  SparseTensor t = ingest(c.input, ingest_options(c));
  return c.normalize ? normalize(t) : t;
}

inline void check_reps(const RunConfig& c) {
  if (c.reps < 1) throw ParameterError("reps must be >= 1");
}

inline json run_ingest_check(const RunConfig& c) {
  if (c.input.empty()) throw ParameterError("--input is required");
  SparseTensor t = ingest(c.input, ingest_options(c));
  json j{{"entries", t.size()}, {"dims", {t.dims().i, t.dims().j, t.dims().k}}};
  if (!t.empty()) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const Entry& e : t.entries()) {
      lo = std::min(lo, e.value);
      hi = std::max(hi, e.value);
    }
    j["min_value"] = lo;
    j["max_value"] = hi;
  }
  return j;
}

/// Writes <output>.train.coo, <output>.valid.coo, <output>.test.coo. Values
/// are written as read (no normalization).
inline json run_split(const RunConfig& c) {
  if (c.input.empty()) throw ParameterError("--input is required");
  if (c.output.empty()) throw ParameterError("--output prefix is required");
  SparseTensor t = ingest(c.input, ingest_options(c));
  SplitResult s = split(t, SplitSpec{c.split_ratios, c.hp.seed});
  save_coo(c.output + ".train.coo", s.train);
  save_coo(c.output + ".valid.coo", s.valid);
  save_coo(c.output + ".test.coo", s.test);
  return {{"config", to_json(c)}, {"train", s.train.size()}, {"valid", s.valid.size()}, {"test", s.test.size()}};
}

inline json run_synth(const RunConfig& c) {
  if (c.output.empty()) throw ParameterError("--output is required");
  if (!c.dims) throw ParameterError("--dims is required for synth");
  SynthSpec spec;
  spec.dims = *c.dims;
  spec.ranks = c.ranks;
  spec.density = c.density;
  spec.noise_sigma = c.noise;
  spec.seed = c.hp.seed;
  spec.value_scale = c.value_scale;
  SynthData data = generate(spec);
  save_coo(c.output, data.observed);
  if (!c.truth.empty()) save_checkpoint(c.truth, data.truth);
  return {{"config", to_json(c)},
          {"observed", data.observed.size()},
          {"truth_fingerprint", hex64(fingerprint(data.truth))}};
}

namespace detail {

struct PreparedRep {
  std::uint64_t seed;
  SplitResult parts;
};

inline PreparedRep prepare_rep(const SparseTensor& data, const RunConfig& c, std::size_t rep) {
  const std::uint64_t seed = c.hp.seed + rep;
  return {seed, split(data, SplitSpec{c.split_ratios, seed})};
}

inline json evaluate_block(const TwdFactors& f, const SparseTensor& test, const RunConfig& c) {
  json j = to_json(evaluate(f, test));
  if (c.raw_domain_metrics) j["raw"] = to_json(evaluate_raw(f, test));
  return j;
}

inline double mean_of(const json& reps, const char* block, const char* key) {
  double s = 0.0;
  for (const json& r : reps) s += r.at(block).at(key).get<double>();
  return s / static_cast<double>(reps.size());
}

}  // namespace detail

/// normalize -> split -> train -> evaluate, once per repetition with seed
/// base_seed + rep (used both for the split and for training).
inline json run_train(const RunConfig& c, std::vector<TwdFactors>* factors_out = nullptr) {
  check_reps(c);
  c.hp.validate();
  const SparseTensor data = load_input(c);
  json reps = json::array();
  for (std::size_t rep = 0; rep < c.reps; ++rep) {
    auto [seed, parts] = detail::prepare_rep(data, c, rep);
    HyperParams hp = c.hp;
    hp.seed = seed;
    TrainResult res = train(parts.train, parts.valid, c.ranks, hp);
    reps.push_back({{"rep", rep},
                    {"seed", seed},
                    {"sizes", {parts.train.size(), parts.valid.size(), parts.test.size()}},
                    {"train", to_json(res.report)},
                    {"test", detail::evaluate_block(res.factors, parts.test, c)}});
    if (factors_out) factors_out->push_back(std::move(res.factors));
  }
  json mean{{"rmse", detail::mean_of(reps, "test", "rmse")}, {"mae", detail::mean_of(reps, "test", "mae")}};
  return {{"config", to_json(c)}, {"repetitions", reps}, {"mean", mean}};
}

inline json run_evaluate(const RunConfig& c) {
  if (c.checkpoint.empty()) throw ParameterError("--checkpoint is required");
  TwdFactors f = load_checkpoint(c.checkpoint);
  RunConfig cc = c;
  if (!cc.dims) cc.dims = f.dims();
  const SparseTensor test = load_input(cc);
  json j{{"config", to_json(c)}, {"test", to_json(evaluate(f, test))}};
  if (c.raw_domain_metrics) j["raw"] = to_json(evaluate_raw(f, test));
  return j;
}

/// Trains each repetition twice from identical data and seed: once with the
/// configured PID gains ("pid" arm) and once with (1, 0, 0) ("plain" arm).
inline json run_ablate(const RunConfig& c) {
  check_reps(c);
  c.hp.validate();
  const SparseTensor data = load_input(c);
  json reps = json::array();
  for (std::size_t rep = 0; rep < c.reps; ++rep) {
    auto [seed, parts] = detail::prepare_rep(data, c, rep);
    json arms;
    for (const char* arm : {"pid", "plain"}) {
      HyperParams hp = c.hp;
      hp.seed = seed;
      if (std::string(arm) == "plain") {
        hp.cp = 1.0;
        hp.ci = 0.0;
        hp.cd = 0.0;
      }
      TrainResult res = train(parts.train, parts.valid, c.ranks, hp);
      arms[arm] = {{"cp", hp.cp},
                   {"ci", hp.ci},
                   {"cd", hp.cd},
                   {"converged_at", res.report.converged_at},
                   {"epochs_run", res.report.epochs_run},
                   {"init_fingerprint", hex64(res.report.init_fingerprint)},
                   {"final_fingerprint", hex64(fingerprint(res.factors))},
                   {"valid_rmse_history", res.report.valid_rmse_history},
                   {"test", detail::evaluate_block(res.factors, parts.test, c)}};
    }
    reps.push_back({{"rep", rep}, {"seed", seed}, {"pid", arms["pid"]}, {"plain", arms["plain"]}});
  }
  json summary;
  for (const char* arm : {"pid", "plain"}) {
    double conv = 0.0, rmse = 0.0;
    for (const json& r : reps) {
      conv += r.at(arm).at("converged_at").get<double>();
      rmse += r.at(arm).at("test").at("rmse").get<double>();
    }
    const auto n = static_cast<double>(reps.size());
    summary[arm] = {{"mean_converged_at", conv / n}, {"mean_rmse", rmse / n}};
  }
  return {{"config", to_json(c)}, {"repetitions", reps}, {"summary", summary}};
}

/// Trains every (eta, lambda) cell on the first repetition's split and picks
/// the lowest best-epoch validation RMSE; ties go to smaller lambda, then
/// smaller eta. A diverging cell is recorded, not fatal.
inline json run_grid(const RunConfig& c) {
  if (c.grid_etas.empty() || c.grid_lambdas.empty()) throw ParameterError("grid must not be empty");
  const SparseTensor data = load_input(c);
  auto [seed, parts] = detail::prepare_rep(data, c, 0);
  if (parts.valid.empty()) throw ParameterError("grid search needs a non-empty validation split");

  json cells = json::array();
  std::optional<std::size_t> winner;
  double win_rmse = 0.0, win_eta = 0.0, win_lambda = 0.0;
  for (double eta : c.grid_etas)
    for (double lambda : c.grid_lambdas) {
      HyperParams hp = c.hp;
      hp.seed = seed;
      hp.eta = eta;
      hp.lambda = lambda;
      json cell{{"eta", eta}, {"lambda", lambda}};
      try {
        TrainResult res = train(parts.train, parts.valid, c.ranks, hp);
        const double v = res.report.valid_rmse_history.at(res.report.converged_at - 1);
        cell["diverged"] = false;
        cell["valid_rmse"] = v;
        cell["converged_at"] = res.report.converged_at;
        cell["epochs_run"] = res.report.epochs_run;
        const bool better = !winner || v < win_rmse ||
                            (v == win_rmse && (lambda < win_lambda || (lambda == win_lambda && eta < win_eta)));
        if (better) {
          winner = cells.size();
          win_rmse = v;
          win_eta = eta;
          win_lambda = lambda;
        }
      } catch (const DivergenceError& e) {
        cell["diverged"] = true;
        cell["error"] = e.what();
      }
      cells.push_back(std::move(cell));
    }
  json out{{"config", to_json(c)}, {"seed", seed}, {"cells", cells}};
  out["winner"] = winner ? cells[*winner] : json(nullptr);
  return out;
}

inline json run(const RunConfig& c) {
  if (c.command == "ingest-check") return run_ingest_check(c);
  if (c.command == "split") return run_split(c);
  if (c.command == "synth") return run_synth(c);
  if (c.command == "train") return run_train(c);
  if (c.command == "evaluate") return run_evaluate(c);
  if (c.command == "ablate") return run_ablate(c);
  if (c.command == "grid") return run_grid(c);
  throw ParameterError("unknown command '" + c.command + "'");
}

}  // namespace ptwd::cli
