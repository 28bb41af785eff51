// ptwd: command-line driver for PID-controlled tensor wheel decomposition.
//
//   ptwd ingest-check --input data.coo
//   ptwd synth --dims 10,10,8 --ranks 2,2,2,2,2,2 --output syn.coo --truth syn.twd
//   ptwd split --input data.coo --split 1:2:7 --seed 3 --output parts
//   ptwd train --input data.coo --dim 5 --reps 10 --report train.json
//   ptwd evaluate --checkpoint model.twd --input test.coo
//   ptwd ablate --input data.coo --cd 0.001 --report ablate.json
//   ptwd grid --input data.coo --etas 0.1,0.03,0.01 --lambdas 0,0.001,0.01

#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ptwd/cli.hpp"

namespace {

ptwd::Dims parse_dims(const std::string& text) {
  std::vector<std::size_t> v;
  std::stringstream ss(text);
  std::string field;
  while (std::getline(ss, field, ',')) {
    std::size_t pos = 0;
    std::size_t x = 0;
    try {
      x = std::stoul(field, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != field.size() || x == 0) throw ptwd::ParameterError("bad --dims value '" + text + "'");
    v.push_back(x);
  }
  if (v.size() != 3) throw ptwd::ParameterError("--dims needs I,J,K or 'infer'");
  return {v[0], v[1], v[2]};
}

std::vector<double> parse_list(const std::string& text, const char* flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string field;
  while (std::getline(ss, field, ',')) {
    std::size_t pos = 0;
    double x = 0.0;
    try {
      x = std::stod(field, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != field.size()) throw ptwd::ParameterError(std::string("bad ") + flag + " value '" + field + "'");
    out.push_back(x);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PID-controlled tensor wheel decomposition for sparse dynamic-network tensors"};
  app.require_subcommand(1);
  app.fallthrough();

  const std::vector<std::pair<const char*, const char*>> commands = {
      {"ingest-check", "Parse and validate a COO file, print a summary"},
      {"split", "Write seeded train/valid/test COO files"},
      {"synth", "Generate a planted-model tensor"},
      {"train", "Normalize, split, train and evaluate over repetitions"},
      {"evaluate", "RMSE/MAE of a checkpoint on a COO file"},
      {"ablate", "Train with the configured PID gains and with (1,0,0) side by side"},
      {"grid", "Grid search over eta and lambda on the validation split"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  std::string config_path, input, output, checkpoint, truth, report, dims, ranks, split, etas, lambdas;
  std::size_t dim = 5, epochs = 0, patience = 0, reps = 0;
  double eta = 0, lambda = 0, cp = 0, ci = 0, cd = 0, init_scale = 0, density = 0, noise = 0, value_scale = 0;
  std::uint64_t seed = 0;
  bool raw_metrics = false, keep_last = false, no_normalize = false, no_early_stop = false;

  auto* o_config = app.add_option("--config", config_path, "JSON config or earlier report to rerun");
  auto* o_input = app.add_option("--input", input, "Input COO file");
  auto* o_output = app.add_option("--output", output, "Output path (synth) or prefix (split)");
  auto* o_ckpt = app.add_option("--checkpoint", checkpoint, "Checkpoint to read (evaluate) or write (train)");
  auto* o_truth = app.add_option("--truth", truth, "Ground-truth checkpoint written by synth");
  auto* o_report = app.add_option("--report", report, "Write the JSON report here instead of stdout");
  auto* o_dims = app.add_option("--dims", dims, "Tensor dims I,J,K or 'infer'");
  auto* o_ranks = app.add_option("--ranks", ranks, "R1,R2,R3,H1,H2,H3");
  auto* o_dim = app.add_option("--dim", dim, "Single latent dimension d -> ranks d,d,d,2,2,2");
  auto* o_eta = app.add_option("--eta", eta, "Learning rate");
  auto* o_lambda = app.add_option("--lambda", lambda, "Regularization coefficient");
  auto* o_cp = app.add_option("--cp", cp, "Proportional gain");
  auto* o_ci = app.add_option("--ci", ci, "Integral gain");
  auto* o_cd = app.add_option("--cd", cd, "Derivative gain");
  auto* o_epochs = app.add_option("--epochs", epochs, "Maximum epochs");
  auto* o_patience = app.add_option("--patience", patience, "Early-stopping patience in epochs");
  auto* o_seed = app.add_option("--seed", seed, "Base seed");
  auto* o_init = app.add_option("--init-scale", init_scale, "Factors start uniform in [0, scale)");
  auto* o_split = app.add_option("--split", split, "train:valid:test ratios, e.g. 1:2:7");
  auto* o_reps = app.add_option("--reps", reps, "Repetitions (seeds base..base+reps-1)");
  auto* o_etas = app.add_option("--etas", etas, "Grid learning rates, comma separated");
  auto* o_lambdas = app.add_option("--lambdas", lambdas, "Grid lambdas, comma separated");
  auto* o_density = app.add_option("--density", density, "Observed fraction for synth");
  auto* o_noise = app.add_option("--noise", noise, "Gaussian noise sigma for synth");
  auto* o_vscale = app.add_option("--value-scale", value_scale, "Planted factor scale for synth");
  auto* o_raw = app.add_flag("--raw-domain-metrics", raw_metrics, "Also report metrics after exp(v)-1");
  auto* o_keep = app.add_flag("--keep-last", keep_last, "On duplicate keys keep the last value");
  auto* o_nonorm = app.add_flag("--no-normalize", no_normalize, "Use values as read, skip ln(v+1)");
  auto* o_noes = app.add_flag("--no-early-stopping", no_early_stop, "Run all epochs; still return best-validation factors");

  CLI11_PARSE(app, argc, argv);

  try {
    ptwd::cli::RunConfig cfg;
    if (o_config->count()) {
      std::ifstream in(config_path);
      if (!in) throw ptwd::Error("cannot open config '" + config_path + "'");
      cfg = ptwd::cli::config_from_json(nlohmann::json::parse(in));
    }
    cfg.command = app.get_subcommands().front()->get_name();
    if (o_input->count()) cfg.input = input;
    if (o_output->count()) cfg.output = output;
    if (o_ckpt->count()) cfg.checkpoint = checkpoint;
    if (o_truth->count()) cfg.truth = truth;
    if (o_report->count()) cfg.report = report;
    if (o_dims->count()) {
      if (dims == "infer") {
        cfg.dims.reset();
      } else {
        cfg.dims = parse_dims(dims);
      }
    }
    if (o_ranks->count() && o_dim->count()) throw ptwd::ParameterError("give either --ranks or --dim, not both");
    if (o_ranks->count()) cfg.ranks = ptwd::parse_ranks(ranks);
    if (o_dim->count()) {
      if (dim == 0) throw ptwd::ParameterError("--dim must be >= 1");
      cfg.ranks = ptwd::Ranks::from_dimension(dim);
    }
    if (o_eta->count()) cfg.hp.eta = eta;
    if (o_lambda->count()) cfg.hp.lambda = lambda;
    if (o_cp->count()) cfg.hp.cp = cp;
    if (o_ci->count()) cfg.hp.ci = ci;
    if (o_cd->count()) cfg.hp.cd = cd;
    if (o_epochs->count()) cfg.hp.max_epochs = epochs;
    if (o_patience->count()) cfg.hp.patience = patience;
    if (o_seed->count()) cfg.hp.seed = seed;
    if (o_init->count()) cfg.hp.init_scale = init_scale;
    if (o_split->count()) cfg.split_ratios = ptwd::parse_ratios(split);
    if (o_reps->count()) cfg.reps = reps;
    if (o_etas->count()) cfg.grid_etas = parse_list(etas, "--etas");
    if (o_lambdas->count()) cfg.grid_lambdas = parse_list(lambdas, "--lambdas");
    if (o_density->count()) cfg.density = density;
    if (o_noise->count()) cfg.noise = noise;
    if (o_vscale->count()) cfg.value_scale = value_scale;
    if (o_raw->count()) cfg.raw_domain_metrics = true;
    if (o_keep->count()) cfg.keep_last = true;
    if (o_nonorm->count()) cfg.normalize = false;
    if (o_noes->count()) cfg.hp.early_stopping = false;

    nlohmann::json result;
    if (cfg.command == "train") {
      std::vector<ptwd::TwdFactors> models;
      result = ptwd::cli::run_train(cfg, cfg.checkpoint.empty() ? nullptr : &models);
      for (std::size_t r = 0; r < models.size(); ++r) {
        const std::string path = models.size() == 1 ? cfg.checkpoint : cfg.checkpoint + "." + std::to_string(r);
        ptwd::save_checkpoint(path, models[r]);
      }
    } else {
      result = ptwd::cli::run(cfg);
    }

    const std::string text = result.dump(2) + "\n";
    if (cfg.report.empty()) {
      std::cout << text;
    } else {
      std::ofstream out(cfg.report);
      if (!out) throw ptwd::Error("cannot open report '" + cfg.report + "'");
      out << text;
      if (!out) throw ptwd::Error("failed writing report '" + cfg.report + "'");
    }
  } catch (const std::exception& e) {
    std::cerr << "ptwd " << app.get_subcommands().front()->get_name() << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
