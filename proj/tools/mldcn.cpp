#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mldcn/cli.hpp"

namespace cli = mldcn::cli;

int main(int argc, char** argv) {
  CLI::App app{"Cross-network interaction blocks: data generation, training, analysis and sweeps"};
  app.require_subcommand(1);

  cli::DatagenArgs datagen;
  auto* c_datagen = app.add_subcommand("datagen", "Generate a synthetic CTR dataset as CSV");
  c_datagen->add_option("--config", datagen.config, "Task spec JSON")->required();
  c_datagen->add_option("--n", datagen.n, "Number of rows")->check(CLI::PositiveNumber);
  c_datagen->add_option("--out", datagen.out, "Output CSV")->required();
  c_datagen->add_option("--seed", datagen.seed, "Override the task seed");
  c_datagen->add_option("--workers", datagen.workers, "Generator threads")->check(CLI::PositiveNumber);

  cli::TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train one model on a CSV dataset");
  c_train->add_option("--config", train.config, "Model config JSON")->required();
  c_train->add_option("--train-config", train.train_config, "Training config JSON");
  c_train->add_option("--data", train.data, "Dataset CSV")->required();
  c_train->add_option("--out", train.out, "Write the summary JSON here");
  c_train->add_option("--checkpoint", train.checkpoint, "Save the trained model here");
  c_train->add_option("--seed", train.seed, "Override model and training seeds");
  c_train->add_flag("--timing", train.timing, "Record wall-clock time in the summary");

  cli::FlopsArgs flops;
  auto* c_flops = app.add_subcommand("flops", "FLOPs and parameter report for a model config");
  c_flops->add_option("--config", flops.config, "Model config JSON")->required();
  c_flops->add_option("--out", flops.out, "Write the report here");

  cli::DegreeArgs degree;
  auto* c_degree = app.add_subcommand("degree", "Polynomial interaction order of a crossing stack");
  c_degree->add_option("--kind", degree.kind, "Block kind")->required();
  c_degree->add_option("--l", degree.l, "Layer count")->required();
  c_degree->add_option("--mask-components", degree.mask_components, "none|mlp1|mlp1_relu|full");

  cli::SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "Train a grid of configs and write an AUC-vs-FLOPs table");
  c_sweep->add_option("--config", sweep.config, "Sweep spec JSON")->required();
  c_sweep->add_option("--out", sweep.out, "Output CSV (aggregate JSON is written alongside)")->required();
  c_sweep->add_option("--workers", sweep.workers, "Concurrent training runs")->check(CLI::PositiveNumber);
  c_sweep->add_option("--seed", sweep.seed, "Override the task seed");
  c_sweep->add_flag("--timing", sweep.timing, "Record wall-clock seconds per cell");

  cli::GradcheckArgs grad;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference gradient check of one block");
  c_grad->add_option("--kind", grad.kind, "Block kind")->required();
  c_grad->add_option("--d", grad.d, "Input width");
  c_grad->add_option("--l", grad.l, "Layer count");
  c_grad->add_option("--r", grad.r, "Rank");
  c_grad->add_option("--t", grad.t, "Mask ratio");
  c_grad->add_option("--K", grad.K, "MoE experts");
  c_grad->add_option("--mask-components", grad.mask_components, "none|mlp1|mlp1_relu|full");
  c_grad->add_option("--experts", grad.experts, "Wrap in a single-gate MMoE with this many experts");
  c_grad->add_option("--batch", grad.batch, "Batch rows");
  c_grad->add_option("--seed", grad.seed, "Initialization seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "E_USAGE: " << e.what() << "\n";
    return 2;
  }

  return cli::guarded(
      [&] {
        if (*c_datagen) cli::cmd_datagen(datagen, std::cout);
        else if (*c_train) cli::cmd_train(train, std::cout);
        else if (*c_flops) cli::cmd_flops(flops, std::cout);
        else if (*c_degree) cli::cmd_degree(degree, std::cout);
        else if (*c_sweep) cli::cmd_sweep(sweep, std::cout);
        else if (*c_grad) cli::cmd_gradcheck(grad, std::cout);
      },
      std::cerr);
}
