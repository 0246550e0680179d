// csiwm: simulate CSI trajectories, train the world model, evaluate charts.

#include "csiwm/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace csiwm::cli;

int main(int argc, char** argv) {
  CLI::App app{"Latent world model for channel charting"};
  app.require_subcommand(1);

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic CSI trajectory dataset");
  simulate->add_option("--config", sim.config, "run config (JSON)");
  simulate->add_option("--out", sim.out, "output dataset file")->required();
  simulate->add_option("--trajectories", sim.trajectories, "number of trajectories");
  simulate->add_option("--steps", sim.steps, "steps per trajectory");
  simulate->add_option("--seed", sim.seed, "motion seed");

  TrainOptions tr;
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  train->add_option("--config", tr.config, "run config (JSON)");
  train->add_option("--data", tr.data, "training dataset")->required();
  train->add_option("--out-dir", tr.out_dir, "directory for checkpoints and the log")->required();
  train->add_option("--predictor", tr.predictor, "homomorphic, mlp, film or gru");
  train->add_option("--ablate", tr.ablate, "comma-separated loss components to disable: tf, roll, var, cov, idm")
      ->delimiter(',');
  train->add_option("--resume", tr.resume, "checkpoint to continue from");
  train->add_option("--epochs", tr.epochs, "override the configured epoch count");
  train->add_option("--seed", tr.seed, "override the training seed");
  train->add_flag("--verbose", tr.verbose, "print every step");

  EvalOptions ev;
  auto* eval = app.add_subcommand("eval", "chart metrics of the trained encoder on a dataset");
  eval->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
  eval->add_option("--data", ev.data, "dataset")->required();
  eval->add_option("--out", ev.out, "metrics CSV")->required();
  eval->add_option("--k", ev.k, "neighborhood size (0: 5% of each trajectory)");
  eval->add_option("--bins", ev.bins, "histogram bins for the Rajski distance");
  eval->add_option("--encoder", ev.encoder, "online or target (EMA) encoder")->check(CLI::IsMember({"online", "target"}));

  RolloutOptions ro;
  auto* roll = app.add_subcommand("rollout", "open-loop latent rollout from one snapshot");
  roll->add_option("--ckpt", ro.ckpt, "checkpoint")->required();
  roll->add_option("--data", ro.data, "dataset")->required();
  roll->add_option("--traj", ro.trajectory, "trajectory index");
  roll->add_option("--start", ro.start, "first snapshot");
  roll->add_option("--horizon", ro.horizon, "number of predicted steps")->required();
  roll->add_option("--out", ro.out, "rollout CSV")->required();

  GradcheckOptions gc;
  auto* grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients of the loss");
  grad->add_option("--config", gc.config, "run config of a tiny model");
  grad->add_option("--tolerance", gc.tolerance, "relative tolerance");
  grad->add_flag("--corrupt-gradient", gc.corrupt_gradient)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  if (*simulate) return cmd_simulate(sim, std::cout, std::cerr);
  if (*train) return cmd_train(tr, std::cout, std::cerr);
  if (*eval) return cmd_eval(ev, std::cout, std::cerr);
  if (*roll) return cmd_rollout(ro, std::cout, std::cerr);
  return cmd_gradcheck(gc, std::cout, std::cerr);
}
