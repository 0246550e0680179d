#include "csiwm/commands.hpp"

#include "csiwm/binary_io.hpp"
#include "csiwm/chartmetrics.hpp"
#include "csiwm/checkpoint.hpp"
#include "csiwm/grad_check.hpp"
#include "csiwm/run_config.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <sstream>

namespace csiwm::cli {
namespace {

namespace fs = std::filesystem;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

bool use_target_encoder(const std::string& name) {
  if (name == "online") return false;
  if (name == "target") return true;
  throw ConfigError("encoder must be online or target, got " + name);
}

/// Maps exceptions onto the exit-code scheme.
int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const io::IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIoError;
  } catch (const DatasetError& e) {
    err << "dataset error: " << e.what() << "\n";
    return e.kind() == DatasetError::Kind::kDimensionMismatch ? kConfigError : kIoError;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return e.kind() == CheckpointError::Kind::kMismatch ? kConfigError : kIoError;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::invalid_argument& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::out_of_range& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::domain_error& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  }
}

RunConfig config_or_default(const std::optional<fs::path>& path) {
  if (!path) return RunConfig{};
  return load_run_config(*path);
}

std::vector<ModelInput> encode_inputs(const TrajectoryRecord& traj, const PreprocConfig& preproc,
                                      const ModelConfig& model) {
  std::vector<ModelInput> xs;
  xs.reserve(traj.snapshots.size());
  for (const auto& s : traj.snapshots) {
    xs.push_back(preprocess(s.csi, preproc));
    if (xs.back().rows() != model.input_rows || xs.back().taps() != model.input_taps) {
      throw ConfigError("data yields inputs of " + std::to_string(xs.back().rows()) + " x " +
                        std::to_string(xs.back().taps()) + " but the checkpoint expects " +
                        std::to_string(model.input_rows) + " x " + std::to_string(model.input_taps));
    }
  }
  return xs;
}

Eigen::MatrixXd positions(const TrajectoryRecord& traj) {
  Eigen::MatrixXd p(Index(traj.snapshots.size()), 3);
  for (std::size_t i = 0; i < traj.snapshots.size(); ++i) p.row(Index(i)) = traj.snapshots[i].position.transpose();
  return p;
}

void apply_ablation(LossToggles& t, const std::vector<std::string>& names) {
  for (const auto& n : names) {
    if (n == "tf") t.tf = false;
    else if (n == "roll") t.roll = false;
    else if (n == "var") t.var = false;
    else if (n == "cov") t.cov = false;
    else if (n == "idm") t.idm = false;
    else throw ConfigError("unknown loss component '" + n + "' (expected tf, roll, var, cov or idm)");
  }
}

std::string checkpoint_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03d.ckpt", epoch);
  return buf;
}

}  // namespace

int cmd_simulate(const SimulateOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig cfg = config_or_default(opt.config);
    if (opt.seed) cfg.motion.seed = *opt.seed;
    const int count = opt.trajectories.value_or(cfg.data.train_trajectories);
    const int steps = opt.steps.value_or(cfg.data.steps);
    if (count < 1 || steps < 1) throw ConfigError("trajectories and steps must be positive");
    const auto data = generate_dataset(cfg.scene, cfg.motion, count, steps);
    write_dataset(data, opt.out);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& t = data[i];
      double length = 0;
      for (std::size_t s = 1; s < t.snapshots.size(); ++s) {
        length += (t.snapshots[s].position - t.snapshots[s - 1].position).norm();
      }
      const double duration = t.snapshots.back().timestamp - t.snapshots.front().timestamp;
      out << "trajectory " << i << ": T=" << t.steps() << " path " << num(length) << " m, mean speed "
          << num(length / duration) << " m/s\n";
    }
    out << "wrote " << data.size() << " trajectories to " << opt.out.string() << "\n";
    return kOk;
  });
}

int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    std::optional<Checkpoint> resumed;
    RunConfig cfg;
    if (opt.resume) {
      resumed = load_checkpoint(*opt.resume);
      cfg = resumed->config;
      if (opt.predictor && parse_predictor_kind(*opt.predictor) != cfg.model.predictor) {
        throw ConfigError("--predictor differs from the checkpoint being resumed");
      }
    } else {
      cfg = config_or_default(opt.config);
      if (opt.predictor) cfg.model.predictor = parse_predictor_kind(*opt.predictor);
      apply_ablation(cfg.train.toggles, opt.ablate);
      if (opt.seed) cfg.train.seed = *opt.seed;
    }
    if (opt.epochs) cfg.train.epochs = *opt.epochs;
    cfg.validate();

    const auto records = read_dataset(opt.data);
    const TrainingSet data = prepare_training_set(records, cfg.preproc);
    TrainerState state = resumed ? std::move(resumed->state) : init_trainer(cfg.model, cfg.train, data);
    cfg.model = state.model.config;
    fs::create_directories(opt.out_dir);

    const int per_epoch = steps_per_epoch(cfg.train, data);
    out << "training " << to_string(cfg.model.predictor) << " for " << cfg.train.epochs << " epochs of " << per_epoch
        << " steps, starting at step " << state.global_step << "\n";
    double epoch_loss = 0;
    int epoch_steps = 0;
    TrainCallbacks cb;
    cb.on_step = [&](const TrainerState&, const TrainLogRow& row) {
      epoch_loss += row.losses.total;
      ++epoch_steps;
      if (opt.verbose) out << "step " << row.step << " total " << num(row.losses.total) << "\n";
    };
    cb.on_epoch = [&](const TrainerState& s, int epoch) {
      save_checkpoint(opt.out_dir / checkpoint_name(epoch), {cfg, s});
      out << "epoch " << epoch << "/" << cfg.train.epochs << " mean loss " << num(epoch_loss / std::max(1, epoch_steps))
          << "\n";
      epoch_loss = 0;
      epoch_steps = 0;
    };
    const auto log = train(state, cfg.train, data, cfg.preproc, cb);
    save_checkpoint(opt.out_dir / "final.ckpt", {cfg, state});

    std::ostringstream csv;
    csv << "step,epoch,lr,wd,tf,roll,var,cov,idm,total,seconds\n";
    for (const auto& r : log) {
      const auto& l = r.losses;
      csv << r.step << "," << r.epoch << "," << num(r.lr) << "," << num(r.wd) << "," << num(l.tf) << ","
          << num(l.roll) << "," << num(l.var) << "," << num(l.cov) << "," << num(l.idm) << "," << num(l.total)
          << "," << num(r.seconds) << "\n";
    }
    io::atomic_write(opt.out_dir / "train_log.csv", csv.str());
    out << "wrote " << (opt.out_dir / "final.ckpt").string() << "\n";
    return kOk;
  });
}

int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Checkpoint ck = load_checkpoint(opt.ckpt);
    const auto records = read_dataset(opt.data);
    const int k = opt.k.value_or(ck.config.eval.k);
    const int bins = opt.bins.value_or(ck.config.eval.bins);
    if (k < 0 || bins < 2) throw ConfigError("k must be >= 0 and bins >= 2");
    const bool target = use_target_encoder(opt.encoder.value_or(ck.config.eval.encoder));

    std::vector<ChartReport> reports;
    std::ostringstream csv;
    csv << "traj_id,n,k,bins,tw,ct,ks,rd\n";
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto xs = encode_inputs(records[i], ck.config.preproc, ck.state.model.config);
      const Eigen::MatrixXd z = encode_batch(ck.state.model, xs, target);
      const ChartReport r = chart_report(positions(records[i]), z, k, bins);
      reports.push_back(r);
      csv << i << "," << z.rows() << "," << r.k << "," << r.bins << "," << num(r.tw) << "," << num(r.ct) << ","
          << num(r.ks) << "," << num(r.rd) << "\n";
    }
    if (reports.empty()) throw ConfigError("dataset holds no trajectories");
    const double n = double(reports.size());
    Eigen::Array4d mean = Eigen::Array4d::Zero(), sq = Eigen::Array4d::Zero();
    for (const auto& r : reports) {
      const Eigen::Array4d v(r.tw, r.ct, r.ks, r.rd);
      mean += v;
      sq += v.square();
    }
    mean /= n;
    const Eigen::Array4d sd = reports.size() > 1 ? ((sq - n * mean.square()) / (n - 1)).max(0.0).sqrt().eval()
                                                 : Eigen::Array4d::Zero().eval();
    csv << "mean,,," << bins << "," << num(mean[0]) << "," << num(mean[1]) << "," << num(mean[2]) << ","
        << num(mean[3]) << "\n";
    csv << "std,,," << bins << "," << num(sd[0]) << "," << num(sd[1]) << "," << num(sd[2]) << "," << num(sd[3])
        << "\n";
    io::atomic_write(opt.out, csv.str());
    out << "mean over " << reports.size() << " trajectories: TW " << num(mean[0]) << " CT " << num(mean[1]) << " KS "
        << num(mean[2]) << " RD " << num(mean[3]) << "\n";
    return kOk;
  });
}

int cmd_rollout(const RolloutOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Checkpoint ck = load_checkpoint(opt.ckpt);
    const auto records = read_dataset(opt.data);
    if (opt.trajectory >= records.size()) {
      throw ConfigError("trajectory " + std::to_string(opt.trajectory) + " out of range (dataset holds " +
                        std::to_string(records.size()) + ")");
    }
    const auto& traj = records[opt.trajectory];
    if (opt.horizon < 0) throw ConfigError("horizon must be >= 0");
    if (opt.start + std::size_t(opt.horizon) >= traj.snapshots.size()) {
      throw ConfigError("start " + std::to_string(opt.start) + " + horizon " + std::to_string(opt.horizon) +
                        " runs past the trajectory's " + std::to_string(traj.snapshots.size()) + " snapshots");
    }
    const auto& m = ck.state.model;
    const auto xs = encode_inputs(traj, ck.config.preproc, m.config);
    const Index d = m.config.latent_dim(), h = opt.horizon;

    // Only snapshot `start` is encoded for the prediction itself.
    const Eigen::VectorXd z0 = encode(m, xs[opt.start]);
    Eigen::MatrixXd z(h + 1, d);
    z.row(0) = z0.transpose();
    if (h > 0) {
      const std::span<const Vec2> acts(traj.actions.data() + opt.start, std::size_t(h));
      z.bottomRows(h) = rollout(m, z0, acts);
    }

    // Chart frame: PCA of the trajectory's embeddings under the eval encoder, aligned to the floor plan.
    const Eigen::MatrixXd chart = encode_batch(m, xs, use_target_encoder(ck.config.eval.encoder));
    const Pca2 pca = pca2_fit(chart);
    const Eigen::MatrixXd gt = positions(traj).leftCols(2);
    const ProcrustesTransform frame = procrustes_align(pca.project(chart), gt).transform;
    const Eigen::MatrixXd z2 = pca.project(z);
    const Eigen::MatrixXd aligned = frame.apply(z2);

    std::ostringstream csv;
    csv << "step";
    for (Index j = 0; j < d; ++j) csv << ",z_" << j;
    csv << ",pca_x,pca_y,aligned_x,aligned_y,gt_x,gt_y,gap\n";
    double worst = 0;
    for (Index s = 0; s <= h; ++s) {
      const Eigen::RowVector2d truth = gt.row(Index(opt.start) + s);
      const double gap = (aligned.row(s) - truth).norm();
      worst = std::max(worst, gap);
      csv << s;
      for (Index j = 0; j < d; ++j) csv << "," << num(z(s, j));
      csv << "," << num(z2(s, 0)) << "," << num(z2(s, 1)) << "," << num(aligned(s, 0)) << "," << num(aligned(s, 1))
          << "," << num(truth.x()) << "," << num(truth.y()) << "," << num(gap) << "\n";
    }
    io::atomic_write(opt.out, csv.str());
    out << "rolled out " << h << " steps from snapshot " << opt.start << " of trajectory " << opt.trajectory
        << "; largest aligned gap " << num(worst) << " m\n";
    return kOk;
  });
}

int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig cfg;
    if (opt.config) {
      cfg = load_run_config(*opt.config);
    } else {
      cfg.scene.num_bs = 1;
      cfg.scene.antennas = 2;
      cfg.scene.subcarriers = 16;
      cfg.scene.bs_positions = {Vec3(6.0, -0.5, 2.5)};
      cfg.scene.bs_array_azimuth = {0.0};
      cfg.preproc.taps = 4;
      cfg.model.encoder.depths = {1};
      cfg.model.encoder.channels = {4};
      cfg.model.encoder.latent_dim = 4;
      cfg.model.predictor_hidden = 8;
      cfg.model.idm_hidden = 8;
      cfg.train.horizon = 3;
      cfg.train.batch_size = 2;
      cfg.train.seed = 3;
      cfg.validate();
    }
    if (cfg.model.latent_dim() > 8) throw ConfigError("gradcheck needs a tiny model (latent_dim <= 8)");
    if (!(opt.tolerance > 0)) throw ConfigError("tolerance must be positive");

    const auto records = generate_dataset(cfg.scene, cfg.motion, 2, cfg.train.horizon + 2);
    const TrainingSet data = prepare_training_set(records, cfg.preproc);
    TrainerState state = init_trainer(cfg.model, cfg.train, data);
    std::vector<std::size_t> lengths;
    for (const auto& t : data.inputs) lengths.push_back(t.size());
    const auto segments = sample_rollout_segments(lengths, cfg.train.horizon, cfg.train.batch_size, cfg.train.seed);
    const StepBatch batch = make_step_batch(state.model.config, cfg.train, data, cfg.preproc, segments, cfg.train.seed);

    std::vector<NamedTensor> params;
    std::vector<std::string> enc_names, pred_names;
    for (const auto& e : state.model.online.entries()) {
      params.push_back({"encoder." + e.name, e.value});
      enc_names.push_back(e.name);
    }
    for (const auto& e : state.model.predictor.entries()) {
      params.push_back({"predictor." + e.name, e.value});
      pred_names.push_back(e.name);
    }
    const std::size_t n_enc = enc_names.size();
    auto loss = [&](const std::vector<ad::Var>& vars) {
      ModelParams m = state.model;  // running statistics change on every evaluation
      const BoundParams online(enc_names, {vars.begin(), vars.begin() + std::ptrdiff_t(n_enc)});
      const BoundParams predictor(pred_names, {vars.begin() + std::ptrdiff_t(n_enc), vars.end()});
      return step_loss(m, online, predictor, cfg.train, batch).total;
    };

    const bool previous = ad::corrupt_gelu_gradient();
    ad::set_corrupt_gelu_gradient(opt.corrupt_gradient);
    GradReport report;
    try {
      report = grad_check(loss, params, 1e-6, opt.tolerance);
    } catch (...) {
      ad::set_corrupt_gelu_gradient(previous);
      throw;
    }
    ad::set_corrupt_gelu_gradient(previous);

    for (const auto& p : report.params) {
      out << p.name << ": " << p.probes << " probes, max relative error " << num(p.max_rel_error) << "\n";
    }
    out << (report.pass ? "PASS" : "FAIL") << ": " << report.probes << " probes, max relative error "
        << num(report.max_rel_error) << " (tolerance " << num(opt.tolerance) << ")\n";
    return report.pass ? kOk : kNumericalError;
  });
}

}  // namespace csiwm::cli
