#include "eeg2rep/cli.hpp"

#include "eeg2rep/checkpoint.hpp"
#include "eeg2rep/config.hpp"
#include "eeg2rep/evaluation.hpp"
#include "eeg2rep/plot.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

namespace eeg2rep {

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config, "JSON run configuration");
  cmd->add_option("--set", o.sets, "Override a config value, e.g. --set training.epochs=5")->allow_extra_args(false);
  cmd->add_option("-o,--output-dir", o.output_dir, "Output root (beats EEG2REP_OUTPUT_DIR and the config)");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--workers", o.workers, "Threads for representation extraction");
}

/// Merges file, flag and override layers into a validated RunConfig.
RunConfig resolve(const CommonOptions& o, std::optional<Json> base = std::nullopt) {
  Json j = Json::object();
  if (!o.config.empty()) {
    j = read_config_file(o.config);
  } else if (base) {
    j = *base;
  }
  if (o.seed) apply_override(j, "seed=" + std::to_string(*o.seed));
  if (o.workers) apply_override(j, "evaluation.workers=" + std::to_string(*o.workers));
  for (const auto& s : o.sets) apply_override(j, s);
  RunConfig cfg = run_config_from_json(j);
  if (!o.output_dir.empty()) {
    cfg.output_dir = o.output_dir;
  } else if (const char* env = std::getenv("EEG2REP_OUTPUT_DIR"); env && *env) {
    cfg.output_dir = env;
  }
  return cfg;
}

EegDataset load_data(RunConfig& cfg) {
  EegDataset ds = cfg.data.source == "synthetic"
                      ? synthesize_dataset(cfg.data.synthetic)
                      : load_dataset(cfg.data.manifest, DatasetFormat::csv_manifest, cfg.data.sampling_rate);
  validate(ds);
  resolve_model_shape(cfg, ds);
  validate(cfg);
  return ds;
}

DatasetSplit load_split(RunConfig& cfg) {
  return split(load_data(cfg), cfg.data.split, derive_seed(cfg.seed, {0x5e17u}));
}

fs::path run_dir(const RunConfig& cfg) {
  const fs::path dir = fs::path(cfg.output_dir) / cfg.run_name;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void write_resolved_config(const fs::path& dir, const RunConfig& cfg) {
  write_text(dir / "resolved_config.json", to_json(cfg).dump(2) + "\n");
}

/// Provenance lines that open every CSV artifact.
std::string csv_preamble(const RunConfig& cfg) {
  return "# seed=" + std::to_string(cfg.seed) + "\n# config=" + to_json(cfg).dump() + "\n";
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

void check_model_shape(const ModelState& m, const RunConfig& cfg) {
  if (m.config.channels != cfg.model.channels || m.config.length != cfg.model.length) {
    throw DataError("checkpoint model expects " + std::to_string(m.config.channels) + " x " +
                    std::to_string(m.config.length) + " windows, data has " + std::to_string(cfg.model.channels) +
                    " x " + std::to_string(cfg.model.length));
  }
}

std::string metric_rows(const MetricReport& r, const std::string& prefix) {
  std::ostringstream o;
  o << prefix << "accuracy," << fmt(r.accuracy) << "\n";
  o << prefix << "balanced_accuracy," << fmt(r.balanced_accuracy) << "\n";
  o << prefix << "weighted_f1," << fmt(r.weighted_f1) << "\n";
  o << prefix << "macro_f1," << fmt(r.macro_f1) << "\n";
  o << prefix << "auroc," << fmt(r.auroc) << "\n";
  for (std::size_t k = 0; k < r.per_class_recall.size(); ++k) {
    o << prefix << "recall_" << k << "," << fmt(r.per_class_recall[k]) << "\n";
    o << prefix << "f1_" << k << "," << fmt(r.per_class_f1[k]) << "\n";
    o << prefix << "support_" << k << "," << r.support[k] << "\n";
  }
  return o.str();
}

// ---------------------------------------------------------------- pretrain

struct PretrainOptions {
  CommonOptions common;
  std::string resume;
  std::optional<int> stop_after;
};

/// Keeps the preamble, header and rows with step < `steps` of an existing log.
std::string truncate_log(const fs::path& path, long steps) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read training log " + path.string() + " for resume");
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#' || line.rfind("step,", 0) == 0) {
      kept += line + "\n";
      continue;
    }
    if (std::stol(line.substr(0, line.find(','))) < steps) kept += line + "\n";
  }
  return kept;
}

int cmd_pretrain(const PretrainOptions& o, std::ostream& out) {
  std::optional<Checkpoint> ck;
  if (!o.resume.empty()) ck = load_checkpoint(o.resume);
  RunConfig cfg = resolve(o.common, ck ? std::optional<Json>(ck->run_config) : std::nullopt);
  const DatasetSplit data = load_split(cfg);
  const fs::path dir = run_dir(cfg);
  write_resolved_config(dir, cfg);
  const fs::path log_path = dir / "train_log.csv";

  std::optional<Trainer> trainer;
  if (ck) {
    check_model_shape(ck->state.model, cfg);
    trainer.emplace(cfg.pretrain, ck->state, data.train, data.val);
    write_text(log_path, fs::exists(log_path) ? truncate_log(log_path, ck->state.step)
                                              : csv_preamble(cfg) + train_log_header() + "\n");
  } else {
    trainer.emplace(cfg.pretrain, init_model(cfg.model, cfg.seed), data.train, data.val);
    write_text(log_path, csv_preamble(cfg) + train_log_header() + "\n");
  }
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot append to " + log_path.string());

  const Json snapshot = to_json(cfg);
  const auto save = [&](const fs::path& p, const TrainerState& s) { save_checkpoint(p, {snapshot, cfg.pretrain, s}); };
  bool collapse_reported = false;
  double last_std = 0.0;
  Trainer::Hooks hooks;
  hooks.on_step = [&](const TrainLogRow& row) {
    log << format_log_row(row) << "\n";
    log.flush();
    if (!log) throw IoError("failed writing " + log_path.string());
    last_std = row.rep_std_min;
    if (row.rep_std_min < kCollapseStd && !collapse_reported) {
      out << "warning: representation collapse at step " << row.step << " (min std " << row.rep_std_min << ")\n";
      collapse_reported = true;
    }
  };
  hooks.on_best = [&](const TrainerState& s) { save(dir / "best.ckpt", s); };
  hooks.on_epoch = [&](const TrainerState& s) {
    save(dir / "last.ckpt", s);
    out << "epoch " << s.epoch << "/" << cfg.pretrain.train.epochs << " best_val " << fmt(s.best_val)
        << " rep_std_min " << last_std << (s.stopped_early ? " (early stop)" : "") << "\n";
  };
  trainer->run(hooks, o.stop_after);
  out << "wrote " << (dir / "last.ckpt").string() << "\n";
  return kExitOk;
}

// ------------------------------------------------------- model-based commands

struct ModelOptions {
  CommonOptions common;
  std::string checkpoint;
  bool random_init = false;
  std::string encoder;
};

void add_model_options(CLI::App* cmd, ModelOptions& o) {
  add_common(cmd, o.common);
  cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint written by pretrain");
  cmd->add_flag("--random-init", o.random_init, "Use a freshly initialized model instead of a checkpoint");
  cmd->add_option("--encoder", o.encoder, "Encoder to read representations from: context or target");
}

struct LoadedModel {
  RunConfig cfg;
  DatasetSplit data;
  ModelState model;
};

LoadedModel load_model(const ModelOptions& o, bool checkpoint_optional) {
  std::optional<Checkpoint> ck;
  if (!o.checkpoint.empty()) {
    ck = load_checkpoint(o.checkpoint);
  } else if (!o.random_init && !checkpoint_optional) {
    throw ConfigError("--checkpoint is required (or pass --random-init)");
  }
  LoadedModel m{resolve(o.common, ck ? std::optional<Json>(ck->run_config) : std::nullopt), {}, {}};
  if (!o.encoder.empty()) m.cfg.evaluation.encoder = parse_probe_encoder(o.encoder);
  m.data = load_split(m.cfg);
  if (ck && !o.random_init) {
    m.model = std::move(ck->state.model);
    check_model_shape(m.model, m.cfg);
  } else {
    m.model = init_model(m.cfg.model, m.cfg.seed);
  }
  return m;
}

int cmd_probe(const ModelOptions& o, std::ostream& out) {
  LoadedModel m = load_model(o, false);
  const fs::path dir = run_dir(m.cfg);
  write_resolved_config(dir, m.cfg);
  const auto& ev = m.cfg.evaluation;
  const ProbeResult r = probe_model(m.model, m.data.train, m.data.test, ev.probe, ev.encoder, ev.workers);
  std::string csv = csv_preamble(m.cfg) + "# encoder=" + std::string(to_string(ev.encoder)) +
                    (o.random_init ? " random_init=1" : "") + "\nmetric,value\n" + metric_rows(r.report, "") +
                    "probe_iterations," + std::to_string(r.model.iterations) + "\n";
  write_text(dir / "probe_metrics.csv", csv);
  out << "probe accuracy " << r.report.accuracy << " balanced " << r.report.balanced_accuracy << "\n";
  return kExitOk;
}

int cmd_finetune(const ModelOptions& o, std::optional<int> epochs, std::ostream& out) {
  LoadedModel m = load_model(o, true);
  FineTuneConfig ft = m.cfg.evaluation.finetune;
  if (epochs) ft.epochs = *epochs;
  if (o.random_init || o.checkpoint.empty()) ft.random_init = true;
  const fs::path dir = run_dir(m.cfg);
  write_resolved_config(dir, m.cfg);
  const FineTuneResult r = fine_tune(m.model, m.data.train, m.data.test, ft);
  std::string csv = csv_preamble(m.cfg) + "# random_init=" + (ft.random_init ? "1" : "0") +
                    " epochs=" + std::to_string(ft.epochs) + "\nmetric,value\n" + metric_rows(r.report, "") +
                    "eval_loss," + fmt(r.eval_loss) + "\n";
  for (std::size_t e = 0; e < r.epoch_losses.size(); ++e) {
    csv += "eval_loss_epoch_" + std::to_string(e + 1) + "," + fmt(r.epoch_losses[e]) + "\n";
  }
  write_text(dir / "finetune_metrics.csv", csv);
  out << "finetune accuracy " << r.report.accuracy << " eval loss " << r.eval_loss << "\n";
  return kExitOk;
}

int cmd_robustness(const ModelOptions& o, std::ostream& out) {
  LoadedModel m = load_model(o, false);
  const auto& ev = m.cfg.evaluation;
  const fs::path dir = run_dir(m.cfg);
  write_resolved_config(dir, m.cfg);
  const auto points = robustness_eval(m.model, m.data.train, m.data.test, ev.robustness.kinds,
                                      ev.robustness.magnitudes, derive_seed(m.cfg.seed, {0x0153u}), ev.probe,
                                      ev.encoder);
  std::string csv = csv_preamble(m.cfg) + "kind,magnitude,accuracy,balanced_accuracy,weighted_f1,auroc\n";
  std::map<std::string, Series> curves;
  for (const auto& p : points) {
    const std::string kind(to_string(p.kind));
    csv += kind + "," + fmt(p.magnitude) + "," + fmt(p.report.accuracy) + "," + fmt(p.report.balanced_accuracy) +
           "," + fmt(p.report.weighted_f1) + "," + fmt(p.report.auroc) + "\n";
    auto& s = curves[kind];
    s.label = kind;
    s.x.push_back(p.magnitude);
    s.y.push_back(p.report.accuracy);
  }
  write_text(dir / "robustness.csv", csv);
  std::vector<Series> series;
  for (auto& [k, s] : curves) series.push_back(s);
  write_line_plot(dir / "robustness.svg", "Probe accuracy under perturbation", "magnitude", "accuracy", series);
  out << "wrote " << (dir / "robustness.csv").string() << "\n";
  return kExitOk;
}

// ------------------------------------------------------------ data commands

int cmd_maskbench(const CommonOptions& o, int trials, std::ostream& out) {
  RunConfig cfg = resolve(o);
  if (cfg.data.source == "manifest") load_data(cfg);
  validate(cfg);
  const int l = cfg.model.patches();
  const fs::path dir = run_dir(cfg);
  write_resolved_config(dir, cfg);
  std::string csv = csv_preamble(cfg) + "# l=" + std::to_string(l) + " trials=" + std::to_string(trials) +
                    "\nstrategy,rho,beta,preserved,mean_boundaries,mean_longest_run,note\n";
  const auto& grid = cfg.evaluation.sweep;
  std::uint64_t cell = 0;
  for (auto strategy : {MaskStrategy::ssp, MaskStrategy::random, MaskStrategy::block}) {
    for (double rho : grid.rhos) {
      for (int beta : grid.betas) {
        MaskConfig mc = cfg.pretrain.mask;
        mc.strategy = strategy;
        mc.rho = rho;
        mc.beta = beta;
        csv += std::string(to_string(strategy)) + "," + fmt(rho) + "," + std::to_string(beta) + ",";
        try {
          const auto s = mask_statistics(l, mc, trials, derive_seed(cfg.seed, {cell++}));
          csv += fmt(s.mean_preserved) + "," + fmt(s.mean_boundaries) + "," + fmt(s.mean_longest_run) + ",\n";
        } catch (const ConfigError& e) {
          csv += ",,,\"" + std::string(e.what()) + "\"\n";
        }
      }
    }
  }
  write_text(dir / "mask_stats.csv", csv);
  out << "wrote " << (dir / "mask_stats.csv").string() << "\n";
  return kExitOk;
}

int cmd_sweep(const CommonOptions& o, std::ostream& out) {
  RunConfig cfg = resolve(o);
  const DatasetSplit data = load_split(cfg);
  const fs::path dir = run_dir(cfg);
  write_resolved_config(dir, cfg);
  const auto cells = ablation_sweep(data, cfg.model, cfg.pretrain, cfg.evaluation.sweep, cfg.seed,
                                    cfg.evaluation.probe);
  std::string csv = csv_preamble(cfg) + "strategy,rho,beta,seed,accuracy,balanced_accuracy,weighted_f1,auroc,note\n";
  std::map<std::string, Series> curves;
  for (const auto& c : cells) {
    const std::string strat(to_string(c.strategy));
    csv += strat + "," + fmt(c.rho) + "," + std::to_string(c.beta) + "," + std::to_string(c.seed) + ",";
    if (c.report) {
      csv += fmt(c.report->accuracy) + "," + fmt(c.report->balanced_accuracy) + "," + fmt(c.report->weighted_f1) +
             "," + fmt(c.report->auroc) + ",\n";
      auto& s = curves[strat + " beta=" + std::to_string(c.beta)];
      s.label = strat + " beta=" + std::to_string(c.beta);
      s.x.push_back(c.rho);
      s.y.push_back(c.report->accuracy);
    } else {
      csv += ",,,,\"" + c.note + "\"\n";
    }
  }
  write_text(dir / "sweep.csv", csv);
  std::vector<Series> series;
  for (auto& [k, s] : curves) series.push_back(s);
  write_line_plot(dir / "sweep.svg", "Probe accuracy vs mask ratio", "rho", "accuracy", series);
  out << "wrote " << (dir / "sweep.csv").string() << " (" << cells.size() << " cells)\n";
  return kExitOk;
}

int cmd_report(const CommonOptions& o, const std::string& run_dir_flag, std::ostream& out) {
  fs::path dir;
  if (!run_dir_flag.empty()) {
    dir = run_dir_flag;
  } else {
    const RunConfig cfg = resolve(o);
    dir = fs::path(cfg.output_dir) / cfg.run_name;
  }
  const fs::path log_path = dir / "train_log.csv";
  std::ifstream in(log_path);
  if (!in) throw IoError("no training log at " + log_path.string());
  Series total{"train total", {}, {}}, val{"val total", {}, {}}, rec{"train rec", {}, {}};
  std::string line, last;
  std::vector<std::string> preamble;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      preamble.push_back(line);
      continue;
    }
    if (line.rfind("step,", 0) == 0) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 9) throw IoError("malformed training log row: " + line);
    const double step = std::stod(f[0]);
    total.x.push_back(step);
    total.y.push_back(std::stod(f[6]));
    rec.x.push_back(step);
    rec.y.push_back(std::stod(f[3]));
    if (!f[7].empty()) {
      val.x.push_back(step);
      val.y.push_back(std::stod(f[7]));
    }
    last = line;
  }
  if (last.empty()) throw IoError("training log " + log_path.string() + " has no rows");
  const std::vector<Series> losses{total, val};
  write_line_plot(dir / "loss_curve.svg", "Training objective", "step", "total loss", losses);
  const std::vector<Series> recs{rec};
  write_line_plot(dir / "rec_curve.svg", "Reconstruction loss", "step", "rec", recs);

  std::ostringstream md;
  md << "# Run report: " << dir.filename().string() << "\n\n";
  for (const auto& p : preamble)
    if (p.rfind("# seed=", 0) == 0) md << "Seed: " << p.substr(7) << "\n\n";
  md << "Steps logged: " << total.x.size() << "\n\n";
  md << "Final row (" << train_log_header() << "):\n\n```\n" << last << "\n```\n\n";
  if (!val.y.empty()) md << "Best validation total: " << fmt(*std::min_element(val.y.begin(), val.y.end())) << "\n\n";
  md << "Plots: loss_curve.svg, rec_curve.svg\n\n## Artifacts\n\n";
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  for (const auto& n : names) md << "- " << n << "\n";
  write_text(dir / "report.md", md.str());
  out << "wrote " << (dir / "report.md").string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-supervised EEG representation learning"};
  app.require_subcommand(1);

  PretrainOptions pre;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Self-supervised pretraining");
  add_common(pretrain_cmd, pre.common);
  pretrain_cmd->add_option("--resume", pre.resume, "Continue from a checkpoint");
  pretrain_cmd->add_option("--stop-after-epochs", pre.stop_after, "Stop after this many more epochs");

  ModelOptions probe;
  auto* probe_cmd = app.add_subcommand("probe", "Linear probe on frozen representations");
  add_model_options(probe_cmd, probe);

  ModelOptions ft;
  std::optional<int> ft_epochs;
  auto* ft_cmd = app.add_subcommand("finetune", "Supervised fine-tuning with a linear head");
  add_model_options(ft_cmd, ft);
  ft_cmd->add_option("--epochs", ft_epochs, "Fine-tuning epochs");

  CommonOptions mb;
  int trials = 1000;
  auto* mb_cmd = app.add_subcommand("maskbench", "Masking statistics over the sweep grid");
  add_common(mb_cmd, mb);
  mb_cmd->add_option("--trials", trials, "Plans per cell")->check(CLI::PositiveNumber);

  ModelOptions rob;
  auto* rob_cmd = app.add_subcommand("robustness", "Probe accuracy under input perturbations");
  add_model_options(rob_cmd, rob);

  CommonOptions sw;
  auto* sw_cmd = app.add_subcommand("sweep", "Masking ablation grid");
  add_common(sw_cmd, sw);

  CommonOptions rep;
  std::string rep_dir;
  auto* rep_cmd = app.add_subcommand("report", "Plots and summary of a pretraining run");
  add_common(rep_cmd, rep);
  rep_cmd->add_option("--run-dir", rep_dir, "Run directory (defaults to output_dir/run_name)");

  std::vector<std::string> argv_store(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(argv_store);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*pretrain_cmd) return cmd_pretrain(pre, out);
    if (*probe_cmd) return cmd_probe(probe, out);
    if (*ft_cmd) return cmd_finetune(ft, ft_epochs, out);
    if (*mb_cmd) return cmd_maskbench(mb, trials, out);
    if (*rob_cmd) return cmd_robustness(rob, out);
    if (*sw_cmd) return cmd_sweep(sw, out);
    if (*rep_cmd) return cmd_report(rep, rep_dir, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const TrainingDiverged& e) {
    err << "diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace eeg2rep
