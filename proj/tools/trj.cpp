// SPDX-License-Identifier: Apache-2.0
//
// trj: command-line front end for data generation, embedding training,
// feature extraction, classifier sweeps and loss ablations.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trj/trj.hpp"

namespace {

namespace fs = std::filesystem;

/// Options shared by every command that builds an ExperimentConfig.
struct ConfigOptions {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;  // config key -> value given on the command line

  void attach(CLI::App* cmd, const std::vector<std::pair<std::string, std::string>>& flag_keys) {
    cmd->add_option("--config", config_file, "key = value config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "override a config key, key=value (repeatable)");
    for (const auto& [flag, key] : flag_keys) {
      cmd->add_option_function<std::string>(
          flag, [this, key = key](const std::string& v) { flags[key] = v; }, "config key '" + key + "'");
    }
  }

  trj::ExperimentConfig build() const {
    trj::ExperimentConfig cfg = config_file.empty() ? trj::ExperimentConfig{} : trj::ExperimentConfig::load(config_file);
    for (const auto& [key, value] : flags) cfg.set(key, value);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw trj::ConfigError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    cfg.apply_environment();
    cfg.validate();
    return cfg;
  }
};

const std::vector<std::pair<std::string, std::string>> kDataFlags = {
    {"--data", "data"},
    {"--image-width", "image_width"},
    {"--image-height", "image_height"},
    {"--seed", "seed"},
};

const std::vector<std::pair<std::string, std::string>> kEmbeddingFlags = {
    {"--programs", "programs"},         {"--losses", "losses"},       {"--weights", "weights"},
    {"--temperature", "temperature"},   {"--augment", "augment"},     {"--noise-sigma", "noise_sigma"},
    {"--aug-kinds", "aug_kinds"},       {"--latent-dim", "latent_dim"}, {"--hidden", "hidden"},
    {"--batch", "batch"},               {"--lr", "lr"},               {"--steps", "steps"},
    {"--consistency-mode", "consistency_mode"},
};

const std::vector<std::pair<std::string, std::string>> kEvalFlags = {
    {"--fractions", "fractions"},   {"--features", "features"},     {"--treba", "treba"},
    {"--selections", "selections"}, {"--trainings", "trainings"},
};

std::vector<std::pair<std::string, std::string>> join(std::initializer_list<const std::vector<std::pair<std::string, std::string>>*> parts) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"trajectory embeddings trained with programmed decoder tasks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", trj::kVersion);

  // synth-data
  trj::SyntheticSpec synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth-data", "write a labeled synthetic two-mouse dataset as pose CSV");
  synth_cmd->add_option("--out", synth_out, "output CSV")->required();
  synth_cmd->add_option("--sequences", synth.sequences, "number of recordings")->capture_default_str();
  synth_cmd->add_option("--frames", synth.frames, "frames per recording")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  synth_cmd->add_option("--label-noise", synth.label_noise, "probability of a random frame label")->capture_default_str();

  // train-embedding
  ConfigOptions train_opts;
  std::string train_out, loss_log;
  auto* train_cmd = app.add_subcommand("train-embedding", "train the embedding on the training split");
  train_opts.attach(train_cmd, join({&kDataFlags, &kEmbeddingFlags}));
  train_cmd->add_option("--out", train_out, "checkpoint path")->required();
  train_cmd->add_option("--loss-log", loss_log, "per-step loss CSV");

  // extract-features
  ConfigOptions feat_opts;
  std::string feat_ckpt, feat_out;
  auto* feat_cmd = app.add_subcommand("extract-features", "write per-frame feature tables for the three splits");
  feat_opts.attach(feat_cmd, join({&kDataFlags, &kEvalFlags}));
  feat_cmd->add_option("--ckpt", feat_ckpt, "embedding checkpoint (needed with --treba on)");
  feat_cmd->add_option("--out", feat_out, "output prefix; writes <prefix>.{train,val,test}.csv")->required();

  // train-classifier
  std::string cls_train, cls_val, cls_test, cls_history;
  double cls_fraction = 1.0;
  std::uint64_t cls_seed = 0;
  trj::ClassifierConfig cls_cfg;
  auto* cls_cmd = app.add_subcommand("train-classifier", "train one frame classifier on a feature table");
  cls_cmd->add_option("--train", cls_train, "training feature CSV")->required()->check(CLI::ExistingFile);
  cls_cmd->add_option("--val", cls_val, "validation feature CSV")->required()->check(CLI::ExistingFile);
  cls_cmd->add_option("--test", cls_test, "test feature CSV")->check(CLI::ExistingFile);
  cls_cmd->add_option("--fraction", cls_fraction, "training fraction the table represents (picks layer sizes)")
      ->capture_default_str();
  cls_cmd->add_option("--batch", cls_cfg.batch)->capture_default_str();
  cls_cmd->add_option("--lr", cls_cfg.lr)->capture_default_str();
  cls_cmd->add_option("--max-epochs", cls_cfg.max_epochs)->capture_default_str();
  cls_cmd->add_option("--patience", cls_cfg.patience)->capture_default_str();
  cls_cmd->add_option("--seed", cls_seed)->capture_default_str();
  cls_cmd->add_option("--history", cls_history, "per-epoch CSV");

  // evaluate
  ConfigOptions eval_opts;
  std::string eval_ckpt, eval_out;
  auto* eval_cmd = app.add_subcommand("evaluate", "fraction sweep with an existing embedding checkpoint");
  eval_opts.attach(eval_cmd, join({&kDataFlags, &kEvalFlags}));
  eval_cmd->add_option("--ckpt", eval_ckpt, "embedding checkpoint (needed with --treba on)");
  eval_cmd->add_option("--out", eval_out, "report directory")->required();

  // sweep
  ConfigOptions sweep_opts;
  std::string sweep_out;
  auto* sweep_cmd = app.add_subcommand("sweep", "run or resume the full staged pipeline");
  sweep_opts.attach(sweep_cmd, join({&kDataFlags, &kEmbeddingFlags, &kEvalFlags}));
  sweep_cmd->add_option("--out", sweep_out, "experiment directory")->required();

  // ablate-losses
  ConfigOptions abl_opts;
  std::string abl_out;
  auto* abl_cmd = app.add_subcommand("ablate-losses", "train every decoder-loss combination and emit the grid CSV");
  abl_opts.attach(abl_cmd, join({&kDataFlags, &kEmbeddingFlags, &kEvalFlags}));
  abl_cmd->add_option("--out", abl_out, "output directory")->required();

  // report
  std::string report_runs, report_out;
  auto* report_cmd = app.add_subcommand("report", "rebuild cell and plot CSVs from a runs CSV");
  report_cmd->add_option("--runs", report_runs, "sweep_runs.csv")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--out", report_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (*synth_cmd) {
    trj::write_pose_file(synth_out, trj::generate_synthetic_dataset(synth));
    std::cout << "wrote " << synth.sequences << " x " << synth.frames << " frames to " << synth_out << "\n";
  } else if (*train_cmd) {
    const auto cfg = train_opts.build();
    const auto splits = trj::prepare_splits(cfg);
    trj::TrainingHistory h;
    const auto model = trj::train_experiment_embedding(cfg, cfg.loss_config(), splits.train, &h);
    auto ck = model.to_checkpoint();
    ck.meta["config_hash"] = cfg.hash();
    ck.meta["version"] = trj::kVersion;
    trj::save_checkpoint(train_out, ck);
    if (!loss_log.empty()) {
      trj::write_text_file(loss_log, trj::loss_history_csv(h, trj::artifact_header(cfg.hash(), trj::kVersion)));
    }
    std::cout << "trained " << cfg.steps << " steps (" << cfg.loss_config().label() << ") in " << h.seconds << " s; saved "
              << train_out << "\n";
  } else if (*feat_cmd) {
    const auto cfg = feat_opts.build();
    const auto splits = trj::prepare_splits(cfg);
    std::optional<trj::EmbeddingModel> model;
    if (cfg.treba) {
      if (feat_ckpt.empty()) throw trj::ConfigError("--treba on needs --ckpt");
      model = trj::EmbeddingModel::load(feat_ckpt);
    }
    const auto base = trj::parse_base_features(cfg.features);
    const trj::TvaeModel* m = model ? &model->tvae : nullptr;
    const std::string comment = "config_hash=" + cfg.hash() + " version=" + trj::kVersion;
    for (const auto& [name, part] : {std::pair{"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}}) {
      const auto table = trj::extract_features(m, *part, base, cfg.window_length);
      trj::save_feature_table(feat_out + "." + name + ".csv", table, comment);
      std::cout << name << ": " << table.rows() << " rows x " << table.dim() << " features\n";
    }
  } else if (*cls_cmd) {
    const auto train = trj::load_feature_table(cls_train);
    const auto val = trj::load_feature_table(cls_val);
    cls_cfg.hidden = trj::hidden_sizes_for_fraction(cls_fraction);
    cls_cfg.seed = cls_seed;
    const auto model = trj::train_classifier(train.values, train.labels, val.values, val.labels, cls_cfg);
    if (!cls_history.empty()) {
      std::string csv = "epoch,train_loss,val_map\n";
      for (const auto& e : model.history) {
        csv += std::to_string(e.epoch) + "," + trj::detail::format_double(e.train_loss) + "," +
               trj::detail::format_double(e.val_map) + "\n";
      }
      trj::write_text_file(cls_history, csv);
    }
    std::cout << "best epoch " << model.best_epoch << ", validation MAP " << model.best_val_map << "\n";
    if (!cls_test.empty()) {
      const auto test = trj::load_feature_table(cls_test);
      const auto r = trj::mean_average_precision(model.predict_proba(test.values), test.labels);
      std::cout << "test MAP " << r.map << "\n";
      for (std::size_t c = 0; c < r.per_class.size(); ++c) std::cout << "  class " << c << " AP " << r.per_class[c] << "\n";
    }
  } else if (*eval_cmd) {
    const auto cfg = eval_opts.build();
    const auto splits = trj::prepare_splits(cfg);
    std::optional<trj::EmbeddingModel> model;
    if (cfg.treba) {
      if (eval_ckpt.empty()) throw trj::ConfigError("--treba on needs --ckpt");
      model = trj::EmbeddingModel::load(eval_ckpt);
    }
    const auto sets = trj::build_feature_splits(cfg, splits, model ? &model->tvae : nullptr);
    auto result = trj::run_fraction_sweep(splits.train, sets, trj::sweep_config(cfg));
    result.config_hash = cfg.hash();
    result.version = trj::kVersion;
    const auto files = trj::emit_report(result, eval_out);
    std::cout << trj::read_text_file(files.cells);
  } else if (*sweep_cmd) {
    const auto cfg = sweep_opts.build();
    const auto out = trj::run_experiment(cfg, sweep_out);
    std::cout << trj::read_text_file(out.report.cells);
  } else if (*abl_cmd) {
    const auto cfg = abl_opts.build();
    const auto r = trj::ablate_losses(cfg, abl_out, [](const std::string& label) { trj::info("finished " + label); });
    std::cout << r.csv;
  } else if (*report_cmd) {
    const auto result = trj::parse_sweep_runs_csv(trj::read_text_file(report_runs));
    const auto files = trj::emit_report(result, report_out);
    std::cout << trj::read_text_file(files.plot);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const trj::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
