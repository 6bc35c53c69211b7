// SPDX-License-Identifier: Apache-2.0
#pragma once

// Configuration-driven pipeline: data -> embedding -> features -> sweep -> report.
//
// Config files are `key = value` lines; `#` starts a comment. The canonical
// serialization (every key, fixed order) is hashed with FNV-1a and the hash is
// written into every artifact. Each finished stage leaves
// `stages/<name>.done` holding that hash, so a rerun with the same config
// skips it. A failing stage leaves `failure.json` next to whatever it had
// already written.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trj/approximator.hpp"
#include "trj/embedding.hpp"
#include "trj/error.hpp"
#include "trj/features.hpp"
#include "trj/log.hpp"
#include "trj/pose_io.hpp"
#include "trj/rng.hpp"
#include "trj/sweep.hpp"
#include "trj/synthetic.hpp"

namespace trj {

inline constexpr const char* kVersion = "trj-0.1.0";

struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::string data;  ///< pose CSV; empty selects the synthetic generator
  double image_width = 1024.0;
  double image_height = 570.0;
  SyntheticSpec synthetic;
  double train_fraction = 0.7;
  double val_fraction = 0.15;
  std::string programs = "all_mouse";
  std::string losses = "tvae,contrastive,consistency";
  std::string weights;  ///< empty: per-loss defaults (1, contrastive terms 10)
  double temperature = 0.07;
  bool augment = false;
  double noise_sigma = 0.002;
  std::string aug_kinds = "rotation,reflection,translation,noise";
  std::string consistency_mode = "direct";
  int latent_dim = 32;
  int hidden = 256;
  int window_length = 21;
  int batch = 128;
  double lr = 2e-4;
  int steps = 2000;
  int classifier_batch = 512;
  double classifier_lr = 1e-3;
  int classifier_max_epochs = 200;
  int classifier_patience = 10;
  std::vector<double> fractions = default_fractions();
  std::string features = "keypoints";
  bool treba = true;
  int selections = 3;
  int trainings = 3;

  struct Field {
    std::string key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
  };

  static const std::vector<Field>& fields();

  void set(const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
      if (f.key == key) {
        f.set(*this, value);
        return;
      }
    }
    throw ConfigError("unknown config key '" + key + "'");
  }

  std::string get(const std::string& key) const {
    for (const auto& f : fields()) {
      if (f.key == key) return f.get(*this);
    }
    throw ConfigError("unknown config key '" + key + "'");
  }

  /// Every key in a fixed order.
  std::string serialize() const {
    std::string s;
    for (const auto& f : fields()) s += f.key + " = " + f.get(*this) + "\n";
    return s;
  }

  /// 16 hex digits of FNV-1a over the canonical serialization.
  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(serialize())));
    return buf;
  }

  static ExperimentConfig parse(const std::string& text) {
    ExperimentConfig c;
    std::istringstream in(text);
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
      ++row;
      const auto hash_pos = line.find('#');
      if (hash_pos != std::string::npos) line.erase(hash_pos);
      const std::string_view trimmed = detail::trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string_view::npos) throw ParseError("config line " + std::to_string(row) + ": expected key = value");
      const std::string key(detail::trim(trimmed.substr(0, eq)));
      const std::string value(detail::trim(trimmed.substr(eq + 1)));
      try {
        c.set(key, value);
      } catch (const ConfigError& e) {
        throw ParseError("config line " + std::to_string(row) + ": " + e.what());
      }
    }
    return c;
  }

  static ExperimentConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  /// TRJ_SEED, when set, replaces the global seed.
  void apply_environment() {
    if (const char* s = std::getenv("TRJ_SEED"); s && *s) set("seed", s);
  }

  LossConfig loss_config() const {
    LossConfig l = LossConfig::parse(losses, weights);
    l.temperature = temperature;
    l.augment = augment || l.unsup_contrastive;
    l.augmentation.noise_sigma = noise_sigma;
    l.augmentation.kinds = AugmentationPolicy::parse_kinds(aug_kinds);
    if (consistency_mode == "direct") {
      l.consistency_mode = ConsistencyMode::direct;
    } else if (consistency_mode == "approximator") {
      l.consistency_mode = ConsistencyMode::approximator;
    } else {
      throw ConfigError("consistency_mode must be direct or approximator");
    }
    return l;
  }

  TvaeConfig tvae_config(int state_dim) const {
    TvaeConfig t;
    t.state_dim = state_dim;
    t.latent_dim = latent_dim;
    t.hidden = hidden;
    t.window_length = window_length;
    return t;
  }

  ClassifierConfig classifier_config() const {
    ClassifierConfig c;
    c.batch = classifier_batch;
    c.lr = classifier_lr;
    c.max_epochs = classifier_max_epochs;
    c.patience = classifier_patience;
    return c;
  }

  void validate() const {
    loss_config().validate();
    ProgramSet::parse(programs);
    parse_base_features(features);
    check_window_length(window_length);
    if (latent_dim < 1 || hidden < 1 || batch < 2 || steps < 0) throw ConfigError("bad embedding hyperparameters");
    if (!(lr > 0.0) || !(classifier_lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (classifier_batch < 1 || classifier_max_epochs < 1 || classifier_patience < 1) {
      throw ConfigError("bad classifier hyperparameters");
    }
    if (!(train_fraction > 0.0) || !(val_fraction > 0.0) || train_fraction + val_fraction >= 1.0) {
      throw ConfigError("split fractions must be positive and leave room for a test split");
    }
    if (fractions.empty()) throw ConfigError("no training fractions");
    for (double f : fractions) {
      if (!(f > 0.0) || f > 1.0) throw ConfigError("training fractions must lie in (0, 1]");
    }
    if (parse_base_features(features) == BaseFeatures::none && !treba) throw ConfigError("no feature series to evaluate");
    if (selections < 1 || trainings < 1) throw ConfigError("need at least one selection and one training");
    if (data.empty()) synthetic.validate();
  }
};

namespace detail {

inline std::string format_bool(bool b) { return b ? "on" : "off"; }

inline bool parse_bool(const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected on or off, got '" + v + "'");
}

template <class T>
T parse_value(const std::string& v) {
  const auto x = parse_number<T>(v);
  if (!x) throw ConfigError("'" + v + "' is not a valid number");
  return *x;
}

inline std::vector<double> parse_double_list(const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!trim(item).empty()) out.push_back(parse_value<double>(std::string(trim(item))));
  }
  return out;
}

inline std::string format_double_list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : ",") + format_double(x);
  return s;
}

}  // namespace detail

inline const std::vector<ExperimentConfig::Field>& ExperimentConfig::fields() {
  using C = ExperimentConfig;
  using detail::format_double;
  using detail::parse_value;
  auto str = [](std::string C::*m) {
    return Field{"", [m](const C& c) { return c.*m; }, [m](C& c, const std::string& v) { c.*m = v; }};
  };
  auto num = [](double C::*m) {
    return Field{"", [m](const C& c) { return format_double(c.*m); },
                 [m](C& c, const std::string& v) { c.*m = parse_value<double>(v); }};
  };
  auto integer = [](int C::*m) {
    return Field{"", [m](const C& c) { return std::to_string(c.*m); },
                 [m](C& c, const std::string& v) { c.*m = parse_value<int>(v); }};
  };
  auto flag = [](bool C::*m) {
    return Field{"", [m](const C& c) { return detail::format_bool(c.*m); },
                 [m](C& c, const std::string& v) { c.*m = detail::parse_bool(v); }};
  };
  auto named = [](std::string key, Field f) {
    f.key = std::move(key);
    return f;
  };
  static const std::vector<Field> list = {
      {"seed", [](const C& c) { return std::to_string(c.seed); },
       [](C& c, const std::string& v) { c.seed = parse_value<std::uint64_t>(v); }},
      named("data", str(&C::data)),
      named("image_width", num(&C::image_width)),
      named("image_height", num(&C::image_height)),
      {"synth.sequences", [](const C& c) { return std::to_string(c.synthetic.sequences); },
       [](C& c, const std::string& v) { c.synthetic.sequences = parse_value<int>(v); }},
      {"synth.frames", [](const C& c) { return std::to_string(c.synthetic.frames); },
       [](C& c, const std::string& v) { c.synthetic.frames = parse_value<int>(v); }},
      {"synth.seed", [](const C& c) { return std::to_string(c.synthetic.seed); },
       [](C& c, const std::string& v) { c.synthetic.seed = parse_value<std::uint64_t>(v); }},
      {"synth.label_noise", [](const C& c) { return format_double(c.synthetic.label_noise); },
       [](C& c, const std::string& v) { c.synthetic.label_noise = parse_value<double>(v); }},
      named("split.train", num(&C::train_fraction)),
      named("split.val", num(&C::val_fraction)),
      named("programs", str(&C::programs)),
      named("losses", str(&C::losses)),
      named("weights", str(&C::weights)),
      named("temperature", num(&C::temperature)),
      named("augment", flag(&C::augment)),
      named("noise_sigma", num(&C::noise_sigma)),
      named("aug_kinds", str(&C::aug_kinds)),
      named("consistency_mode", str(&C::consistency_mode)),
      named("latent_dim", integer(&C::latent_dim)),
      named("hidden", integer(&C::hidden)),
      named("window_length", integer(&C::window_length)),
      named("batch", integer(&C::batch)),
      named("lr", num(&C::lr)),
      named("steps", integer(&C::steps)),
      named("classifier.batch", integer(&C::classifier_batch)),
      named("classifier.lr", num(&C::classifier_lr)),
      named("classifier.max_epochs", integer(&C::classifier_max_epochs)),
      named("classifier.patience", integer(&C::classifier_patience)),
      {"fractions", [](const C& c) { return detail::format_double_list(c.fractions); },
       [](C& c, const std::string& v) { c.fractions = detail::parse_double_list(v); }},
      named("features", str(&C::features)),
      named("treba", flag(&C::treba)),
      named("selections", integer(&C::selections)),
      named("trainings", integer(&C::trainings)),
  };
  return list;
}

// ---------------------------------------------------------------------------
// Data

inline Dataset load_or_generate(const ExperimentConfig& cfg) {
  if (cfg.data.empty()) return generate_synthetic_dataset(cfg.synthetic);
  return ingest_pose_file(cfg.data, {cfg.image_width, cfg.image_height});
}

inline DatasetSplits prepare_splits(const ExperimentConfig& cfg) {
  const Dataset raw = load_or_generate(cfg);
  return split_by_source(normalize_dataset(raw), cfg.train_fraction, cfg.val_fraction);
}

/// Fits discretizers on `train`, trains approximators when asked, and trains the embedding.
inline EmbeddingModel train_experiment_embedding(const ExperimentConfig& cfg, const LossConfig& loss, const Dataset& train,
                                                 TrainingHistory* history = nullptr) {
  ProgramSet ps = ProgramSet::parse(cfg.programs);
  fit_program_set(ps, train, cfg.window_length);
  EmbeddingModel model = EmbeddingModel::create(cfg.tvae_config(train.layout().state_dim()), ps, cfg.seed);
  std::vector<ProgramApproximator> approximators;
  if (loss.consistency && loss.consistency_mode == ConsistencyMode::approximator) {
    for (const auto& p : ps.programs()) {
      ApproximatorConfig ac;
      ac.window_length = cfg.window_length;
      ac.seed = derive_seed(cfg.seed, {seed_tag("approximator"), seed_tag(p.id)});
      approximators.push_back(train_program_approximator(p, train, ac));
      info("approximator " + p.id + ": validation error " + detail::format_double(approximators.back().validation_error()));
    }
  }
  TrainConfig tc;
  tc.steps = cfg.steps;
  tc.batch = cfg.batch;
  tc.lr = cfg.lr;
  tc.seed = cfg.seed;
  auto h = train_embedding(model, train, loss, tc, approximators.empty() ? nullptr : &approximators);
  if (history) *history = std::move(h);
  return model;
}

inline std::string loss_history_csv(const TrainingHistory& h, const std::string& header = "") {
  using detail::format_double;
  std::ostringstream os;
  os << header;
  os << "step,total,tvae,reconstruction,kl,consistency,decoding,contrastive,unsup_contrastive\n";
  for (std::size_t i = 0; i < h.steps.size(); ++i) {
    const auto& s = h.steps[i];
    os << i << ',' << format_double(s.total) << ',' << format_double(s.tvae) << ',' << format_double(s.reconstruction)
       << ',' << format_double(s.kl) << ',' << format_double(s.consistency) << ',' << format_double(s.decoding) << ','
       << format_double(s.contrastive) << ',' << format_double(s.unsup_contrastive) << '\n';
  }
  return os.str();
}

/// Series evaluated by the sweep: the base features alone, and with the embedding appended.
inline std::vector<std::pair<std::string, bool>> feature_series(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, bool>> out;
  const BaseFeatures base = parse_base_features(cfg.features);
  if (base != BaseFeatures::none) out.push_back({cfg.features, false});
  if (cfg.treba) out.push_back({base == BaseFeatures::none ? std::string("treba") : cfg.features + "+treba", true});
  return out;
}

inline std::vector<FeatureSplits> build_feature_splits(const ExperimentConfig& cfg, const DatasetSplits& s,
                                                       const TvaeModel* model) {
  const BaseFeatures base = parse_base_features(cfg.features);
  std::vector<FeatureSplits> out;
  for (const auto& [name, with_model] : feature_series(cfg)) {
    const TvaeModel* m = with_model ? model : nullptr;
    if (with_model && !m) throw ConfigError("series '" + name + "' needs a trained embedding");
    out.push_back({name, extract_features(m, s.train, base, cfg.window_length),
                   extract_features(m, s.val, base, cfg.window_length),
                   extract_features(m, s.test, base, cfg.window_length)});
  }
  return out;
}

inline SweepConfig sweep_config(const ExperimentConfig& cfg) {
  SweepConfig sc;
  sc.fractions = cfg.fractions;
  sc.selections = cfg.selections;
  sc.trainings = cfg.trainings;
  sc.classifier = cfg.classifier_config();
  sc.seed = derive_seed(cfg.seed, {seed_tag("sweep")});
  return sc;
}

// ---------------------------------------------------------------------------
// Reports

struct ReportFiles {
  std::filesystem::path runs;
  std::filesystem::path cells;
  std::filesystem::path plot;
};

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes sweep_runs.csv, sweep_cells.csv and plot_data.csv into `dir`.
inline ReportFiles emit_report(const SweepResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ReportFiles f{dir / "sweep_runs.csv", dir / "sweep_cells.csv", dir / "plot_data.csv"};
  write_text_file(f.runs, sweep_runs_csv(r));
  write_text_file(f.cells, sweep_cells_csv(r));
  write_text_file(f.plot, sweep_plot_csv(r));
  return f;
}

// ---------------------------------------------------------------------------
// Staged pipeline

struct ExperimentOutcome {
  std::filesystem::path dir;
  std::string config_hash;
  std::vector<std::string> stages_run;
  std::vector<std::string> stages_skipped;
  SweepResult sweep;
  ReportFiles report;
};

class StageRunner {
 public:
  StageRunner(std::filesystem::path dir, std::string hash) : dir_(std::move(dir)), hash_(std::move(hash)) {}

  bool done(const std::string& stage) const {
    const auto marker = dir_ / "stages" / (stage + ".done");
    return std::filesystem::exists(marker) && read_text_file(marker) == hash_ + "\n";
  }

  /// Runs `body` unless the stage is already complete; records failures as JSON.
  void run(const std::string& stage, ExperimentOutcome& out, const std::function<void()>& body,
           const std::function<void()>& resume = {}) {
    if (done(stage)) {
      out.stages_skipped.push_back(stage);
      if (resume) resume();
      log("stage " + stage + ": skipped (complete)");
      return;
    }
    const auto start = std::chrono::steady_clock::now();
    log("stage " + stage + ": start");
    try {
      body();
    } catch (const std::exception& e) {
      nlohmann::json j;
      j["stage"] = stage;
      j["error"] = e.what();
      j["config_hash"] = hash_;
      j["version"] = kVersion;
      j["completed_stages"] = out.stages_run;
      write_text_file(dir_ / "failure.json", j.dump(2) + "\n");
      log("stage " + stage + ": failed: " + e.what());
      throw;
    }
    std::filesystem::create_directories(dir_ / "stages");
    write_text_file(dir_ / "stages" / (stage + ".done"), hash_ + "\n");
    out.stages_run.push_back(stage);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log("stage " + stage + ": done in " + detail::format_double(std::round(secs * 10.0) / 10.0) + " s");
  }

  void log(const std::string& message) const {
    std::ofstream out(dir_ / "log.txt", std::ios::app);
    out << message << '\n';
    info(message);
  }

 private:
  std::filesystem::path dir_;
  std::string hash_;
};

/// Runs (or resumes) the whole pipeline into `dir`.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  ExperimentOutcome out;
  out.dir = dir;
  out.config_hash = cfg.hash();
  fs::create_directories(dir);
  const auto config_path = dir / "config.txt";
  const std::string config_text = "# config_hash=" + out.config_hash + " version=" + kVersion + "\n" + cfg.serialize();
  if (fs::exists(config_path)) {
    if (read_text_file(config_path) != config_text) {
      throw ConfigError("'" + dir.string() + "' holds a different experiment; use a fresh directory");
    }
  } else {
    write_text_file(config_path, config_text);
  }
  fs::remove(dir / "failure.json");
  const std::string header = artifact_header(out.config_hash, kVersion);
  StageRunner runner(dir, out.config_hash);

  DatasetSplits splits;
  runner.run(
      "data", out,
      [&] {
        splits = prepare_splits(cfg);
        fs::create_directories(dir / "data");
        save_pose_cache(dir / "data" / "train.trj", splits.train);
        save_pose_cache(dir / "data" / "val.trj", splits.val);
        save_pose_cache(dir / "data" / "test.trj", splits.test);
      },
      [&] {
        splits.train = load_pose_cache(dir / "data" / "train.trj");
        splits.val = load_pose_cache(dir / "data" / "val.trj");
        splits.test = load_pose_cache(dir / "data" / "test.trj");
      });

  std::optional<EmbeddingModel> model;
  if (cfg.treba) {
    runner.run(
        "embedding", out,
        [&] {
          TrainingHistory h;
          model = train_experiment_embedding(cfg, cfg.loss_config(), splits.train, &h);
          Checkpoint ck = model->to_checkpoint();
          ck.meta["config_hash"] = out.config_hash;
          ck.meta["version"] = kVersion;
          save_checkpoint(dir / "embedding.ckpt", ck);
          write_text_file(dir / "loss_history.csv", loss_history_csv(h, header));
        },
        [&] { model = EmbeddingModel::load(dir / "embedding.ckpt"); });
  }

  std::vector<FeatureSplits> sets;
  const auto series = feature_series(cfg);
  runner.run(
      "features", out,
      [&] {
        sets = build_feature_splits(cfg, splits, model ? &model->tvae : nullptr);
        fs::create_directories(dir / "features");
        const std::string comment = "config_hash=" + out.config_hash + " version=" + kVersion;
        for (const auto& s : sets) {
          save_feature_table(dir / "features" / (s.name + ".train.csv"), s.train, comment);
          save_feature_table(dir / "features" / (s.name + ".val.csv"), s.val, comment);
          save_feature_table(dir / "features" / (s.name + ".test.csv"), s.test, comment);
        }
      },
      [&] {
        for (const auto& [name, with_model] : series) {
          sets.push_back({name, load_feature_table(dir / "features" / (name + ".train.csv")),
                          load_feature_table(dir / "features" / (name + ".val.csv")),
                          load_feature_table(dir / "features" / (name + ".test.csv"))});
        }
      });

  runner.run(
      "sweep", out,
      [&] {
        out.sweep = run_fraction_sweep(splits.train, sets, sweep_config(cfg));
        out.sweep.config_hash = out.config_hash;
        out.sweep.version = kVersion;
        write_text_file(dir / "sweep_runs.csv", sweep_runs_csv(out.sweep));
      },
      [&] { out.sweep = parse_sweep_runs_csv(read_text_file(dir / "sweep_runs.csv")); });

  runner.run(
      "report", out, [&] { out.report = emit_report(out.sweep, dir); },
      [&] { out.report = {dir / "sweep_runs.csv", dir / "sweep_cells.csv", dir / "plot_data.csv"}; });
  return out;
}

// ---------------------------------------------------------------------------
// Loss ablation

struct AblationRow {
  std::string label;
  std::string losses;
};

/// Decoder-loss combinations swept by ablate_losses, in output order.
inline const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows = {
      {"TVAE", "tvae"},
      {"TVAE+Unsup. Contrast", "tvae,unsup_contrastive"},
      {"TVAE+Consist", "tvae,consistency"},
      {"TVAE+Contrast", "tvae,contrastive"},
      {"TVAE+Decode", "tvae,decoding"},
      {"TVAE+Contrast+Consist", "tvae,contrastive,consistency"},
      {"TVAE+Decode+Consist", "tvae,decoding,consistency"},
      {"TVAE+Contrast+Decode", "tvae,contrastive,decoding"},
      {"TVAE+Contrast+Decode+Consist", "tvae,contrastive,decoding,consistency"},
      {"Unsup. Contrast", "unsup_contrastive"},
  };
  return rows;
}

struct AblationResult {
  std::string config_hash;
  std::string csv;
  std::vector<std::string> labels;  ///< completed rows
};

/// Trains one embedding per ablation row (default weights: 1 for tvae, consistency and
/// decoding, 10 for contrastive terms) and sweeps `<features>+treba` for each.
/// The grid CSV also carries the base features alone as a "Baseline" row.
inline AblationResult ablate_losses(const ExperimentConfig& base_cfg, const std::filesystem::path& dir,
                                    const std::function<void(const std::string&)>& progress = {}) {
  base_cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  AblationResult result;
  result.config_hash = base_cfg.hash();
  const DatasetSplits splits = prepare_splits(base_cfg);
  using detail::format_double;
  std::ostringstream csv;
  csv << artifact_header(result.config_hash, kVersion);
  csv << "label,losses,augment,fraction,feature_set,runs,map_mean,map_std,error_mean,final_loss\n";

  const BaseFeatures base = parse_base_features(base_cfg.features);
  const SweepConfig sc = sweep_config(base_cfg);
  auto emit = [&](const std::string& label, const std::string& losses, bool augment, const SweepResult& r,
                  double final_loss) {
    for (const auto& c : r.cells()) {
      csv << '"' << label << '"' << ",\"" << losses << "\"," << detail::format_bool(augment) << ','
          << format_double(c.fraction) << ',' << c.feature_set << ',' << c.runs << ',' << format_double(c.map_mean) << ','
          << format_double(c.map_std) << ',' << format_double(c.error_mean()) << ','
          << (std::isnan(final_loss) ? std::string("nan") : format_double(final_loss)) << '\n';
    }
  };
  if (base != BaseFeatures::none) {
    std::vector<FeatureSplits> sets{{base_cfg.features, extract_features(nullptr, splits.train, base, base_cfg.window_length),
                                     extract_features(nullptr, splits.val, base, base_cfg.window_length),
                                     extract_features(nullptr, splits.test, base, base_cfg.window_length)}};
    emit("Baseline", "none", false, run_fraction_sweep(splits.train, sets, sc), std::nan(""));
    result.labels.push_back("Baseline");
  }
  for (const auto& row : ablation_rows()) {
    ExperimentConfig cfg = base_cfg;
    cfg.losses = row.losses;
    cfg.weights = "";
    LossConfig loss = cfg.loss_config();
    loss.temperature = base_cfg.temperature;
    TrainingHistory h;
    const EmbeddingModel model = train_experiment_embedding(cfg, loss, splits.train, &h);
    const std::string name = base == BaseFeatures::none ? "treba" : base_cfg.features + "+treba";
    std::vector<FeatureSplits> sets{{name, extract_features(&model.tvae, splits.train, base, cfg.window_length),
                                     extract_features(&model.tvae, splits.val, base, cfg.window_length),
                                     extract_features(&model.tvae, splits.test, base, cfg.window_length)}};
    const SweepResult r = run_fraction_sweep(splits.train, sets, sc);
    std::vector<double> totals;
    for (const auto& s : h.steps) totals.push_back(s.total);
    const auto avg = moving_average(totals, std::min<std::size_t>(100, totals.size()));
    emit(row.label, row.losses, loss.augment, r, avg.empty() ? std::nan("") : avg.back());
    result.labels.push_back(row.label);
    if (progress) progress(row.label);
  }
  result.csv = csv.str();
  write_text_file(dir / "ablation.csv", result.csv);
  return result;
}

}  // namespace trj
