// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers to run a subset.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "contrastive_oracle.hpp"
#include "test_util.hpp"

using namespace trj;
using namespace trj::testing;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTolerance = 1e-4;
constexpr double kGeometricTol = 1e-9;
constexpr double kContrastiveTol = 1e-6;
constexpr double kMapTol = 1e-9;
constexpr double kHandAp = 0.8333333333333333;  // (1 + 2/3) / 2
constexpr double kHandApTol = 1e-12;
constexpr int kPreservationWindows = 1000;
constexpr int kOracleBatches = 100;
constexpr int kTrainingSteps = 2000;
constexpr std::size_t kMovingWindow = 100;
constexpr int kTrendSteps = 500;
constexpr double kTrendFraction = 0.10;
constexpr int kAblationSteps = 200;
constexpr double kGradBudgetSec = 60.0;
constexpr double kTrainingBudgetSec = 15 * 60.0;
constexpr double kTrendBudgetSec = 60 * 60.0;
constexpr double kAblationBudgetSec = 30 * 60.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 6) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Matrix<double> gaussian(int r, int c, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

struct Silence {
  LogSink w = warning_sink(), i = info_sink();
  Silence() { warning_sink() = info_sink() = nullptr; }
  ~Silence() {
    warning_sink() = w;
    info_sink() = i;
  }
};

// ---------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const int T = 4, latent = 4, hidden = 8, B = 4;
  TvaeConfig c;
  c.state_dim = kMouseLayout.state_dim();
  c.latent_dim = latent;
  c.hidden = hidden;
  c.window_length = T;
  ProgramSet ps = ProgramSet::parse("all_mouse");
  fit_program_set(ps, small_synthetic(3, 300));

  Rng rng(2024);
  ParameterStore<double> params;
  const auto tv = init_tvae_params<double>(c, rng);
  const auto heads = init_task_heads<double>({latent, hidden, ps.size(), hidden}, rng);
  for (const auto* store : {&tv, &heads}) {
    for (const auto& n : store->names()) {
      params.add(n, uniform_init<double>(store->get(n).rows(), store->get(n).cols(), 4, rng));
    }
  }
  std::vector<Window> windows, augmented;
  for (int i = 0; i < B; ++i) windows.push_back(random_window(rng, T));
  for (const auto& w : windows) augmented.push_back(apply_augmentation(sample_augmentation(rng, Domain::mouse), w));
  const auto batch = make_loss_batch<double>(ps, windows);
  const auto aug_batch = make_loss_batch<double>(ps, windows, augmented);
  const Matrix<double> noise_attrs = gaussian(ps.size(), B, rng);

  std::vector<std::pair<std::string, Fragment<double>>> cases;
  cases.emplace_back("elbo", [&](Binding<double>& b) {
    Rng eps(99);
    const auto enc = encode(b, c, batch.states);
    return tvae_terms(b, c, batch.states, enc, sample_latent(enc, eps)).total;
  });
  cases.emplace_back("consistency", [&](Binding<double>& b) {
    const auto enc = encode(b, c, batch.states);
    return consistency_loss(b, c, ps, kMouseLayout, enc.mu, b.tape().constant(batch.states.front()), batch.attributes,
                            T / 2, ConsistencyMode::direct);
  });
  cases.emplace_back("decoding", [&](Binding<double>& b) {
    const auto enc = encode(b, c, batch.states);
    return decoding_loss(ps, decode_head(b, enc.mu), noise_attrs);
  });
  cases.emplace_back("contrastive", [&](Binding<double>& b) {
    const auto enc = encode(b, c, batch.states);
    return contrastive_loss(contrastive_head(b, enc.mu), {{0, 1, 0, 1}, {2, 2, 1, 0}}, 0.07);
  });
  cases.emplace_back("total", [&](Binding<double>& b) {
    LossConfig l = LossConfig::parse("tvae,consistency,decoding,contrastive,unsup_contrastive");
    l.augment = true;
    Rng eps(7);
    return total_loss(b, b, c, ps, l, aug_batch, eps).total;
  });

  bool ok = true;
  std::string detail;
  GradientCheckOptions opt;
  opt.tolerance = kGradTolerance;
  for (const auto& [name, f] : cases) {
    const auto report = gradient_check(f, params, opt);
    ok = ok && report.passed;
    detail += name + "=" + fmt(report.max_relative_error(), 3) + " ";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < kGradBudgetSec;
  return {ok, detail + "(max rel err, tol " + fmt(kGradTolerance) + "; " + fmt(secs, 3) + " s)"};
}

// ---------------------------------------------------------------------------

Window random_fly_window(Rng& rng, int length = 21) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  struct Fly {
    double x, y, heading, major, minor, lw, rw;
  };
  std::vector<Fly> flies(2);
  for (auto& f : flies) {
    f = {0.3 + 0.4 * u(rng), 0.3 + 0.4 * u(rng), 2 * std::numbers::pi * u(rng), 0.03 + 0.01 * u(rng),
         0.01 + 0.004 * u(rng), 0.2 + 0.6 * u(rng), 0.2 + 0.6 * u(rng)};
  }
  std::vector<FrameState> frames;
  for (int t = 0; t < length; ++t) {
    std::vector<std::vector<Keypoint>> agents;
    for (auto& f : flies) {
      f.heading += 0.05 * g(rng);
      f.x += 0.004 * std::cos(f.heading) + 0.001 * g(rng);
      f.y += 0.004 * std::sin(f.heading) + 0.001 * g(rng);
      f.lw = std::clamp(f.lw + 0.05 * g(rng), 0.05, 1.4);
      f.rw = std::clamp(f.rw + 0.05 * g(rng), 0.05, 1.4);
      FlyPose p;
      p.centroid = {f.x, f.y};
      p.orientation = f.heading;
      p.major_axis = f.major;
      p.minor_axis = f.minor;
      const double back = f.heading + std::numbers::pi, wing = 0.6 * f.major;
      p.left_wing = {f.x + wing * std::cos(back - f.lw), f.y + wing * std::sin(back - f.lw)};
      p.right_wing = {f.x + wing * std::cos(back + f.rw), f.y + wing * std::sin(back + f.rw)};
      agents.push_back(encode_fly_pose(p));
    }
    frames.push_back(FrameState::from_agents(agents));
  }
  return window_of(std::move(frames));
}

Outcome preservation() {
  Rng rng(31337);
  const ProgramSet mouse = ProgramSet::parse("all_mouse"), fly = ProgramSet::parse("all_fly");
  const AugmentationKind geometric[] = {AugmentationKind::rotation, AugmentationKind::reflection,
                                        AugmentationKind::translation};
  double worst = 0.0;
  int noise_violations = 0, geometric_checks = 0, noise_checks = 0;
  for (int i = 0; i < kPreservationWindows; ++i) {
    const bool is_mouse = i % 2 == 0;
    const Window w = is_mouse ? random_window(rng) : random_fly_window(rng);
    const ProgramSet& ps = is_mouse ? mouse : fly;
    const Domain domain = is_mouse ? Domain::mouse : Domain::fly;
    for (AugmentationKind k : geometric) {
      AugmentationPolicy only;
      only.kinds = {k};
      const auto report = check_attribute_preserving(ps, w, sample_augmentation(rng, domain, only));
      worst = std::max(worst, report.max_deviation());
      geometric_checks += ps.size();
    }
    if (is_mouse) {
      AugmentationPolicy noise;
      noise.kinds = {AugmentationKind::keypoint_noise};
      const auto report = check_attribute_preserving(ps, w, sample_augmentation(rng, domain, noise));
      for (const auto& p : report.programs) noise_violations += p.deviation > p.bound;
      noise_checks += ps.size();
    }
  }
  const bool ok = worst <= kGeometricTol && noise_violations == 0;
  return {ok, "geometric max dev " + fmt(worst, 3) + " over " + std::to_string(geometric_checks) +
                  " checks (tol " + fmt(kGeometricTol) + "); noise bound violations " +
                  std::to_string(noise_violations) + "/" + std::to_string(noise_checks)};
}

// ---------------------------------------------------------------------------

Outcome contrastive_oracle() {
  Rng rng(4242);
  std::uniform_int_distribution<int> batch(2, 16), programs(1, 5), dim(2, 8);
  double worst = 0.0;
  int zero_pos_anchors = 0, augmented_paths = 0;
  for (int trial = 0; trial < kOracleBatches; ++trial) {
    const int B = batch(rng), M = programs(rng);
    const bool twin = trial % 4 == 3;  // augmented batch: 2B columns
    const int N = twin ? 2 * B : B;
    const Matrix<double> g = gaussian(dim(rng), N, rng);
    std::vector<std::vector<int>> classes(M, std::vector<int>(N));
    std::uniform_int_distribution<int> cls(0, std::max(1, N / 2));
    for (auto& row : classes) {
      for (int& v : row) v = cls(rng);
    }
    if (twin) {
      for (int i = 0; i < N; ++i) classes.back()[i] = i % B;
      ++augmented_paths;
    }
    for (const auto& row : classes) {
      for (int i = 0; i < N; ++i) zero_pos_anchors += std::count(row.begin(), row.end(), row[i]) == 1;
    }
    Tape<double> t;
    const double fast = contrastive_loss(t.constant(g), classes, 0.07).scalar();
    worst = std::max(worst, std::abs(fast - naive_contrastive(g, classes, 0.07)));
  }

  // The full objective on an augmented batch against the oracle on the same projections.
  ProgramSet ps = ProgramSet::parse("all_mouse");
  fit_program_set(ps, small_synthetic(3, 300));
  TvaeConfig c;
  c.state_dim = kMouseLayout.state_dim();
  c.latent_dim = 6;
  c.hidden = 12;
  Rng init(5);
  const auto tv = init_tvae_params<double>(c, init);
  const auto heads = init_task_heads<double>({6, 12, ps.size(), 12}, init);
  std::vector<Window> windows, augmented;
  for (int i = 0; i < 6; ++i) windows.push_back(random_window(init));
  for (const auto& w : windows) augmented.push_back(apply_augmentation(sample_augmentation(init, Domain::mouse), w));
  const auto lb = make_loss_batch<double>(ps, windows, augmented);
  LossConfig l = LossConfig::parse("contrastive,unsup_contrastive");
  l.augment = true;
  Tape<double> t;
  Binding<double> tb(t, tv), hb(t, heads);
  Rng eps(1);
  const auto parts = total_loss(tb, hb, c, ps, l, lb, eps).parts;
  const Matrix<double> proj = contrastive_head(hb, encode(tb, c, lb.states).mu).value();
  std::vector<int> pairs(12);
  for (int i = 0; i < 12; ++i) pairs[i] = i % 6;
  worst = std::max(worst, std::abs(parts.contrastive - naive_contrastive(proj, lb.classes, 0.07) / 6.0));
  worst = std::max(worst, std::abs(parts.unsup_contrastive - naive_contrastive(proj, {pairs}, 0.07) / 6.0));
  ++augmented_paths;

  const bool ok = worst <= kContrastiveTol && zero_pos_anchors > 0;
  return {ok, "max abs diff " + fmt(worst, 3) + " over " + std::to_string(kOracleBatches) + " batches + objective (tol " +
                  fmt(kContrastiveTol) + "); zero-positive anchors " + std::to_string(zero_pos_anchors) +
                  ", augmented batches " + std::to_string(augmented_paths)};
}

// ---------------------------------------------------------------------------

double brute_force_ap(const std::vector<double>& s, const std::vector<int>& pos) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!pos[i]) continue;
    ++n;
    int above = 0, tp = 0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (s[k] >= s[i]) {
        ++above;
        tp += pos[k];
      }
    }
    sum += static_cast<double>(tp) / above;
  }
  return sum / n;
}

Outcome map_oracle() {
  const double hand = average_precision(std::vector<double>{0.9, 0.8, 0.7}, std::vector<int>{1, 0, 1});
  Rng rng(777);
  std::uniform_int_distribution<int> rows(20, 400), classes(2, 6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < kOracleBatches; ++trial) {
    const int n = rows(rng), C = classes(rng);
    const bool ties = trial % 3 == 0;
    Eigen::MatrixXd scores(n, C);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = i < C ? i : static_cast<int>(u(rng) * C);
      for (int c = 0; c < C; ++c) scores(i, c) = ties ? std::round(u(rng) * 10.0) / 10.0 : u(rng);
    }
    double sum = 0.0;
    for (int c = 0; c < C; ++c) {
      std::vector<double> s(n);
      std::vector<int> p(n);
      for (int i = 0; i < n; ++i) {
        s[i] = scores(i, c);
        p[i] = labels[i] == c;
      }
      sum += brute_force_ap(s, p);
    }
    worst = std::max(worst, std::abs(mean_average_precision(scores, labels).map - sum / C));
  }
  const bool ok = std::abs(hand - kHandAp) <= kHandApTol && worst <= kMapTol;
  return {ok, "hand case " + fmt(hand, 10) + "; max |MAP - brute force| " + fmt(worst, 3) + " over " +
                  std::to_string(kOracleBatches) + " sets (tol " + fmt(kMapTol) + ")"};
}

// ---------------------------------------------------------------------------

Outcome training_sanity() {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg;  // default synthetic data and embedding hyperparameters
  cfg.losses = "tvae";
  cfg.steps = kTrainingSteps;
  const DatasetSplits splits = prepare_splits(cfg);
  TrainingHistory h;
  train_experiment_embedding(cfg, cfg.loss_config(), splits.train, &h);
  std::vector<double> elbo;
  for (const auto& s : h.steps) elbo.push_back(s.tvae);
  const auto ma = moving_average(elbo, kMovingWindow);
  // Moving average at steps 100, 500, 1000, 1500, 2000.
  std::vector<double> marks;
  for (std::size_t step : {kMovingWindow, std::size_t{500}, std::size_t{1000}, std::size_t{1500}, std::size_t{2000}}) {
    marks.push_back(ma[step - kMovingWindow]);
  }
  bool ok = ma.size() == kTrainingSteps - kMovingWindow + 1;
  for (std::size_t i = 1; i < marks.size(); ++i) ok = ok && marks[i] < marks[i - 1];
  const double secs = seconds_since(t0);
  ok = ok && secs <= kTrainingBudgetSec;
  std::string detail = "ELBO moving average at 100/500/1000/1500/2000:";
  for (double m : marks) detail += " " + fmt(m, 5);
  return {ok, detail + " (" + fmt(secs, 4) + " s)"};
}

// ---------------------------------------------------------------------------

Outcome data_efficiency() {
  const auto t0 = std::chrono::steady_clock::now();
  Silence quiet;
  ExperimentConfig cfg;
  cfg.losses = "tvae,contrastive,consistency";
  cfg.weights = "1,10,1";
  cfg.temperature = 0.07;
  cfg.steps = kTrendSteps;
  cfg.features = "keypoints";
  cfg.fractions = {kTrendFraction};
  cfg.selections = 3;
  cfg.trainings = 3;
  const DatasetSplits splits = prepare_splits(cfg);
  const EmbeddingModel model = train_experiment_embedding(cfg, cfg.loss_config(), splits.train);
  const auto sets = build_feature_splits(cfg, splits, &model.tvae);
  const SweepResult r = run_fraction_sweep(splits.train, sets, sweep_config(cfg));
  const auto base = r.cell(kTrendFraction, "keypoints"), treba = r.cell(kTrendFraction, "keypoints+treba");
  if (!base || !treba) return {false, "missing sweep cells"};
  const double pooled = std::sqrt(0.5 * (base->map_std * base->map_std + treba->map_std * treba->map_std));
  const double margin = treba->map_mean - base->map_mean;
  const double secs = seconds_since(t0);
  const bool ok = base->runs == 9 && treba->runs == 9 && margin > pooled && secs <= kTrendBudgetSec;
  return {ok, "MAP keypoints " + fmt(base->map_mean, 4) + "+-" + fmt(base->map_std, 3) + ", keypoints+treba " +
                  fmt(treba->map_mean, 4) + "+-" + fmt(treba->map_std, 3) + "; margin " + fmt(margin, 3) +
                  " vs pooled std " + fmt(pooled, 3) + " (" + fmt(secs, 4) + " s)"};
}

// ---------------------------------------------------------------------------

Outcome ablation_grid(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  Silence quiet;
  ExperimentConfig cfg;
  cfg.steps = kAblationSteps;
  cfg.fractions = {kTrendFraction};
  cfg.selections = 1;
  cfg.trainings = 1;
  const fs::path dir = work / "ablation";
  fs::remove_all(dir);
  const AblationResult res = ablate_losses(cfg, dir);
  const double secs = seconds_since(t0);

  // Re-read the emitted grid and check every row.
  std::istringstream in(read_text_file(dir / "ablation.csv"));
  std::string line;
  std::vector<std::string> labels;
  bool fields_ok = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("label,", 0) == 0) continue;
    // "label","losses",augment,fraction,feature_set,runs,map_mean,map_std,error_mean,final_loss
    const auto q1 = line.find('"', 1), q2 = line.find('"', q1 + 1), q3 = line.find('"', q2 + 1);
    labels.push_back(line.substr(1, q1 - 1));
    std::vector<std::string> rest;
    std::string cell;
    std::istringstream ls(line.substr(q3 + 2));
    while (std::getline(ls, cell, ',')) rest.push_back(cell);
    if (rest.size() != 8) {
      fields_ok = false;
      continue;
    }
    const double map = std::stod(rest[4]);
    fields_ok = fields_ok && map >= 0.0 && map <= 1.0 && std::stoi(rest[3]) == 1;
    fields_ok = fields_ok && (labels.back() == "Baseline" || std::isfinite(std::stod(rest[7])));
  }
  bool rows_ok = labels.size() == ablation_rows().size() + 1 && labels.front() == "Baseline";
  for (const auto& row : ablation_rows()) rows_ok = rows_ok && std::count(labels.begin(), labels.end(), row.label) == 1;
  const bool ok = rows_ok && fields_ok && res.labels.size() == labels.size() && secs <= kAblationBudgetSec;
  return {ok, std::to_string(labels.size()) + " grid rows (" + std::to_string(ablation_rows().size()) +
                  " loss combinations + baseline), fields " + (fields_ok ? "valid" : "INVALID") + " (" + fmt(secs, 4) +
                  " s at " + std::to_string(kAblationSteps) + " steps)"};
}

// ---------------------------------------------------------------------------

Outcome determinism(const fs::path& work) {
  Silence quiet;
  ExperimentConfig cfg;
  cfg.synthetic.sequences = 6;
  cfg.synthetic.frames = 300;
  cfg.hidden = 16;
  cfg.latent_dim = 8;
  cfg.batch = 16;
  cfg.steps = 20;
  cfg.fractions = {0.25, 1.0};
  cfg.selections = 2;
  cfg.trainings = 2;
  cfg.classifier_max_epochs = 20;
  const fs::path a = work / "det_a", b = work / "det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  run_experiment(cfg, a);
  run_experiment(cfg, b);
  int identical = 0;
  const char* files[] = {"sweep_runs.csv", "sweep_cells.csv", "plot_data.csv"};
  for (const char* f : files) identical += read_text_file(a / f) == read_text_file(b / f);
  const bool ok = identical == 3;
  return {ok, std::to_string(identical) + "/3 sweep CSVs byte-identical across two runs (config " + cfg.hash() + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const fs::path work = fs::temp_directory_path() / "trj_acceptance";
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"attribute preservation", preservation},
      {"contrastive oracle", contrastive_oracle},
      {"MAP oracle", map_oracle},
      {"training sanity", training_sanity},
      {"data-efficiency trend", data_efficiency},
      {"ablation grid", [&] { return ablation_grid(work); }},
      {"determinism", [&] { return determinism(work); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d %-24s %s  %s\n", id, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
