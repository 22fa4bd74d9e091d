// jobvs: joint brain and vessel segmentation command-line tool.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "jobvs/config_json.hpp"
#include "jobvs/pipeline.hpp"
#include "jobvs/preprocess.hpp"
#include "jobvs/render.hpp"
#include "jobvs/volume_io.hpp"

namespace fs = std::filesystem;
using namespace jobvs;

namespace {

int env_workers() {
  const char* s = std::getenv("JOBVS_NUM_WORKERS");
  if (!s || !*s) return 1;
  char* end = nullptr;
  const long v = std::strtol(s, &end, 10);
  if (*end != '\0' || v < 1) throw UsageError("JOBVS_NUM_WORKERS must be a positive integer");
  return static_cast<int>(v);
}

std::vector<int> resolve_folds(const std::vector<int>& requested, int n_folds) {
  if (requested.empty()) {
    std::vector<int> all;
    for (int f = 0; f < n_folds; ++f) all.push_back(f);
    return all;
  }
  for (int f : requested)
    if (f < 0 || f >= n_folds) throw UsageError("fold " + std::to_string(f) + " out of range");
  return requested;
}

fs::path fold_dir(const fs::path& root, int fold) { return root / ("fold_" + std::to_string(fold)); }

// ---------------------------------------------------------------- phantom

struct PhantomArgs {
  std::size_t n = 10;
  std::string out;
  std::string config;
  PhantomConfig cfg;
};

void add_phantom(CLI::App& app, PhantomArgs& a) {
  auto* c = app.add_subcommand("phantom", "Generate a synthetic phantom cohort");
  c->add_option("--n", a.n, "Number of subjects")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--out", a.out, "Output directory")->required();
  c->add_option("--config", a.config, "PhantomConfig JSON (flags override it)");
  c->add_option("--seed", a.cfg.seed, "Cohort seed")->capture_default_str();
  c->add_option("--size", a.cfg.size, "Grid edge length in voxels")->capture_default_str();
  c->add_option("--spacing", a.cfg.spacing, "Isotropic voxel size in mm")->capture_default_str();
  c->add_option("--noise-std", a.cfg.noise_std, "Gaussian noise std")->capture_default_str();
}

int run_phantom(CLI::App& app, PhantomArgs& a) {
  auto* c = app.get_subcommand("phantom");
  PhantomConfig cfg;
  if (!a.config.empty()) cfg = read_json_file(a.config).get<PhantomConfig>();
  if (c->count("--seed")) cfg.seed = a.cfg.seed;
  if (c->count("--size")) cfg.size = a.cfg.size;
  if (c->count("--spacing")) cfg.spacing = a.cfg.spacing;
  if (c->count("--noise-std")) cfg.noise_std = a.cfg.noise_std;
  validate(cfg);
  const auto records = generate_cohort(cfg, a.n);
  write_cohort(a.out, records, &cfg);
  std::cout << "wrote " << records.size() << " subjects to " << a.out << '\n';
  return 0;
}

// ------------------------------------------------------------------ stats

struct StatsArgs {
  std::string cohort, out, config;
  int fold = -1;
};

void add_stats(CLI::App& app, StatsArgs& a) {
  auto* c = app.add_subcommand("stats", "Compute cohort statistics (CohortStats JSON)");
  c->add_option("--cohort", a.cohort, "Cohort directory")->required();
  c->add_option("--out", a.out, "Output JSON path")->required();
  c->add_option("--config", a.config, "Train config JSON (fold count and seed)");
  c->add_option("--fold", a.fold, "Restrict to the training subjects of this fold (-1: all subjects)")
      ->capture_default_str();
}

int run_stats(StatsArgs& a) {
  auto cohort = load_cohort(a.cohort);
  if (a.fold >= 0) {
    TrainConfig cfg;
    if (!a.config.empty()) cfg = read_json_file(a.config).get<TrainConfig>();
    const auto folds = make_folds(cohort_ids(cohort), cfg.n_folds, cfg.fold_seed);
    if (a.fold >= static_cast<int>(folds.size())) throw UsageError("fold out of range");
    cohort = select_records(cohort, folds[a.fold].train_ids);
  }
  const CohortStats s = compute_cohort_stats(cohort);
  write_json_file(a.out, s);
  std::cout << nlohmann::json(s).dump() << '\n';
  return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string config, cohort, outdir = "runs";
  std::vector<int> folds;
  TrainConfig cfg;
  std::string task_mode = "joint";
  std::size_t patch = 64;
  int workers = 0;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* c = app.add_subcommand("train", "Preprocess, split into folds and train (optionally with Free AT)");
  TrainConfig& t = a.cfg;
  c->add_option("--config", a.config, "TrainConfig JSON; flags override its fields");
  c->add_option("--cohort", a.cohort, "Cohort directory")->required();
  c->add_option("--outdir", a.outdir, "Run directory (fold_<k>/ is created inside)")->capture_default_str();
  c->add_option("--fold", a.folds, "Fold(s) to train (default: all)");
  c->add_option("--lr", t.lr0, "Initial learning rate")->capture_default_str();
  c->add_option("--weight-decay", t.weight_decay, "Adam L2 weight decay")->capture_default_str();
  c->add_option("--batch-size", t.batch_size, "Mini-batch size")->capture_default_str();
  c->add_option("--max-epochs", t.max_epochs, "Epoch budget")->capture_default_str();
  c->add_option("--steps-per-epoch", t.steps_per_epoch, "Mini-batches per epoch")->capture_default_str();
  c->add_option("--lr-floor", t.lr_floor, "Early stop once the scheduled rate falls below this")
      ->capture_default_str();
  c->add_option("--n-folds", t.n_folds, "Cross-validation folds")->capture_default_str();
  c->add_option("--fold-seed", t.fold_seed, "Fold shuffle seed")->capture_default_str();
  c->add_option("--alpha", t.loss.alpha, "Brain loss weight")->capture_default_str();
  c->add_option("--beta", t.loss.beta, "Vessel loss weight")->capture_default_str();
  c->add_option("--lattice-length", t.lattice.lattice_length, "Lattice length L")->capture_default_str();
  c->add_option("--n-levels", t.lattice.n_levels, "Resolution levels")->capture_default_str();
  c->add_option("--base-channels", t.lattice.base_channels, "Channels at full resolution")->capture_default_str();
  c->add_option("--patch", a.patch, "Cubic patch edge")->capture_default_str();
  c->add_option("--task-mode", a.task_mode, "joint | vessel_only | brain_only")->capture_default_str();
  c->add_flag("--at", t.at.enabled, "Free adversarial fine-tuning after the base phase");
  c->add_option("--at-eps", t.at.epsilon, "Perturbation bound in normalised intensity, 8/255")->capture_default_str();
  c->add_option("--at-replays", t.at.n_replays, "Replays per mini-batch")->capture_default_str();
  c->add_option("--at-epochs", t.at.epochs, "Fine-tuning epochs")->capture_default_str();
  c->add_option("--fg-bias", t.fg_bias, "Probability of a vessel-centred patch")->capture_default_str();
  c->add_option("--seed", t.seed, "Training seed")->capture_default_str();
  c->add_option("--workers", a.workers, "Prefetch workers (default: JOBVS_NUM_WORKERS or 1)");
}

TrainConfig resolve_train_config(CLI::App* c, const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = read_json_file(a.config).get<TrainConfig>();
  const TrainConfig& f = a.cfg;
  auto set = [&](const char* flag, auto& dst, const auto& src) {
    if (c->count(flag)) dst = src;
  };
  set("--lr", cfg.lr0, f.lr0);
  set("--weight-decay", cfg.weight_decay, f.weight_decay);
  set("--batch-size", cfg.batch_size, f.batch_size);
  set("--max-epochs", cfg.max_epochs, f.max_epochs);
  set("--steps-per-epoch", cfg.steps_per_epoch, f.steps_per_epoch);
  set("--lr-floor", cfg.lr_floor, f.lr_floor);
  set("--n-folds", cfg.n_folds, f.n_folds);
  set("--fold-seed", cfg.fold_seed, f.fold_seed);
  set("--alpha", cfg.loss.alpha, f.loss.alpha);
  set("--beta", cfg.loss.beta, f.loss.beta);
  set("--lattice-length", cfg.lattice.lattice_length, f.lattice.lattice_length);
  set("--n-levels", cfg.lattice.n_levels, f.lattice.n_levels);
  set("--base-channels", cfg.lattice.base_channels, f.lattice.base_channels);
  if (c->count("--patch")) cfg.lattice.patch_size = {a.patch, a.patch, a.patch};
  if (c->count("--task-mode")) cfg.lattice.task_mode = task_mode_from_string(a.task_mode);
  set("--at", cfg.at.enabled, f.at.enabled);
  set("--at-eps", cfg.at.epsilon, f.at.epsilon);
  set("--at-replays", cfg.at.n_replays, f.at.n_replays);
  set("--at-epochs", cfg.at.epochs, f.at.epochs);
  set("--fg-bias", cfg.fg_bias, f.fg_bias);
  set("--seed", cfg.seed, f.seed);
  validate(cfg);
  return cfg;
}

int run_train(CLI::App& app, TrainArgs& a) {
  auto* c = app.get_subcommand("train");
  const TrainConfig cfg = resolve_train_config(c, a);
  const int workers = a.workers > 0 ? a.workers : env_workers();
  const auto cohort = load_cohort(a.cohort);
  const auto folds = make_folds(cohort_ids(cohort), cfg.n_folds, cfg.fold_seed);
  fs::create_directories(a.outdir);
  write_json_file((fs::path(a.outdir) / "config.json").string(), cfg);
  for (int f : resolve_folds(a.folds, cfg.n_folds)) {
    const fs::path dir = fold_dir(a.outdir, f);
    std::cout << "fold " << f << ": " << folds[f].train_ids.size() << " train, " << folds[f].test_ids.size()
              << " test subjects\n";
    const FoldRun run = train_fold(cfg, cohort, folds[f], dir, workers);
    std::cout << "fold " << f << ": best epoch " << run.result.best_epoch << ", checksum " << std::hex
              << run.result.best.checksum() << std::dec << (run.result.early_stopped ? " (early stop)" : "")
              << ", checkpoint " << (dir / "checkpoint.ckpt").string() << '\n';
  }
  return 0;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
  std::string run = "runs", cohort, out, label = "JoB-VS";
  std::vector<int> folds;
  std::vector<std::string> modes;
  double overlap = 0.5;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* c = app.add_subcommand("eval", "Evaluate trained folds on their test subjects");
  c->add_option("--run", a.run, "Run directory written by train")->capture_default_str();
  c->add_option("--cohort", a.cohort, "Cohort directory")->required();
  c->add_option("--fold", a.folds, "Fold(s) to evaluate (default: every fold_<k> present)");
  c->add_option("--mode", a.modes, "BM and/or NBM (default: both)");
  c->add_option("--out", a.out, "Output directory (default: the run directory)");
  c->add_option("--overlap", a.overlap, "Sliding-window overlap")->capture_default_str();
  c->add_option("--label", a.label, "Row label in metrics.md")->capture_default_str();
}

int run_eval(EvalArgs& a) {
  std::vector<EvalMode> modes;
  for (const auto& m : a.modes) modes.push_back(eval_mode_from_string(m));
  if (modes.empty()) modes = {EvalMode::bm, EvalMode::nbm};
  std::vector<int> folds = a.folds;
  if (folds.empty())
    for (int f = 0; fs::exists(fold_dir(a.run, f) / "checkpoint.ckpt"); ++f) folds.push_back(f);
  if (folds.empty()) throw DataError("no fold checkpoints under " + a.run);

  const auto cohort = load_cohort(a.cohort);
  std::vector<SubjectMetrics> all;
  for (int f : folds) {
    const fs::path dir = fold_dir(a.run, f);
    const ModelParams model = load_checkpoint(dir / "checkpoint.ckpt");
    const CohortStats stats = read_json_file((dir / "stats.json").string()).get<CohortStats>();
    const auto split = read_json_file((dir / "split.json").string());
    const auto test_ids = split.at("test_ids").get<std::vector<std::string>>();
    for (const auto& rec : select_records(cohort, test_ids)) {
      const SubjectEvaluation ev = evaluate_record(model, stats, rec, f, modes, a.overlap);
      for (const auto& m : ev.metrics) {
        std::cout << "fold " << f << ' ' << m.id << ' ' << m.mode;
        if (m.vessel_ap) std::cout << " mAP " << *m.vessel_ap << " F1 " << *m.vessel_f1 << " clDice " << *m.vessel_cldice;
        if (m.brain_dsc) std::cout << " brainDSC " << *m.brain_dsc;
        std::cout << '\n';
        all.push_back(m);
      }
    }
  }
  const MetricsReport report = evaluate_cohort(all);
  const fs::path out = a.out.empty() ? fs::path(a.run) : fs::path(a.out);
  fs::create_directories(out);
  write_json_file((out / "metrics.json").string(), to_json(report));
  std::ofstream md(out / "metrics.md");
  md << to_markdown(report, a.label);
  std::cout << to_markdown(report, a.label);
  return 0;
}

// ------------------------------------------------------------------ infer

struct InferArgs {
  std::string checkpoint, image, out, stats;
  double overlap = 0.5;
  double threshold = 0.5;
};

void add_infer(CLI::App& app, InferArgs& a) {
  auto* c = app.add_subcommand("infer", "Predict vessel and brain probabilities for one volume");
  c->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  c->add_option("--image", a.image, "Input volume (.nii.gz or .raw)")->required();
  c->add_option("--out", a.out, "Output prefix")->required();
  c->add_option("--stats", a.stats, "CohortStats JSON (default: stats.json next to the checkpoint)");
  c->add_option("--overlap", a.overlap, "Sliding-window overlap")->capture_default_str();
  c->add_option("--threshold", a.threshold, "Binarisation threshold")->capture_default_str();
}

int run_infer(InferArgs& a) {
  const ModelParams model = load_checkpoint(a.checkpoint);
  const fs::path stats_path = a.stats.empty() ? fs::path(a.checkpoint).parent_path() / "stats.json" : fs::path(a.stats);
  const CohortStats stats = read_json_file(stats_path.string()).get<CohortStats>();
  const Volume img = load_volume(a.image);
  const PredictionVolume p = predict_raw(model, stats, img, a.overlap);
  if (p.vessel_prob) {
    save_volume(*p.vessel_prob, a.out + "_vessel_prob.nii.gz");
    save_volume(binarize(*p.vessel_prob, a.threshold), a.out + "_vessel_mask.nii.gz");
  }
  if (p.brain_prob) {
    save_volume(*p.brain_prob, a.out + "_brain_prob.nii.gz");
    save_volume(binarize(*p.brain_prob, a.threshold), a.out + "_brain_mask.nii.gz");
  }
  std::cout << "wrote predictions with prefix " << a.out << '\n';
  return 0;
}

// ----------------------------------------------------------------- render

struct RenderArgs {
  std::string image, mask, out;
};

void add_render(CLI::App& app, RenderArgs& a) {
  auto* c = app.add_subcommand("render", "Maximum-intensity projections with mask overlay");
  c->add_option("--image", a.image, "Volume to project")->required();
  c->add_option("--mask", a.mask, "Binary mask drawn in red");
  c->add_option("--out", a.out, "Output prefix; writes <out>_mip_{x,y,z}.png")->required();
}

int run_render(RenderArgs& a) {
  const Volume img = load_volume(a.image);
  std::optional<LabelVolume> mask;
  if (!a.mask.empty()) mask = load_label_volume(a.mask);
  for (const auto& p : render_mips(img, mask ? &*mask : nullptr, a.out)) std::cout << p.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"jobvs: joint brain and vessel segmentation"};
  app.require_subcommand(1);
  PhantomArgs phantom;
  StatsArgs stats;
  TrainArgs train_args;
  EvalArgs eval;
  InferArgs infer;
  RenderArgs render;
  add_phantom(app, phantom);
  add_stats(app, stats);
  add_train(app, train_args);
  add_eval(app, eval);
  add_infer(app, infer);
  add_render(app, render);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  try {
    if (app.got_subcommand("phantom")) return run_phantom(app, phantom);
    if (app.got_subcommand("stats")) return run_stats(stats);
    if (app.got_subcommand("train")) return run_train(app, train_args);
    if (app.got_subcommand("eval")) return run_eval(eval);
    if (app.got_subcommand("infer")) return run_infer(infer);
    if (app.got_subcommand("render")) return run_render(render);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::usage);
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::data);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return static_cast<int>(ExitCode::numerical);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::data);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::data);
  }
  return static_cast<int>(ExitCode::usage);
}
