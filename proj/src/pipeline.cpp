#include "jobvs/pipeline.hpp"

#include <fstream>
#include <set>

#include "jobvs/config_json.hpp"
#include "jobvs/preprocess.hpp"
#include "jobvs/volume_io.hpp"

namespace fs = std::filesystem;

namespace jobvs {

void write_cohort(const fs::path& dir, const std::vector<SubjectRecord>& records, const PhantomConfig* phantom) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["ids"] = cohort_ids(records);
  manifest["n"] = records.size();
  if (phantom) manifest["phantom"] = *phantom;
  for (const auto& r : records) {
    save_volume(r.image, dir / (r.id + "_image.nii.gz"));
    save_volume(r.brain, dir / (r.id + "_brain.nii.gz"));
    save_volume(r.vessel, dir / (r.id + "_vessel.nii.gz"));
  }
  write_json_file((dir / "cohort.json").string(), manifest);
}

std::vector<SubjectRecord> load_cohort(const fs::path& dir) {
  const auto manifest = read_json_file((dir / "cohort.json").string());
  std::vector<std::string> ids;
  try {
    ids = manifest.at("ids").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / "cohort.json").string() + ": " + e.what());
  }
  if (ids.empty()) throw DataError("cohort manifest lists no subjects");
  std::vector<SubjectRecord> out;
  for (const auto& id : ids) {
    SubjectRecord r;
    r.id = id;
    r.image = load_volume(dir / (id + "_image.nii.gz"));
    r.brain = load_label_volume(dir / (id + "_brain.nii.gz"));
    r.vessel = load_label_volume(dir / (id + "_vessel.nii.gz"));
    if (r.brain.shape() != r.image.shape() || r.vessel.shape() != r.image.shape())
      throw DataError(id + ": label shape does not match the image");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::string> cohort_ids(const std::vector<SubjectRecord>& records) {
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.id);
  return ids;
}

std::vector<SubjectRecord> select_records(const std::vector<SubjectRecord>& records,
                                          const std::vector<std::string>& ids) {
  std::vector<SubjectRecord> out;
  for (const auto& id : ids) {
    auto it = std::find_if(records.begin(), records.end(), [&](const SubjectRecord& r) { return r.id == id; });
    if (it == records.end()) throw DataError("subject '" + id + "' not in cohort");
    out.push_back(*it);
  }
  return out;
}

FoldRun train_fold(const TrainConfig& cfg, const std::vector<SubjectRecord>& cohort, const FoldSplit& split,
                   const fs::path& outdir, int workers) {
  validate(cfg);
  {
    std::set<std::string> train(split.train_ids.begin(), split.train_ids.end());
    for (const auto& id : split.test_ids)
      if (train.count(id)) throw DataError("subject '" + id + "' is in both train and test sets");
  }
  FoldRun run;
  run.split = split;
  const auto train_raw = select_records(cohort, split.train_ids);
  run.stats = compute_cohort_stats(train_raw);
  std::vector<SubjectRecord> train_pre;
  for (const auto& r : train_raw) train_pre.push_back(preprocess_record(r, run.stats));

  const bool write = !outdir.empty();
  std::ofstream log;
  nlohmann::json meta{{"fold", split.fold_id}, {"seed", cfg.seed}};
  if (write) {
    fs::create_directories(outdir);
    write_json_file((outdir / "stats.json").string(), run.stats);
    write_json_file((outdir / "config.json").string(), cfg);
    write_json_file((outdir / "split.json").string(),
                    {{"fold", split.fold_id}, {"train_ids", split.train_ids}, {"test_ids", split.test_ids}});
    log.open(outdir / "train_log.ndjson");
    if (!log) throw DataError("cannot write " + (outdir / "train_log.ndjson").string());
  }
  TrainHooks hooks;
  hooks.workers = workers;
  if (write) {
    hooks.on_epoch = [&](const EpochLog& e) {
      nlohmann::json j = e;
      log << j.dump() << '\n';
      log.flush();
    };
    hooks.on_best = [&](const ModelParams& m, const EpochLog& e) {
      nlohmann::json mm = meta;
      mm["epoch"] = e.epoch;
      mm["phase"] = e.phase;
      save_checkpoint(m, mm, outdir / "checkpoint.ckpt");
    };
  }
  run.result = train(cfg, train_pre, FoldSplit{split.fold_id, split.train_ids, {}}, hooks);
  if (write) {
    nlohmann::json mm = meta;
    mm["epoch"] = run.result.best_epoch;
    save_checkpoint(run.result.best, mm, outdir / "checkpoint.ckpt");
    mm["epoch"] = run.result.log.empty() ? -1 : run.result.log.back().epoch;
    save_checkpoint(run.result.last, mm, outdir / "last.ckpt");
  }
  return run;
}

PredictionVolume predict_raw(const ModelParams& model, const CohortStats& stats, const Volume& raw, double overlap) {
  validate(raw);
  Volume img = raw;
  bool resampled = false;
  for (int a = 0; a < 3; ++a)
    if (std::abs(raw.spacing[a] - stats.median_spacing[a]) > 1e-6) resampled = true;
  if (resampled) img = resample_to_spacing(raw, stats.median_spacing);
  img = normalize(img, stats);
  PredictionVolume p = sliding_window_predict(model, img, overlap);
  if (!resampled) return p;
  auto back = [&](std::optional<Volume>& v) {
    if (!v) return;
    Volume r = resample_to_shape(*v, raw.shape());
    r.spacing = raw.spacing;
    r.origin = raw.origin;
    for (float& x : r.grid.values()) x = std::clamp(x, 0.0f, 1.0f);
    v = std::move(r);
  };
  back(p.vessel_prob);
  back(p.brain_prob);
  return p;
}

SubjectEvaluation evaluate_record(const ModelParams& model, const CohortStats& stats, const SubjectRecord& raw,
                                  int fold, const std::vector<EvalMode>& modes, double overlap) {
  SubjectEvaluation ev;
  ev.modes = evaluate_modes(predict_raw(model, stats, raw.image, overlap), raw);
  for (EvalMode m : modes)
    ev.metrics.push_back(evaluate_subject(m == EvalMode::bm ? ev.modes.bm : ev.modes.nbm, raw, to_string(m), fold));
  return ev;
}

}  // namespace jobvs
