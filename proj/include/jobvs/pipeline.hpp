#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "jobvs/inference.hpp"
#include "jobvs/metrics.hpp"
#include "jobvs/phantom.hpp"
#include "jobvs/training.hpp"

namespace jobvs {

// Cohort directory layout: <id>_image.nii.gz, <id>_brain.nii.gz,
// <id>_vessel.nii.gz and cohort.json {"ids": [...], "phantom": {...}}.
void write_cohort(const std::filesystem::path& dir, const std::vector<SubjectRecord>& records,
                  const PhantomConfig* phantom = nullptr);
std::vector<SubjectRecord> load_cohort(const std::filesystem::path& dir);
std::vector<std::string> cohort_ids(const std::vector<SubjectRecord>& records);
std::vector<SubjectRecord> select_records(const std::vector<SubjectRecord>& records,
                                          const std::vector<std::string>& ids);

struct FoldRun {
  FoldSplit split;
  CohortStats stats;
  TrainResult result;
};

/// Cohort statistics from the fold's training subjects, preprocessing, and
/// training. With a non-empty `outdir` it writes checkpoint.ckpt (best,
/// refreshed whenever the best changes), last.ckpt, stats.json, split.json,
/// config.json and train_log.ndjson.
FoldRun train_fold(const TrainConfig& cfg, const std::vector<SubjectRecord>& cohort, const FoldSplit& split,
                   const std::filesystem::path& outdir = {}, int workers = 1);

/// Preprocesses a raw image, predicts, and maps the probabilities back onto
/// the raw grid.
PredictionVolume predict_raw(const ModelParams& model, const CohortStats& stats, const Volume& raw,
                             double overlap = 0.5);

struct SubjectEvaluation {
  ModePredictions modes;
  std::vector<SubjectMetrics> metrics;  // one entry per requested mode
};

SubjectEvaluation evaluate_record(const ModelParams& model, const CohortStats& stats, const SubjectRecord& raw,
                                  int fold, const std::vector<EvalMode>& modes, double overlap = 0.5);

}  // namespace jobvs
