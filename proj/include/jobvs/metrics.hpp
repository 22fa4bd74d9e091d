#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jobvs/inference.hpp"
#include "jobvs/volume.hpp"

namespace jobvs {

/// 2|P and G| / (|P| + |G|); 1 when both are empty.
double dsc(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

/// Area under the voxel-level precision-recall curve. Voxels sharing a
/// probability form one threshold. Throws DataError for an empty ground truth.
double average_precision(std::span<const float> prob, std::span<const std::uint8_t> gt);

struct F1Result {
  double f1 = 0.0;
  double threshold = 0.0;  // smallest maximiser; predict voxel >= threshold
};
F1Result max_f1(std::span<const float> prob, std::span<const std::uint8_t> gt);

/// Whether deleting the centre of a 3x3x3 neighbourhood (x fastest, centre
/// at 13) preserves topology: 26-connected foreground, 6-connected background.
bool is_simple_point(const std::array<bool, 27>& nbhd);

/// Sequential directional thinning of simple border voxels to a fixpoint.
/// Voxels with a single 26-neighbour (curve ends) are kept.
Grid3<std::uint8_t> skeletonize3d(const Grid3<std::uint8_t>& mask);

std::size_t count_components26(const Grid3<std::uint8_t>& mask);

/// Centreline Dice. 1 when both masks are empty, 0 when exactly one
/// skeleton is empty.
double cl_dice(const Grid3<std::uint8_t>& pred, const Grid3<std::uint8_t>& gt);

struct SubjectMetrics {
  std::string id;
  int fold = 0;
  std::string mode;  // "BM" or "NBM"
  std::optional<double> vessel_ap;
  std::optional<double> vessel_f1;
  std::optional<double> vessel_f1_threshold;
  std::optional<double> vessel_cldice;
  std::optional<double> brain_dsc;
};

/// Vessel metrics are skipped (with a warning) when the subject has no
/// vessel voxels. Binary masks use threshold 0.5.
SubjectMetrics evaluate_subject(const PredictionVolume& pred, const SubjectRecord& rec, const std::string& mode,
                                int fold);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample std over fold means; 0 for a single fold
  std::size_t n_folds = 0;
  std::size_t n_subjects = 0;
};

struct MetricsReport {
  std::vector<SubjectMetrics> subjects;
  // mode -> metric name (vessel_ap, vessel_f1, vessel_cldice, brain_dsc) -> summary
  std::map<std::string, std::map<std::string, MetricSummary>> summary;
};

/// Per-fold means, then mean and sample std across folds.
MetricsReport evaluate_cohort(std::vector<SubjectMetrics> subjects);

/// mean and sample standard deviation (n-1); std is 0 for one value.
MetricSummary mean_std(const std::vector<double>& values);

nlohmann::json to_json(const MetricsReport& report);
/// One row per labelled report; columns are the vessel metrics under BM and
/// NBM followed by brain DSC, in percent as mean +- std.
std::string to_markdown(const std::vector<std::pair<std::string, MetricsReport>>& rows);
std::string to_markdown(const MetricsReport& report, const std::string& label = "model");

}  // namespace jobvs
