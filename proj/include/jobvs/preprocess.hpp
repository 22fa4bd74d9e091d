#pragma once

#include <span>
#include <vector>

#include "jobvs/volume.hpp"

namespace jobvs {

/// Linear-interpolated percentile (q in [0,100]) of an unsorted sample.
double percentile(std::vector<double> values, double q);

/// Per-axis median of values (mean of the two middle values for even counts).
double median(std::vector<double> values);

/// Cohort statistics over a training set. Percentiles are exact over the
/// pooled vessel-labelled voxels of per-image z-scored images; the global
/// mean/std are taken over all voxels after per-image z-score and clipping,
/// i.e. over exactly what the final standardisation step receives.
CohortStats compute_cohort_stats(std::span<const SubjectRecord> train_set);

/// Output shape per axis is round(n * spacing / target), at least 1.
Shape3 resampled_shape(const Shape3& shape, const Vec3& spacing, const Vec3& target);

/// Trilinear resampling (voxel-centre aligned); output spacing = target.
Volume resample_to_spacing(const Volume& vol, const Vec3& target);
/// Nearest-neighbour resampling for masks.
LabelVolume resample_to_spacing(const LabelVolume& vol, const Vec3& target);
/// Trilinear resampling onto an explicit output shape (used to map
/// predictions back onto the original grid).
Volume resample_to_shape(const Volume& vol, const Shape3& shape);

/// Per-image z-score (population std). Throws DataError on constant images.
Volume zscore(const Volume& vol);
/// Clamp to [lo, hi].
Volume clip(const Volume& vol, double lo, double hi);

/// Full intensity pipeline: per-image z-score, clip to the vessel
/// percentiles, then standardise with the cohort mean/std.
Volume normalize(const Volume& vol, const CohortStats& stats);

/// Resample an entire record to the cohort spacing and normalise its image.
SubjectRecord preprocess_record(const SubjectRecord& rec, const CohortStats& stats);

}  // namespace jobvs
