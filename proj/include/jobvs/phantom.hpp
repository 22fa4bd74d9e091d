#pragma once

#include <cstdint>
#include <vector>

#include "jobvs/volume.hpp"

namespace jobvs {

/// Synthetic TOF-MRA-like head: ellipsoidal brain, a bright skull shell
/// outside it and branching vessel trees inside it. Intensities are in
/// arbitrary units; the skull is deliberately close to the vessel level.
struct PhantomConfig {
  std::size_t size = 64;
  double spacing = 0.5;               // mm, isotropic
  Vec3 brain_axes{0.34, 0.38, 0.32};  // semi-axes as a fraction of size
  double skull_gap = 2.0;             // voxels of background between brain and skull
  double skull_thickness = 3.0;       // voxels
  int n_vessel_roots = 3;
  int branch_depth = 3;
  double vessel_radius_min = 1.0;  // voxels
  double vessel_radius_max = 2.0;  // voxels
  double background = 0.05;
  double brain = 0.35;
  double skull = 0.90;
  double vessel = 0.95;
  double noise_std = 0.03;
  std::uint64_t seed = 0;
};

/// Throws UsageError for configurations violating the phantom invariants
/// (size >= 32, radii >= 1 voxel, skull within 10% of vessel intensity).
void validate(const PhantomConfig& cfg);

std::string phantom_id(std::size_t subject_index);

/// Deterministic in (cfg, subject_index).
SubjectRecord generate_phantom(const PhantomConfig& cfg, std::size_t subject_index);

std::vector<SubjectRecord> generate_cohort(const PhantomConfig& cfg, std::size_t n);

/// Voxels covered by the skull shell (partial coverage included).
LabelVolume skull_mask(const PhantomConfig& cfg, std::size_t subject_index);

}  // namespace jobvs
