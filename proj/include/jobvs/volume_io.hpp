#pragma once

#include <filesystem>

#include "jobvs/volume.hpp"

namespace jobvs {

// Supported formats, chosen by extension:
//   .nii.gz / .nii  NIfTI-1 (single file); float32 for volumes, uint8 for labels.
//   .raw            little-endian float32 payload plus a `.json` sidecar
//                   {shape:[x,y,z], spacing:[sx,sy,sz], origin:[ox,oy,oz]}.
// Loaders accept uint8/int16/int32/float32/float64 NIfTI payloads.

Volume load_volume(const std::filesystem::path& path);
LabelVolume load_label_volume(const std::filesystem::path& path);

void save_volume(const Volume& vol, const std::filesystem::path& path);
void save_volume(const LabelVolume& vol, const std::filesystem::path& path);

}  // namespace jobvs
