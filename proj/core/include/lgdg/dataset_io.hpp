#pragma once

// On-disk dataset directory:
//   manifest.json   videos, frame counts, domain config, per-frame labels and
//                   objects, split assignment, blob checksums
//   video_NNNN.bin  little-endian f64 image data, C×H×W per frame, row-major

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lgdg/scene.hpp"

namespace lgdg {

struct Dataset {
  DomainConfig domain;
  std::vector<Scene> scenes;
  std::map<int, std::string> split_of_video;  // "train" | "val" | "test"
};

// Generates `n_videos` videos of `frames_per_video` frames (ids 0..n-1) and a
// stratified split over them.
Dataset generate_dataset(const DomainConfig& cfg, int n_videos, int frames_per_video,
                         std::uint64_t seed, const std::array<double, 3>& fractions);

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
// Throws IoError on a corrupt manifest and ChecksumError on blob mismatch.
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace lgdg
