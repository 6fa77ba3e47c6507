#ifndef DDCM_DATA_HPP
#define DDCM_DATA_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ddcm/augment.hpp"
#include "ddcm/tensor.hpp"

namespace ddcm {

/// Synthetic land-cover scene recipe. Class families:
///   0 surface (background), 1 buildings (large rectangles),
///   2 low vegetation (blobs), 3 trees (textured blobs),
///   4 cars (small, rare rectangles), 5 clutter (rare irregular strokes).
/// Families above class_count-1 are disabled.
struct SceneSpec {
  Index tile_size = 512;
  Index class_count = 6;
  double noise = 0.06;
  std::uint64_t seed = 1;
};

struct Manifest {
  Index class_count = 0;
  std::vector<std::string> tile_ids;
  std::vector<std::vector<std::uint64_t>> pixel_counts;  // per tile, per class

  VecX<double> frequencies(const std::vector<Index>& tiles) const;
  VecX<double> frequencies() const;
};

/// Writes images/NNNN.ppm, labels/NNNN.pgm and manifest.csv. Deterministic:
/// tile i depends only on (spec.seed, i).
Manifest generate_dataset(const SceneSpec& spec, Index tiles, const std::filesystem::path& out_dir);

/// Renders one tile in memory.
Sample generate_tile(const SceneSpec& spec, Index tile_index);

// ---------------------------------------------------------------------------
// Binary PPM (P6) / PGM (P5) with 8-bit samples.

void write_ppm(const std::filesystem::path& path, const Tensor<float>& image);
void write_pgm(const std::filesystem::path& path, const LabelMap& labels);
Tensor<float> read_ppm(const std::filesystem::path& path);
LabelMap read_pgm(const std::filesystem::path& path);

/// Loads an aligned image/label pair; image scaled to [0, 1] (255 -> 1.0).
Sample load_pair(const std::filesystem::path& image_path, const std::filesystem::path& label_path);
void save_pair(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
               const Sample& sample);

// ---------------------------------------------------------------------------

Manifest read_manifest(const std::filesystem::path& csv_path);
void write_manifest(const std::filesystem::path& csv_path, const Manifest& m);

/// Disjoint, covering, seed-deterministic index split. Sizes are
/// floor(frac*count) with the remainder given to the largest fractional
/// parts (ties to the earlier split). A fraction > 0 that would receive an
/// empty split is an error.
std::array<std::vector<Index>, 3> split_dataset(Index count, double train_frac, double val_frac,
                                                double test_frac, std::uint64_t seed);

/// A dataset directory loaded into memory.
struct Dataset {
  std::vector<Sample> train, val, test;
  std::vector<Index> train_ids, val_ids, test_ids;
  VecX<double> train_frequencies;  // per-class pixel fraction over the train split
  Index class_count = 0;
};

Dataset load_dataset(const std::filesystem::path& dir, double train_frac, double val_frac,
                     double test_frac, std::uint64_t seed);

}  // namespace ddcm

#endif  // DDCM_DATA_HPP
