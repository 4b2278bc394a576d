#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fsi2p/geometry.hpp"
#include "fsi2p/matching.hpp"

namespace fsi2p {

enum class SceneMode { easy, hard };

SceneMode parse_scene_mode(std::string_view name);
std::string_view to_string(SceneMode mode);

struct SceneSpec {
  Index points = 128;
  Index height = 96;
  Index width = 128;
  Index channels = 32;
  double focal = 100.0;
  double min_depth = 1.0;
  double max_depth = 4.0;
  double max_rotation = 30.0 * M_PI / 180.0;
  double max_translation = 0.5;
  double noise = 0.05;
  double min_separation_px = 3.0;
  SceneMode mode = SceneMode::easy;
  Index repetition_groups = 4;

  void validate() const;
};

struct SyntheticSample {
  Index h = 0, w = 0, channels = 0;
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Posed pose;                   // world -> camera
  RowMatrix image_features;     // h*w x C
  RowMatrix points;             // N x 3, world frame
  RowMatrix point_features;     // N x C
  std::vector<std::pair<std::uint32_t, std::uint32_t>> correspondences;  // (pixel, point)
  Eigen::VectorXd depth;        // h*w, 0 on background

  // Derived on construction and load: point owning each pixel (-1 for background),
  // projected pixel coordinates per point and the ground-truth pixel per point.
  std::vector<Index> pixel_owner;
  RowMatrix projections;        // N x 2 (u, v)
  std::vector<Index> point_pixel;

  Index point_count() const { return points.rows(); }
  void derive();
};

// Pixel centres lie at integer (col, row) coordinates.
inline constexpr double kOwnerRadiusPx = 1.0;

SyntheticSample gen_scene(const SceneSpec& spec, std::uint64_t seed);

struct OverlapTable {
  RowMatrix overlap_2d;  // tokens x N
  RowMatrix overlap_3d;
  std::vector<std::vector<Index>> balls;
};

OverlapTable gt_overlap(const SyntheticSample& sample, const PyramidIndex& index, double radius);

struct SplitCounts {
  Index train = 0, val = 0, test = 0;
};

SplitCounts split_counts(Index count);

void write_sample(const std::filesystem::path& path, const SyntheticSample& sample);
SyntheticSample read_sample(const std::filesystem::path& path);

// Writes <dir>/{train,val,test}/sample_<seed>.bin for seeds seed .. seed+count-1.
void gen_dataset(const SceneSpec& spec, Index count, std::uint64_t seed,
                 const std::filesystem::path& dir);
std::vector<SyntheticSample> load_split(const std::filesystem::path& dir, std::string_view split);

}  // namespace fsi2p
