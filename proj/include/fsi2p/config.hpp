#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "fsi2p/focus_sweep.hpp"
#include "fsi2p/synthgen.hpp"

namespace fsi2p {

struct RunConfig {
  std::uint64_t seed = 1;
  std::string dataset = "data";
  std::string out = "runs/default";

  // gen-data
  Index count = 50;
  Index points = 128;
  Index height = 96;
  Index width = 128;
  Index input_channels = 32;
  double noise = 0.05;
  SceneMode mode = SceneMode::easy;
  Index repetition_groups = 4;
  double max_rotation_deg = 30.0;
  double max_translation = 0.5;

  // model
  Index channels = 32;
  Index state_dim = 8;
  Index embedding_levels = 4;
  Index heads = 4;
  Index modulation_hidden = 32;
  Index policy_hidden = 64;
  Index fine_channels = 32;
  Index coarse_pool = 4;
  Index window_a = 8;
  Index window_b = 4;
  Index window_c = 2;
  Ordering ordering = Ordering::raster;

  // matching
  Index top_k = 128;
  double tau = 0.6;
  double radius = 0.15;

  // objective
  double zeta = 10.0;
  double delta_p = 0.1;
  double delta_n = 1.4;
  double xi1 = 1.0;
  double xi2 = 1.0;

  // policy
  double reward_delta = 1e-6;
  double baseline_momentum = 0.1;
  int fixed_depth = -1;  // -1 lets the policy choose

  // pose
  int ransac_iterations = 500;
  double ransac_threshold = 2.0;

  // training
  Index steps = 500;
  double lr = 1e-3;
  double policy_lr = 1e-3;
  double momentum = 0.9;
  double grad_clip = 0.0;  // global norm; 0 disables
  Index checkpoint_every = 100;

  // evaluation
  std::string eval_split = "test";
  double mmd_bandwidth = 1.0;

  // bench
  Index bench_repeats = 5;
  Index bench_points = 64;

  SceneSpec scene_spec() const;
  void validate() const;
};

// "key = value" lines; '#' starts a comment. Unknown keys are errors.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);
std::string format_config(const RunConfig& config);

}  // namespace fsi2p
