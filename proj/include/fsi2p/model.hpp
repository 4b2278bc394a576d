#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "fsi2p/config.hpp"
#include "fsi2p/embedding.hpp"
#include "fsi2p/focus_sweep.hpp"
#include "fsi2p/matching.hpp"
#include "fsi2p/objective.hpp"
#include "fsi2p/policy.hpp"
#include "fsi2p/synthgen.hpp"

namespace fsi2p {

struct ModelParams {
  Tensor image_in_w, image_in_b;
  Tensor point_in_w, point_in_b;
  Tensor image_pos_w, point_pos_w;
  AttentionParams attention;
  PyramidParams pyramid;
  std::array<MLayerParams, 3> mlayers;
  PolicyParams policy;
  Tensor fine_image_w, fine_point_w;
};

using ParamVisitor = std::function<void(const std::string& name, Tensor& tensor)>;
using ConstParamVisitor = std::function<void(const std::string& name, const Tensor& tensor)>;

void visit_params(ModelParams& params, const ParamVisitor& fn);
void visit_params(const ModelParams& params, const ConstParamVisitor& fn);
bool is_policy_param(const std::string& name);

// Grid geometry and per-level sweep layouts shared by every sample of a run.
struct Model {
  RunConfig config;
  Index coarse_h = 0, coarse_w = 0;
  PyramidIndex index;
  std::array<SweepLayout, 3> layouts;
  FourierEmbedding image_embedding, point_embedding;
  Tensor image_positions;  // coarse tokens x embedding dim

  explicit Model(const RunConfig& config);
  ModelParams init(std::uint64_t seed) const;
};

// Per-sample network inputs and supervision, computed once.
struct SampleInputs {
  Tensor coarse_image;     // coarse tokens x C_in
  Tensor point_features;   // N x C_in
  Tensor point_positions;  // N x embedding dim
  AnchorLabels coarse_labels;
  std::vector<Index> fine_pixels;
  Tensor fine_image;       // |fine_pixels| x C_in
  AnchorLabels fine_point_labels;  // N x |fine_pixels|
  AnchorLabels fine_pixel_labels;  // |fine_pixels| x N
};

SampleInputs prepare_sample(const Model& model, const SyntheticSample& sample);

enum class DepthMode { sampled, greedy, fixed };

struct ForwardOptions {
  DepthMode mode = DepthMode::greedy;
  int fixed_depth = 0;
};

struct ForwardOutput {
  Tensor image_tokens;          // attention output at the finest level
  Tensor attended_points;
  Tensor unified;               // refined tokens of all three levels
  std::array<Tensor, 3> points;  // refined point tokens per level
  std::array<int, 3> depths{};
  std::vector<PolicyDecision> decisions;
};

ForwardOutput forward(const Model& model, const ModelParams& params, const SampleInputs& inputs,
                      const ForwardOptions& options, Rng& rng);

// Mean over the three point scales of the symmetric coarse circle loss.
Tensor coarse_loss(const ForwardOutput& out, const SampleInputs& inputs,
                   const CircleLossParams& params);
Tensor fine_loss(const ModelParams& params, const SampleInputs& inputs,
                 const CircleLossParams& params_loss);

struct Prediction {
  std::vector<CoarseMatch> coarse;
  std::vector<FineMatch> fine;
  RansacResult pose;
  std::array<int, 3> depths{};
};

Prediction predict(const Model& model, const ModelParams& params, const SyntheticSample& sample,
                   const SampleInputs& inputs, const ForwardOptions& options, Rng& rng);

}  // namespace fsi2p
