#pragma once

#include <array>
#include <string_view>
#include <vector>

#include "fsi2p/rng.hpp"
#include "fsi2p/ssm.hpp"
#include "fsi2p/tensor.hpp"

namespace fsi2p {

// Image grids are stored as (h*w) x C token matrices in row-major pixel order.
struct FeatureGrid {
  Tensor tokens;
  Index h = 0;
  Index w = 0;

  Index channels() const { return tokens.dim(1); }
};

enum class Ordering { raster, reverse, column };

Ordering parse_ordering(std::string_view name);
std::string_view to_string(Ordering ordering);

struct SweepLayout {
  struct Segment {
    Index begin = 0;
    Index end = 0;
    bool image = true;
    Index stream = 0;
  };

  Index h = 0, w = 0, window = 0, points = 0;
  Ordering ordering = Ordering::raster;
  // Concatenated stream tokens: entry k is the grid row of the k-th token.
  std::vector<Index> token_order;
  std::vector<Index> inverse_order;
  std::vector<Segment> segments;

  Index stream_count() const { return (h * w) / (window * window); }
  Index stream_length() const { return window * window; }
  Index hybrid_length() const { return h * w + stream_count() * points; }
};

SweepLayout make_layout(Index h, Index w, Index window, Index points, Ordering ordering);

struct PyramidParams {
  std::array<Tensor, 3> mix_w;  // C x C, identity at init
  std::array<Tensor, 3> mix_b;  // C
};

PyramidParams init_pyramid(Index channels);
FeatureGrid avg_pool2(const FeatureGrid& grid);
std::array<FeatureGrid, 3> build_pyramid(const FeatureGrid& input, const PyramidParams& params);

struct ModulationParams {
  Tensor w1;  // C x H
  Tensor b1;  // H
  Tensor w2;  // H x 3C, zero at init
  Tensor b2;  // 3C, zero at init
};

struct ModulationFactors {
  Tensor x1, y, x2;  // each 1 x C
};

ModulationParams init_modulation(Index channels, Index hidden, Rng& rng);
ModulationFactors derive_modulation(const Tensor& points, const ModulationParams& params);

struct FocusParams {
  ModulationParams modulation;
  SsmLayer ssm;
};

// F' = F + x2 .* SSM(x1 .* F + y) on the grid tokens, scanned in layout order.
ScanResult focus(const Tensor& image, const Tensor& points, const SweepLayout& layout,
                 const FocusParams& params, const Tensor& h0);

std::vector<Tensor> sweep_split(const Tensor& image, const SweepLayout& layout);
Tensor reorganize(std::span<const Tensor> streams, const SweepLayout& layout);
Tensor interleave_hybrid(std::span<const Tensor> streams, const Tensor& points,
                         const SweepLayout& layout);

struct SeparatedHybrid {
  std::vector<Tensor> streams;
  std::vector<Tensor> point_instances;
};

SeparatedHybrid separate_hybrid(const Tensor& hybrid, const SweepLayout& layout);

// sum_u softmax(lambda_raw)_u * instances[u]
Tensor aggregate_points(std::span<const Tensor> instances, const Tensor& lambda_raw);

struct SweepParams {
  SsmLayer ssm;
  Tensor lambda_raw;  // t
};

struct SweepOutput {
  Tensor image;   // h*w x C, scan contribution only
  Tensor points;  // N x C, scan contribution only
  Tensor h_last;
};

SweepOutput sweep(const Tensor& image, const Tensor& points, const SweepLayout& layout,
                  const SweepParams& params, const Tensor& h0);

struct MLayerParams {
  FocusParams focus;
  SweepParams sweep;
};

MLayerParams init_mlayer(Index channels, Index state_dim, Index modulation_hidden,
                         Index stream_count, Rng& rng);

struct ScanCarry {
  Tensor focus;
  Tensor sweep;
};

ScanCarry zero_carry(const MLayerParams& params);

struct MLayerOutput {
  Tensor image;
  Tensor points;
  ScanCarry carry;
};

inline constexpr int kMaxDepth = 3;

// `depth` iterations of focus then sweep, each wrapped in a residual.
MLayerOutput mlayer_stack(const Tensor& image, const Tensor& points, const SweepLayout& layout,
                          const MLayerParams& params, int depth, const ScanCarry& carry);

}  // namespace fsi2p
