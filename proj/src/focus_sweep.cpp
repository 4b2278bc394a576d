#include "fsi2p/focus_sweep.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fsi2p {

Ordering parse_ordering(std::string_view name) {
  if (name == "raster") return Ordering::raster;
  if (name == "reverse") return Ordering::reverse;
  if (name == "column") return Ordering::column;
  throw ConfigError("unknown ordering '" + std::string(name) + "' (raster, reverse, column)");
}

std::string_view to_string(Ordering ordering) {
  switch (ordering) {
    case Ordering::raster: return "raster";
    case Ordering::reverse: return "reverse";
    case Ordering::column: return "column";
  }
  return "raster";
}

SweepLayout make_layout(Index h, Index w, Index window, Index points, Ordering ordering) {
  if (window < 1 || h < 1 || w < 1 || h % window != 0 || w % window != 0) {
    throw ShapeError("sweep layout: window " + std::to_string(window) + " does not tile a " +
                     std::to_string(h) + "x" + std::to_string(w) + " grid");
  }
  if (points < 1) throw ShapeError("sweep layout: no point tokens");
  SweepLayout l;
  l.h = h;
  l.w = w;
  l.window = window;
  l.points = points;
  l.ordering = ordering;
  const Index th = h / window, tw = w / window;
  l.token_order.reserve(static_cast<std::size_t>(h * w));
  auto tile = [&](Index tr, Index tc, bool by_column) {
    for (Index i = 0; i < window; ++i) {
      for (Index j = 0; j < window; ++j) {
        const Index r = by_column ? j : i, c = by_column ? i : j;
        l.token_order.push_back((tr * window + r) * w + tc * window + c);
      }
    }
  };
  if (ordering == Ordering::column) {
    for (Index tc = 0; tc < tw; ++tc)
      for (Index tr = 0; tr < th; ++tr) tile(tr, tc, true);
  } else {
    for (Index tr = 0; tr < th; ++tr)
      for (Index tc = 0; tc < tw; ++tc) tile(tr, tc, false);
    if (ordering == Ordering::reverse) std::reverse(l.token_order.begin(), l.token_order.end());
  }
  l.inverse_order.assign(l.token_order.size(), 0);
  for (std::size_t k = 0; k < l.token_order.size(); ++k) {
    l.inverse_order[static_cast<std::size_t>(l.token_order[k])] = static_cast<Index>(k);
  }
  Index pos = 0;
  for (Index u = 0; u < l.stream_count(); ++u) {
    l.segments.push_back({pos, pos + l.stream_length(), true, u});
    pos += l.stream_length();
    l.segments.push_back({pos, pos + points, false, u});
    pos += points;
  }
  return l;
}

PyramidParams init_pyramid(Index channels) {
  PyramidParams p;
  for (std::size_t k = 0; k < 3; ++k) {
    p.mix_w[k] = Tensor::matrix(Eigen::MatrixXd::Identity(channels, channels));
    p.mix_b[k] = Tensor::zeros({channels});
  }
  return p;
}

FeatureGrid avg_pool2(const FeatureGrid& grid) {
  if (grid.h % 2 != 0 || grid.w % 2 != 0) {
    throw ShapeError("avg_pool2: odd grid " + std::to_string(grid.h) + "x" + std::to_string(grid.w));
  }
  const Index h = grid.h / 2, w = grid.w / 2;
  std::array<std::vector<Index>, 4> corners;
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      const Index base = 2 * r * grid.w + 2 * c;
      corners[0].push_back(base);
      corners[1].push_back(base + 1);
      corners[2].push_back(base + grid.w);
      corners[3].push_back(base + grid.w + 1);
    }
  }
  Tensor acc = gather_rows(grid.tokens, corners[0]);
  for (std::size_t k = 1; k < 4; ++k) acc = add(acc, gather_rows(grid.tokens, corners[k]));
  return {scale(acc, 0.25), h, w};
}

std::array<FeatureGrid, 3> build_pyramid(const FeatureGrid& input, const PyramidParams& params) {
  if (input.h % 4 != 0 || input.w % 4 != 0) {
    throw ShapeError("build_pyramid: grid " + std::to_string(input.h) + "x" +
                     std::to_string(input.w) + " is not divisible by 4");
  }
  auto mix = [&](const FeatureGrid& g, std::size_t k) {
    return FeatureGrid{add(matmul(g.tokens, params.mix_w[k]), params.mix_b[k]), g.h, g.w};
  };
  std::array<FeatureGrid, 3> levels;
  levels[0] = mix(input, 0);
  levels[1] = mix(avg_pool2(levels[0]), 1);
  levels[2] = mix(avg_pool2(levels[1]), 2);
  return levels;
}

ModulationParams init_modulation(Index channels, Index hidden, Rng& rng) {
  ModulationParams p;
  Eigen::VectorXd w1(channels * hidden);
  const double s = 1.0 / std::sqrt(double(channels));
  for (Index i = 0; i < w1.size(); ++i) w1[i] = s * rng.normal();
  p.w1 = Tensor({channels, hidden}, w1);
  p.b1 = Tensor::zeros({hidden});
  p.w2 = Tensor::zeros({hidden, 3 * channels});
  p.b2 = Tensor::zeros({3 * channels});
  return p;
}

ModulationFactors derive_modulation(const Tensor& points, const ModulationParams& params) {
  if (points.rank() != 2 || points.dim(0) < 1) {
    throw ShapeError("derive_modulation: point tokens of shape " + shape_str(points.shape()));
  }
  const Index c = points.dim(1);
  const Tensor pooled = reshape(mean(points, 0), {1, c});
  const Tensor hidden = relu(add(matmul(pooled, params.w1), params.b1));
  const Tensor out = add(matmul(hidden, params.w2), params.b2);
  return {add_scalar(slice(out, 1, 0, c), 1.0), slice(out, 1, c, 2 * c),
          add_scalar(slice(out, 1, 2 * c, 3 * c), 1.0)};
}

ScanResult focus(const Tensor& image, const Tensor& points, const SweepLayout& layout,
                 const FocusParams& params, const Tensor& h0) {
  if (image.rank() != 2 || image.dim(0) != layout.h * layout.w) {
    throw ShapeError("focus: image tokens " + shape_str(image.shape()) + " for a " +
                     std::to_string(layout.h) + "x" + std::to_string(layout.w) + " layout");
  }
  const ModulationFactors m = derive_modulation(points, params.modulation);
  const Tensor seq = gather_rows(image, layout.token_order);
  ScanResult r = ssm_layer(add(mul(seq, m.x1), m.y), params.ssm, h0);
  const Tensor out = add(seq, mul(m.x2, r.y));
  return {gather_rows(out, layout.inverse_order), r.h_last};
}

std::vector<Tensor> sweep_split(const Tensor& image, const SweepLayout& layout) {
  if (image.rank() != 2 || image.dim(0) != layout.h * layout.w) {
    throw ShapeError("sweep_split: image tokens " + shape_str(image.shape()) + " for a " +
                     std::to_string(layout.h) + "x" + std::to_string(layout.w) + " layout");
  }
  std::vector<Tensor> streams;
  const Index len = layout.stream_length();
  for (Index u = 0; u < layout.stream_count(); ++u) {
    std::span<const Index> idx(layout.token_order.data() + u * len, static_cast<std::size_t>(len));
    streams.push_back(gather_rows(image, idx));
  }
  return streams;
}

Tensor reorganize(std::span<const Tensor> streams, const SweepLayout& layout) {
  if (static_cast<Index>(streams.size()) != layout.stream_count()) {
    throw ShapeError("reorganize: " + std::to_string(streams.size()) + " streams, layout has " +
                     std::to_string(layout.stream_count()));
  }
  return gather_rows(concat(streams, 0), layout.inverse_order);
}

Tensor interleave_hybrid(std::span<const Tensor> streams, const Tensor& points,
                         const SweepLayout& layout) {
  if (static_cast<Index>(streams.size()) != layout.stream_count()) {
    throw ShapeError("interleave_hybrid: " + std::to_string(streams.size()) +
                     " streams, layout has " + std::to_string(layout.stream_count()));
  }
  if (points.rank() != 2 || points.dim(0) != layout.points) {
    throw ShapeError("interleave_hybrid: point tokens " + shape_str(points.shape()));
  }
  std::vector<Tensor> parts;
  parts.reserve(2 * streams.size());
  for (const Tensor& s : streams) {
    parts.push_back(s);
    parts.push_back(points);
  }
  return concat(parts, 0);
}

SeparatedHybrid separate_hybrid(const Tensor& hybrid, const SweepLayout& layout) {
  if (hybrid.rank() != 2 || hybrid.dim(0) != layout.hybrid_length()) {
    throw ShapeError("separate_hybrid: hybrid stream " + shape_str(hybrid.shape()) +
                     " but layout length is " + std::to_string(layout.hybrid_length()));
  }
  SeparatedHybrid out;
  for (const auto& seg : layout.segments) {
    (seg.image ? out.streams : out.point_instances).push_back(slice(hybrid, 0, seg.begin, seg.end));
  }
  return out;
}

Tensor aggregate_points(std::span<const Tensor> instances, const Tensor& lambda_raw) {
  const Index t = static_cast<Index>(instances.size());
  if (t < 1 || lambda_raw.size() != t) {
    throw ShapeError("aggregate_points: " + std::to_string(t) + " instances for " +
                     std::to_string(lambda_raw.size()) + " weights");
  }
  const Shape& s = instances.front().shape();
  for (const Tensor& x : instances) {
    if (x.shape() != s) throw ShapeError("aggregate_points: instance shapes differ");
  }
  const Tensor weights = reshape(softmax(reshape(lambda_raw, {t}), 0), {1, t});
  const Tensor stacked = reshape(concat(instances, 0), {t, shape_numel(s)});
  return reshape(matmul(weights, stacked), s);
}

SweepOutput sweep(const Tensor& image, const Tensor& points, const SweepLayout& layout,
                  const SweepParams& params, const Tensor& h0) {
  const std::vector<Tensor> streams = sweep_split(image, layout);
  const Tensor hybrid = interleave_hybrid(streams, points, layout);
  ScanResult r = ssm_layer(hybrid, params.ssm, h0);
  const SeparatedHybrid sep = separate_hybrid(r.y, layout);
  return {reorganize(sep.streams, layout), aggregate_points(sep.point_instances, params.lambda_raw),
          r.h_last};
}

MLayerParams init_mlayer(Index channels, Index state_dim, Index modulation_hidden,
                         Index stream_count, Rng& rng) {
  MLayerParams p;
  p.focus.modulation = init_modulation(channels, modulation_hidden, rng);
  p.focus.ssm = init_ssm_layer(channels, state_dim, rng);
  p.sweep.ssm = init_ssm_layer(channels, state_dim, rng);
  p.sweep.lambda_raw = Tensor::zeros({stream_count});
  return p;
}

ScanCarry zero_carry(const MLayerParams& params) {
  return {zero_state(params.focus.ssm.scan), zero_state(params.sweep.ssm.scan)};
}

MLayerOutput mlayer_stack(const Tensor& image, const Tensor& points, const SweepLayout& layout,
                          const MLayerParams& params, int depth, const ScanCarry& carry) {
  if (depth < 0 || depth > kMaxDepth) {
    throw DomainError("mlayer_stack: depth " + std::to_string(depth) + " outside 0.." +
                      std::to_string(kMaxDepth));
  }
  MLayerOutput out{image, points, carry};
  for (int i = 0; i < depth; ++i) {
    ScanResult f = focus(out.image, out.points, layout, params.focus, out.carry.focus);
    out.carry.focus = f.h_last;
    SweepOutput s = sweep(f.y, out.points, layout, params.sweep, out.carry.sweep);
    out.image = add(f.y, s.image);
    out.points = add(out.points, s.points);
    out.carry.sweep = s.h_last;
  }
  return out;
}

}  // namespace fsi2p
