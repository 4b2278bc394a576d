#include "fsi2p/matching.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <string>

namespace fsi2p {

RowMatrix normalize_rows(const RowMatrix& x) {
  RowMatrix out = x;
  for (Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

RowMatrix score_map(const RowMatrix& image_tokens, const RowMatrix& points) {
  if (image_tokens.cols() != points.cols()) {
    throw ShapeError("score_map: " + std::to_string(image_tokens.cols()) + " image channels vs " +
                     std::to_string(points.cols()) + " point channels");
  }
  RowMatrix s = normalize_rows(image_tokens) * normalize_rows(points).transpose();
  return s.cwiseMax(-1.0).cwiseMin(1.0);
}

RowMatrix aggregate_max(const RowMatrix& a, const RowMatrix& b, const RowMatrix& c) {
  if (a.rows() != b.rows() || a.rows() != c.rows() || a.cols() != b.cols() || a.cols() != c.cols()) {
    throw ShapeError("aggregate_max: score maps differ in shape");
  }
  return a.cwiseMax(b).cwiseMax(c);
}

TokenRef PyramidIndex::ref(Index token) const {
  if (token < 0 || token >= total()) {
    throw ShapeError("token " + std::to_string(token) + " outside the " + std::to_string(total()) +
                     "-token stream");
  }
  int level = 2;
  while (token < offset[static_cast<std::size_t>(level)]) --level;
  const std::size_t l = static_cast<std::size_t>(level);
  const Index local = token - offset[l];
  return {level, local / w[l], local % w[l]};
}

std::vector<Index> PyramidIndex::footprint(Index token) const {
  const TokenRef r = ref(token);
  const Index s = stride[static_cast<std::size_t>(r.level)];
  std::vector<Index> px;
  px.reserve(static_cast<std::size_t>(s * s));
  for (Index i = 0; i < s; ++i)
    for (Index j = 0; j < s; ++j) px.push_back((r.row * s + i) * fine_w + r.col * s + j);
  return px;
}

std::vector<Index> PyramidIndex::patch(Index token) const {
  const TokenRef r = ref(token);
  const std::size_t l = static_cast<std::size_t>(r.level);
  const Index side = window[l] * stride[l];
  const Index r0 = (r.row / window[l]) * side, c0 = (r.col / window[l]) * side;
  std::vector<Index> px;
  px.reserve(static_cast<std::size_t>(side * side));
  for (Index i = 0; i < side; ++i)
    for (Index j = 0; j < side; ++j) px.push_back((r0 + i) * fine_w + c0 + j);
  return px;
}

Index PyramidIndex::token_at(int level, Index pixel) const {
  const std::size_t l = static_cast<std::size_t>(level);
  const Index r = (pixel / fine_w) / stride[l], c = (pixel % fine_w) / stride[l];
  return offset[l] + r * w[l] + c;
}

PyramidIndex make_pyramid_index(Index coarse_h, Index coarse_w, Index fine_h, Index fine_w,
                                std::array<Index, 3> window) {
  if (coarse_h % 4 != 0 || coarse_w % 4 != 0 || fine_h % coarse_h != 0 ||
      fine_w % coarse_w != 0 || fine_h / coarse_h != fine_w / coarse_w) {
    throw ShapeError("pyramid index: coarse grid " + std::to_string(coarse_h) + "x" +
                     std::to_string(coarse_w) + " does not evenly tile " + std::to_string(fine_h) +
                     "x" + std::to_string(fine_w));
  }
  PyramidIndex p;
  p.fine_h = fine_h;
  p.fine_w = fine_w;
  Index off = 0;
  for (std::size_t l = 0; l < 3; ++l) {
    p.h[l] = coarse_h >> l;
    p.w[l] = coarse_w >> l;
    p.stride[l] = fine_h / p.h[l];
    p.offset[l] = off;
    off += p.h[l] * p.w[l];
    if (window[l] < 1 || p.h[l] % window[l] != 0 || p.w[l] % window[l] != 0) {
      throw ShapeError("pyramid index: window " + std::to_string(window[l]) + " does not tile level " +
                       std::to_string(l) + " (" + std::to_string(p.h[l]) + "x" +
                       std::to_string(p.w[l]) + ")");
    }
  }
  p.window = window;
  return p;
}

std::vector<CoarseMatch> topk_matches(const RowMatrix& scores, Index k) {
  if (k < 1) throw DomainError("topk_matches: k must be positive");
  const Index n = scores.size();
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  const double* s = scores.data();
  auto better = [s](Index a, Index b) { return s[a] > s[b] || (s[a] == s[b] && a < b); };
  const Index keep = std::min(k, n);
  std::partial_sort(idx.begin(), idx.begin() + keep, idx.end(), better);
  std::vector<CoarseMatch> out;
  out.reserve(static_cast<std::size_t>(keep));
  for (Index i = 0; i < keep; ++i) {
    const Index e = idx[static_cast<std::size_t>(i)];
    out.push_back({e / scores.cols(), e % scores.cols(), s[e]});
  }
  return out;
}

std::vector<FineMatch> mutual_nearest(std::span<const Index> pixels, std::span<const Index> points,
                                      const RowMatrix& pixel_features,
                                      const RowMatrix& point_features, double tau) {
  std::vector<FineMatch> out;
  if (pixels.empty() || points.empty()) return out;
  const Index np = static_cast<Index>(pixels.size()), nq = static_cast<Index>(points.size());
  RowMatrix a(np, pixel_features.cols()), b(nq, point_features.cols());
  for (Index i = 0; i < np; ++i) a.row(i) = pixel_features.row(pixels[static_cast<std::size_t>(i)]);
  for (Index j = 0; j < nq; ++j) b.row(j) = point_features.row(points[static_cast<std::size_t>(j)]);
  const RowMatrix s = a * b.transpose();
  std::vector<Index> best_q(static_cast<std::size_t>(np)), best_p(static_cast<std::size_t>(nq));
  for (Index i = 0; i < np; ++i) s.row(i).maxCoeff(&best_q[static_cast<std::size_t>(i)]);
  for (Index j = 0; j < nq; ++j) s.col(j).maxCoeff(&best_p[static_cast<std::size_t>(j)]);
  for (Index i = 0; i < np; ++i) {
    const Index j = best_q[static_cast<std::size_t>(i)];
    if (best_p[static_cast<std::size_t>(j)] == i && s(i, j) >= tau) {
      out.push_back({pixels[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(j)], s(i, j)});
    }
  }
  return out;
}

std::vector<Index> ball_query(const RowMatrix& xyz, Index center, double radius) {
  std::vector<Index> out;
  const double r2 = radius * radius;
  for (Index j = 0; j < xyz.rows(); ++j) {
    if ((xyz.row(j) - xyz.row(center)).squaredNorm() <= r2) out.push_back(j);
  }
  return out;
}

std::vector<FineMatch> fine_refine(std::span<const CoarseMatch> coarse, const PyramidIndex& index,
                                   const RowMatrix& pixel_features, const RowMatrix& point_features,
                                   const RowMatrix& xyz, const FineRefineOptions& options) {
  if (pixel_features.rows() != index.fine_h * index.fine_w) {
    throw ShapeError("fine_refine: " + std::to_string(pixel_features.rows()) +
                     " pixel features for a " + std::to_string(index.fine_h) + "x" +
                     std::to_string(index.fine_w) + " grid");
  }
  if (point_features.rows() != xyz.rows()) {
    throw ShapeError("fine_refine: point features and coordinates disagree in count");
  }
  const RowMatrix pf = normalize_rows(pixel_features), qf = normalize_rows(point_features);
  std::map<Index, FineMatch> best;
  for (const CoarseMatch& m : coarse) {
    const std::vector<Index> px = index.patch(m.token);
    const std::vector<Index> nb = ball_query(xyz, m.point, options.radius);
    for (const FineMatch& f : mutual_nearest(px, nb, pf, qf, options.tau)) {
      auto [it, inserted] = best.try_emplace(f.pixel, f);
      if (!inserted && f.score > it->second.score) it->second = f;
    }
  }
  std::vector<FineMatch> out;
  out.reserve(best.size());
  for (const auto& [_, f] : best) out.push_back(f);
  return out;
}

}  // namespace fsi2p
