#pragma once

#include <array>
#include <vector>

#include "fsi2p/tensor.hpp"

namespace fsi2p {

// Rows scaled to unit length; zero rows stay zero.
RowMatrix normalize_rows(const RowMatrix& x);

// Cosine similarity of every image token row against every point row.
RowMatrix score_map(const RowMatrix& image_tokens, const RowMatrix& points);
RowMatrix aggregate_max(const RowMatrix& a, const RowMatrix& b, const RowMatrix& c);

struct TokenRef {
  int level = 0;
  Index row = 0;
  Index col = 0;
};

// Maps rows of the unified three-level token stream to grid cells and to
// their footprint on the full-resolution pixel grid.
struct PyramidIndex {
  std::array<Index, 3> h{}, w{}, stride{}, offset{};
  std::array<Index, 3> window{1, 1, 1};
  Index fine_h = 0, fine_w = 0;

  Index total() const { return offset[2] + h[2] * w[2]; }
  TokenRef ref(Index token) const;
  // Pixel ids (row * fine_w + col) covered by the token, row-major.
  std::vector<Index> footprint(Index token) const;
  // Pixel ids covered by the window x window tile holding the token, row-major.
  std::vector<Index> patch(Index token) const;
  Index token_at(int level, Index pixel) const;
};

PyramidIndex make_pyramid_index(Index coarse_h, Index coarse_w, Index fine_h, Index fine_w,
                                std::array<Index, 3> window = {1, 1, 1});

struct CoarseMatch {
  Index token = 0;
  Index point = 0;
  double score = 0.0;
};

// k best entries by (score desc, row asc, col asc).
std::vector<CoarseMatch> topk_matches(const RowMatrix& scores, Index k);

struct FineMatch {
  Index pixel = 0;
  Index point = 0;
  double score = 0.0;
};

struct FineRefineOptions {
  double radius = 0.15;
  double tau = 0.6;
};

// Mutual-nearest cosine pairs between the listed pixels and points with score >= tau.
// Features are expected row-normalized.
std::vector<FineMatch> mutual_nearest(std::span<const Index> pixels, std::span<const Index> points,
                                      const RowMatrix& pixel_features,
                                      const RowMatrix& point_features, double tau);

// Indices of points within `radius` of point `center`, ascending.
std::vector<Index> ball_query(const RowMatrix& xyz, Index center, double radius);

// Features need not be normalized. Result is sorted by pixel id with one match per pixel.
std::vector<FineMatch> fine_refine(std::span<const CoarseMatch> coarse, const PyramidIndex& index,
                                   const RowMatrix& pixel_features, const RowMatrix& point_features,
                                   const RowMatrix& xyz, const FineRefineOptions& options);

}  // namespace fsi2p
