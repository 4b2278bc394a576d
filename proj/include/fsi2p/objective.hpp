#pragma once

#include <cstdint>
#include <span>

#include "fsi2p/tensor.hpp"

namespace fsi2p {

struct CircleLossParams {
  double zeta = 10.0;
  double delta_p = 0.1;
  double delta_n = 1.4;
};

enum class PairLabel : std::int8_t { negative = -1, ignored = 0, positive = 1 };

struct CoarseLabel {
  PairLabel label = PairLabel::ignored;
  double lambda_p = 0.0;
};

inline constexpr double kCoarsePositiveOverlap = 0.30;
inline constexpr double kCoarseNegativeOverlap = 0.20;
inline constexpr double kFinePositive3d = 0.0375;
inline constexpr double kFinePositive2d = 8.0;
inline constexpr double kFineNegative3d = 0.10;
inline constexpr double kFineNegative2d = 12.0;

CoarseLabel label_coarse(double overlap_2d, double overlap_3d);
PairLabel label_fine(double dist_3d, double dist_2d);

using LabelMatrix = Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense anchor x candidate labelling. lambda_p is read only where positive and
// an empty lambda_p means 1 everywhere; lambda_n is 1 throughout.
struct AnchorLabels {
  LabelMatrix label;
  RowMatrix lambda_p;

  Index anchors() const { return label.rows(); }
  Index candidates() const { return label.cols(); }
  double lambda(Index i, Index j) const { return lambda_p.size() == 0 ? 1.0 : lambda_p(i, j); }
  AnchorLabels transposed() const;
};

// One anchor's term evaluated straight from the formula.
double circle_loss_anchor(std::span<const double> pos_d, std::span<const double> pos_lambda,
                          std::span<const double> neg_d, std::span<const double> neg_lambda,
                          const CircleLossParams& params);

// sqrt(2 - 2 a.b + eps) for every row pair of two row-normalized matrices.
Tensor feature_distance(const Tensor& a, const Tensor& b, double eps = 1e-12);

// Mean of the per-row circle loss over rows having both positives and
// negatives (zero when there are none). Weights are held constant in the
// backward pass.
Tensor circle_loss(const Tensor& distances, const AnchorLabels& labels,
                   const CircleLossParams& params);

// Average of the row-anchored and column-anchored losses.
Tensor circle_loss_symmetric(const Tensor& distances, const AnchorLabels& labels,
                             const CircleLossParams& params);

Tensor total_loss(const Tensor& l_coarse, const Tensor& l_fine, const Tensor& l_r, double xi1,
                  double xi2);

}  // namespace fsi2p
