#include "fsi2p/objective.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace fsi2p {

CoarseLabel label_coarse(double overlap_2d, double overlap_3d) {
  if (overlap_2d >= kCoarsePositiveOverlap && overlap_3d >= kCoarsePositiveOverlap) {
    return {PairLabel::positive, std::min(overlap_2d, overlap_3d)};
  }
  if (overlap_2d < kCoarseNegativeOverlap && overlap_3d < kCoarseNegativeOverlap) {
    return {PairLabel::negative, 0.0};
  }
  return {};
}

PairLabel label_fine(double dist_3d, double dist_2d) {
  if (dist_3d < kFinePositive3d && dist_2d < kFinePositive2d) return PairLabel::positive;
  if (dist_3d > kFineNegative3d || dist_2d > kFineNegative2d) return PairLabel::negative;
  return PairLabel::ignored;
}

AnchorLabels AnchorLabels::transposed() const {
  return {label.transpose(), lambda_p.size() == 0 ? RowMatrix() : RowMatrix(lambda_p.transpose())};
}

double circle_loss_anchor(std::span<const double> pos_d, std::span<const double> pos_lambda,
                          std::span<const double> neg_d, std::span<const double> neg_lambda,
                          const CircleLossParams& p) {
  if (pos_d.empty() || neg_d.empty()) return 0.0;
  double sp = 0.0, sn = 0.0;
  for (std::size_t j = 0; j < pos_d.size(); ++j) {
    const double beta = std::max(0.0, p.zeta * pos_lambda[j] * (pos_d[j] - p.delta_p));
    sp += std::exp(beta * (pos_d[j] - p.delta_p));
  }
  for (std::size_t j = 0; j < neg_d.size(); ++j) {
    const double beta = std::max(0.0, p.zeta * neg_lambda[j] * (p.delta_n - neg_d[j]));
    sn += std::exp(beta * (p.delta_n - neg_d[j]));
  }
  return std::log1p(sp * sn) / p.zeta;
}

Tensor feature_distance(const Tensor& a, const Tensor& b, double eps) {
  return sqrt(add_scalar(scale(matmul(a, transpose(b)), -2.0), 2.0 + eps));
}

namespace {

double softplus_value(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

Tensor circle_loss(const Tensor& distances, const AnchorLabels& labels,
                   const CircleLossParams& p) {
  if (distances.rank() != 2 || distances.dim(0) != labels.anchors() ||
      distances.dim(1) != labels.candidates()) {
    throw ShapeError("circle_loss: distances " + shape_str(distances.shape()) + " vs labels " +
                     std::to_string(labels.anchors()) + "x" + std::to_string(labels.candidates()));
  }
  const Index m = distances.dim(0), n = distances.dim(1);
  const auto d = distances.mat();
  // Per-entry d(loss)/d(distance) before averaging.
  RowMatrix slope = RowMatrix::Zero(m, n);
  double total = 0.0;
  Index valid = 0;
  std::vector<double> ep, en;
  std::vector<Index> jp, jn;
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < m; ++i) {
    jp.clear();
    jn.clear();
    ep.clear();
    en.clear();
    double mp = kNegInf, mn = kNegInf;
    for (Index j = 0; j < n; ++j) {
      const auto l = static_cast<PairLabel>(labels.label(i, j));
      if (l == PairLabel::positive) {
        const double x = d(i, j) - p.delta_p;
        const double e = std::max(0.0, p.zeta * labels.lambda(i, j) * x) * x;
        jp.push_back(j);
        ep.push_back(e);
        mp = std::max(mp, e);
      } else if (l == PairLabel::negative) {
        const double x = p.delta_n - d(i, j);
        const double e = std::max(0.0, p.zeta * x) * x;
        jn.push_back(j);
        en.push_back(e);
        mn = std::max(mn, e);
      }
    }
    if (jp.empty() || jn.empty()) continue;
    double sp = 0.0, sn = 0.0;
    for (double& e : ep) sp += (e = std::exp(e - mp));
    for (double& e : en) sn += (e = std::exp(e - mn));
    const double z = mp + std::log(sp) + mn + std::log(sn);
    total += softplus_value(z) / p.zeta;
    ++valid;
    const double g = sigmoid(z) / p.zeta;
    for (std::size_t k = 0; k < jp.size(); ++k) {
      const Index j = jp[k];
      const double beta = std::max(0.0, p.zeta * labels.lambda(i, j) * (d(i, j) - p.delta_p));
      slope(i, j) = g * (ep[k] / sp) * beta;
    }
    for (std::size_t k = 0; k < jn.size(); ++k) {
      const Index j = jn[k];
      const double beta = std::max(0.0, p.zeta * (p.delta_n - d(i, j)));
      slope(i, j) = -g * (en[k] / sn) * beta;
    }
  }
  const double inv = valid > 0 ? 1.0 / double(valid) : 0.0;
  Eigen::VectorXd value(1);
  value[0] = total * inv;
  if (!distances.requires_grad()) return Tensor({}, value);
  slope *= inv;
  const Tensor inputs[] = {distances};
  return distances.tape()->record(
      {}, value, inputs,
      [slope = std::move(slope)](const Eigen::VectorXd& g, std::span<Eigen::VectorXd*> gin) {
        if (gin[0]) *gin[0] += g[0] * Eigen::Map<const Eigen::VectorXd>(slope.data(), slope.size());
      });
}

Tensor circle_loss_symmetric(const Tensor& distances, const AnchorLabels& labels,
                             const CircleLossParams& params) {
  return scale(add(circle_loss(distances, labels, params),
                   circle_loss(transpose(distances), labels.transposed(), params)),
               0.5);
}

Tensor total_loss(const Tensor& l_coarse, const Tensor& l_fine, const Tensor& l_r, double xi1,
                  double xi2) {
  if (xi1 < 0 || xi2 < 0) throw DomainError("total_loss: negative weight");
  return add(scale(add(l_coarse, l_fine), xi1), scale(l_r, xi2));
}

}  // namespace fsi2p
