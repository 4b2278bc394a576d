#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fsi2p/errors.hpp"
#include "fsi2p/matching.hpp"
#include "fsi2p/rng.hpp"

namespace fsi2p {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

template <typename Scalar>
struct Pose {
  Mat3<Scalar> R = Mat3<Scalar>::Identity();
  Vec3<Scalar> t = Vec3<Scalar>::Zero();

  Vec3<Scalar> apply(const Vec3<Scalar>& x) const { return R * x + t; }
};

using Posed = Pose<double>;

// x ~ K (R X + t)
template <typename Scalar>
Vec2<Scalar> project(const Vec3<Scalar>& x, const Mat3<Scalar>& K, const Pose<Scalar>& pose) {
  const Vec3<Scalar> h = K * pose.apply(x);
  if (!(h.z() > Scalar(0))) {
    throw DomainError("project: point behind the camera (depth " + std::to_string(double(h.z())) + ")");
  }
  return h.template head<2>() / h.z();
}

// Camera-frame point at depth z along the ray through `pixel`.
template <typename Scalar>
Vec3<Scalar> back_project(const Vec2<Scalar>& pixel, Scalar z, const Mat3<Scalar>& K) {
  return z * K.inverse() * Vec3<Scalar>(pixel.x(), pixel.y(), Scalar(1));
}

// Angle of R_a^T R_b in radians.
template <typename Scalar>
Scalar rotation_angle(const Mat3<Scalar>& a, const Mat3<Scalar>& b) {
  const Scalar c = ((a.transpose() * b).trace() - Scalar(1)) / Scalar(2);
  return std::acos(std::clamp(c, Scalar(-1), Scalar(1)));
}

struct Correspondence2D3D {
  Eigen::Vector2d pixel;
  Eigen::Vector3d point;
};

Posed pnp_dlt(std::span<const Correspondence2D3D> corrs, const Eigen::Matrix3d& K);

struct RansacOptions {
  int iterations = 500;
  double threshold_px = 2.0;
};

struct RansacResult {
  bool success = false;
  Posed pose;
  std::vector<bool> inliers;
  Index inlier_count = 0;
};

RansacResult ransac_pose(std::span<const Correspondence2D3D> corrs, const Eigen::Matrix3d& K,
                         const RansacOptions& options, Rng& rng);

inline constexpr double kInlierDistance = 0.05;
inline constexpr double kFmrThreshold = 0.10;
inline constexpr double kRegistrationRmse = 0.10;

// Fraction of matches whose point lies within `threshold` of the 3-D point that
// owns the matched pixel; owner < 0 marks background.
double inlier_ratio(std::span<const FineMatch> matches, std::span<const Index> pixel_owner,
                    const RowMatrix& xyz, double threshold = kInlierDistance);

// RMSE between the cloud under the estimated and the true pose.
double pose_rmse(const RowMatrix& xyz, const Posed& estimate, const Posed& truth);

double feature_match_recall(std::span<const double> inlier_ratios, double threshold = kFmrThreshold);

struct RegistrationMetrics {
  double inlier_ratio = 0.0;
  bool feature_match = false;
  bool registered = false;
  double rmse = 0.0;
  double rotation_error_deg = 0.0;
  double translation_error = 0.0;
};

RegistrationMetrics compute_metrics(std::span<const FineMatch> matches,
                                    std::span<const Index> pixel_owner, const RowMatrix& xyz,
                                    const Posed& truth, const RansacResult& estimate);

// Biased RBF-kernel MMD between the rows of x and y (square root of the clamped estimate).
template <typename DerivedX, typename DerivedY>
double mmd_rbf(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y,
               double bandwidth) {
  if (x.rows() == 0 || y.rows() == 0) throw ShapeError("mmd_rbf: empty sample set");
  if (x.cols() != y.cols()) throw ShapeError("mmd_rbf: sample dimensions differ");
  if (!(bandwidth > 0)) throw DomainError("mmd_rbf: bandwidth must be positive");
  const double g = 1.0 / (2.0 * bandwidth * bandwidth);
  auto mean_kernel = [g](const auto& a, const auto& b) {
    double s = 0.0;
    for (Index i = 0; i < a.rows(); ++i)
      for (Index j = 0; j < b.rows(); ++j)
        s += std::exp(-g * (a.row(i) - b.row(j)).squaredNorm());
    return s / double(a.rows() * b.rows());
  };
  const auto xe = x.template cast<double>().eval();
  const auto ye = y.template cast<double>().eval();
  const double v = mean_kernel(xe, xe) + mean_kernel(ye, ye) - 2.0 * mean_kernel(xe, ye);
  return std::sqrt(std::max(v, 0.0));
}

}  // namespace fsi2p
