#include "fsi2p/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace fsi2p {

namespace {

constexpr Index kMinimalSet = 6;

}  // namespace

Posed pnp_dlt(std::span<const Correspondence2D3D> corrs, const Eigen::Matrix3d& K) {
  const Index n = static_cast<Index>(corrs.size());
  if (n < kMinimalSet) {
    throw DomainError("pnp_dlt: need at least 6 correspondences, got " + std::to_string(n));
  }
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& c : corrs) centroid += c.point;
  centroid /= double(n);
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  double spread = 0.0;
  for (const auto& c : corrs) {
    const Eigen::Vector3d d = c.point - centroid;
    scatter += d * d.transpose();
    spread += d.norm();
  }
  spread /= double(n);
  if (!(spread > 0)) throw DegenerateConfiguration("pnp_dlt: all points coincide");
  const Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(scatter).eigenvalues();
  if (ev[0] <= 1e-12 * ev[2]) throw DegenerateConfiguration("pnp_dlt: points are coplanar");
  const double s = std::sqrt(3.0) / spread;

  const Eigen::Matrix3d kinv = K.inverse();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 12);
  for (Index i = 0; i < n; ++i) {
    const auto& c = corrs[static_cast<std::size_t>(i)];
    const Eigen::Vector3d u = kinv * Eigen::Vector3d(c.pixel.x(), c.pixel.y(), 1.0);
    const double un = u.x() / u.z(), vn = u.y() / u.z();
    Eigen::Vector4d x;
    x << s * (c.point - centroid), 1.0;
    a.block<1, 4>(2 * i, 0) = x.transpose();
    a.block<1, 4>(2 * i, 8) = -un * x.transpose();
    a.block<1, 4>(2 * i + 1, 4) = x.transpose();
    a.block<1, 4>(2 * i + 1, 8) = -vn * x.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd sv = svd.singularValues();
  if (sv[10] <= 1e-10 * sv[0]) throw DegenerateConfiguration("pnp_dlt: rank-deficient system");
  const Eigen::VectorXd p = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> pn;
  pn << p.segment<4>(0).transpose(), p.segment<4>(4).transpose(), p.segment<4>(8).transpose();
  // Undo the point normalisation: X_n = s (X - centroid).
  Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
  t.topLeftCorner<3, 3>() *= s;
  t.topRightCorner<3, 1>() = -s * centroid;
  Eigen::Matrix<double, 3, 4> pm = pn * t;

  int positive = 0;
  for (const auto& c : corrs) positive += (pm.row(2).head<3>().dot(c.point) + pm(2, 3)) > 0 ? 1 : -1;
  if (positive < 0) pm = -pm;

  Eigen::JacobiSVD<Eigen::Matrix3d> polar(pm.leftCols<3>(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (polar.matrixU() * polar.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  Posed pose;
  pose.R = polar.matrixU() * d * polar.matrixV().transpose();
  pose.t = pm.col(3) / polar.singularValues().mean();
  return pose;
}

namespace {

bool reprojects(const Correspondence2D3D& c, const Eigen::Matrix3d& K, const Posed& pose,
                double threshold) {
  const Eigen::Vector3d h = K * pose.apply(c.point);
  if (!(h.z() > 0)) return false;
  return (h.head<2>() / h.z() - c.pixel).norm() <= threshold;
}

}  // namespace

RansacResult ransac_pose(std::span<const Correspondence2D3D> corrs, const Eigen::Matrix3d& K,
                         const RansacOptions& options, Rng& rng) {
  const Index n = static_cast<Index>(corrs.size());
  if (n < kMinimalSet) {
    throw DomainError("ransac_pose: need at least 6 correspondences, got " + std::to_string(n));
  }
  RansacResult best;
  std::vector<Index> pool(static_cast<std::size_t>(n));
  std::vector<Correspondence2D3D> sample(kMinimalSet);
  std::vector<bool> mask(static_cast<std::size_t>(n));
  for (int it = 0; it < options.iterations; ++it) {
    std::iota(pool.begin(), pool.end(), Index{0});
    for (Index k = 0; k < kMinimalSet; ++k) {
      const Index j = k + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - k)));
      std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(j)]);
      sample[static_cast<std::size_t>(k)] = corrs[static_cast<std::size_t>(pool[static_cast<std::size_t>(k)])];
    }
    Posed pose;
    try {
      pose = pnp_dlt(sample, K);
    } catch (const DegenerateConfiguration&) {
      continue;
    }
    Index count = 0;
    for (Index i = 0; i < n; ++i) {
      mask[static_cast<std::size_t>(i)] = reprojects(corrs[static_cast<std::size_t>(i)], K, pose, options.threshold_px);
      count += mask[static_cast<std::size_t>(i)];
    }
    if (count > best.inlier_count) {
      best.inlier_count = count;
      best.pose = pose;
      best.inliers = mask;
    }
  }
  if (best.inlier_count < kMinimalSet) {
    best.success = false;
    best.inliers.assign(static_cast<std::size_t>(n), false);
    return best;
  }
  best.success = true;
  std::vector<Correspondence2D3D> in;
  for (Index i = 0; i < n; ++i)
    if (best.inliers[static_cast<std::size_t>(i)]) in.push_back(corrs[static_cast<std::size_t>(i)]);
  try {
    best.pose = pnp_dlt(in, K);
  } catch (const DegenerateConfiguration&) {
  }
  return best;
}

double inlier_ratio(std::span<const FineMatch> matches, std::span<const Index> pixel_owner,
                    const RowMatrix& xyz, double threshold) {
  if (matches.empty()) return 0.0;
  Index good = 0;
  for (const FineMatch& m : matches) {
    const Index owner = pixel_owner[static_cast<std::size_t>(m.pixel)];
    if (owner < 0) continue;
    if ((xyz.row(m.point) - xyz.row(owner)).norm() <= threshold) ++good;
  }
  return double(good) / double(matches.size());
}

double pose_rmse(const RowMatrix& xyz, const Posed& estimate, const Posed& truth) {
  if (xyz.rows() == 0) return 0.0;
  double acc = 0.0;
  for (Index i = 0; i < xyz.rows(); ++i) {
    const Eigen::Vector3d x = xyz.row(i).transpose();
    acc += (estimate.apply(x) - truth.apply(x)).squaredNorm();
  }
  return std::sqrt(acc / double(xyz.rows()));
}

double feature_match_recall(std::span<const double> inlier_ratios, double threshold) {
  if (inlier_ratios.empty()) return 0.0;
  const auto hits = std::count_if(inlier_ratios.begin(), inlier_ratios.end(),
                                  [threshold](double ir) { return ir > threshold; });
  return double(hits) / double(inlier_ratios.size());
}

RegistrationMetrics compute_metrics(std::span<const FineMatch> matches,
                                    std::span<const Index> pixel_owner, const RowMatrix& xyz,
                                    const Posed& truth, const RansacResult& estimate) {
  RegistrationMetrics m;
  m.inlier_ratio = inlier_ratio(matches, pixel_owner, xyz);
  m.feature_match = m.inlier_ratio > kFmrThreshold;
  if (estimate.success) {
    m.rmse = pose_rmse(xyz, estimate.pose, truth);
    m.registered = m.rmse < kRegistrationRmse;
    m.rotation_error_deg = rotation_angle(estimate.pose.R, truth.R) * 180.0 / M_PI;
    m.translation_error = (estimate.pose.t - truth.t).norm();
  } else {
    m.rmse = std::numeric_limits<double>::infinity();
    m.rotation_error_deg = 180.0;
    m.translation_error = std::numeric_limits<double>::infinity();
  }
  return m;
}

}  // namespace fsi2p
