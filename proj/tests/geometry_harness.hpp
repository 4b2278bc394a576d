#pragma once

#include <vector>

#include "fsi2p/geometry.hpp"

namespace fsi2p::test {

inline Eigen::Matrix3d desk_intrinsics() {
  Eigen::Matrix3d k;
  k << 100, 0, 64, 0, 100, 48, 0, 0, 1;
  return k;
}

inline Posed random_pose(Rng& rng, double max_angle = 0.5, double max_t = 0.5) {
  const Eigen::Vector3d axis =
      Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
  Posed p;
  p.R = Eigen::AngleAxisd(rng.uniform(-max_angle, max_angle), axis).toRotationMatrix();
  p.t = Eigen::Vector3d(rng.uniform(-max_t, max_t), rng.uniform(-max_t, max_t),
                        rng.uniform(-max_t, max_t));
  return p;
}

// World points whose camera-frame depth lies in [1, 4] and that project inside the image.
inline std::vector<Eigen::Vector3d> visible_points(Index n, const Posed& pose,
                                                   const Eigen::Matrix3d& K, Rng& rng) {
  std::vector<Eigen::Vector3d> out;
  while (static_cast<Index>(out.size()) < n) {
    const Eigen::Vector2d px(rng.uniform(0, 128), rng.uniform(0, 96));
    const Eigen::Vector3d cam = back_project<double>(px, rng.uniform(1.0, 4.0), K);
    out.push_back(pose.R.transpose() * (cam - pose.t));
  }
  return out;
}

struct RansacTrial {
  std::vector<Correspondence2D3D> corrs;
  std::vector<bool> outlier;
  Posed truth;
};

// Noise-free inliers with a fraction of correspondences replaced by random pixels.
inline RansacTrial make_ransac_trial(Index n, double outlier_fraction, Rng& rng) {
  RansacTrial trial;
  const Eigen::Matrix3d K = desk_intrinsics();
  trial.truth = random_pose(rng);
  const auto pts = visible_points(n, trial.truth, K, rng);
  const Index outliers = static_cast<Index>(std::lround(outlier_fraction * double(n)));
  for (Index i = 0; i < n; ++i) {
    const bool bad = i < outliers;
    Eigen::Vector2d px = project<double>(pts[static_cast<std::size_t>(i)], K, trial.truth);
    if (bad) {
      Eigen::Vector2d far;
      do {
        far = Eigen::Vector2d(rng.uniform(0, 128), rng.uniform(0, 96));
      } while ((far - px).norm() < 20.0);
      px = far;
    }
    trial.corrs.push_back({px, pts[static_cast<std::size_t>(i)]});
    trial.outlier.push_back(bad);
  }
  return trial;
}

}  // namespace fsi2p::test
