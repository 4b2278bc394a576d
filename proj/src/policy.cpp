#include "fsi2p/policy.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fsi2p {

PolicyParams init_policy(Index channels, Index hidden, Rng& rng) {
  const Index in = 4 * channels;
  Eigen::VectorXd w1(in * hidden);
  const double s = std::sqrt(2.0 / double(in));
  for (Index i = 0; i < w1.size(); ++i) w1[i] = s * rng.normal();
  return {Tensor({in, hidden}, w1), Tensor::zeros({hidden}), Tensor::zeros({hidden, kActionCount}),
          Tensor::zeros({kActionCount})};
}

Tensor build_state(const Tensor& image, const Tensor& points) {
  if (image.rank() != 2 || points.rank() != 2 || image.dim(0) < 1 || points.dim(0) < 1) {
    throw ShapeError("build_state: need at least one token per modality, got " +
                     shape_str(image.shape()) + " and " + shape_str(points.shape()));
  }
  const Eigen::Map<const RowMatrix> fi = image.mat(), fp = points.mat();
  const Index c = fi.cols();
  Eigen::VectorXd s(4 * c);
  s.segment(0, c) = fi.colwise().mean().transpose();
  s.segment(c, c) = fi.colwise().maxCoeff().transpose();
  s.segment(2 * c, fp.cols()) = fp.colwise().mean().transpose();
  s.segment(2 * c + fp.cols(), fp.cols()) = fp.colwise().maxCoeff().transpose();
  return Tensor({1, 4 * c}, s);
}

Tensor policy_logits(const Tensor& state, const PolicyParams& params) {
  const Tensor s = reshape(state, {1, state.size()});
  const Tensor h = relu(add(matmul(s, params.w1), params.b1));
  return reshape(add(matmul(h, params.w2), params.b2), {kActionCount});
}

Tensor policy_forward(const Tensor& state, const PolicyParams& params) {
  return softmax(policy_logits(state, params), 0);
}

PolicyDecision select_action(const Tensor& log_pi, DecisionMode mode, Rng& rng, int scale) {
  if (log_pi.size() < 1) throw ShapeError("select_action: empty distribution");
  const Eigen::VectorXd& lp = log_pi.data();
  int action = 0;
  if (mode == DecisionMode::greedy) {
    for (Index a = 1; a < lp.size(); ++a)
      if (lp[a] > lp[action]) action = static_cast<int>(a);
  } else {
    const double u = rng.uniform();
    double cdf = 0.0;
    action = static_cast<int>(lp.size() - 1);
    for (Index a = 0; a < lp.size(); ++a) {
      cdf += std::exp(lp[a]);
      if (u < cdf) {
        action = static_cast<int>(a);
        break;
      }
    }
    // Rounding may leave the tail of the CDF short of 1; never land on a zero-probability action.
    while (action > 0 && std::exp(lp[action]) == 0.0) --action;
  }
  return {scale, action, reshape(slice(reshape(log_pi, {lp.size()}), 0, action, action + 1), {}),
          mode};
}

double compute_reward(double loss, double delta) {
  if (!(loss >= 0.0)) throw DomainError("compute_reward: loss " + std::to_string(loss) + " is negative");
  if (!(delta > 0.0)) throw DomainError("compute_reward: delta must be positive");
  return 1.0 / (loss + delta);
}

double update_baseline(double baseline, double reward, double momentum) {
  if (!(momentum > 0.0 && momentum <= 1.0)) {
    throw DomainError("update_baseline: momentum " + std::to_string(momentum) + " outside (0, 1]");
  }
  return (1.0 - momentum) * baseline + momentum * reward;
}

Tensor reinforce_loss(std::span<const PolicyDecision> decisions, double reward, double baseline) {
  Tensor sum_lp = Tensor::scalar(0.0);
  for (const PolicyDecision& d : decisions) {
    if (d.mode != DecisionMode::sampled) {
      throw std::logic_error("reinforce_loss: greedy decision for scale " + std::to_string(d.scale));
    }
    sum_lp = add(sum_lp, d.log_prob);
  }
  return scale(sum_lp, -(reward - baseline));
}

}  // namespace fsi2p
