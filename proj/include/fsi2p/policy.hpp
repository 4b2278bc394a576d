#pragma once

#include <span>

#include "fsi2p/rng.hpp"
#include "fsi2p/tensor.hpp"

namespace fsi2p {

inline constexpr Index kActionCount = 4;

struct PolicyParams {
  Tensor w1;  // 4C x H
  Tensor b1;  // H
  Tensor w2;  // H x 4, zero at init
  Tensor b2;  // 4, zero at init
};

PolicyParams init_policy(Index channels, Index hidden, Rng& rng);

// [mean(image), max(image), mean(points), max(points)], cut off from the tape.
Tensor build_state(const Tensor& image, const Tensor& points);

Tensor policy_logits(const Tensor& state, const PolicyParams& params);
// Action probabilities.
Tensor policy_forward(const Tensor& state, const PolicyParams& params);

enum class DecisionMode { sampled, greedy };

struct PolicyDecision {
  int scale = 0;
  int action = 0;
  Tensor log_prob;  // scalar, on the tape when the policy is
  DecisionMode mode = DecisionMode::greedy;
};

// Takes log-probabilities so the chosen entry stays differentiable.
PolicyDecision select_action(const Tensor& log_pi, DecisionMode mode, Rng& rng, int scale = 0);

double compute_reward(double loss, double delta = 1e-6);
double update_baseline(double baseline, double reward, double momentum);

// -(R - B) * sum of log-probabilities, with the advantage held constant.
Tensor reinforce_loss(std::span<const PolicyDecision> decisions, double reward, double baseline);

}  // namespace fsi2p
