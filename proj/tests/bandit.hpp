#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "fsi2p/policy.hpp"
#include "support.hpp"

namespace fsi2p::test {

// Stateless four-armed bandit whose best arm is depth 2.
inline constexpr std::array<double, 4> kBanditMeans{0.3, 0.6, 1.0, 0.7};
inline constexpr double kBanditNoise = 0.3;

inline double bandit_reward(int action, Rng& rng) {
  return kBanditMeans[static_cast<std::size_t>(action)] + kBanditNoise * rng.normal();
}

struct BanditRun {
  int greedy_action = -1;
  int updates = 0;
};

// REINFORCE with the EMA baseline and plain SGD on the shared policy.
inline BanditRun train_bandit(std::uint64_t seed, int max_updates, double lr = 0.05,
                              double momentum = 0.1) {
  Rng init(seed);
  Rng draws = Rng::stream(seed, "policy");
  PolicyParams p = init_policy(8, 16, init);
  const Tensor state = randn({1, 32}, init);
  double baseline = 0.0;
  BanditRun run;
  for (int step = 0; step < max_updates; ++step) {
    Tape tape;
    PolicyParams v{tape.variable(p.w1), tape.variable(p.b1), tape.variable(p.w2),
                   tape.variable(p.b2)};
    const Tensor log_pi = log_softmax(policy_logits(state, v), 0);
    const PolicyDecision d = select_action(log_pi, DecisionMode::sampled, draws);
    const double r = bandit_reward(d.action, draws);
    const Tensor loss = reinforce_loss(std::span(&d, 1), r, baseline);
    baseline = update_baseline(baseline, r, momentum);
    const GradTable g = tape.backward(loss);
    auto step_param = [&](Tensor& param, const Tensor& var) {
      if (auto grad = g.get(var)) param = Tensor(param.shape(), param.data() - lr * grad->data());
    };
    step_param(p.w1, v.w1);
    step_param(p.b1, v.b1);
    step_param(p.w2, v.w2);
    step_param(p.b2, v.b2);
    run.updates = step + 1;
  }
  Rng unused(0);
  run.greedy_action =
      select_action(log_softmax(policy_logits(state, p), 0), DecisionMode::greedy, unused).action;
  return run;
}

// Total variance of single-sample policy gradients at the uniform initial policy.
inline double gradient_variance(std::uint64_t seed, int samples, bool use_baseline,
                                double momentum = 0.1) {
  Rng init(seed);
  Rng draws = Rng::stream(seed, "policy");
  const PolicyParams p = init_policy(8, 16, init);
  const Tensor state = randn({1, 32}, init);
  double baseline = 0.0;
  std::vector<Eigen::VectorXd> grads;
  for (int s = 0; s < samples; ++s) {
    Tape tape;
    const Tensor b2 = tape.variable(p.b2);
    const Tensor log_pi = log_softmax(policy_logits(state, PolicyParams{p.w1, p.b1, p.w2, b2}), 0);
    const PolicyDecision d = select_action(log_pi, DecisionMode::sampled, draws);
    const double r = bandit_reward(d.action, draws);
    const GradTable g = tape.backward(reinforce_loss(std::span(&d, 1), r, use_baseline ? baseline : 0.0));
    grads.push_back(g.at(b2).data());
    if (use_baseline) baseline = update_baseline(baseline, r, momentum);
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(kActionCount);
  for (const auto& v : grads) mean += v;
  mean /= double(samples);
  double var = 0.0;
  for (const auto& v : grads) var += (v - mean).squaredNorm();
  return var / double(samples);
}

}  // namespace fsi2p::test
