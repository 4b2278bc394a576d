#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "fsi2p/focus_sweep.hpp"
#include "fsi2p/objective.hpp"
#include "fsi2p/policy.hpp"
#include "fsi2p/ssm.hpp"
#include "support.hpp"

namespace fsi2p::test {

inline SsmParams random_ssm(Index c, Index s, Rng& rng) {
  SsmParams p = init_ssm(c, s, rng);
  p.a_log = randn({c, s}, rng, 0.5);
  p.delta_w = randn({c, c}, rng, 0.3);
  p.delta_b = randn({c}, rng, 0.5);
  p.d_skip = randn({c}, rng);
  return p;
}

inline SsmLayer random_ssm_layer(Index c, Index s, Rng& rng) {
  SsmLayer l = init_ssm_layer(c, s, rng);
  l.scan.a_log = randn({c, s}, rng, 0.5);
  l.scan.delta_b = randn({c}, rng, 0.5);
  l.scan.d_skip = randn({c}, rng);
  l.out_w = randn({c, c}, rng, 0.2);
  l.out_b = randn({c}, rng, 0.1);
  return l;
}

inline MLayerParams random_mlayer(Index c, Index s, Index hidden, Index streams, Rng& rng) {
  MLayerParams p = init_mlayer(c, s, hidden, streams, rng);
  p.focus.modulation.b1 = randn({hidden}, rng, 0.1);
  p.focus.modulation.w2 = randn({hidden, 3 * c}, rng, 0.3);
  p.focus.modulation.b2 = randn({3 * c}, rng, 0.1);
  p.focus.ssm = random_ssm_layer(c, s, rng);
  p.sweep.ssm = random_ssm_layer(c, s, rng);
  p.sweep.lambda_raw = randn({streams}, rng);
  return p;
}

inline PolicyParams random_policy(Index channels, Rng& rng) {
  PolicyParams p = init_policy(channels, 16, rng);
  p.b1 = randn({16}, rng, 0.3);
  p.w2 = randn({16, kActionCount}, rng, 0.5);
  p.b2 = randn({kActionCount}, rng, 0.5);
  return p;
}

inline AnchorLabels random_labels(Index m, Index n, Rng& rng, bool with_lambda) {
  AnchorLabels l;
  l.label.resize(m, n);
  for (Index i = 0; i < l.label.size(); ++i)
    l.label.data()[i] = static_cast<std::int8_t>(int(rng.below(3)) - 1);
  if (with_lambda) {
    l.lambda_p.resize(m, n);
    for (Index i = 0; i < l.lambda_p.size(); ++i) l.lambda_p.data()[i] = rng.uniform(0.3, 1.0);
  }
  return l;
}

// Term-by-term transcription with the weights supplied from outside.
inline long double frozen_loss(const RowMatrix& d, const AnchorLabels& l, const RowMatrix& beta,
                               const CircleLossParams& p, Index k = -1, long double h = 0) {
  long double total = 0;
  int valid = 0;
  auto at = [&](Index i, Index j) {
    return static_cast<long double>(d(i, j)) + (i * d.cols() + j == k ? h : 0.0L);
  };
  for (Index i = 0; i < d.rows(); ++i) {
    long double sp = 0, sn = 0;
    bool hp = false, hn = false;
    for (Index j = 0; j < d.cols(); ++j) {
      if (l.label(i, j) == 1) {
        sp += std::exp(beta(i, j) * (at(i, j) - p.delta_p));
        hp = true;
      } else if (l.label(i, j) == -1) {
        sn += std::exp(beta(i, j) * (p.delta_n - at(i, j)));
        hn = true;
      }
    }
    if (!hp || !hn) continue;
    total += std::log(1.0L + sp * sn) / p.zeta;
    ++valid;
  }
  return valid ? total / valid : 0.0L;
}

inline RowMatrix weights_at(const RowMatrix& d, const AnchorLabels& l, const CircleLossParams& p) {
  RowMatrix b = RowMatrix::Zero(d.rows(), d.cols());
  for (Index i = 0; i < d.rows(); ++i)
    for (Index j = 0; j < d.cols(); ++j) {
      if (l.label(i, j) == 1) b(i, j) = std::max(0.0, p.zeta * l.lambda(i, j) * (d(i, j) - p.delta_p));
      if (l.label(i, j) == -1) b(i, j) = std::max(0.0, p.zeta * (p.delta_n - d(i, j)));
    }
  return b;
}

// Central-difference check of the circle loss against the frozen-weight oracle.
inline double circle_gradient_error(const RowMatrix& d, const AnchorLabels& l, const CircleLossParams& p) {
  Tape tape;
  const Tensor x = tape.variable(Tensor::matrix(d));
  const GradTable g = tape.backward(circle_loss(x, l, p));
  const RowMatrix beta = weights_at(d, l, p);
  const long double h = 1e-5L;
  double worst = 0.0;
  for (Index k = 0; k < d.size(); ++k) {
    const double num =
        double((frozen_loss(d, l, beta, p, k, h) - frozen_loss(d, l, beta, p, k, -h)) / (2 * h));
    const double ana = g.contains(x) ? g.at(x).data()[k] : 0.0;
    worst = std::max(worst, std::abs(ana - num) / std::max(std::abs(ana), 1e-8));
  }
  return worst;
}

// Long-double transcription of -(r - b) log pi(action | state) for one decision.
inline long double reinforce_oracle(const RowMatrix& state, const std::array<RowMatrix, 4>& p, int action,
                                    long double advantage, std::size_t which = 0, Index k = -1,
                                    long double h = 0) {
  auto at = [&](std::size_t t, Index i, Index j) {
    return static_cast<long double>(p[t](i, j)) + (t == which && i * p[t].cols() + j == k ? h : 0.0L);
  };
  const Index in = p[0].rows(), hidden = p[0].cols();
  std::vector<long double> hid(static_cast<std::size_t>(hidden));
  for (Index j = 0; j < hidden; ++j) {
    long double v = at(1, 0, j);
    for (Index i = 0; i < in; ++i) v += static_cast<long double>(state(0, i)) * at(0, i, j);
    hid[static_cast<std::size_t>(j)] = std::max(0.0L, v);
  }
  std::array<long double, kActionCount> logits{};
  for (Index a = 0; a < kActionCount; ++a) {
    logits[static_cast<std::size_t>(a)] = at(3, 0, a);
    for (Index j = 0; j < hidden; ++j)
      logits[static_cast<std::size_t>(a)] += hid[static_cast<std::size_t>(j)] * at(2, j, a);
  }
  const long double top = *std::max_element(logits.begin(), logits.end());
  long double z = 0;
  for (long double l : logits) z += std::exp(l - top);
  return -advantage * (logits[static_cast<std::size_t>(action)] - top - std::log(z));
}

// Smallest distance of a hidden pre-activation from the ReLU kink.
inline double kink_margin(const Tensor& state, const PolicyParams& p) {
  const Tensor pre = add(matmul(reshape(state, {1, state.size()}), p.w1), p.b1);
  return pre.data().cwiseAbs().minCoeff();
}

// Sampled REINFORCE gradient of every policy tensor against long-double central differences.
inline double reinforce_gradient_error(const Tensor& state, const PolicyParams& p, std::uint64_t draw_seed,
                                       double reward, double baseline) {
  Tape tape;
  const PolicyParams v{tape.variable(p.w1), tape.variable(p.b1), tape.variable(p.w2), tape.variable(p.b2)};
  Rng draws(draw_seed);
  const PolicyDecision d =
      select_action(log_softmax(policy_logits(state, v), 0), DecisionMode::sampled, draws);
  const GradTable g = tape.backward(reinforce_loss(std::span(&d, 1), reward, baseline));
  const std::array<Tensor, 4> vars{v.w1, v.b1, v.w2, v.b2};
  const std::array<RowMatrix, 4> mats{p.w1.to_matrix(), reshape(p.b1, {1, p.b1.size()}).to_matrix(),
                                      p.w2.to_matrix(), reshape(p.b2, {1, p.b2.size()}).to_matrix()};
  const RowMatrix s = reshape(state, {1, state.size()}).to_matrix();
  const long double adv = static_cast<long double>(reward) - baseline, h = 1e-6L;
  double worst = 0.0;
  for (std::size_t t = 0; t < 4; ++t)
    for (Index k = 0; k < mats[t].size(); ++k) {
      const double num = double((reinforce_oracle(s, mats, d.action, adv, t, k, h) -
                                 reinforce_oracle(s, mats, d.action, adv, t, k, -h)) /
                                (2 * h));
      const double ana = g.contains(vars[t]) ? g.at(vars[t]).data()[k] : 0.0;
      worst = std::max(worst, std::abs(ana - num) / std::max(std::abs(ana), 1e-8));
    }
  return worst;
}

}  // namespace fsi2p::test
