#include <doctest.h>

#include <cmath>

#include "fsi2p/embedding.hpp"
#include "support.hpp"

using namespace fsi2p;
using fsi2p::test::randn;
using fsi2p::test::readout;

namespace {

AttentionParams random_attention(Index c, Index heads, Rng& rng) {
  return init_attention(c, heads, rng, false);
}

RowMatrix naive_attention(const RowMatrix& q_in, const RowMatrix& ctx, const AttentionWeights& w,
                          Index heads) {
  const RowMatrix q = q_in * w.wq.mat(), k = ctx * w.wk.mat(), v = ctx * w.wv.mat();
  const Index dh = q.cols() / heads;
  RowMatrix cat = RowMatrix::Zero(q.rows(), q.cols());
  for (Index h = 0; h < heads; ++h) {
    for (Index i = 0; i < q.rows(); ++i) {
      std::vector<double> s(static_cast<std::size_t>(k.rows()));
      double top = -1e300;
      for (Index j = 0; j < k.rows(); ++j) {
        double dot = 0;
        for (Index e = 0; e < dh; ++e) dot += q(i, h * dh + e) * k(j, h * dh + e);
        s[static_cast<std::size_t>(j)] = dot / std::sqrt(double(dh));
        top = std::max(top, s[static_cast<std::size_t>(j)]);
      }
      double z = 0;
      for (double& x : s) z += (x = std::exp(x - top));
      for (Index j = 0; j < k.rows(); ++j)
        for (Index e = 0; e < dh; ++e) cat(i, h * dh + e) += s[static_cast<std::size_t>(j)] / z * v(j, h * dh + e);
    }
  }
  return cat * w.wo.mat();
}

}  // namespace

TEST_CASE("fourier embedding of zero") {
  const Eigen::VectorXd e = fourier_embed(Eigen::VectorXd::Zero(1), 2);
  REQUIRE(e.size() == 5);
  CHECK(e[0] == 0.0);
  CHECK(e[1] == 0.0);
  CHECK(e[2] == 1.0);
  CHECK(e[3] == 0.0);
  CHECK(e[4] == 1.0);
}

TEST_CASE("fourier embedding length") {
  CHECK(fourier_embed(Eigen::VectorXd::Zero(3), 4).size() == 27);
  CHECK(FourierEmbedding{4, 3}.output_dim() == 27);
}

TEST_CASE("fourier embedding of one half") {
  const Eigen::VectorXd e = fourier_embed(Eigen::VectorXd::Constant(1, 0.5), 1);
  CHECK(e[0] == 0.5);
  CHECK(e[1] == doctest::Approx(0.479425538604203).epsilon(1e-13));
  CHECK(e[2] == doctest::Approx(0.8775825618903728).epsilon(1e-13));
}

TEST_CASE("fourier embedding block layout") {
  const Eigen::Vector3d x(0.3, -0.7, 0.9);
  const FourierEmbedding emb{3, 3};
  const Eigen::VectorXd e = emb(x);
  REQUIRE(e.size() == emb.output_dim());
  for (Index d = 0; d < 3; ++d) {
    CHECK(e[d] == x[d]);
    for (int l = 0; l < 3; ++l) {
      const double f = std::ldexp(1.0, l);
      CHECK(e[3 + 6 * l + d] == std::sin(f * x[d]));
      CHECK(e[3 + 6 * l + 3 + d] == std::cos(f * x[d]));
    }
  }
  RowMatrix rows(2, 3);
  rows << 0.3, -0.7, 0.9, 0.1, 0.2, -0.4;
  const RowMatrix out = emb.embed_rows(rows);
  CHECK(out.row(0).transpose() == e);
  CHECK(out.row(1).transpose() == emb(rows.row(1).transpose()));
}

TEST_CASE("fourier embedding separates grid coordinates") {
  const FourierEmbedding emb{4, 2};
  std::vector<Eigen::VectorXd> all;
  for (int r = 0; r < 24; ++r)
    for (int c = 0; c < 32; ++c)
      all.push_back(emb(Eigen::Vector2d(-1.0 + 2.0 * (c + 0.5) / 32, -1.0 + 2.0 * (r + 0.5) / 24)));
  double closest = 1e300;
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) closest = std::min(closest, (all[i] - all[j]).norm());
  CHECK(closest > 1e-3);
}

TEST_CASE("zero output maps make the attention block the identity") {
  Rng rng(1);
  const AttentionParams p = init_attention(8, 4, rng);
  const Tensor image = randn({12, 8}, rng), points = randn({5, 8}, rng);
  const AttentionOutput out = attention_block(image, points, p);
  CHECK(out.image.data() == image.data());
  CHECK(out.points.data() == points.data());
  const AttentionOutput deep = attention_stack(image, points, p, 3);
  CHECK(deep.image.data() == image.data());
}

TEST_CASE("attention rows are probability distributions") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const AttentionWeights w = init_attention_weights(8, rng, false);
    std::vector<RowMatrix> probs;
    (void)multi_head_attention(randn({7, 8}, rng, 3.0), randn({9, 8}, rng, 3.0), w, 2, &probs);
    REQUIRE(probs.size() == 2);
    for (const RowMatrix& p : probs) {
      CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
      CHECK(p.minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("multi-head attention matches a loop oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const AttentionWeights w = init_attention_weights(8, rng, false);
    const Tensor q = randn({6, 8}, rng), ctx = randn({4, 8}, rng);
    const RowMatrix fast = multi_head_attention(q, ctx, w, 4).to_matrix();
    const RowMatrix slow = naive_attention(q.to_matrix(), ctx.to_matrix(), w, 4);
    CHECK((fast - slow).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("permuting point tokens permutes the refined points only") {
  Rng rng(4);
  const AttentionParams p = random_attention(8, 2, rng);
  const Tensor image = randn({6, 8}, rng), points = randn({8, 8}, rng);
  const std::vector<Index> perm{3, 0, 7, 1, 6, 2, 5, 4};
  const AttentionOutput a = attention_block(image, points, p);
  const AttentionOutput b = attention_block(image, gather_rows(points, perm), p);
  CHECK((a.image.to_matrix() - b.image.to_matrix()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((gather_rows(a.points, perm).to_matrix() - b.points.to_matrix()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("attention block rejects mismatched widths") {
  Rng rng(5);
  const AttentionParams p = init_attention(8, 2, rng);
  CHECK_THROWS_AS(attention_block(Tensor::zeros({4, 8}), Tensor::zeros({3, 6}), p), ShapeError);
  CHECK_THROWS_AS(init_attention(6, 4, rng), ShapeError);
}

TEST_CASE("attention block gradients match finite differences") {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const AttentionParams p = random_attention(4, 2, rng);
    const Tensor image = randn({5, 4}, rng), points = randn({3, 4}, rng);
    auto loss = [](const AttentionOutput& o) { return add(readout(o.image), readout(o.points, 5)); };
    CHECK(finite_diff_check([&](const Tensor& x) { return loss(attention_block(x, points, p)); }, image)
              .max_rel_error <= 1e-4);
    CHECK(finite_diff_check([&](const Tensor& x) { return loss(attention_block(image, x, p)); }, points)
              .max_rel_error <= 1e-4);
    CHECK(finite_diff_check(
              [&](const Tensor& x) {
                AttentionParams q = p;
                q.cross_image.wq = x;
                return loss(attention_block(image, points, q));
              },
              p.cross_image.wq)
              .max_rel_error <= 1e-4);
    CHECK(finite_diff_check(
              [&](const Tensor& x) {
                AttentionParams q = p;
                q.self_point.wo = x;
                return loss(attention_block(image, points, q));
              },
              p.self_point.wo)
              .max_rel_error <= 1e-4);
  }
}
