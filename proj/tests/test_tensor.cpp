#include <doctest.h>

#include <cmath>

#include "support.hpp"

using namespace fsi2p;
using fsi2p::test::randn;
using fsi2p::test::readout;

TEST_CASE("matmul with identity returns the input") {
  const Tensor a = Tensor::matrix((Eigen::Matrix2d() << 1, 2, 3, 4).finished());
  const Tensor r = matmul(a, Tensor::matrix(Eigen::Matrix2d::Identity()));
  CHECK(r.shape() == Shape{2, 2});
  CHECK(r.to_matrix() == a.to_matrix());
}

TEST_CASE("softmax of zeros is uniform") {
  const Tensor s = softmax(Tensor::zeros({3}), 0);
  for (Index i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("softmax is stable for large logits") {
  const Tensor s = softmax(Tensor::vector(Eigen::Vector3d(1000, 1000, -1000)), 0);
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[2] == 0.0);
}

TEST_CASE("sum of a reshape equals a direct summation loop") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = randn({3, 4, 5}, rng);
    double direct = 0.0;
    for (Index i = 0; i < x.size(); ++i) direct += x[i];
    CHECK(sum(reshape(x, {12, 5})).item() == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("broadcast then reduce scales the sum") {
  const Tensor x = Tensor::scalar(2.5);
  CHECK(sum(broadcast_to(x, {4, 3})).item() == doctest::Approx(12 * 2.5));
}

TEST_CASE("binary ops broadcast numpy style") {
  const Tensor a = Tensor::matrix((Eigen::Matrix<double, 2, 3>() << 1, 2, 3, 4, 5, 6).finished());
  const Tensor b = Tensor::vector(Eigen::Vector3d(10, 20, 30));
  const RowMatrix r = add(a, b).to_matrix();
  CHECK(r(0, 0) == 11);
  CHECK(r(1, 2) == 36);
  const Tensor col = Tensor({2, 1}, Eigen::Vector2d(1, 2));
  CHECK(mul(a, col).to_matrix()(1, 0) == 8);
}

TEST_CASE("shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({4, 5});
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 5]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("domain errors for log and division") {
  CHECK_THROWS_AS(fsi2p::log(Tensor::vector(Eigen::Vector2d(1.0, 0.0))), DomainError);
  CHECK_THROWS_AS(fsi2p::log(Tensor::vector(Eigen::Vector2d(1.0, -2.0))), DomainError);
  CHECK_THROWS_AS(div(Tensor::ones({2}), Tensor::zeros({2})), DomainError);
}

TEST_CASE("d sum(x^2)/dx at [1, 2] is [2, 4]") {
  Tape tape;
  const Tensor x = tape.variable(Tensor::vector(Eigen::Vector2d(1, 2)));
  const GradTable g = tape.backward(sum(square(x)));
  CHECK(g.at(x)[0] == 2.0);
  CHECK(g.at(x)[1] == 4.0);
}

TEST_CASE("gradients accumulate over fan-out") {
  Tape tape;
  const Tensor x = tape.variable(Tensor::vector(Eigen::Vector2d(3, -1)));
  const GradTable g = tape.backward(sum(add(mul(x, x), x)));
  CHECK(g.at(x)[0] == 7.0);
  CHECK(g.at(x)[1] == -1.0);
}

TEST_CASE("unreachable tensors are absent from the gradient table") {
  Tape tape;
  const Tensor x = tape.variable(Tensor::ones({2}));
  const Tensor y = tape.variable(Tensor::ones({2}));
  const Tensor unused = exp(y);
  const GradTable g = tape.backward(sum(x));
  CHECK(g.contains(x));
  CHECK_FALSE(g.contains(y));
  CHECK_FALSE(g.contains(unused));
  CHECK_FALSE(g.get(y).has_value());
}

TEST_CASE("backward rejects non-scalar losses") {
  Tape tape;
  const Tensor x = tape.variable(Tensor::ones({2}));
  CHECK_THROWS_AS(tape.backward(exp(x)), ShapeError);
}

TEST_CASE("constants never record") {
  Tape tape;
  const Tensor a = Tensor::ones({3});
  const Tensor b = exp(a);
  CHECK_FALSE(b.requires_grad());
  CHECK(tape.size() == 0);
}

TEST_CASE("finite_diff_check trivial cases") {
  const Tensor x = Tensor::vector(Eigen::VectorXd::Constant(1, 3.0));
  CHECK(finite_diff_check([](const Tensor& t) { return sum(square(t)); }, x).max_rel_error <= 1e-8);
  const auto c = finite_diff_check([](const Tensor&) { return Tensor::scalar(4.0); }, x);
  CHECK(c.max_rel_error == 0.0);
  CHECK(c.analytic[0] == 0.0);
  CHECK(c.numeric[0] == 0.0);
}

TEST_CASE("matmul-softmax-sum chain matches finite differences") {
  Rng rng(3);
  const Tensor w = randn({4, 3}, rng);
  const auto r = finite_diff_check(
      [&](const Tensor& x) { return readout(softmax(matmul(x, w), 1)); }, randn({5, 4}, rng));
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("tape replay is deterministic") {
  Rng rng(11);
  const Tensor x0 = randn({4, 4}, rng);
  auto run = [&] {
    Tape tape;
    const Tensor x = tape.variable(x0);
    return tape.backward(readout(tanh(matmul(x, transpose(x))))).at(x).data();
  };
  CHECK(run() == run());
}

TEST_CASE("slice, concat and gather_rows") {
  const Tensor a = Tensor::matrix((Eigen::Matrix<double, 3, 2>() << 1, 2, 3, 4, 5, 6).finished());
  CHECK(slice(a, 0, 1, 3).to_matrix()(0, 1) == 4);
  CHECK(slice(a, 1, 1, 2).shape() == Shape{3, 1});
  CHECK(concat({a, a}, 0).shape() == Shape{6, 2});
  CHECK(concat({a, a}, 1).to_matrix()(2, 3) == 6);
  const std::vector<Index> idx = {2, 0, 2};
  const RowMatrix g = gather_rows(a, idx).to_matrix();
  CHECK(g(0, 0) == 5);
  CHECK(g(2, 1) == 6);
  CHECK_THROWS_AS(slice(a, 0, 2, 4), ShapeError);
}

TEST_CASE("reductions over an axis") {
  const Tensor a = Tensor::matrix((Eigen::Matrix<double, 2, 3>() << 1, 5, 3, 4, 2, 6).finished());
  CHECK(sum(a, 0).shape() == Shape{3});
  CHECK(sum(a, 0)[1] == 7);
  CHECK(mean(a, 1)[1] == 4);
  CHECK(max(a, 1)[0] == 5);
  CHECK(max(a).item() == 6);
}

TEST_CASE("every differentiable op matches finite differences") {
  Rng rng(2024);
  using F = std::function<Tensor(const Tensor&)>;
  const Tensor w = randn({3, 3}, rng);
  const Tensor row = randn({3}, rng);
  const std::vector<Index> rows = {1, 0, 1, 2};
  const std::vector<std::pair<const char*, F>> ops = {
      {"add", [&](const Tensor& x) { return readout(add(x, row)); }},
      {"sub", [&](const Tensor& x) { return readout(sub(row, x)); }},
      {"mul", [&](const Tensor& x) { return readout(mul(x, x)); }},
      {"div", [&](const Tensor& x) { return readout(div(x, add_scalar(square(x), 1.0))); }},
      {"matmul", [&](const Tensor& x) { return readout(matmul(x, w)); }},
      {"exp", [&](const Tensor& x) { return readout(exp(x)); }},
      {"log", [&](const Tensor& x) { return readout(fsi2p::log(add_scalar(square(x), 0.5))); }},
      {"tanh", [&](const Tensor& x) { return readout(fsi2p::tanh(x)); }},
      {"relu", [&](const Tensor& x) { return readout(relu(x)); }},
      {"softplus", [&](const Tensor& x) { return readout(softplus(x)); }},
      {"sqrt", [&](const Tensor& x) { return readout(fsi2p::sqrt(add_scalar(square(x), 1.0))); }},
      {"softmax0", [&](const Tensor& x) { return readout(softmax(x, 0)); }},
      {"softmax1", [&](const Tensor& x) { return readout(softmax(x, 1)); }},
      {"log_softmax", [&](const Tensor& x) { return readout(log_softmax(x, 1)); }},
      {"concat", [&](const Tensor& x) { return readout(concat({x, square(x)}, 1)); }},
      {"slice", [&](const Tensor& x) { return readout(slice(x, 1, 1, 3)); }},
      {"reshape", [&](const Tensor& x) { return readout(reshape(x, {x.size()})); }},
      {"transpose", [&](const Tensor& x) { return readout(matmul(transpose(x), x)); }},
      {"gather_rows", [&](const Tensor& x) { return readout(gather_rows(x, rows)); }},
      {"sum_axis", [&](const Tensor& x) { return readout(sum(x, 0)); }},
      {"mean_axis", [&](const Tensor& x) { return readout(mean(x, 1)); }},
      {"max_axis", [&](const Tensor& x) { return readout(max(x, 1)); }},
      {"max_all", [&](const Tensor& x) { return max(x); }},
      {"broadcast", [&](const Tensor& x) { return readout(broadcast_to(sum(x, 0), {2, 3})); }},
      {"normalize", [&](const Tensor& x) { return readout(l2_normalize_rows(x)); }},
      {"neg_scale", [&](const Tensor& x) { return readout(scale(neg(x), 2.5)); }},
  };
  for (const auto& [name, f] : ops) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      worst = std::max(worst, finite_diff_check(f, randn({4, 3}, rng)).max_rel_error);
    }
    INFO(name);
    CHECK(worst <= 1e-4);
  }
}
