#include "fsi2p/ssm.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace fsi2p {

namespace {

using RowArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  Eigen::VectorXd v(shape_numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ShapeError(std::string("scan: ") + what + " has shape " + shape_str(t.shape()) +
                     ", expected " + shape_str(expected));
  }
}

}  // namespace

SsmParams init_ssm(Index channels, Index state_dim, Rng& rng) {
  SsmParams p;
  Eigen::VectorXd a_log(channels * state_dim);
  for (Index c = 0; c < channels; ++c) {
    for (Index s = 0; s < state_dim; ++s) a_log[c * state_dim + s] = std::log(double(s + 1));
  }
  p.a_log = Tensor({channels, state_dim}, a_log);
  p.delta_w = gaussian({channels, channels}, 0.1 / std::sqrt(double(channels)), rng);
  // softplus(bias) log-uniform in [0.01, 0.1]
  Eigen::VectorXd bias(channels);
  for (Index c = 0; c < channels; ++c) {
    const double dt = std::exp(rng.uniform(std::log(0.01), std::log(0.1)));
    bias[c] = dt + std::log(-std::expm1(-dt));
  }
  p.delta_b = Tensor({channels}, bias);
  p.b_w = gaussian({channels, state_dim}, 1.0 / std::sqrt(double(channels)), rng);
  p.c_w = gaussian({channels, state_dim}, 1.0 / std::sqrt(double(channels)), rng);
  p.d_skip = Tensor::ones({channels});
  return p;
}

SsmLayer init_ssm_layer(Index channels, Index state_dim, Rng& rng) {
  SsmLayer layer;
  layer.scan = init_ssm(channels, state_dim, rng);
  layer.out_w = Tensor::zeros({channels, channels});
  layer.out_b = Tensor::zeros({channels});
  return layer;
}

Tensor zero_state(const SsmParams& params) {
  return Tensor::zeros({params.channels(), params.state_dim()});
}

ScanResult scan_kernel(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
                       const Tensor& c, const Tensor& d, const Tensor& h0) {
  if (x.rank() != 2) throw ShapeError("scan: x must be L x C, got " + shape_str(x.shape()));
  const Index L = x.dim(0), C = x.dim(1);
  if (a.rank() != 2 || a.dim(0) != C) {
    throw ShapeError("scan: A has shape " + shape_str(a.shape()) + " for " + std::to_string(C) +
                     " channels");
  }
  const Index S = a.dim(1);
  require_shape(delta, {L, C}, "delta");
  require_shape(b, {L, S}, "B");
  require_shape(c, {L, S}, "C");
  require_shape(d, {C}, "d_skip");
  require_shape(h0, {C, S}, "h0");

  const auto X = x.mat().array();
  const auto Dt = delta.mat().array();
  const auto Am = a.mat().array();
  const auto Bm = b.mat().array();
  const auto Cm = c.mat().array();
  const Eigen::ArrayXd Dv = d.data().array();

  // hist[t] holds h after step t; hist[0] is h0.
  auto hist = std::make_shared<std::vector<RowArray>>();
  hist->reserve(static_cast<std::size_t>(L + 1));
  hist->push_back(h0.mat().array());

  Eigen::VectorXd out(L * C + C * S);
  for (Index t = 0; t < L; ++t) {
    const Eigen::ArrayXd dt = Dt.row(t).transpose();
    const Eigen::ArrayXd xt = X.row(t).transpose();
    RowArray decay = (Am.colwise() * dt).exp();
    RowArray h = decay * hist->back();
    h += ((dt * xt).matrix() * Bm.row(t).matrix()).array();
    if (!h.allFinite()) {
      throw NumericalError("selective scan: non-finite hidden state at step " + std::to_string(t));
    }
    const Eigen::ArrayXd yt = (h.matrix() * Cm.row(t).matrix().transpose()).array() + Dv * xt;
    out.segment(t * C, C) = yt.matrix();
    hist->push_back(std::move(h));
  }
  out.segment(L * C, C * S) = Eigen::Map<const Eigen::VectorXd>(hist->back().data(), C * S);

  const std::array<Tensor, 7> inputs{x, delta, a, b, c, d, h0};
  Tensor xs = x.detach(), ds = delta.detach(), as = a.detach(), bs = b.detach(), cs = c.detach(),
         dd = d.detach();
  Tape* tape = common_tape(inputs);
  Tensor flat;
  if (!tape) {
    flat = Tensor({L * C + C * S}, std::move(out));
  } else {
    flat = tape->record(
        {L * C + C * S}, std::move(out), inputs,
        [hist, xs, ds, as, bs, cs, dd, L, C, S](const Eigen::VectorXd& g,
                                                 std::span<Eigen::VectorXd*> in) {
          const auto X = xs.mat().array();
          const auto Dt = ds.mat().array();
          const auto Am = as.mat().array();
          const auto Bm = bs.mat().array();
          const auto Cm = cs.mat().array();
          const Eigen::ArrayXd Dv = dd.data().array();
          RowArray gx = RowArray::Zero(L, C), gdelta = RowArray::Zero(L, C);
          RowArray ga = RowArray::Zero(C, S), gb = RowArray::Zero(L, S), gc = RowArray::Zero(L, S);
          Eigen::ArrayXd gd = Eigen::ArrayXd::Zero(C);
          RowArray gh = Eigen::Map<const RowArray>(g.data() + L * C, C, S);
          for (Index t = L; t-- > 0;) {
            const Eigen::ArrayXd gy = g.segment(t * C, C).array();
            const Eigen::ArrayXd dt = Dt.row(t).transpose();
            const Eigen::ArrayXd xt = X.row(t).transpose();
            const RowArray& h = (*hist)[static_cast<std::size_t>(t + 1)];
            const RowArray& hprev = (*hist)[static_cast<std::size_t>(t)];
            gh += (gy.matrix() * Cm.row(t).matrix()).array();
            gc.row(t) += (gy.matrix().transpose() * h.matrix()).array();
            gd += gy * xt;
            gx.row(t) += (gy * Dv).transpose();
            const RowArray decay = (Am.colwise() * dt).exp();
            const RowArray t1 = gh * hprev * decay;
            const Eigen::ArrayXd ghb = (gh.matrix() * Bm.row(t).matrix().transpose()).array();
            gdelta.row(t) += ((t1 * Am).rowwise().sum() + ghb * xt).transpose();
            ga += t1.colwise() * dt;
            gb.row(t) += ((dt * xt).matrix().transpose() * gh.matrix()).array();
            gx.row(t) += (ghb * dt).transpose();
            gh *= decay;
          }
          auto acc = [](Eigen::VectorXd* dst, const auto& src) {
            if (dst) *dst += Eigen::Map<const Eigen::VectorXd>(src.data(), src.size());
          };
          acc(in[0], gx);
          acc(in[1], gdelta);
          acc(in[2], ga);
          acc(in[3], gb);
          acc(in[4], gc);
          if (in[5]) *in[5] += gd.matrix();
          acc(in[6], gh);
        });
  }
  ScanResult r;
  r.y = reshape(slice(flat, 0, 0, L * C), {L, C});
  r.h_last = reshape(slice(flat, 0, L * C, L * C + C * S), {C, S});
  return r;
}

ScanResult selective_scan(const Tensor& x, const SsmParams& params, const Tensor& h0) {
  if (x.rank() != 2 || x.dim(1) != params.channels()) {
    throw ShapeError("selective_scan: tokens of shape " + shape_str(x.shape()) + " for " +
                     std::to_string(params.channels()) + " channels");
  }
  if (x.dim(0) < 1) throw ShapeError("selective_scan: empty sequence");
  const Tensor delta = softplus(add(matmul(x, params.delta_w), params.delta_b));
  const Tensor b = matmul(x, params.b_w);
  const Tensor c = matmul(x, params.c_w);
  const Tensor a = neg(exp(params.a_log));
  return scan_kernel(x, delta, a, b, c, params.d_skip, h0);
}

ScanResult ssm_layer(const Tensor& x, const SsmLayer& layer, const Tensor& h0) {
  ScanResult r = selective_scan(x, layer.scan, h0);
  r.y = add(matmul(r.y, layer.out_w), layer.out_b);
  return r;
}

OracleScan naive_scan_kernel_oracle(const RowMatrix& x, const RowMatrix& delta, const RowMatrix& a,
                                    const RowMatrix& b, const RowMatrix& c,
                                    const Eigen::VectorXd& d, const RowMatrix& h0) {
  const Index L = x.rows(), C = x.cols(), S = a.cols();
  OracleScan r;
  r.y = RowMatrix::Zero(L, C);
  RowMatrix h = h0;
  for (Index t = 0; t < L; ++t) {
    for (Index ch = 0; ch < C; ++ch) {
      double acc = 0.0;
      for (Index s = 0; s < S; ++s) {
        h(ch, s) = std::exp(delta(t, ch) * a(ch, s)) * h(ch, s) + delta(t, ch) * b(t, s) * x(t, ch);
        if (!std::isfinite(h(ch, s))) {
          throw NumericalError("naive scan: non-finite hidden state at step " + std::to_string(t));
        }
        acc += c(t, s) * h(ch, s);
      }
      r.y(t, ch) = acc + d[ch] * x(t, ch);
    }
  }
  r.h_last = h;
  return r;
}

OracleScan naive_scan_oracle(const RowMatrix& x, const SsmParams& params, const RowMatrix& h0) {
  const Index L = x.rows(), C = x.cols(), S = params.state_dim();
  const RowMatrix wd = params.delta_w.mat(), wb = params.b_w.mat(), wc = params.c_w.mat();
  RowMatrix delta(L, C), b(L, S), c(L, S), a(C, S);
  for (Index t = 0; t < L; ++t) {
    for (Index j = 0; j < C; ++j) {
      double z = params.delta_b[j];
      for (Index k = 0; k < C; ++k) z += x(t, k) * wd(k, j);
      delta(t, j) = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    }
    for (Index s = 0; s < S; ++s) {
      double zb = 0.0, zc = 0.0;
      for (Index k = 0; k < C; ++k) {
        zb += x(t, k) * wb(k, s);
        zc += x(t, k) * wc(k, s);
      }
      b(t, s) = zb;
      c(t, s) = zc;
    }
  }
  for (Index ch = 0; ch < C; ++ch) {
    for (Index s = 0; s < S; ++s) a(ch, s) = -std::exp(params.a_log[ch * S + s]);
  }
  return naive_scan_kernel_oracle(x, delta, a, b, c, params.d_skip.data(), h0);
}

}  // namespace fsi2p
