#include "fsi2p/embedding.hpp"

#include <cmath>
#include <string>

namespace fsi2p {

Eigen::VectorXd fourier_embed(const Eigen::VectorXd& x, int levels) {
  return FourierEmbedding{levels, x.size()}(x);
}

Eigen::VectorXd FourierEmbedding::operator()(const Eigen::VectorXd& x) const {
  if (x.size() != input_dim) {
    throw ShapeError("fourier_embed: expected " + std::to_string(input_dim) + " coordinates, got " +
                     std::to_string(x.size()));
  }
  Eigen::VectorXd out(output_dim());
  out.head(input_dim) = x;
  double freq = 1.0;
  for (int l = 0; l < levels; ++l) {
    const Index base = input_dim * (1 + 2 * l);
    out.segment(base, input_dim) = (freq * x.array()).sin().matrix();
    out.segment(base + input_dim, input_dim) = (freq * x.array()).cos().matrix();
    freq *= 2.0;
  }
  return out;
}

RowMatrix FourierEmbedding::embed_rows(const RowMatrix& coords) const {
  RowMatrix out(coords.rows(), output_dim());
  for (Index i = 0; i < coords.rows(); ++i) {
    out.row(i) = (*this)(coords.row(i).transpose()).transpose();
  }
  return out;
}

namespace {

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  Eigen::VectorXd v(shape_numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

AttentionWeights init_attention_weights(Index channels, Rng& rng, bool zero_output) {
  const double s = 1.0 / std::sqrt(double(channels));
  AttentionWeights w;
  w.wq = gaussian({channels, channels}, s, rng);
  w.wk = gaussian({channels, channels}, s, rng);
  w.wv = gaussian({channels, channels}, s, rng);
  w.wo = zero_output ? Tensor::zeros({channels, channels}) : gaussian({channels, channels}, s, rng);
  return w;
}

AttentionParams init_attention(Index channels, Index heads, Rng& rng, bool zero_output) {
  if (heads < 1 || channels % heads != 0) {
    throw ShapeError("attention: " + std::to_string(channels) + " channels not divisible into " +
                     std::to_string(heads) + " heads");
  }
  AttentionParams p;
  p.heads = heads;
  p.self_image = init_attention_weights(channels, rng, zero_output);
  p.self_point = init_attention_weights(channels, rng, zero_output);
  p.cross_image = init_attention_weights(channels, rng, zero_output);
  p.cross_point = init_attention_weights(channels, rng, zero_output);
  return p;
}

Tensor multi_head_attention(const Tensor& queries, const Tensor& context,
                            const AttentionWeights& w, Index heads,
                            std::vector<RowMatrix>* probs) {
  if (queries.rank() != 2 || context.rank() != 2 || queries.dim(1) != context.dim(1)) {
    throw ShapeError("attention: query tokens " + shape_str(queries.shape()) +
                     " and context tokens " + shape_str(context.shape()) + " disagree");
  }
  const Index c = queries.dim(1);
  if (c % heads != 0) throw ShapeError("attention: channels not divisible by heads");
  const Index dh = c / heads;
  const Tensor q = matmul(queries, w.wq);
  const Tensor k = matmul(context, w.wk);
  const Tensor v = matmul(context, w.wv);
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  if (probs) probs->clear();
  for (Index h = 0; h < heads; ++h) {
    const Tensor qh = slice(q, 1, h * dh, (h + 1) * dh);
    const Tensor kh = slice(k, 1, h * dh, (h + 1) * dh);
    const Tensor vh = slice(v, 1, h * dh, (h + 1) * dh);
    const Tensor p = softmax(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dh))), 1);
    if (probs) probs->push_back(p.to_matrix());
    outs.push_back(matmul(p, vh));
  }
  return matmul(concat(outs, 1), w.wo);
}

AttentionOutput attention_block(const Tensor& image, const Tensor& points,
                                const AttentionParams& params) {
  if (image.rank() != 2 || points.rank() != 2 || image.dim(1) != points.dim(1)) {
    throw ShapeError("attention_block: image tokens " + shape_str(image.shape()) +
                     " and point tokens " + shape_str(points.shape()) + " have different widths");
  }
  Tensor fi = add(image, multi_head_attention(image, image, params.self_image, params.heads));
  Tensor fp = add(points, multi_head_attention(points, points, params.self_point, params.heads));
  fi = add(fi, multi_head_attention(fi, fp, params.cross_image, params.heads));
  fp = add(fp, multi_head_attention(fp, fi, params.cross_point, params.heads));
  return {fi, fp};
}

AttentionOutput attention_stack(const Tensor& image, const Tensor& points,
                                const AttentionParams& params, int depth) {
  AttentionOutput out{image, points};
  for (int d = 0; d < depth; ++d) out = attention_block(out.image, out.points, params);
  return out;
}

}  // namespace fsi2p
