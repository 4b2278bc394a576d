#pragma once

#include "fsi2p/rng.hpp"
#include "fsi2p/tensor.hpp"

namespace fsi2p {

// phi(x) = [x, sin(2^0 x), cos(2^0 x), ..., sin(2^{L-1} x), cos(2^{L-1} x)],
// each block spanning all input coordinates.
struct FourierEmbedding {
  int levels = 4;
  Index input_dim = 2;

  Index output_dim() const { return input_dim * (1 + 2 * levels); }
  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const;
  // One embedding per row of `coords` (rows x input_dim).
  RowMatrix embed_rows(const RowMatrix& coords) const;
};

Eigen::VectorXd fourier_embed(const Eigen::VectorXd& x, int levels);

struct AttentionWeights {
  Tensor wq, wk, wv, wo;  // C x C; wo starts at zero
};

struct AttentionParams {
  AttentionWeights self_image, self_point, cross_image, cross_point;
  Index heads = 4;
};

AttentionWeights init_attention_weights(Index channels, Rng& rng, bool zero_output = true);
AttentionParams init_attention(Index channels, Index heads, Rng& rng, bool zero_output = true);

// Multi-head attention of `queries` over `context`, without the residual.
// When `probs` is non-null it receives one (queries x context) matrix per head.
Tensor multi_head_attention(const Tensor& queries, const Tensor& context,
                            const AttentionWeights& w, Index heads,
                            std::vector<RowMatrix>* probs = nullptr);

struct AttentionOutput {
  Tensor image;
  Tensor points;
};

// Self-attention on each branch, then image<-points and points<-image cross
// attention, every sub-layer wrapped in a residual connection.
AttentionOutput attention_block(const Tensor& image, const Tensor& points,
                                const AttentionParams& params);

// `depth` applications of the same block.
AttentionOutput attention_stack(const Tensor& image, const Tensor& points,
                                const AttentionParams& params, int depth);

}  // namespace fsi2p
