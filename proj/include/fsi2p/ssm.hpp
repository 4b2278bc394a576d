#pragma once

// Diagonal selective state-space scan (zero-order-hold discretisation):
//
//   h_t = exp(delta_t * A) .* h_{t-1} + delta_t * x_t * B_t
//   y_t = h_t C_t + d_skip .* x_t
//
// with delta_t = softplus(x_t W_delta + b_delta), B_t = x_t W_B, C_t = x_t W_C
// and A = -exp(a_log) < 0. Hidden state layout is channels x state_dim.

#include "fsi2p/rng.hpp"
#include "fsi2p/tensor.hpp"

namespace fsi2p {

struct SsmParams {
  Tensor a_log;    // C x S
  Tensor delta_w;  // C x C
  Tensor delta_b;  // C
  Tensor b_w;      // C x S
  Tensor c_w;      // C x S
  Tensor d_skip;   // C

  Index channels() const { return a_log.dim(0); }
  Index state_dim() const { return a_log.dim(1); }
};

// A scan followed by a C x C output projection. A zero output projection makes
// the layer output identically zero.
struct SsmLayer {
  SsmParams scan;
  Tensor out_w;  // C x C
  Tensor out_b;  // C
};

struct ScanResult {
  Tensor y;       // L x C
  Tensor h_last;  // C x S
};

SsmParams init_ssm(Index channels, Index state_dim, Rng& rng);
SsmLayer init_ssm_layer(Index channels, Index state_dim, Rng& rng);
Tensor zero_state(const SsmParams& params);

// Scan over explicit per-token delta/B/C. x, delta: L x C; a: C x S; b, c: L x S;
// d: C; h0: C x S. Throws NumericalError naming the step of a non-finite state.
ScanResult scan_kernel(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
                       const Tensor& c, const Tensor& d, const Tensor& h0);

ScanResult selective_scan(const Tensor& x, const SsmParams& params, const Tensor& h0);

// selective_scan followed by the output projection.
ScanResult ssm_layer(const Tensor& x, const SsmLayer& layer, const Tensor& h0);

// Unoptimised step-by-step reference loops with the same contract.
struct OracleScan {
  RowMatrix y;
  RowMatrix h_last;
};

OracleScan naive_scan_kernel_oracle(const RowMatrix& x, const RowMatrix& delta, const RowMatrix& a,
                                    const RowMatrix& b, const RowMatrix& c,
                                    const Eigen::VectorXd& d, const RowMatrix& h0);
OracleScan naive_scan_oracle(const RowMatrix& x, const SsmParams& params, const RowMatrix& h0);

}  // namespace fsi2p
