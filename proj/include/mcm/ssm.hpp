#pragma once

#include <string>
#include <vector>

#include "mcm/tensor.hpp"

namespace mcm {

// Selective state-space scan over a token sequence. Each channel carries
// d_state hidden states with diagonal dynamics A = -exp(a_log); step size,
// input and readout coefficients are projected from the current token.
struct SsmParams {
  int d = 0;        // token channels
  int n_state = 0;  // states per channel
  TensorPtr a_log;  // [D, N]
  TensorPtr w_dt;   // [D, D]
  TensorPtr b_dt;   // [D]
  TensorPtr w_b;    // [N, D]
  TensorPtr b_b;    // [N]
  TensorPtr w_c;    // [N, D]
  TensorPtr b_c;    // [N]
  TensorPtr d_skip; // [D]

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

SsmParams init_ssm(int d, int n_state, Rng& rng);

// Per-token discrete coefficients: dt = softplus(w_dt*token + b_dt),
// a_bar = exp(dt*A), b_bar = dt*(w_b*token + b_b), c = w_c*token + b_c.
// Plain-number helper used by tests and the scan kernels.
void discretize(const SsmParams& p, const std::vector<double>& token,
                std::vector<double>& a_bar, std::vector<double>& b_bar, std::vector<double>& c);

// seq [L, D] -> [L, D]; h_0 = 0, h_k = a_bar ⊙ h_{k-1} + b_bar * x_k,
// y_k = <c_k, h_k> + d_skip ⊙ x_k.
TensorPtr scan_forward(const TensorPtr& seq, const SsmParams& p);

// scan_forward on the time-reversed sequence, output re-reversed.
TensorPtr scan_backward(const TensorPtr& seq, const SsmParams& p);

// f [N_f, D, H, W]: runs an independent temporal scan over the frame axis at
// every spatial position, once with fwd (forward order) and once with bwd
// (reversed order), and sums the two outputs.
TensorPtr bism(const TensorPtr& f, const SsmParams& fwd, const SsmParams& bwd);

}  // namespace mcm
