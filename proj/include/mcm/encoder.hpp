#pragma once

#include <array>
#include <string>
#include <vector>

#include "mcm/ssm.hpp"
#include "mcm/tensor.hpp"

namespace mcm {

// Window of frames around target index t, clamped to the cycle.
struct WindowSpec {
  int t = 0;  // target frame
  int K = 0;  // half-window
  int T = 0;  // cycle length
  int n_f() const { return 2 * K + 1; }
  void validate() const;
};

// seq [T, H, W] -> [N_f, 2, H, W]; channel 0 carries the reference frame
// seq[0], channel 1 the clamped window frames t-K..t+K.
TensorPtr pair_images(const TensorPtr& seq, const WindowSpec& spec);

// One block: residual bi-directional scan, then a residual token MLP, each
// behind its own channel layer norm.
struct BmbParams {
  int c = 0;
  TensorPtr ln1_g, ln1_b, ln2_g, ln2_b;
  SsmParams ssm_f, ssm_b;
  TensorPtr w1, b1, w2, b2;  // token MLP, expansion ratio 2
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

BmbParams init_bmb(int c, int d_state, Rng& rng);
TensorPtr bmb(const TensorPtr& f, const BmbParams& p);

// 4x4 stride-4 projection of the 2-channel pairs; requires H, W divisible by 32
// so the full four-level pyramid stays integral.
TensorPtr patch_embed(const TensorPtr& f0, const TensorPtr& w, const TensorPtr& b);

// 2x2 neighborhood concat (corners in row-major order) followed by a linear
// projection 4C -> 2C.
TensorPtr patch_merge(const TensorPtr& f, const TensorPtr& w, const TensorPtr& b);

struct Encoder {
  int c_base = 0;
  int d_state = 0;
  TensorPtr embed_w, embed_b;             // [C_base, 2, 4, 4], [C_base]
  std::array<BmbParams, 4> blocks;        // channels C_base * 2^i
  std::array<TensorPtr, 3> merge_w;       // [2C_{i+1}, 4C_i]
  std::array<TensorPtr, 3> merge_b;

  // F_1..F_4 with F_i = [N_f, C_base*2^(i-1), H/(4*2^(i-1)), W/(4*2^(i-1))]
  std::array<TensorPtr, 4> encode(const TensorPtr& f0) const;
  void collect(std::vector<NamedParam>& out) const;
};

Encoder init_encoder(int c_base, int d_state, Rng& rng);

}  // namespace mcm
