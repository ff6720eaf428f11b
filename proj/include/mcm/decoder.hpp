#pragma once

#include <array>
#include <string>
#include <vector>

#include "mcm/encoder.hpp"
#include "mcm/tensor.hpp"

namespace mcm {

// Frame-axis kernel sizes that shrink nf frames to a single frame using
// unpadded convolutions: k = min(3, f), f -> f - k + 1, until f == 1.
std::vector<int> frame_schedule(int nf);

struct Conv3dStack {
  std::vector<TensorPtr> w;  // [C, C, kf, 3, 3] each
  std::vector<TensorPtr> b;
};

struct Decoder {
  int c_base = 0;
  int n_f = 0;
  std::array<TensorPtr, 3> fuse_w;  // 3x3 fusion convs, coarse to fine
  std::array<TensorPtr, 3> fuse_b;
  Conv3dStack path_f, path_b;       // frame-collapse paths (forward / reversed)
  TensorPtr head1_w, head1_b;       // [C/2, C, 3, 3]
  TensorPtr head2_w, head2_b;       // [2, C/2, 3, 3], near-zero init

  // {F_1..F_4} -> [N_f, C_base, H, W]: walk the pyramid coarse to fine with
  // x2 upsampling, concat, 3x3 conv, then a final x4 upsample.
  TensorPtr pup(const std::array<TensorPtr, 4>& fs) const;

  // [N_f, C_base, H, W] -> [2, H, W]: collapse frames along both directions,
  // average the two paths, then map channels C -> C/2 -> 2.
  TensorPtr dfh(const TensorPtr& fm) const;

  void collect(std::vector<NamedParam>& out) const;
};

Decoder init_decoder(int c_base, int n_f, Rng& rng);

struct McmModel {
  Encoder enc;
  Decoder dec;
  int K = 0;
  void collect(std::vector<NamedParam>& out) const;
};

McmModel init_model(int c_base, int d_state, int K, Rng& rng);

// Full forward pass: pair, encode, fuse, collapse. Returns [2, H, W] pixel
// displacements (channel 0 = x, channel 1 = y).
TensorPtr predict_motion(const McmModel& m, const TensorPtr& seq, const WindowSpec& spec);

}  // namespace mcm
