#pragma once

#include "mcm/tensor.hpp"

namespace mcm {

struct LossConfig {
  double lambda = 0.05;  // smoothness weight
  void validate() const { require(lambda >= 0.0, "lambda must be >= 0"); }
};

// Pull warp: out(p) = bilinear sample of img at p + u(p), where phi is
// [2, H, W] with channel 0 = x-displacement and channel 1 = y-displacement.
// Sample coordinates clamp to the image border.
TensorPtr warp(const TensorPtr& img, const TensorPtr& phi);

// Mean squared error over all pixels.
TensorPtr sim_loss(const TensorPtr& target, const TensorPtr& warped);

// Mean over pixels of the summed squared forward differences of both
// displacement channels along both axes.
TensorPtr smooth_loss(const TensorPtr& phi);

// sim_loss(target, warp(reference, phi)) + lambda * smooth_loss(phi)
TensorPtr total_loss(const TensorPtr& target, const TensorPtr& reference, const TensorPtr& phi,
                     const LossConfig& cfg);

}  // namespace mcm
