#pragma once

#include "mcm/tensor.hpp"

namespace mcm {

// Shared differentiable building blocks. Feature maps are [N, C, H, W]
// row-major; "token" ops treat each (n, h, w) column of C values as one token.

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double s);
TensorPtr add_scaled(const TensorPtr& a, const TensorPtr& b, double s);  // a + s*b
TensorPtr silu(const TensorPtr& x);

// x [N, Cin, H, W], w [Cout, Cin], b [Cout] -> [N, Cout, H, W]
TensorPtr linear_tokens(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);

// Normalizes each token over its C channels, then applies gain/bias.
TensorPtr layernorm_tokens(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                           double eps = 1e-6);

// x [N, Cin, H, W], w [Cout, Cin, kh, kw], b [Cout]
TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b, int stride, int pad);

// x [F, Cin, H, W], w [Cout, Cin, kf, kh, kw], b [Cout]. Valid (unpadded)
// along the frame axis, odd spatial kernels padded to keep H and W.
TensorPtr conv3d_frames(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);

TensorPtr upsample_bilinear(const TensorPtr& x, int factor);
TensorPtr concat_channels(const TensorPtr& a, const TensorPtr& b);

// [N, C, H, W] -> [N, 4C, H/2, W/2]; output channel blocks hold the 2x2
// corners in row-major corner order (TL, TR, BL, BR).
TensorPtr space_to_depth2(const TensorPtr& x);

TensorPtr frame_reverse(const TensorPtr& x);         // reverses dim 0
TensorPtr frame_mean(const TensorPtr& x);            // [F, C, H, W] -> [1, C, H, W]
TensorPtr reshape_copy(const TensorPtr& x, std::vector<int> shape);
TensorPtr mse(const TensorPtr& a, const TensorPtr& b);  // scalar

double softplus(double x);
double sigmoid(double x);

}  // namespace mcm
