#include "mcm/warp_loss.hpp"

#include <algorithm>
#include <cmath>

#include "mcm/ops.hpp"

namespace mcm {

TensorPtr warp(const TensorPtr& img, const TensorPtr& phi) {
  require(img->ndim() == 2, "warp expects an H x W image");
  require(phi->ndim() == 3 && phi->dim(0) == 2, "warp expects a [2, H, W] field");
  require(phi->dim(1) == img->dim(0) && phi->dim(2) == img->dim(1), "shape mismatch");
  int H = img->dim(0), W = img->dim(1);
  size_t P = (size_t)H * W;
  auto out = make_tensor(img->shape);
  const double* iv = img->v.data();
  const double* pv = phi->v.data();
  parallel_for(H, [&](int64_t ylo, int64_t yhi) {
    for (int64_t y = ylo; y < yhi; ++y) {
      for (int x = 0; x < W; ++x) {
        size_t p = (size_t)y * W + x;
        double sx = x + pv[p];
        double sy = y + pv[P + p];
        double cx = std::clamp(sx, 0.0, double(W - 1));
        double cy = std::clamp(sy, 0.0, double(H - 1));
        int x0 = (int)cx, y0 = (int)cy;
        double tx = cx - x0, ty = cy - y0;
        int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
        double top = (1.0 - tx) * iv[(size_t)y0 * W + x0] + tx * iv[(size_t)y0 * W + x1];
        double bot = (1.0 - tx) * iv[(size_t)y1 * W + x0] + tx * iv[(size_t)y1 * W + x1];
        out->v[p] = (1.0 - ty) * top + ty * bot;
      }
    }
  });
  bool need = grad_enabled() && (img->requires_grad || phi->requires_grad);
  if (need) {
    out->requires_grad = true;
    out->parents = {img, phi};
    out->backward_fn = [img, phi, H, W, P](Tensor& self) {
      if (img->requires_grad) img->ensure_grad();
      if (phi->requires_grad) phi->ensure_grad();
      const double* iv2 = img->v.data();
      const double* pv2 = phi->v.data();
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          size_t p = (size_t)y * W + x;
          double go = self.g[p];
          if (go == 0.0) continue;
          double sx = x + pv2[p];
          double sy = y + pv2[P + p];
          double cx = std::clamp(sx, 0.0, double(W - 1));
          double cy = std::clamp(sy, 0.0, double(H - 1));
          int x0 = (int)cx, y0 = (int)cy;
          double tx = cx - x0, ty = cy - y0;
          int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
          double i00 = iv2[(size_t)y0 * W + x0], i01 = iv2[(size_t)y0 * W + x1];
          double i10 = iv2[(size_t)y1 * W + x0], i11 = iv2[(size_t)y1 * W + x1];
          if (img->requires_grad) {
            img->g[(size_t)y0 * W + x0] += go * (1.0 - ty) * (1.0 - tx);
            img->g[(size_t)y0 * W + x1] += go * (1.0 - ty) * tx;
            img->g[(size_t)y1 * W + x0] += go * ty * (1.0 - tx);
            img->g[(size_t)y1 * W + x1] += go * ty * tx;
          }
          if (phi->requires_grad) {
            // clamp has zero slope once the raw coordinate leaves the image
            double dx = (sx > 0.0 && sx < W - 1)
                            ? (1.0 - ty) * (i01 - i00) + ty * (i11 - i10)
                            : 0.0;
            double dy = (sy > 0.0 && sy < H - 1)
                            ? (1.0 - tx) * (i10 - i00) + tx * (i11 - i01)
                            : 0.0;
            phi->g[p] += go * dx;
            phi->g[P + p] += go * dy;
          }
        }
      }
    };
  }
  return out;
}

TensorPtr sim_loss(const TensorPtr& target, const TensorPtr& warped) {
  return mse(target, warped);
}

TensorPtr smooth_loss(const TensorPtr& phi) {
  require(phi->ndim() == 3 && phi->dim(0) == 2, "smooth_loss expects a [2, H, W] field");
  int H = phi->dim(1), W = phi->dim(2);
  size_t P = (size_t)H * W;
  auto out = make_tensor({1});
  double acc = 0.0;
  for (int c = 0; c < 2; ++c) {
    const double* ch = phi->v.data() + (size_t)c * P;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x + 1 < W; ++x) {
        double d = ch[(size_t)y * W + x + 1] - ch[(size_t)y * W + x];
        acc += d * d;
      }
    for (int y = 0; y + 1 < H; ++y)
      for (int x = 0; x < W; ++x) {
        double d = ch[(size_t)(y + 1) * W + x] - ch[(size_t)y * W + x];
        acc += d * d;
      }
  }
  out->v[0] = acc / double(P);
  if (grad_enabled() && phi->requires_grad) {
    out->requires_grad = true;
    out->parents = {phi};
    out->backward_fn = [phi, H, W, P](Tensor& self) {
      phi->ensure_grad();
      double s = self.g[0] * 2.0 / double(P);
      for (int c = 0; c < 2; ++c) {
        const double* ch = phi->v.data() + (size_t)c * P;
        double* gch = phi->g.data() + (size_t)c * P;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x + 1 < W; ++x) {
            double d = s * (ch[(size_t)y * W + x + 1] - ch[(size_t)y * W + x]);
            gch[(size_t)y * W + x + 1] += d;
            gch[(size_t)y * W + x] -= d;
          }
        for (int y = 0; y + 1 < H; ++y)
          for (int x = 0; x < W; ++x) {
            double d = s * (ch[(size_t)(y + 1) * W + x] - ch[(size_t)y * W + x]);
            gch[(size_t)(y + 1) * W + x] += d;
            gch[(size_t)y * W + x] -= d;
          }
      }
    };
  }
  return out;
}

TensorPtr total_loss(const TensorPtr& target, const TensorPtr& reference, const TensorPtr& phi,
                     const LossConfig& cfg) {
  cfg.validate();
  auto sim = sim_loss(target, warp(reference, phi));
  return add_scaled(sim, smooth_loss(phi), cfg.lambda);
}

}  // namespace mcm
