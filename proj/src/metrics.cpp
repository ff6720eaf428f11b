#include "mcm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mcm/warp_loss.hpp"

namespace mcm {

double dice(const LabelMask& a, const LabelMask& b, int label) {
  require(a.h == b.h && a.w == b.w, "shape mismatch");
  require((int)a.labels.size() == a.h * a.w && (int)b.labels.size() == b.h * b.w,
          "shape mismatch");
  int64_t na = 0, nb = 0, both = 0;
  for (size_t i = 0; i < a.labels.size(); ++i) {
    bool ia = a.labels[i] == label, ib = b.labels[i] == label;
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

TensorPtr jacobian_det(const TensorPtr& phi) {
  require(phi->ndim() == 3 && phi->dim(0) == 2, "jacobian expects a [2, H, W] field");
  int H = phi->dim(1), W = phi->dim(2);
  require(H >= 3 && W >= 3, "field too small");
  size_t P = (size_t)H * W;
  const double* ux = phi->v.data();
  const double* uy = phi->v.data() + P;
  NoGradGuard ng;
  auto det = make_tensor({H - 2, W - 2});
  for (int y = 1; y + 1 < H; ++y) {
    for (int x = 1; x + 1 < W; ++x) {
      size_t p = (size_t)y * W + x;
      double dux_dx = 0.5 * (ux[p + 1] - ux[p - 1]);
      double dux_dy = 0.5 * (ux[p + W] - ux[p - W]);
      double duy_dx = 0.5 * (uy[p + 1] - uy[p - 1]);
      double duy_dy = 0.5 * (uy[p + W] - uy[p - W]);
      det->v[(size_t)(y - 1) * (W - 2) + (x - 1)] =
          (1.0 + dux_dx) * (1.0 + duy_dy) - dux_dy * duy_dx;
    }
  }
  return det;
}

JacobianStats jacobian_metrics(const TensorPtr& phi) {
  auto det = jacobian_det(phi);
  JacobianStats s;
  int64_t neg = 0;
  double acc = 0.0;
  for (double d : det->v) {
    if (d <= 0.0) ++neg;
    acc += std::abs(d - 1.0);
  }
  s.neg_pct = 100.0 * double(neg) / double(det->numel());
  s.mean_abs_jm1 = acc / double(det->numel());
  return s;
}

LabelMask warp_labels(const LabelMask& mask, const TensorPtr& phi) {
  require(phi->ndim() == 3 && phi->dim(0) == 2, "warp expects a [2, H, W] field");
  require(mask.h == phi->dim(1) && mask.w == phi->dim(2), "shape mismatch");
  require((int)mask.labels.size() == mask.h * mask.w, "shape mismatch");
  std::set<int> ids(mask.labels.begin(), mask.labels.end());
  NoGradGuard ng;
  size_t P = (size_t)mask.h * mask.w;
  std::vector<double> best(P, -1.0);
  LabelMask out{mask.h, mask.w, std::vector<int>(P, 0)};
  for (int id : ids) {  // ascending: ties keep the lowest id
    auto onehot = make_tensor({mask.h, mask.w});
    for (size_t i = 0; i < P; ++i) onehot->v[i] = mask.labels[i] == id ? 1.0 : 0.0;
    auto warped = warp(onehot, phi);
    for (size_t i = 0; i < P; ++i) {
      if (warped->v[i] > best[i]) {
        best[i] = warped->v[i];
        out.labels[i] = id;
      }
    }
  }
  return out;
}

double endpoint_error(const TensorPtr& phi, const TensorPtr& gt, const LabelMask* mask) {
  require(phi->ndim() == 3 && phi->dim(0) == 2, "endpoint error expects [2, H, W] fields");
  require(phi->shape == gt->shape, "shape mismatch");
  int H = phi->dim(1), W = phi->dim(2);
  if (mask) require(mask->h == H && mask->w == W, "shape mismatch");
  size_t P = (size_t)H * W;
  double acc = 0.0;
  int64_t n = 0;
  for (size_t p = 0; p < P; ++p) {
    if (mask && mask->labels[p] == 0) continue;
    double dx = phi->v[p] - gt->v[p];
    double dy = phi->v[P + p] - gt->v[P + p];
    acc += std::sqrt(dx * dx + dy * dy);
    ++n;
  }
  require(n > 0, "empty mask");
  return acc / double(n);
}

TemporalConsistency temporal_consistency(const std::vector<TensorPtr>& fields) {
  require(fields.size() >= 3, "need at least 3 fields");
  int T = (int)fields.size();
  int H = fields[0]->dim(1), W = fields[0]->dim(2);
  size_t P = (size_t)H * W;
  for (auto& f : fields)
    require(f->ndim() == 3 && f->dim(0) == 2 && f->dim(1) == H && f->dim(2) == W,
            "shape mismatch");
  TemporalConsistency tc;
  tc.curve.resize(T);
  for (int t = 0; t < T; ++t) {
    double acc = 0.0;
    for (size_t p = 0; p < P; ++p) {
      double ux = fields[t]->v[p], uy = fields[t]->v[P + p];
      acc += std::sqrt(ux * ux + uy * uy);
    }
    tc.curve[t] = acc / double(P);
  }
  double acc = 0.0;
  for (int t = 1; t + 1 < T; ++t) {
    for (size_t p = 0; p < P; ++p) {
      double dx = fields[t + 1]->v[p] - 2.0 * fields[t]->v[p] + fields[t - 1]->v[p];
      double dy =
          fields[t + 1]->v[P + p] - 2.0 * fields[t]->v[P + p] + fields[t - 1]->v[P + p];
      acc += std::sqrt(dx * dx + dy * dy);
    }
  }
  tc.tc_index = acc / double((T - 2) * P);
  return tc;
}

}  // namespace mcm
