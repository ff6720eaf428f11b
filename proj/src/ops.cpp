#include "mcm/ops.hpp"

#include <cmath>

namespace mcm {

namespace {

bool track(std::initializer_list<const TensorPtr*> ps) {
  if (!grad_enabled()) return false;
  for (auto* p : ps)
    if ((*p)->requires_grad) return true;
  return false;
}

void check_same_shape(const TensorPtr& a, const TensorPtr& b) {
  require(a->shape == b->shape, "shape mismatch");
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b);
  auto out = make_tensor(a->shape);
  int n = out->numel();
  for (int i = 0; i < n; ++i) out->v[i] = a->v[i] + b->v[i];
  if (track({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a, b};
    out->backward_fn = [a, b](Tensor& self) {
      int m = self.numel();
      if (a->requires_grad) {
        a->ensure_grad();
        for (int i = 0; i < m; ++i) a->g[i] += self.g[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int i = 0; i < m; ++i) b->g[i] += self.g[i];
      }
    };
  }
  return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b);
  auto out = make_tensor(a->shape);
  int n = out->numel();
  for (int i = 0; i < n; ++i) out->v[i] = a->v[i] - b->v[i];
  if (track({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a, b};
    out->backward_fn = [a, b](Tensor& self) {
      int m = self.numel();
      if (a->requires_grad) {
        a->ensure_grad();
        for (int i = 0; i < m; ++i) a->g[i] += self.g[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int i = 0; i < m; ++i) b->g[i] -= self.g[i];
      }
    };
  }
  return out;
}

TensorPtr scale(const TensorPtr& a, double s) {
  auto out = make_tensor(a->shape);
  int n = out->numel();
  for (int i = 0; i < n; ++i) out->v[i] = s * a->v[i];
  if (track({&a})) {
    out->requires_grad = true;
    out->parents = {a};
    out->backward_fn = [a, s](Tensor& self) {
      a->ensure_grad();
      int m = self.numel();
      for (int i = 0; i < m; ++i) a->g[i] += s * self.g[i];
    };
  }
  return out;
}

TensorPtr add_scaled(const TensorPtr& a, const TensorPtr& b, double s) {
  check_same_shape(a, b);
  auto out = make_tensor(a->shape);
  int n = out->numel();
  for (int i = 0; i < n; ++i) out->v[i] = a->v[i] + s * b->v[i];
  if (track({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a, b};
    out->backward_fn = [a, b, s](Tensor& self) {
      int m = self.numel();
      if (a->requires_grad) {
        a->ensure_grad();
        for (int i = 0; i < m; ++i) a->g[i] += self.g[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int i = 0; i < m; ++i) b->g[i] += s * self.g[i];
      }
    };
  }
  return out;
}

TensorPtr silu(const TensorPtr& x) {
  auto out = make_tensor(x->shape);
  int n = out->numel();
  for (int i = 0; i < n; ++i) {
    double s = sigmoid(x->v[i]);
    out->v[i] = x->v[i] * s;
  }
  if (track({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_fn = [x](Tensor& self) {
      x->ensure_grad();
      int m = self.numel();
      for (int i = 0; i < m; ++i) {
        double s = sigmoid(x->v[i]);
        x->g[i] += self.g[i] * s * (1.0 + x->v[i] * (1.0 - s));
      }
    };
  }
  return out;
}

TensorPtr linear_tokens(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  require(x->ndim() == 4, "linear_tokens expects [N, C, H, W]");
  require(w->ndim() == 2, "weight must be [Cout, Cin]");
  int N = x->dim(0), Ci = x->dim(1), H = x->dim(2), W = x->dim(3);
  int Co = w->dim(0);
  require(w->dim(1) == Ci, "channel mismatch");
  require(b->ndim() == 1 && b->dim(0) == Co, "bias shape mismatch");
  int P = H * W;
  auto out = make_tensor({N, Co, H, W});
  for (int n = 0; n < N; ++n) {
    const double* xs = x->v.data() + (size_t)n * Ci * P;
    double* os = out->v.data() + (size_t)n * Co * P;
    for (int co = 0; co < Co; ++co) {
      const double* wr = w->v.data() + (size_t)co * Ci;
      double* orow = os + (size_t)co * P;
      double bias = b->v[co];
      for (int p = 0; p < P; ++p) orow[p] = bias;
      for (int ci = 0; ci < Ci; ++ci) {
        double wv = wr[ci];
        const double* xrow = xs + (size_t)ci * P;
        for (int p = 0; p < P; ++p) orow[p] += wv * xrow[p];
      }
    }
  }
  if (track({&x, &w, &b})) {
    out->requires_grad = true;
    out->parents = {x, w, b};
    out->backward_fn = [x, w, b, N, Ci, Co, P](Tensor& self) {
      if (x->requires_grad) x->ensure_grad();
      if (w->requires_grad) w->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      for (int n = 0; n < N; ++n) {
        const double* xs = x->v.data() + (size_t)n * Ci * P;
        const double* gs = self.g.data() + (size_t)n * Co * P;
        for (int co = 0; co < Co; ++co) {
          const double* grow = gs + (size_t)co * P;
          const double* wr = w->v.data() + (size_t)co * Ci;
          if (b->requires_grad) {
            double acc = 0.0;
            for (int p = 0; p < P; ++p) acc += grow[p];
            b->g[co] += acc;
          }
          for (int ci = 0; ci < Ci; ++ci) {
            const double* xrow = xs + (size_t)ci * P;
            if (w->requires_grad) {
              double acc = 0.0;
              for (int p = 0; p < P; ++p) acc += grow[p] * xrow[p];
              w->g[(size_t)co * Ci + ci] += acc;
            }
            if (x->requires_grad) {
              double wv = wr[ci];
              double* gx = x->g.data() + (size_t)n * Ci * P + (size_t)ci * P;
              for (int p = 0; p < P; ++p) gx[p] += wv * grow[p];
            }
          }
        }
      }
    };
  }
  return out;
}

TensorPtr layernorm_tokens(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                           double eps) {
  require(x->ndim() == 4, "layernorm_tokens expects [N, C, H, W]");
  int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  require(gamma->ndim() == 1 && gamma->dim(0) == C, "gain shape mismatch");
  require(beta->ndim() == 1 && beta->dim(0) == C, "bias shape mismatch");
  int P = H * W;
  auto out = make_tensor(x->shape);
  for (int n = 0; n < N; ++n) {
    for (int p = 0; p < P; ++p) {
      size_t base = (size_t)n * C * P + p;
      double mu = 0.0;
      for (int c = 0; c < C; ++c) mu += x->v[base + (size_t)c * P];
      mu /= C;
      double var = 0.0;
      for (int c = 0; c < C; ++c) {
        double d = x->v[base + (size_t)c * P] - mu;
        var += d * d;
      }
      var /= C;
      double inv = 1.0 / std::sqrt(var + eps);
      for (int c = 0; c < C; ++c) {
        double xh = (x->v[base + (size_t)c * P] - mu) * inv;
        out->v[base + (size_t)c * P] = gamma->v[c] * xh + beta->v[c];
      }
    }
  }
  if (track({&x, &gamma, &beta})) {
    out->requires_grad = true;
    out->parents = {x, gamma, beta};
    out->backward_fn = [x, gamma, beta, N, C, P, eps](Tensor& self) {
      if (x->requires_grad) x->ensure_grad();
      if (gamma->requires_grad) gamma->ensure_grad();
      if (beta->requires_grad) beta->ensure_grad();
      std::vector<double> xh(C), gxh(C);
      for (int n = 0; n < N; ++n) {
        for (int p = 0; p < P; ++p) {
          size_t base = (size_t)n * C * P + p;
          double mu = 0.0;
          for (int c = 0; c < C; ++c) mu += x->v[base + (size_t)c * P];
          mu /= C;
          double var = 0.0;
          for (int c = 0; c < C; ++c) {
            double d = x->v[base + (size_t)c * P] - mu;
            var += d * d;
          }
          var /= C;
          double inv = 1.0 / std::sqrt(var + eps);
          double m1 = 0.0, m2 = 0.0;
          for (int c = 0; c < C; ++c) {
            double go = self.g[base + (size_t)c * P];
            xh[c] = (x->v[base + (size_t)c * P] - mu) * inv;
            gxh[c] = go * gamma->v[c];
            if (gamma->requires_grad) gamma->g[c] += go * xh[c];
            if (beta->requires_grad) beta->g[c] += go;
            m1 += gxh[c];
            m2 += gxh[c] * xh[c];
          }
          if (x->requires_grad) {
            m1 /= C;
            m2 /= C;
            for (int c = 0; c < C; ++c)
              x->g[base + (size_t)c * P] += inv * (gxh[c] - m1 - xh[c] * m2);
          }
        }
      }
    };
  }
  return out;
}

TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b, int stride, int pad) {
  require(x->ndim() == 4 && w->ndim() == 4, "conv2d expects 4-d input and weight");
  int N = x->dim(0), Ci = x->dim(1), H = x->dim(2), W = x->dim(3);
  int Co = w->dim(0), kh = w->dim(2), kw = w->dim(3);
  require(w->dim(1) == Ci, "channel mismatch");
  require(b->ndim() == 1 && b->dim(0) == Co, "bias shape mismatch");
  require(stride >= 1 && pad >= 0, "bad conv geometry");
  int Ho = (H + 2 * pad - kh) / stride + 1;
  int Wo = (W + 2 * pad - kw) / stride + 1;
  require(Ho >= 1 && Wo >= 1, "kernel larger than input");
  auto out = make_tensor({N, Co, Ho, Wo});
  auto run_fwd = [&](int n, int co) {
    const double* wbase = w->v.data() + (size_t)co * Ci * kh * kw;
    double* obase = out->v.data() + ((size_t)n * Co + co) * Ho * Wo;
    double bias = b->v[co];
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        double acc = bias;
        int iy0 = oy * stride - pad, ix0 = ox * stride - pad;
        for (int ci = 0; ci < Ci; ++ci) {
          const double* xbase = x->v.data() + ((size_t)n * Ci + ci) * H * W;
          const double* wrow = wbase + (size_t)ci * kh * kw;
          for (int dy = 0; dy < kh; ++dy) {
            int iy = iy0 + dy;
            if (iy < 0 || iy >= H) continue;
            for (int dx = 0; dx < kw; ++dx) {
              int ix = ix0 + dx;
              if (ix < 0 || ix >= W) continue;
              acc += wrow[dy * kw + dx] * xbase[(size_t)iy * W + ix];
            }
          }
        }
        obase[(size_t)oy * Wo + ox] = acc;
      }
    }
  };
  parallel_for(N * Co, [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) run_fwd(i / Co, i % Co);
  });
  if (track({&x, &w, &b})) {
    out->requires_grad = true;
    out->parents = {x, w, b};
    out->backward_fn = [x, w, b, N, Ci, Co, H, W, Ho, Wo, kh, kw, stride, pad](Tensor& self) {
      if (x->requires_grad) x->ensure_grad();
      if (w->requires_grad) w->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Co; ++co) {
          const double* gbase = self.g.data() + ((size_t)n * Co + co) * Ho * Wo;
          const double* wbase = w->v.data() + (size_t)co * Ci * kh * kw;
          double* gwbase = w->requires_grad ? w->g.data() + (size_t)co * Ci * kh * kw : nullptr;
          for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox) {
              double go = gbase[(size_t)oy * Wo + ox];
              if (go == 0.0) continue;
              if (b->requires_grad) b->g[co] += go;
              int iy0 = oy * stride - pad, ix0 = ox * stride - pad;
              for (int ci = 0; ci < Ci; ++ci) {
                const double* xbase = x->v.data() + ((size_t)n * Ci + ci) * H * W;
                double* gxbase = x->requires_grad ? x->g.data() + ((size_t)n * Ci + ci) * H * W : nullptr;
                for (int dy = 0; dy < kh; ++dy) {
                  int iy = iy0 + dy;
                  if (iy < 0 || iy >= H) continue;
                  for (int dx = 0; dx < kw; ++dx) {
                    int ix = ix0 + dx;
                    if (ix < 0 || ix >= W) continue;
                    size_t xi = (size_t)iy * W + ix;
                    size_t wi = (size_t)ci * kh * kw + dy * kw + dx;
                    if (gwbase) gwbase[wi] += go * xbase[xi];
                    if (gxbase) gxbase[xi] += go * wbase[wi];
                  }
                }
              }
            }
          }
        }
      }
    };
  }
  return out;
}

TensorPtr conv3d_frames(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  require(x->ndim() == 4 && w->ndim() == 5, "conv3d_frames expects [F, C, H, W] and 5-d weight");
  int F = x->dim(0), Ci = x->dim(1), H = x->dim(2), W = x->dim(3);
  int Co = w->dim(0), kf = w->dim(2), kh = w->dim(3), kw = w->dim(4);
  require(w->dim(1) == Ci, "channel mismatch");
  require(b->ndim() == 1 && b->dim(0) == Co, "bias shape mismatch");
  require(kf >= 1 && kf <= F, "frame kernel larger than clip");
  require(kh % 2 == 1 && kw % 2 == 1, "spatial kernel must be odd");
  int Fo = F - kf + 1;
  int ph = kh / 2, pw = kw / 2;
  auto out = make_tensor({Fo, Co, H, W});
  auto run_fwd = [&](int fo, int co) {
    const double* wbase = w->v.data() + (size_t)co * Ci * kf * kh * kw;
    double* obase = out->v.data() + ((size_t)fo * Co + co) * H * W;
    double bias = b->v[co];
    for (int oy = 0; oy < H; ++oy) {
      for (int ox = 0; ox < W; ++ox) {
        double acc = bias;
        for (int df = 0; df < kf; ++df) {
          for (int ci = 0; ci < Ci; ++ci) {
            const double* xbase = x->v.data() + ((size_t)(fo + df) * Ci + ci) * H * W;
            const double* wrow = wbase + ((size_t)ci * kf + df) * kh * kw;
            for (int dy = 0; dy < kh; ++dy) {
              int iy = oy - ph + dy;
              if (iy < 0 || iy >= H) continue;
              for (int dx = 0; dx < kw; ++dx) {
                int ix = ox - pw + dx;
                if (ix < 0 || ix >= W) continue;
                acc += wrow[dy * kw + dx] * xbase[(size_t)iy * W + ix];
              }
            }
          }
        }
        obase[(size_t)oy * W + ox] = acc;
      }
    }
  };
  parallel_for(Fo * Co, [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) run_fwd(i / Co, i % Co);
  });
  if (track({&x, &w, &b})) {
    out->requires_grad = true;
    out->parents = {x, w, b};
    out->backward_fn = [x, w, b, F, Ci, Co, H, W, Fo, kf, kh, kw](Tensor& self) {
      (void)F;
      int ph = kh / 2, pw = kw / 2;
      if (x->requires_grad) x->ensure_grad();
      if (w->requires_grad) w->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      for (int fo = 0; fo < Fo; ++fo) {
        for (int co = 0; co < Co; ++co) {
          const double* gbase = self.g.data() + ((size_t)fo * Co + co) * H * W;
          const double* wbase = w->v.data() + (size_t)co * Ci * kf * kh * kw;
          double* gwbase = w->requires_grad ? w->g.data() + (size_t)co * Ci * kf * kh * kw : nullptr;
          for (int oy = 0; oy < H; ++oy) {
            for (int ox = 0; ox < W; ++ox) {
              double go = gbase[(size_t)oy * W + ox];
              if (go == 0.0) continue;
              if (b->requires_grad) b->g[co] += go;
              for (int df = 0; df < kf; ++df) {
                for (int ci = 0; ci < Ci; ++ci) {
                  size_t plane = ((size_t)(fo + df) * Ci + ci) * H * W;
                  const double* xbase = x->v.data() + plane;
                  double* gxbase = x->requires_grad ? x->g.data() + plane : nullptr;
                  size_t wrow = ((size_t)ci * kf + df) * kh * kw;
                  for (int dy = 0; dy < kh; ++dy) {
                    int iy = oy - ph + dy;
                    if (iy < 0 || iy >= H) continue;
                    for (int dx = 0; dx < kw; ++dx) {
                      int ix = ox - pw + dx;
                      if (ix < 0 || ix >= W) continue;
                      size_t xi = (size_t)iy * W + ix;
                      size_t wi = wrow + dy * kw + dx;
                      if (gwbase) gwbase[wi] += go * xbase[xi];
                      if (gxbase) gxbase[xi] += go * wbase[wi];
                    }
                  }
                }
              }
            }
          }
        }
      }
    };
  }
  return out;
}

namespace {

struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<double> t;
};

LerpAxis make_axis(int out_n, int in_n, int factor) {
  LerpAxis ax;
  ax.i0.resize(out_n);
  ax.i1.resize(out_n);
  ax.t.resize(out_n);
  for (int o = 0; o < out_n; ++o) {
    double s = (o + 0.5) / factor - 0.5;
    double fl = std::floor(s);
    int i0 = (int)fl;
    double t = s - fl;
    int i1 = i0 + 1;
    if (i0 < 0) i0 = 0;
    if (i1 < 0) i1 = 0;
    if (i0 > in_n - 1) i0 = in_n - 1;
    if (i1 > in_n - 1) i1 = in_n - 1;
    ax.i0[o] = i0;
    ax.i1[o] = i1;
    ax.t[o] = t;
  }
  return ax;
}

}  // namespace

TensorPtr upsample_bilinear(const TensorPtr& x, int factor) {
  require(x->ndim() == 4, "upsample expects [N, C, H, W]");
  require(factor >= 1, "bad upsample factor");
  int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  int Ho = H * factor, Wo = W * factor;
  auto out = make_tensor({N, C, Ho, Wo});
  LerpAxis ay = make_axis(Ho, H, factor);
  LerpAxis axx = make_axis(Wo, W, factor);
  for (int nc = 0; nc < N * C; ++nc) {
    const double* xb = x->v.data() + (size_t)nc * H * W;
    double* ob = out->v.data() + (size_t)nc * Ho * Wo;
    for (int oy = 0; oy < Ho; ++oy) {
      int y0 = ay.i0[oy], y1 = ay.i1[oy];
      double ty = ay.t[oy];
      for (int ox = 0; ox < Wo; ++ox) {
        int x0 = axx.i0[ox], x1 = axx.i1[ox];
        double tx = axx.t[ox];
        double top = (1.0 - tx) * xb[(size_t)y0 * W + x0] + tx * xb[(size_t)y0 * W + x1];
        double bot = (1.0 - tx) * xb[(size_t)y1 * W + x0] + tx * xb[(size_t)y1 * W + x1];
        ob[(size_t)oy * Wo + ox] = (1.0 - ty) * top + ty * bot;
      }
    }
  }
  if (track({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_fn = [x, N, C, H, W, Ho, Wo, ay, axx](Tensor& self) {
      x->ensure_grad();
      for (int nc = 0; nc < N * C; ++nc) {
        double* gx = x->g.data() + (size_t)nc * H * W;
        const double* go = self.g.data() + (size_t)nc * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          int y0 = ay.i0[oy], y1 = ay.i1[oy];
          double ty = ay.t[oy];
          for (int ox = 0; ox < Wo; ++ox) {
            int x0 = axx.i0[ox], x1 = axx.i1[ox];
            double tx = axx.t[ox];
            double g = go[(size_t)oy * Wo + ox];
            gx[(size_t)y0 * W + x0] += g * (1.0 - ty) * (1.0 - tx);
            gx[(size_t)y0 * W + x1] += g * (1.0 - ty) * tx;
            gx[(size_t)y1 * W + x0] += g * ty * (1.0 - tx);
            gx[(size_t)y1 * W + x1] += g * ty * tx;
          }
        }
      }
    };
  }
  return out;
}

TensorPtr concat_channels(const TensorPtr& a, const TensorPtr& b) {
  require(a->ndim() == 4 && b->ndim() == 4, "concat expects [N, C, H, W]");
  require(a->dim(0) == b->dim(0) && a->dim(2) == b->dim(2) && a->dim(3) == b->dim(3),
          "shape mismatch");
  int N = a->dim(0), Ca = a->dim(1), Cb = b->dim(1), H = a->dim(2), W = a->dim(3);
  int P = H * W;
  auto out = make_tensor({N, Ca + Cb, H, W});
  for (int n = 0; n < N; ++n) {
    double* ob = out->v.data() + (size_t)n * (Ca + Cb) * P;
    std::copy_n(a->v.data() + (size_t)n * Ca * P, (size_t)Ca * P, ob);
    std::copy_n(b->v.data() + (size_t)n * Cb * P, (size_t)Cb * P, ob + (size_t)Ca * P);
  }
  if (track({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a, b};
    out->backward_fn = [a, b, N, Ca, Cb, P](Tensor& self) {
      for (int n = 0; n < N; ++n) {
        const double* gb = self.g.data() + (size_t)n * (Ca + Cb) * P;
        if (a->requires_grad) {
          a->ensure_grad();
          double* ga = a->g.data() + (size_t)n * Ca * P;
          for (size_t i = 0; i < (size_t)Ca * P; ++i) ga[i] += gb[i];
        }
        if (b->requires_grad) {
          b->ensure_grad();
          double* gbb = b->g.data() + (size_t)n * Cb * P;
          for (size_t i = 0; i < (size_t)Cb * P; ++i) gbb[i] += gb[(size_t)Ca * P + i];
        }
      }
    };
  }
  return out;
}

TensorPtr space_to_depth2(const TensorPtr& x) {
  require(x->ndim() == 4, "space_to_depth expects [N, C, H, W]");
  int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  require(H % 2 == 0 && W % 2 == 0, "shape not divisible");
  int Ho = H / 2, Wo = W / 2;
  auto out = make_tensor({N, 4 * C, Ho, Wo});
  // corner order: TL, TR, BL, BR as channel blocks
  for (int n = 0; n < N; ++n) {
    for (int k = 0; k < 4; ++k) {
      int dy = k >> 1, dx = k & 1;
      for (int c = 0; c < C; ++c) {
        const double* xb = x->v.data() + ((size_t)n * C + c) * H * W;
        double* ob = out->v.data() + ((size_t)n * 4 * C + (size_t)k * C + c) * Ho * Wo;
        for (int y = 0; y < Ho; ++y)
          for (int xcol = 0; xcol < Wo; ++xcol)
            ob[(size_t)y * Wo + xcol] = xb[(size_t)(2 * y + dy) * W + 2 * xcol + dx];
      }
    }
  }
  if (track({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_fn = [x, N, C, H, W, Ho, Wo](Tensor& self) {
      x->ensure_grad();
      for (int n = 0; n < N; ++n) {
        for (int k = 0; k < 4; ++k) {
          int dy = k >> 1, dx = k & 1;
          for (int c = 0; c < C; ++c) {
            double* gx = x->g.data() + ((size_t)n * C + c) * H * W;
            const double* go = self.g.data() + ((size_t)n * 4 * C + (size_t)k * C + c) * Ho * Wo;
            for (int y = 0; y < Ho; ++y)
              for (int xcol = 0; xcol < Wo; ++xcol)
                gx[(size_t)(2 * y + dy) * W + 2 * xcol + dx] += go[(size_t)y * Wo + xcol];
          }
        }
      }
    };
  }
  return out;
}

TensorPtr frame_reverse(const TensorPtr& x) {
  require(x->ndim() >= 1, "frame_reverse expects a leading frame axis");
  int F = x->dim(0);
  require(F >= 1, "empty sequence");
  size_t stride = x->numel() / F;
  auto out = make_tensor(x->shape);
  for (int f = 0; f < F; ++f)
    std::copy_n(x->v.data() + (size_t)(F - 1 - f) * stride, stride, out->v.data() + (size_t)f * stride);
  if (track({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_fn = [x, F, stride](Tensor& self) {
      x->ensure_grad();
      for (int f = 0; f < F; ++f) {
        const double* go = self.g.data() + (size_t)f * stride;
        double* gx = x->g.data() + (size_t)(F - 1 - f) * stride;
        for (size_t i = 0; i < stride; ++i) gx[i] += go[i];
      }
    };
  }
  return out;
}

TensorPtr frame_mean(const TensorPtr& x) {
  require(x->ndim() == 4, "frame_mean expects [F, C, H, W]");
  int F = x->dim(0);
  size_t stride = x->numel() / F;
  auto out = make_tensor({1, x->dim(1), x->dim(2), x->dim(3)});
  for (size_t i = 0; i < stride; ++i) {
    double acc = 0.0;
    for (int f = 0; f < F; ++f) acc += x->v[(size_t)f * stride + i];
    out->v[i] = acc / F;
  }
  if (track({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_fn = [x, F, stride](Tensor& self) {
      x->ensure_grad();
      for (size_t i = 0; i < stride; ++i) {
        double g = self.g[i] / F;
        for (int f = 0; f < F; ++f) x->g[(size_t)f * stride + i] += g;
      }
    };
  }
  return out;
}

TensorPtr reshape_copy(const TensorPtr& x, std::vector<int> shape) {
  require(numel_of(shape) == x->numel(), "reshape numel mismatch");
  auto out = make_tensor(shape);
  out->v = x->v;
  if (track({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_fn = [x](Tensor& self) {
      x->ensure_grad();
      int n = self.numel();
      for (int i = 0; i < n; ++i) x->g[i] += self.g[i];
    };
  }
  return out;
}

TensorPtr mse(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b);
  int n = a->numel();
  require(n > 0, "empty tensor");
  auto out = make_tensor({1});
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double d = a->v[i] - b->v[i];
    acc += d * d;
  }
  out->v[0] = acc / n;
  if (track({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a, b};
    out->backward_fn = [a, b, n](Tensor& self) {
      double g = self.g[0] * 2.0 / n;
      if (a->requires_grad) a->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      for (int i = 0; i < n; ++i) {
        double d = g * (a->v[i] - b->v[i]);
        if (a->requires_grad) a->g[i] += d;
        if (b->requires_grad) b->g[i] -= d;
      }
    };
  }
  return out;
}

}  // namespace mcm
