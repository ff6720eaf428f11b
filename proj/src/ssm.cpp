#include "mcm/ssm.hpp"

#include <cmath>

#include "mcm/ops.hpp"

namespace mcm {

namespace {

struct Ctx {
  int D, N;
  const double *a_log, *w_dt, *b_dt, *w_b, *b_b, *w_c, *b_c, *dsk;
};

Ctx make_ctx(const SsmParams& p) {
  return {p.d,
          p.n_state,
          p.a_log->v.data(),
          p.w_dt->v.data(),
          p.b_dt->v.data(),
          p.w_b->v.data(),
          p.b_b->v.data(),
          p.w_c->v.data(),
          p.b_c->v.data(),
          p.d_skip->v.data()};
}

// x, y are [L, D] row-major.
void kernel_forward(const Ctx& c, int L, const double* x, double* y) {
  int D = c.D, N = c.N;
  std::vector<double> h((size_t)D * N, 0.0), B(N), C(N);
  for (int k = 0; k < L; ++k) {
    const double* xk = x + (size_t)k * D;
    double* yk = y + (size_t)k * D;
    for (int n = 0; n < N; ++n) {
      double accB = c.b_b[n], accC = c.b_c[n];
      const double* wbr = c.w_b + (size_t)n * D;
      const double* wcr = c.w_c + (size_t)n * D;
      for (int e = 0; e < D; ++e) {
        accB += wbr[e] * xk[e];
        accC += wcr[e] * xk[e];
      }
      B[n] = accB;
      C[n] = accC;
    }
    for (int d = 0; d < D; ++d) {
      double pre = c.b_dt[d];
      const double* wdr = c.w_dt + (size_t)d * D;
      for (int e = 0; e < D; ++e) pre += wdr[e] * xk[e];
      double dt = softplus(pre);
      double* hd = h.data() + (size_t)d * N;
      const double* ar = c.a_log + (size_t)d * N;
      double acc = 0.0;
      for (int n = 0; n < N; ++n) {
        double A = -std::exp(ar[n]);
        double abar = std::exp(dt * A);
        hd[n] = abar * hd[n] + dt * B[n] * xk[d];
        acc += C[n] * hd[n];
      }
      yk[d] = acc + c.dsk[d] * xk[d];
    }
  }
}

struct GradPtrs {
  double *a_log = nullptr, *w_dt = nullptr, *b_dt = nullptr, *w_b = nullptr, *b_b = nullptr,
         *w_c = nullptr, *b_c = nullptr, *dsk = nullptr;
};

GradPtrs make_grad_ptrs(const SsmParams& p) {
  GradPtrs g;
  auto grab = [](const TensorPtr& t) -> double* {
    if (!t->requires_grad) return nullptr;
    t->ensure_grad();
    return t->g.data();
  };
  g.a_log = grab(p.a_log);
  g.w_dt = grab(p.w_dt);
  g.b_dt = grab(p.b_dt);
  g.w_b = grab(p.w_b);
  g.b_b = grab(p.b_b);
  g.w_c = grab(p.w_c);
  g.b_c = grab(p.b_c);
  g.dsk = grab(p.d_skip);
  return g;
}

// Recomputes the forward trace, then walks it in reverse. Accumulates into gx
// (when non-null) and into the non-null fields of gp.
void kernel_backward(const Ctx& c, int L, const double* x, const double* gy, double* gx,
                     const GradPtrs& gp) {
  int D = c.D, N = c.N;
  std::vector<double> A((size_t)D * N);
  for (int d = 0; d < D; ++d)
    for (int n = 0; n < N; ++n) A[(size_t)d * N + n] = -std::exp(c.a_log[(size_t)d * N + n]);

  std::vector<double> h_all((size_t)L * D * N), pre_all((size_t)L * D), dt_all((size_t)L * D),
      B_all((size_t)L * N), C_all((size_t)L * N);
  {
    std::vector<double> h((size_t)D * N, 0.0);
    for (int k = 0; k < L; ++k) {
      const double* xk = x + (size_t)k * D;
      for (int n = 0; n < N; ++n) {
        double accB = c.b_b[n], accC = c.b_c[n];
        const double* wbr = c.w_b + (size_t)n * D;
        const double* wcr = c.w_c + (size_t)n * D;
        for (int e = 0; e < D; ++e) {
          accB += wbr[e] * xk[e];
          accC += wcr[e] * xk[e];
        }
        B_all[(size_t)k * N + n] = accB;
        C_all[(size_t)k * N + n] = accC;
      }
      for (int d = 0; d < D; ++d) {
        double pre = c.b_dt[d];
        const double* wdr = c.w_dt + (size_t)d * D;
        for (int e = 0; e < D; ++e) pre += wdr[e] * xk[e];
        pre_all[(size_t)k * D + d] = pre;
        double dt = softplus(pre);
        dt_all[(size_t)k * D + d] = dt;
        double* hd = h.data() + (size_t)d * N;
        for (int n = 0; n < N; ++n) {
          double abar = std::exp(dt * A[(size_t)d * N + n]);
          hd[n] = abar * hd[n] + dt * B_all[(size_t)k * N + n] * xk[d];
        }
      }
      std::copy(h.begin(), h.end(), h_all.begin() + (size_t)k * D * N);
    }
  }

  std::vector<double> gh((size_t)D * N, 0.0), gB(N), gC(N);
  for (int k = L - 1; k >= 0; --k) {
    const double* xk = x + (size_t)k * D;
    const double* gyk = gy + (size_t)k * D;
    const double* Bk = B_all.data() + (size_t)k * N;
    const double* Ck = C_all.data() + (size_t)k * N;
    const double* hk = h_all.data() + (size_t)k * D * N;
    const double* hp = k > 0 ? h_all.data() + (size_t)(k - 1) * D * N : nullptr;
    double* gxk = gx ? gx + (size_t)k * D : nullptr;
    std::fill(gB.begin(), gB.end(), 0.0);
    std::fill(gC.begin(), gC.end(), 0.0);
    for (int d = 0; d < D; ++d) {
      double gyd = gyk[d];
      if (gp.dsk) gp.dsk[d] += gyd * xk[d];
      if (gxk) gxk[d] += gyd * c.dsk[d];
      double dt = dt_all[(size_t)k * D + d];
      double g_dt = 0.0;
      for (int n = 0; n < N; ++n) {
        size_t dn = (size_t)d * N + n;
        double ghd = gh[dn] + gyd * Ck[n];
        gC[n] += gyd * hk[dn];
        double hprev = hp ? hp[dn] : 0.0;
        double abar = std::exp(dt * A[dn]);
        double g_abar = ghd * hprev;
        g_dt += g_abar * abar * A[dn];
        if (gp.a_log) gp.a_log[dn] += g_abar * abar * dt * A[dn];
        g_dt += ghd * Bk[n] * xk[d];
        gB[n] += ghd * dt * xk[d];
        if (gxk) gxk[d] += ghd * dt * Bk[n];
        gh[dn] = ghd * abar;
      }
      double g_pre = g_dt * sigmoid(pre_all[(size_t)k * D + d]);
      if (gp.b_dt) gp.b_dt[d] += g_pre;
      const double* wdr = c.w_dt + (size_t)d * D;
      for (int e = 0; e < D; ++e) {
        if (gp.w_dt) gp.w_dt[(size_t)d * D + e] += g_pre * xk[e];
        if (gxk) gxk[e] += g_pre * wdr[e];
      }
    }
    for (int n = 0; n < N; ++n) {
      if (gp.b_b) gp.b_b[n] += gB[n];
      if (gp.b_c) gp.b_c[n] += gC[n];
      const double* wbr = c.w_b + (size_t)n * D;
      const double* wcr = c.w_c + (size_t)n * D;
      for (int e = 0; e < D; ++e) {
        if (gp.w_b) gp.w_b[(size_t)n * D + e] += gB[n] * xk[e];
        if (gp.w_c) gp.w_c[(size_t)n * D + e] += gC[n] * xk[e];
        if (gxk) gxk[e] += gB[n] * wbr[e] + gC[n] * wcr[e];
      }
    }
  }
}

bool any_param_grad(const SsmParams& p) {
  return p.a_log->requires_grad || p.w_dt->requires_grad || p.b_dt->requires_grad ||
         p.w_b->requires_grad || p.b_b->requires_grad || p.w_c->requires_grad ||
         p.b_c->requires_grad || p.d_skip->requires_grad;
}

void append_parents(std::vector<TensorPtr>& ps, const SsmParams& p) {
  ps.insert(ps.end(), {p.a_log, p.w_dt, p.b_dt, p.w_b, p.b_b, p.w_c, p.b_c, p.d_skip});
}

}  // namespace

void SsmParams::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".a_log", a_log});
  out.push_back({prefix + ".w_dt", w_dt});
  out.push_back({prefix + ".b_dt", b_dt});
  out.push_back({prefix + ".w_b", w_b});
  out.push_back({prefix + ".b_b", b_b});
  out.push_back({prefix + ".w_c", w_c});
  out.push_back({prefix + ".b_c", b_c});
  out.push_back({prefix + ".d_skip", d_skip});
}

SsmParams init_ssm(int d, int n_state, Rng& rng) {
  require(d >= 1 && n_state >= 1, "bad ssm dimensions");
  SsmParams p;
  p.d = d;
  p.n_state = n_state;
  p.a_log = make_param({d, n_state});
  for (int i = 0; i < d; ++i)
    for (int n = 0; n < n_state; ++n) p.a_log->v[(size_t)i * n_state + n] = std::log(double(n + 1));
  p.w_dt = make_param({d, d});
  for (auto& x : p.w_dt->v) x = rng.normal(0.0, 0.02);
  p.b_dt = make_param({d});
  for (auto& x : p.b_dt->v) {
    double dt0 = std::exp(rng.uniform(std::log(0.01), std::log(0.1)));
    x = std::log(std::expm1(dt0));  // softplus inverse
  }
  p.w_b = make_param({n_state, d});
  for (auto& x : p.w_b->v) x = rng.normal(0.0, 0.02);
  p.b_b = make_param({n_state});
  p.w_c = make_param({n_state, d});
  for (auto& x : p.w_c->v) x = rng.normal(0.0, 0.02);
  p.b_c = make_param({n_state});
  p.d_skip = make_param({d});
  for (auto& x : p.d_skip->v) x = 1.0;
  return p;
}

void discretize(const SsmParams& p, const std::vector<double>& token, std::vector<double>& a_bar,
                std::vector<double>& b_bar, std::vector<double>& c) {
  require((int)token.size() == p.d, "channel mismatch");
  for (double t : token) require(std::isfinite(t), "non-finite input");
  int D = p.d, N = p.n_state;
  a_bar.assign((size_t)D * N, 0.0);
  b_bar.assign((size_t)D * N, 0.0);
  c.assign(N, 0.0);
  std::vector<double> B(N);
  for (int n = 0; n < N; ++n) {
    double accB = p.b_b->v[n], accC = p.b_c->v[n];
    for (int e = 0; e < D; ++e) {
      accB += p.w_b->v[(size_t)n * D + e] * token[e];
      accC += p.w_c->v[(size_t)n * D + e] * token[e];
    }
    B[n] = accB;
    c[n] = accC;
  }
  for (int d = 0; d < D; ++d) {
    double pre = p.b_dt->v[d];
    for (int e = 0; e < D; ++e) pre += p.w_dt->v[(size_t)d * D + e] * token[e];
    double dt = softplus(pre);
    for (int n = 0; n < N; ++n) {
      double A = -std::exp(p.a_log->v[(size_t)d * N + n]);
      a_bar[(size_t)d * N + n] = std::exp(dt * A);
      b_bar[(size_t)d * N + n] = dt * B[n];
    }
  }
}

TensorPtr scan_forward(const TensorPtr& seq, const SsmParams& p) {
  require(seq->ndim() == 2, "scan expects [L, D]");
  int L = seq->dim(0), D = seq->dim(1);
  require(L >= 1, "empty sequence");
  require(D == p.d, "channel mismatch");
  require(seq->all_finite(), "non-finite input");
  auto out = make_tensor(seq->shape);
  Ctx c = make_ctx(p);
  kernel_forward(c, L, seq->v.data(), out->v.data());
  bool need = grad_enabled() && (seq->requires_grad || any_param_grad(p));
  if (need) {
    out->requires_grad = true;
    out->parents = {seq};
    append_parents(out->parents, p);
    out->backward_fn = [seq, p, L](Tensor& self) {
      Ctx c2 = make_ctx(p);
      GradPtrs gp = make_grad_ptrs(p);
      double* gx = nullptr;
      if (seq->requires_grad) {
        seq->ensure_grad();
        gx = seq->g.data();
      }
      kernel_backward(c2, L, seq->v.data(), self.g.data(), gx, gp);
    };
  }
  return out;
}

TensorPtr scan_backward(const TensorPtr& seq, const SsmParams& p) {
  require(seq->ndim() == 2, "scan expects [L, D]");
  require(seq->dim(0) >= 1, "empty sequence");
  require(seq->dim(1) == p.d, "channel mismatch");
  return frame_reverse(scan_forward(frame_reverse(seq), p));
}

TensorPtr bism(const TensorPtr& f, const SsmParams& fwd, const SsmParams& bwd) {
  require(f->ndim() == 4, "bism expects [N_f, C, H, W]");
  int F = f->dim(0), D = f->dim(1), H = f->dim(2), W = f->dim(3);
  require(F >= 1, "empty sequence");
  require(D == fwd.d && D == bwd.d, "channel mismatch");
  require(f->all_finite(), "non-finite input");
  int P = H * W;
  auto out = make_tensor(f->shape);
  Ctx cf = make_ctx(fwd), cb = make_ctx(bwd);
  const double* fv = f->v.data();
  double* ov = out->v.data();
  parallel_for(P, [&](int64_t lo, int64_t hi) {
    std::vector<double> xp((size_t)F * D), yp((size_t)F * D), xr((size_t)F * D),
        yr((size_t)F * D);
    for (int64_t p = lo; p < hi; ++p) {
      for (int k = 0; k < F; ++k)
        for (int d = 0; d < D; ++d) {
          double v = fv[((size_t)k * D + d) * P + p];
          xp[(size_t)k * D + d] = v;
          xr[(size_t)(F - 1 - k) * D + d] = v;
        }
      kernel_forward(cf, F, xp.data(), yp.data());
      kernel_forward(cb, F, xr.data(), yr.data());
      for (int k = 0; k < F; ++k)
        for (int d = 0; d < D; ++d)
          ov[((size_t)k * D + d) * P + p] =
              yp[(size_t)k * D + d] + yr[(size_t)(F - 1 - k) * D + d];
    }
  });
  bool need =
      grad_enabled() && (f->requires_grad || any_param_grad(fwd) || any_param_grad(bwd));
  if (need) {
    out->requires_grad = true;
    out->parents = {f};
    append_parents(out->parents, fwd);
    append_parents(out->parents, bwd);
    out->backward_fn = [f, fwd, bwd, F, D, P](Tensor& self) {
      Ctx cf2 = make_ctx(fwd), cb2 = make_ctx(bwd);
      GradPtrs gpf = make_grad_ptrs(fwd), gpb = make_grad_ptrs(bwd);
      double* gf = nullptr;
      if (f->requires_grad) {
        f->ensure_grad();
        gf = f->g.data();
      }
      const double* fv2 = f->v.data();
      const double* gov = self.g.data();
      std::vector<double> xp((size_t)F * D), gyp((size_t)F * D), xr((size_t)F * D),
          gyr((size_t)F * D), gxp((size_t)F * D), gxr((size_t)F * D);
      for (int p = 0; p < P; ++p) {
        for (int k = 0; k < F; ++k)
          for (int d = 0; d < D; ++d) {
            double v = fv2[((size_t)k * D + d) * P + p];
            double g = gov[((size_t)k * D + d) * P + p];
            xp[(size_t)k * D + d] = v;
            xr[(size_t)(F - 1 - k) * D + d] = v;
            gyp[(size_t)k * D + d] = g;
            gyr[(size_t)(F - 1 - k) * D + d] = g;
          }
        std::fill(gxp.begin(), gxp.end(), 0.0);
        std::fill(gxr.begin(), gxr.end(), 0.0);
        kernel_backward(cf2, F, xp.data(), gyp.data(), gxp.data(), gpf);
        kernel_backward(cb2, F, xr.data(), gyr.data(), gxr.data(), gpb);
        if (gf)
          for (int k = 0; k < F; ++k)
            for (int d = 0; d < D; ++d)
              gf[((size_t)k * D + d) * P + p] +=
                  gxp[(size_t)k * D + d] + gxr[(size_t)(F - 1 - k) * D + d];
      }
    };
  }
  return out;
}

}  // namespace mcm
