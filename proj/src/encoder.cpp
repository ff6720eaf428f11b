#include "mcm/encoder.hpp"

#include <algorithm>

#include "mcm/ops.hpp"

namespace mcm {

void WindowSpec::validate() const {
  require(T >= 1, "empty sequence");
  require(t >= 0 && t <= T - 1, "target frame out of range");
  require(K >= 0, "half-window must be >= 0");
}

TensorPtr pair_images(const TensorPtr& seq, const WindowSpec& spec) {
  require(seq->ndim() == 3, "pair_images expects [T, H, W]");
  require(seq->dim(0) >= 1, "empty sequence");
  spec.validate();
  require(seq->dim(0) == spec.T, "cycle length mismatch");
  int T = spec.T, H = seq->dim(1), W = seq->dim(2);
  int nf = spec.n_f();
  size_t plane = (size_t)H * W;
  auto out = make_tensor({nf, 2, H, W});
  for (int k = 0; k < nf; ++k) {
    int idx = std::clamp(spec.t - spec.K + k, 0, T - 1);
    double* dst = out->v.data() + (size_t)k * 2 * plane;
    std::copy_n(seq->v.data(), plane, dst);                        // reference frame
    std::copy_n(seq->v.data() + (size_t)idx * plane, plane, dst + plane);
  }
  if (grad_enabled() && seq->requires_grad) {
    out->requires_grad = true;
    out->parents = {seq};
    int t = spec.t, K = spec.K;
    out->backward_fn = [seq, nf, t, K, T, plane](Tensor& self) {
      seq->ensure_grad();
      for (int k = 0; k < nf; ++k) {
        int idx = std::clamp(t - K + k, 0, T - 1);
        const double* gs = self.g.data() + (size_t)k * 2 * plane;
        for (size_t i = 0; i < plane; ++i) {
          seq->g[i] += gs[i];
          seq->g[(size_t)idx * plane + i] += gs[plane + i];
        }
      }
    };
  }
  return out;
}

void BmbParams::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".ln1_g", ln1_g});
  out.push_back({prefix + ".ln1_b", ln1_b});
  out.push_back({prefix + ".ln2_g", ln2_g});
  out.push_back({prefix + ".ln2_b", ln2_b});
  ssm_f.collect(prefix + ".fwd", out);
  ssm_b.collect(prefix + ".bwd", out);
  out.push_back({prefix + ".w1", w1});
  out.push_back({prefix + ".b1", b1});
  out.push_back({prefix + ".w2", w2});
  out.push_back({prefix + ".b2", b2});
}

BmbParams init_bmb(int c, int d_state, Rng& rng) {
  BmbParams p;
  p.c = c;
  p.ln1_g = make_param({c});
  p.ln1_b = make_param({c});
  p.ln2_g = make_param({c});
  p.ln2_b = make_param({c});
  for (auto& x : p.ln1_g->v) x = 1.0;
  for (auto& x : p.ln2_g->v) x = 1.0;
  p.ssm_f = init_ssm(c, d_state, rng);
  p.ssm_b = init_ssm(c, d_state, rng);
  p.w1 = make_param({2 * c, c});
  p.b1 = make_param({2 * c});
  p.w2 = make_param({c, 2 * c});
  p.b2 = make_param({c});
  for (auto& x : p.w1->v) x = rng.normal(0.0, 0.02);
  for (auto& x : p.w2->v) x = rng.normal(0.0, 0.02);
  return p;
}

TensorPtr bmb(const TensorPtr& f, const BmbParams& p) {
  require(f->ndim() == 4, "bmb expects [N_f, C, H, W]");
  require(f->dim(1) == p.c, "channel mismatch");
  auto mixed = add(bism(layernorm_tokens(f, p.ln1_g, p.ln1_b), p.ssm_f, p.ssm_b), f);
  auto h = layernorm_tokens(mixed, p.ln2_g, p.ln2_b);
  auto m = linear_tokens(silu(linear_tokens(h, p.w1, p.b1)), p.w2, p.b2);
  return add(m, mixed);
}

TensorPtr patch_embed(const TensorPtr& f0, const TensorPtr& w, const TensorPtr& b) {
  require(f0->ndim() == 4 && f0->dim(1) == 2, "patch_embed expects [N_f, 2, H, W]");
  require(f0->dim(2) % 32 == 0 && f0->dim(3) % 32 == 0, "shape not divisible");
  return conv2d(f0, w, b, 4, 0);
}

TensorPtr patch_merge(const TensorPtr& f, const TensorPtr& w, const TensorPtr& b) {
  require(f->ndim() == 4, "patch_merge expects [N_f, C, H, W]");
  return linear_tokens(space_to_depth2(f), w, b);
}

std::array<TensorPtr, 4> Encoder::encode(const TensorPtr& f0) const {
  std::array<TensorPtr, 4> out;
  auto x = bmb(patch_embed(f0, embed_w, embed_b), blocks[0]);
  out[0] = x;
  for (int i = 0; i < 3; ++i) {
    x = bmb(patch_merge(x, merge_w[i], merge_b[i]), blocks[i + 1]);
    out[i + 1] = x;
  }
  return out;
}

void Encoder::collect(std::vector<NamedParam>& out) const {
  out.push_back({"enc.embed.w", embed_w});
  out.push_back({"enc.embed.b", embed_b});
  for (int i = 0; i < 4; ++i) blocks[i].collect("enc.bmb" + std::to_string(i + 1), out);
  for (int i = 0; i < 3; ++i) {
    out.push_back({"enc.merge" + std::to_string(i + 1) + ".w", merge_w[i]});
    out.push_back({"enc.merge" + std::to_string(i + 1) + ".b", merge_b[i]});
  }
}

Encoder init_encoder(int c_base, int d_state, Rng& rng) {
  require(c_base >= 1 && d_state >= 1, "bad encoder dimensions");
  Encoder e;
  e.c_base = c_base;
  e.d_state = d_state;
  e.embed_w = make_param({c_base, 2, 4, 4});
  e.embed_b = make_param({c_base});
  for (auto& x : e.embed_w->v) x = rng.normal(0.0, 0.02);
  for (int i = 0; i < 4; ++i) e.blocks[i] = init_bmb(c_base << i, d_state, rng);
  for (int i = 0; i < 3; ++i) {
    int ci = c_base << i;
    e.merge_w[i] = make_param({2 * ci, 4 * ci});
    e.merge_b[i] = make_param({2 * ci});
    for (auto& x : e.merge_w[i]->v) x = rng.normal(0.0, 0.02);
  }
  return e;
}

}  // namespace mcm
