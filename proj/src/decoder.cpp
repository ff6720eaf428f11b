#include "mcm/decoder.hpp"

#include "mcm/ops.hpp"

namespace mcm {

std::vector<int> frame_schedule(int nf) {
  require(nf >= 1, "unsupported window length");
  std::vector<int> ks;
  int f = nf;
  do {
    int k = std::min(3, f);
    ks.push_back(k);
    f = f - k + 1;
  } while (f > 1);
  return ks;
}

namespace {

TensorPtr run_stack(const Conv3dStack& s, TensorPtr x) {
  for (size_t i = 0; i < s.w.size(); ++i) x = silu(conv3d_frames(x, s.w[i], s.b[i]));
  if (x->dim(0) > 1) x = frame_mean(x);
  return x;
}

}  // namespace

TensorPtr Decoder::pup(const std::array<TensorPtr, 4>& fs) const {
  for (int i = 0; i < 4; ++i) {
    require(fs[i]->ndim() == 4, "level shape mismatch");
    require(fs[i]->dim(0) == fs[0]->dim(0), "level shape mismatch");
    require(fs[i]->dim(1) == (c_base << i), "level shape mismatch");
    if (i > 0) {
      require(2 * fs[i]->dim(2) == fs[i - 1]->dim(2), "level shape mismatch");
      require(2 * fs[i]->dim(3) == fs[i - 1]->dim(3), "level shape mismatch");
    }
  }
  auto x = fs[3];
  for (int i = 0; i < 3; ++i) {
    auto up = upsample_bilinear(x, 2);
    x = silu(conv2d(concat_channels(up, fs[2 - i]), fuse_w[i], fuse_b[i], 1, 1));
  }
  return upsample_bilinear(x, 4);
}

TensorPtr Decoder::dfh(const TensorPtr& fm) const {
  require(fm->ndim() == 4, "dfh expects [N_f, C, H, W]");
  require(fm->dim(1) == c_base, "channel mismatch");
  require(fm->dim(0) == n_f, "unsupported window length");
  auto pf = run_stack(path_f, fm);
  auto pb = run_stack(path_b, frame_reverse(fm));
  auto avg = scale(add(pf, pb), 0.5);
  auto h = silu(conv2d(avg, head1_w, head1_b, 1, 1));
  auto phi = conv2d(h, head2_w, head2_b, 1, 1);  // [1, 2, H, W]
  return reshape_copy(phi, {2, phi->dim(2), phi->dim(3)});
}

void Decoder::collect(std::vector<NamedParam>& out) const {
  for (int i = 0; i < 3; ++i) {
    out.push_back({"dec.fuse" + std::to_string(i + 1) + ".w", fuse_w[i]});
    out.push_back({"dec.fuse" + std::to_string(i + 1) + ".b", fuse_b[i]});
  }
  for (size_t i = 0; i < path_f.w.size(); ++i) {
    out.push_back({"dec.fwd" + std::to_string(i + 1) + ".w", path_f.w[i]});
    out.push_back({"dec.fwd" + std::to_string(i + 1) + ".b", path_f.b[i]});
    out.push_back({"dec.bwd" + std::to_string(i + 1) + ".w", path_b.w[i]});
    out.push_back({"dec.bwd" + std::to_string(i + 1) + ".b", path_b.b[i]});
  }
  out.push_back({"dec.head1.w", head1_w});
  out.push_back({"dec.head1.b", head1_b});
  out.push_back({"dec.head2.w", head2_w});
  out.push_back({"dec.head2.b", head2_b});
}

Decoder init_decoder(int c_base, int n_f, Rng& rng) {
  require(c_base >= 2 && c_base % 2 == 0, "base channels must be even");
  Decoder d;
  d.c_base = c_base;
  d.n_f = n_f;
  for (int i = 0; i < 3; ++i) {
    int c_fine = c_base << (2 - i);          // channels of the finer level
    int c_coarse = (i == 0) ? c_base << 3 : c_base << (3 - i);
    d.fuse_w[i] = make_param({c_fine, c_coarse + c_fine, 3, 3});
    d.fuse_b[i] = make_param({c_fine});
    for (auto& x : d.fuse_w[i]->v) x = rng.normal(0.0, 0.02);
  }
  auto ks = frame_schedule(n_f);
  for (auto* path : {&d.path_f, &d.path_b}) {
    path->w.clear();
    path->b.clear();
    for (int k : ks) {
      auto w = make_param({c_base, c_base, k, 3, 3});
      for (auto& x : w->v) x = rng.normal(0.0, 0.02);
      path->w.push_back(w);
      path->b.push_back(make_param({c_base}));
    }
  }
  d.head1_w = make_param({c_base / 2, c_base, 3, 3});
  d.head1_b = make_param({c_base / 2});
  for (auto& x : d.head1_w->v) x = rng.normal(0.0, 0.02);
  d.head2_w = make_param({2, c_base / 2, 3, 3});
  d.head2_b = make_param({2});
  for (auto& x : d.head2_w->v) x = rng.normal(0.0, 1e-4);
  return d;
}

void McmModel::collect(std::vector<NamedParam>& out) const {
  enc.collect(out);
  dec.collect(out);
}

McmModel init_model(int c_base, int d_state, int K, Rng& rng) {
  require(K >= 0, "half-window must be >= 0");
  McmModel m;
  m.enc = init_encoder(c_base, d_state, rng);
  m.dec = init_decoder(c_base, 2 * K + 1, rng);
  m.K = K;
  // keep weights representable in the float32 checkpoint format
  std::vector<NamedParam> params;
  m.collect(params);
  for (auto& p : params) round_f32_inplace(*p.t);
  return m;
}

TensorPtr predict_motion(const McmModel& m, const TensorPtr& seq, const WindowSpec& spec) {
  require(spec.n_f() == m.dec.n_f, "unsupported window length");
  auto f0 = pair_images(seq, spec);
  auto fs = m.enc.encode(f0);
  return m.dec.dfh(m.dec.pup(fs));
}

}  // namespace mcm
