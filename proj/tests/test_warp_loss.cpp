#include <cmath>

#include "doctest.h"
#include "mcm/ops.hpp"
#include "mcm/tensor.hpp"
#include "mcm/warp_loss.hpp"
#include "testutil.hpp"

using namespace mcm;

namespace {

double bilinear_ref(const std::vector<double>& img, int H, int W, double sx, double sy) {
  sx = std::clamp(sx, 0.0, double(W - 1));
  sy = std::clamp(sy, 0.0, double(H - 1));
  int x0 = (int)sx, y0 = (int)sy;
  int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  double tx = sx - x0, ty = sy - y0;
  double top = (1 - tx) * img[(size_t)y0 * W + x0] + tx * img[(size_t)y0 * W + x1];
  double bot = (1 - tx) * img[(size_t)y1 * W + x0] + tx * img[(size_t)y1 * W + x1];
  return (1 - ty) * top + ty * bot;
}

}  // namespace

TEST_CASE("zero field warps to the identity") {
  Rng rng(60);
  auto img = make_tensor({5, 7});
  testutil::fill_uniform(*img, rng, 0.0, 1.0);
  auto phi = make_tensor({2, 5, 7});
  auto out = warp(img, phi);
  CHECK(out->v == img->v);
}

TEST_CASE("constant images are warp-invariant") {
  Rng rng(61);
  auto img = make_tensor({4, 4}, 0.37);
  auto phi = make_tensor({2, 4, 4});
  testutil::fill_uniform(*phi, rng, -3.0, 3.0);
  auto out = warp(img, phi);
  for (double v : out->v) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("unit shift of a ramp clamps at the border") {
  int H = 4, W = 6;
  auto img = make_tensor({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) img->v[(size_t)y * W + x] = x;
  auto phi = make_tensor({2, H, W});
  for (int i = 0; i < H * W; ++i) phi->v[i] = 1.0;  // x-displacement only
  auto out = warp(img, phi);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      CHECK(out->v[(size_t)y * W + x] == doctest::Approx(std::min(x + 1, W - 1)));
}

TEST_CASE("warp matches a brute-force sampler") {
  Rng rng(62);
  int H = 5, W = 5;
  auto img = make_tensor({H, W});
  auto phi = make_tensor({2, H, W});
  testutil::fill_uniform(*img, rng, 0.0, 1.0);
  testutil::fill_uniform(*phi, rng, -2.0, 2.0);
  auto out = warp(img, phi);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      size_t p = (size_t)y * W + x;
      double ref = bilinear_ref(img->v, H, W, x + phi->v[p], y + phi->v[(size_t)H * W + p]);
      CHECK(out->v[p] == doctest::Approx(ref).epsilon(1e-12));
    }
}

TEST_CASE("integer displacement shifts interior pixels exactly") {
  Rng rng(63);
  int H = 6, W = 8;
  auto img = make_tensor({H, W});
  testutil::fill_uniform(*img, rng, 0.0, 1.0);
  auto phi = make_tensor({2, H, W});
  for (int i = 0; i < H * W; ++i) phi->v[i] = 2.0;
  auto out = warp(img, phi);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x + 2 < W; ++x)
      CHECK(out->v[(size_t)y * W + x] == img->v[(size_t)y * W + x + 2]);
}

TEST_CASE("warp rejects mismatched shapes") {
  auto img = make_tensor({4, 4});
  auto phi = make_tensor({2, 4, 5});
  CHECK_THROWS_WITH(warp(img, phi), "shape mismatch");
}

TEST_CASE("similarity loss values") {
  auto a = make_tensor({3, 3});
  auto b = make_tensor({3, 3});
  CHECK(sim_loss(a, b)->v[0] == 0.0);
  for (auto& v : b->v) v = 0.25;
  CHECK(sim_loss(a, b)->v[0] == doctest::Approx(0.0625));
  Rng rng(64);
  testutil::fill_uniform(*a, rng, 0.0, 1.0);
  testutil::fill_uniform(*b, rng, 0.0, 1.0);
  double acc = 0.0;
  for (int i = 0; i < 9; ++i) acc += (a->v[i] - b->v[i]) * (a->v[i] - b->v[i]);
  CHECK(sim_loss(a, b)->v[0] == doctest::Approx(acc / 9.0).epsilon(1e-12));
}

TEST_CASE("smoothness of a constant field is zero") {
  auto phi = make_tensor({2, 5, 5}, 3.7);
  CHECK(smooth_loss(phi)->v[0] == 0.0);
}

TEST_CASE("unit-slope field has unit difference density") {
  int H = 4, W = 5;
  auto phi = make_tensor({2, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) phi->v[(size_t)y * W + x] = x;  // u_x = x
  // H*(W-1) unit x-differences, nothing else
  CHECK(smooth_loss(phi)->v[0] == doctest::Approx(double(H * (W - 1)) / (H * W)));
}

TEST_CASE("smoothness matches the brute-force loop") {
  Rng rng(65);
  int H = 4, W = 4;
  auto phi = make_tensor({2, H, W});
  testutil::fill_uniform(*phi, rng, -2.0, 2.0);
  double acc = 0.0;
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        size_t p = (size_t)c * H * W + (size_t)y * W + x;
        if (x + 1 < W) {
          double d = phi->v[p + 1] - phi->v[p];
          acc += d * d;
        }
        if (y + 1 < H) {
          double d = phi->v[p + W] - phi->v[p];
          acc += d * d;
        }
      }
  CHECK(smooth_loss(phi)->v[0] == doctest::Approx(acc / (H * W)).epsilon(1e-12));
}

TEST_CASE("combined objective composes its two terms") {
  Rng rng(66);
  int H = 6, W = 6;
  auto target = make_tensor({H, W});
  auto ref = make_tensor({H, W});
  auto phi = make_tensor({2, H, W});
  testutil::fill_uniform(*target, rng, 0.0, 1.0);
  testutil::fill_uniform(*ref, rng, 0.0, 1.0);
  testutil::fill_uniform(*phi, rng, -1.0, 1.0);

  LossConfig cfg{0.05};
  auto full = total_loss(target, ref, phi, cfg);
  auto sim = sim_loss(target, warp(ref, phi));
  auto smo = smooth_loss(phi);
  CHECK(full->v[0] == doctest::Approx(sim->v[0] + 0.05 * smo->v[0]).epsilon(1e-12));
  CHECK(full->v[0] >= 0.0);

  auto only_sim = total_loss(target, ref, phi, LossConfig{0.0});
  CHECK(only_sim->v[0] == doctest::Approx(sim->v[0]).epsilon(1e-12));

  auto zero_phi = make_tensor({2, H, W});
  auto self = total_loss(ref, ref, zero_phi, cfg);
  CHECK(self->v[0] == 0.0);

  CHECK_THROWS_WITH(total_loss(target, ref, phi, LossConfig{-0.1}), "lambda must be >= 0");
}

TEST_CASE("warp gradients match finite differences") {
  Rng rng(67);
  int H = 8, W = 8;
  auto img = make_tensor({H, W});
  auto phi = make_tensor({2, H, W});
  auto tgt = make_tensor({H, W});
  testutil::fill_uniform(*img, rng, 0.0, 1.0);
  testutil::fill_uniform(*phi, rng, -1.3, 1.3);
  testutil::fill_uniform(*tgt, rng, 0.0, 1.0);
  auto fn = [&]() { return total_loss(tgt, img, phi, LossConfig{0.05}); };
  CHECK(testutil::grad_check(fn, {img, phi}) < 1e-3);
}

TEST_CASE("smoothness gradients match finite differences") {
  Rng rng(68);
  auto phi = make_tensor({2, 6, 6});
  testutil::fill_uniform(*phi, rng, -1.0, 1.0);
  auto fn = [&]() { return smooth_loss(phi); };
  CHECK(testutil::grad_check(fn, {phi}) < 1e-5);
}
