#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "mcm/data.hpp"
#include "mcm/metrics.hpp"
#include "mcm/warp_loss.hpp"
#include "testutil.hpp"

using namespace mcm;
namespace fs = std::filesystem;

namespace {

fs::path test_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "mcm_data_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(static_cast<bool>(is));
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(is),
                                    std::istreambuf_iterator<char>());
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& b) {
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

TensorPtr frame_of(const TensorPtr& seq, int t) {
  int h = seq->dim(1), w = seq->dim(2);
  int64_t np = static_cast<int64_t>(h) * w;
  auto out = make_tensor({h, w});
  std::copy_n(seq->v.begin() + t * np, np, out->v.begin());
  return out;
}

// Radial window restated from its documented definition.
double ref_window(double r, double r2) {
  if (r <= r2) return 1.0;
  if (r >= 1.5 * r2) return 0.0;
  return (r2 / r) * 0.5 * (1.0 + std::cos(M_PI * (r - r2) / (0.5 * r2)));
}

}  // namespace

TEST_CASE("tensor files round-trip bitwise") {
  Rng rng(11);
  auto t = make_tensor({5, 2, 8, 8});
  testutil::fill_uniform(*t, rng, -3.0, 3.0);
  round_f32_inplace(*t);
  fs::path p = test_dir() / "roundtrip.mcmt";
  save_tensor(p.string(), *t);
  auto back = load_tensor(p.string());
  REQUIRE(back->shape == t->shape);
  for (int64_t i = 0; i < t->numel(); ++i) CHECK(back->v[i] == t->v[i]);
  CHECK(fs::file_size(p) == 8 + 4 * 4 + 4 * t->numel());
}

TEST_CASE("saving casts to float32") {
  auto t = make_tensor({3});
  t->v = {0.1, 1.0 / 3.0, -2.7};
  fs::path p = test_dir() / "cast.mcmt";
  save_tensor(p.string(), *t);
  auto back = load_tensor(p.string());
  for (int i = 0; i < 3; ++i) {
    CHECK(back->v[i] == static_cast<double>(static_cast<float>(t->v[i])));
  }
}

TEST_CASE("tensor file byte layout") {
  auto t = make_tensor({2, 3});
  for (int i = 0; i < 6; ++i) t->v[i] = i + 1;
  fs::path p = test_dir() / "layout.mcmt";
  save_tensor(p.string(), *t);
  auto b = read_bytes(p);
  REQUIRE(b.size() == 8 + 8 + 24);
  const unsigned char header[] = {'M', 'C', 'M', 'T', 1, 1, 2, 0,
                                  2,   0,   0,   0,   3, 0, 0, 0};
  for (size_t i = 0; i < sizeof(header); ++i) CHECK(b[i] == header[i]);
  // 1.0f and 2.0f, little-endian
  const unsigned char f1[] = {0x00, 0x00, 0x80, 0x3f};
  const unsigned char f2[] = {0x00, 0x00, 0x00, 0x40};
  for (int i = 0; i < 4; ++i) {
    CHECK(b[16 + i] == f1[i]);
    CHECK(b[20 + i] == f2[i]);
  }
}

TEST_CASE("corrupt tensor files are rejected") {
  auto t = make_tensor({2, 2});
  t->v = {1, 2, 3, 4};
  fs::path good = test_dir() / "good.mcmt";
  save_tensor(good.string(), *t);
  auto bytes = read_bytes(good);

  SUBCASE("wrong magic") {
    auto b = bytes;
    b[0] = 'X';
    fs::path p = test_dir() / "badmagic.mcmt";
    write_bytes(p, b);
    CHECK_THROWS_WITH_AS(load_tensor(p.string()), "bad magic", std::runtime_error);
  }
  SUBCASE("unsupported version") {
    auto b = bytes;
    b[4] = 9;
    fs::path p = test_dir() / "badver.mcmt";
    write_bytes(p, b);
    CHECK_THROWS_WITH_AS(load_tensor(p.string()), "unsupported version: 9", std::runtime_error);
  }
  SUBCASE("unsupported dtype") {
    auto b = bytes;
    b[5] = 2;
    fs::path p = test_dir() / "baddtype.mcmt";
    write_bytes(p, b);
    CHECK_THROWS_WITH_AS(load_tensor(p.string()), "unsupported dtype: 2", std::runtime_error);
  }
  SUBCASE("payload shorter than dims imply") {
    auto b = bytes;
    b.resize(b.size() - 4);
    fs::path p = test_dir() / "short.mcmt";
    write_bytes(p, b);
    CHECK_THROWS_WITH_AS(load_tensor(p.string()), "truncated payload", std::runtime_error);
  }
  SUBCASE("payload longer than dims imply") {
    auto b = bytes;
    b.insert(b.end(), {0, 0, 0, 0});
    fs::path p = test_dir() / "long.mcmt";
    write_bytes(p, b);
    CHECK_THROWS_WITH_AS(load_tensor(p.string()), "truncated payload", std::runtime_error);
  }
  SUBCASE("file ends inside the header") {
    auto b = bytes;
    b.resize(10);
    fs::path p = test_dir() / "header.mcmt";
    write_bytes(p, b);
    CHECK_THROWS_AS(load_tensor(p.string()), std::runtime_error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_tensor((test_dir() / "nope.mcmt").string()), std::runtime_error);
  }
}

TEST_CASE("preprocess normalizes to [0,1]") {
  auto raw = make_tensor({2, 4, 4});
  Rng rng(3);
  testutil::fill_uniform(*raw, rng, 0.0, 255.0);
  raw->v[5] = 0.0;
  raw->v[20] = 255.0;
  auto out = preprocess(raw, 4);
  double lo = 1e9, hi = -1e9;
  for (double v : out->v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo == 0.0);
  CHECK(hi == 1.0);
  CHECK(out->v[5] == 0.0);
  CHECK(out->v[20] == 1.0);
  CHECK(out->v[3] == doctest::Approx(raw->v[3] / 255.0));
}

TEST_CASE("preprocess maps a constant sequence to zero") {
  auto raw = make_tensor({3, 6, 6}, 7.5);
  auto out = preprocess(raw, 4);
  for (double v : out->v) CHECK(v == 0.0);
}

TEST_CASE("preprocess center-crop offsets") {
  auto raw = make_tensor({1, 130, 130});
  for (int y = 0; y < 130; ++y) {
    for (int x = 0; x < 130; ++x) raw->v[y * 130 + x] = y * 1000.0 + x;
  }
  auto out = preprocess(raw, 128);
  REQUIRE(out->shape == std::vector<int>({1, 128, 128}));
  // retained region is rows/cols 1..128; min/max of the crop normalize it
  double lo = 1.0 * 1000 + 1, hi = 128.0 * 1000 + 128;
  for (int y : {0, 17, 127}) {
    for (int x : {0, 63, 127}) {
      double want = ((y + 1) * 1000.0 + (x + 1) - lo) / (hi - lo);
      CHECK(out->v[y * 128 + x] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("preprocess rejects frames smaller than the crop") {
  auto raw = make_tensor({1, 100, 100});
  CHECK_THROWS_WITH_AS(preprocess(raw, 128), "frame smaller than crop", std::runtime_error);
}

TEST_CASE("phantom spec validation") {
  auto sp = make_phantom_spec(10, 64, 64);
  CHECK_NOTHROW(sp.validate());
  auto bad = sp;
  bad.a = 0.6;
  CHECK_THROWS_WITH_AS(bad.validate(), "amplitude out of range", std::runtime_error);
  bad = sp;
  bad.r1 = bad.r2 + 1;
  CHECK_THROWS_WITH_AS(bad.validate(), "radii must satisfy 0 < r1 < r2", std::runtime_error);
  bad = sp;
  bad.r2 = 40.0;
  CHECK_THROWS_WITH_AS(bad.validate(), "annulus exceeds image bounds", std::runtime_error);
  bad = sp;
  bad.r1 = 1.5;
  bad.a = 0.4;  // 0.4 * 19.2 > 1.5
  CHECK_THROWS_WITH_AS(bad.validate(), "amplitude would fold the annulus", std::runtime_error);
  bad = sp;
  bad.T = 0;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
  bad = sp;
  bad.noise_sigma = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
}

TEST_CASE("phantom endpoints carry zero motion") {
  auto ph = synth_phantom(make_phantom_spec(6, 64, 64, 0.12));
  REQUIRE(ph.gt.size() == 6);
  REQUIRE(ph.masks.size() == 6);
  for (int t : {0, 5}) {
    for (double v : ph.gt[t]->v) CHECK(v == 0.0);
  }
  // frames 0 and T-1 must be the resting image again
  int64_t np = 64 * 64;
  for (int64_t p = 0; p < np; ++p) {
    CHECK(ph.seq->v[p] == ph.seq->v[5 * np + p]);
    CHECK(ph.masks[0].labels[p] == ph.masks[5].labels[p]);
  }
}

TEST_CASE("resting mask matches an independent annulus rasterization") {
  auto sp = make_phantom_spec(4, 48, 40);
  auto ph = synth_phantom(sp);
  for (int y = 0; y < sp.H; ++y) {
    for (int x = 0; x < sp.W; ++x) {
      double r = std::hypot(x - sp.cx, y - sp.cy);
      int want = (r >= sp.r1 && r <= sp.r2) ? 1 : 0;
      CHECK(ph.masks[0].labels[y * sp.W + x] == want);
    }
  }
}

TEST_CASE("ground-truth fields match the closed form") {
  PhantomSpec sp = make_phantom_spec(8, 64, 64, 0.1);
  auto ph = synth_phantom(sp);
  int t = 3;
  double s = sp.a * std::sin(M_PI * t / (sp.T - 1));
  int64_t np = 64 * 64;
  for (int y = 0; y < 64; y += 5) {
    for (int x = 0; x < 64; x += 5) {
      double dx = x - sp.cx, dy = y - sp.cy;
      double w = ref_window(std::hypot(dx, dy), sp.r2);
      int64_t p = y * 64 + x;
      CHECK(ph.gt[t]->v[p] == doctest::Approx(-s * w * dx).epsilon(1e-6));
      CHECK(ph.gt[t]->v[np + p] == doctest::Approx(-s * w * dy).epsilon(1e-6));
    }
  }
  // beyond 1.5 r2 the field vanishes: image corners are at radius > 1.5*19.2
  CHECK(ph.gt[t]->v[0] == 0.0);
  CHECK(ph.gt[t]->v[np + 63] == 0.0);
}

TEST_CASE("peak displacement magnitude stays below a*r2") {
  PhantomSpec sp;
  sp.T = 10;
  sp.H = 64;
  sp.W = 64;
  sp.cx = 31.5;
  sp.cy = 31.5;
  sp.r1 = 10.0;
  sp.r2 = 20.0;
  sp.a = 0.1;
  auto ph = synth_phantom(sp);
  int64_t np = 64 * 64;
  double peak = 0.0;
  for (int t = 0; t < sp.T; ++t) {
    for (int64_t p = 0; p < np; ++p) {
      peak = std::max(peak, std::hypot(ph.gt[t]->v[p], ph.gt[t]->v[np + p]));
    }
  }
  CHECK(peak <= sp.a * sp.r2 * (1.0 + 1e-6));
  CHECK(peak > 1.9);  // nearly attained just inside r2 at mid-cycle
}

TEST_CASE("warping the resting frame through gt reproduces each frame") {
  auto ph = synth_phantom(make_phantom_spec(6, 64, 64, 0.1));
  auto f0 = frame_of(ph.seq, 0);
  for (int t = 1; t < 5; ++t) {
    auto warped = warp(f0, ph.gt[t]);
    auto ft = frame_of(ph.seq, t);
    double acc = 0.0;
    for (int64_t i = 0; i < ft->numel(); ++i) {
      double d = warped->v[i] - ft->v[i];
      acc += d * d;
    }
    CHECK(acc / static_cast<double>(ft->numel()) < 1e-3);
  }
}

TEST_CASE("mid-cycle gt Jacobian is fold-free and scales as (1-s)^2") {
  auto sp = make_phantom_spec(9, 64, 64, 0.1);
  auto ph = synth_phantom(sp);
  int t = 4;  // sin peak
  auto jm = jacobian_metrics(ph.gt[t]);
  CHECK(jm.neg_pct == 0.0);
  auto det = jacobian_det(ph.gt[t]);
  double s = sp.a * std::sin(M_PI * t / (sp.T - 1));
  double want = (1.0 - s) * (1.0 - s);
  // pixels well inside the w == 1 plateau see a pure scaling
  int iw = 62;
  for (int y : {24, 31, 40}) {
    for (int x : {24, 31, 40}) {
      double r = std::hypot(x - sp.cx, y - sp.cy);
      if (r + 1.5 > sp.r2) continue;
      CHECK(det->v[(y - 1) * iw + (x - 1)] == doctest::Approx(want).epsilon(1e-5));
    }
  }
}

TEST_CASE("phantom generation is deterministic") {
  auto sp = make_phantom_spec(5, 32, 32, 0.1, 7, 0.05);
  auto a = synth_phantom(sp);
  auto b = synth_phantom(sp);
  for (int64_t i = 0; i < a.seq->numel(); ++i) CHECK(a.seq->v[i] == b.seq->v[i]);
  for (int t = 0; t < sp.T; ++t) {
    for (int64_t i = 0; i < a.gt[t]->numel(); ++i) CHECK(a.gt[t]->v[i] == b.gt[t]->v[i]);
    CHECK(a.masks[t].labels == b.masks[t].labels);
  }
  auto sp2 = sp;
  sp2.seed = 8;
  auto c = synth_phantom(sp2);
  bool differs = false;
  for (int64_t i = 0; i < a.seq->numel() && !differs; ++i) {
    differs = a.seq->v[i] != c.seq->v[i];
  }
  CHECK(differs);
}

TEST_CASE("noise is clamped and absent at sigma 0") {
  auto clean = synth_phantom(make_phantom_spec(3, 32, 32, 0.1, 1, 0.0));
  auto noisy = synth_phantom(make_phantom_spec(3, 32, 32, 0.1, 1, 0.3));
  double lo = 1e9, hi = -1e9;
  bool differs = false;
  for (int64_t i = 0; i < noisy.seq->numel(); ++i) {
    lo = std::min(lo, noisy.seq->v[i]);
    hi = std::max(hi, noisy.seq->v[i]);
    differs = differs || noisy.seq->v[i] != clean.seq->v[i];
  }
  CHECK(differs);
  CHECK(lo >= 0.0);
  CHECK(hi <= 1.0);
  // noise must not disturb ground truth
  for (int t = 0; t < 3; ++t) {
    for (int64_t i = 0; i < clean.gt[t]->numel(); ++i) {
      CHECK(noisy.gt[t]->v[i] == clean.gt[t]->v[i]);
    }
  }
}

TEST_CASE("a single-frame cycle is static") {
  auto ph = synth_phantom(make_phantom_spec(1, 32, 32, 0.2));
  REQUIRE(ph.gt.size() == 1);
  for (double v : ph.gt[0]->v) CHECK(v == 0.0);
}

TEST_CASE("phantom datasets round-trip through the file layer") {
  fs::path dir = test_dir() / "dataset";
  auto ph = synth_phantom(make_phantom_spec(4, 32, 32, 0.1, 2, 0.02));
  save_phantom(dir.string(), "case01", ph);
  auto names = dataset_names(dir.string());
  REQUIRE(names == std::vector<std::string>({"case01"}));
  auto back = load_phantom(dir.string(), "case01");
  REQUIRE(back.gt.size() == 4);
  REQUIRE(back.masks.size() == 4);
  for (int64_t i = 0; i < ph.seq->numel(); ++i) CHECK(back.seq->v[i] == ph.seq->v[i]);
  for (int t = 0; t < 4; ++t) {
    for (int64_t i = 0; i < ph.gt[t]->numel(); ++i) CHECK(back.gt[t]->v[i] == ph.gt[t]->v[i]);
    CHECK(back.masks[t].labels == ph.masks[t].labels);
  }
}

TEST_CASE("sequences without side files load bare") {
  fs::path dir = test_dir() / "bare";
  Phantom ph;
  ph.seq = synth_phantom(make_phantom_spec(3, 32, 32)).seq;
  save_phantom(dir.string(), "plain", ph);
  auto back = load_phantom(dir.string(), "plain");
  CHECK(back.gt.empty());
  CHECK(back.masks.empty());
  CHECK(back.seq->shape == std::vector<int>({3, 32, 32}));
}

TEST_CASE("dataset listing is sorted and filtered") {
  fs::path dir = test_dir() / "listing";
  auto ph = synth_phantom(make_phantom_spec(2, 32, 32));
  save_phantom(dir.string(), "zeta", ph);
  save_phantom(dir.string(), "alpha", ph);
  write_bytes(dir / "stray.txt", {1, 2, 3});
  CHECK(dataset_names(dir.string()) == std::vector<std::string>({"alpha", "zeta"}));
  CHECK(dataset_names((dir / "missing").string()).empty());
}
