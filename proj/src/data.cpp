#include "mcm/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

namespace mcm {

namespace {

constexpr char kTensorMagic[4] = {'M', 'C', 'M', 'T'};

void put_u8(std::ostream& os, uint8_t v) { os.put(static_cast<char>(v)); }

void put_u32(std::ostream& os, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

bool get_u8(std::istream& is, uint8_t& v) {
  int c = is.get();
  if (c < 0) return false;
  v = static_cast<uint8_t>(c);
  return true;
}

bool get_u32(std::istream& is, uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
      (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  return true;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic, 4);
  put_u8(os, 1);  // version
  put_u8(os, 1);  // dtype: float32
  put_u8(os, static_cast<uint8_t>(t.shape.size()));
  put_u8(os, 0);  // reserved
  for (int d : t.shape) put_u32(os, static_cast<uint32_t>(d));
  for (int64_t i = 0; i < t.numel(); ++i) {
    put_u32(os, std::bit_cast<uint32_t>(static_cast<float>(t.v[i])));
  }
}

TensorPtr read_tensor(std::istream& is) {
  char magic[4] = {};
  require(static_cast<bool>(is.read(magic, 4)), "truncated file");
  require(std::equal(magic, magic + 4, kTensorMagic), "bad magic");
  uint8_t version = 0, dtype = 0, ndim = 0, reserved = 0;
  bool ok = get_u8(is, version) && get_u8(is, dtype) && get_u8(is, ndim) && get_u8(is, reserved);
  require(ok, "truncated file");
  require(version == 1, "unsupported version: " + std::to_string(version));
  require(dtype == 1, "unsupported dtype: " + std::to_string(dtype));
  std::vector<int> shape(ndim);
  for (int i = 0; i < ndim; ++i) {
    uint32_t d = 0;
    require(get_u32(is, d), "truncated file");
    shape[i] = static_cast<int>(d);
  }
  auto t = make_tensor(shape);
  for (int64_t i = 0; i < t->numel(); ++i) {
    uint32_t bits = 0;
    require(get_u32(is, bits), "truncated payload");
    t->v[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "cannot open file: " + path);
  write_tensor(os, t);
  os.flush();
  require(static_cast<bool>(os), "write failed: " + path);
}

TensorPtr load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "cannot open file: " + path);
  auto t = read_tensor(is);
  require(is.peek() == std::ifstream::traits_type::eof(), "truncated payload");
  return t;
}

TensorPtr preprocess(const TensorPtr& raw, int crop) {
  require(raw->shape.size() == 3, "expected a [T,H,W] sequence");
  require(crop >= 1, "crop must be >= 1");
  int t_len = raw->dim(0), h = raw->dim(1), w = raw->dim(2);
  require(h >= crop && w >= crop, "frame smaller than crop");
  int oy = (h - crop) / 2, ox = (w - crop) / 2;
  auto out = make_tensor({t_len, crop, crop});
  for (int t = 0; t < t_len; ++t) {
    for (int y = 0; y < crop; ++y) {
      const double* src = &raw->v[(static_cast<int64_t>(t) * h + (oy + y)) * w + ox];
      double* dst = &out->v[(static_cast<int64_t>(t) * crop + y) * crop];
      for (int x = 0; x < crop; ++x) dst[x] = src[x];
    }
  }
  double lo = out->v[0], hi = out->v[0];
  for (int64_t i = 0; i < out->numel(); ++i) {
    lo = std::min(lo, out->v[i]);
    hi = std::max(hi, out->v[i]);
  }
  double scale = hi > lo ? 1.0 / (hi - lo) : 0.0;
  for (int64_t i = 0; i < out->numel(); ++i) out->v[i] = (out->v[i] - lo) * scale;
  return out;
}

void PhantomSpec::validate() const {
  require(T >= 1, "cycle must have at least one frame");
  require(H >= 8 && W >= 8, "phantom image too small");
  require(r1 > 0.0 && r1 < r2, "radii must satisfy 0 < r1 < r2");
  require(r2 < 0.5 * std::min(H, W), "annulus exceeds image bounds");
  require(cx >= 0.0 && cx <= W - 1 && cy >= 0.0 && cy <= H - 1, "center outside image");
  require(a >= 0.0 && a < 0.5, "amplitude out of range");
  require(a * r2 < r1, "amplitude would fold the annulus");
  require(noise_sigma >= 0.0, "noise sigma must be >= 0");
}

PhantomSpec make_phantom_spec(int T, int H, int W, double a, uint64_t seed, double noise_sigma) {
  PhantomSpec sp;
  sp.T = T;
  sp.H = H;
  sp.W = W;
  sp.cx = 0.5 * (W - 1);
  sp.cy = 0.5 * (H - 1);
  double m = std::min(H, W);
  sp.r1 = 0.15 * m;
  sp.r2 = 0.30 * m;
  sp.a = a;
  sp.seed = seed;
  sp.noise_sigma = noise_sigma;
  return sp;
}

namespace {

double sigmoid_d(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

// Radial taper: 1 on [0, r2], cosine falloff scaled by r2/r on (r2, 1.5 r2),
// 0 beyond. The extra r2/r factor keeps r*w(r) <= r2 everywhere, so the peak
// displacement magnitude is exactly a*r2.
double taper(double r, double r2) {
  if (r <= r2) return 1.0;
  double edge = 1.5 * r2;
  if (r >= edge) return 0.0;
  double c = 0.5 * (1.0 + std::cos(M_PI * (r - r2) / (0.5 * r2)));
  return (r2 / r) * c;
}

// Reference intensity profile: bright annulus between r1 and r2 over a dim
// background, smoothed over ~1.5 px so bilinear warping reproduces it well.
double intensity(double r, double r1, double r2) {
  constexpr double e = 1.5;
  return 0.15 + 0.75 * sigmoid_d((r - r1) / e) * sigmoid_d((r2 - r) / e);
}

}  // namespace

Phantom synth_phantom(const PhantomSpec& sp) {
  sp.validate();
  int64_t np = static_cast<int64_t>(sp.H) * sp.W;
  Phantom ph;
  ph.seq = make_tensor({sp.T, sp.H, sp.W});
  ph.gt.reserve(sp.T);
  ph.masks.reserve(sp.T);
  Rng rng(sp.seed);
  for (int t = 0; t < sp.T; ++t) {
    double s = 0.0;
    if (sp.T > 1 && t > 0 && t < sp.T - 1) s = sp.a * std::sin(M_PI * t / (sp.T - 1));
    auto phi = make_tensor({2, sp.H, sp.W});
    LabelMask mask;
    mask.h = sp.H;
    mask.w = sp.W;
    mask.labels.assign(static_cast<size_t>(np), 0);
    for (int y = 0; y < sp.H; ++y) {
      for (int x = 0; x < sp.W; ++x) {
        int64_t p = static_cast<int64_t>(y) * sp.W + x;
        double dx = x - sp.cx, dy = y - sp.cy;
        double rho = std::sqrt(dx * dx + dy * dy);
        double src_r = rho;
        if (s != 0.0) {
          double shrink = 1.0 - s * taper(rho, sp.r2);
          src_r = rho * shrink;
          phi->v[p] = -s * taper(rho, sp.r2) * dx;
          phi->v[np + p] = -s * taper(rho, sp.r2) * dy;
        }
        ph.seq->v[t * np + p] = intensity(src_r, sp.r1, sp.r2);
        if (src_r >= sp.r1 && src_r <= sp.r2) mask.labels[p] = 1;
      }
    }
    if (sp.noise_sigma > 0.0) {
      for (int64_t p = 0; p < np; ++p) {
        double v = ph.seq->v[t * np + p] + rng.normal(0.0, sp.noise_sigma);
        ph.seq->v[t * np + p] = std::clamp(v, 0.0, 1.0);
      }
    }
    round_f32_inplace(*phi);
    ph.gt.push_back(phi);
    ph.masks.push_back(std::move(mask));
  }
  round_f32_inplace(*ph.seq);
  return ph;
}

void save_phantom(const std::string& dir, const std::string& name, const Phantom& ph) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  fs::path base = fs::path(dir) / name;
  save_tensor((base.string() + "_seq.mcmt"), *ph.seq);
  int t_len = ph.seq->dim(0), h = ph.seq->dim(1), w = ph.seq->dim(2);
  int64_t np = static_cast<int64_t>(h) * w;
  if (!ph.gt.empty()) {
    require(static_cast<int>(ph.gt.size()) == t_len, "ground truth frame count mismatch");
    auto packed = make_tensor({t_len, 2, h, w});
    for (int t = 0; t < t_len; ++t) {
      std::copy(ph.gt[t]->v.begin(), ph.gt[t]->v.end(), packed->v.begin() + t * 2 * np);
    }
    save_tensor(base.string() + "_gt.mcmt", *packed);
  }
  if (!ph.masks.empty()) {
    require(static_cast<int>(ph.masks.size()) == t_len, "mask frame count mismatch");
    auto packed = make_tensor({t_len, h, w});
    for (int t = 0; t < t_len; ++t) {
      for (int64_t p = 0; p < np; ++p) packed->v[t * np + p] = ph.masks[t].labels[p];
    }
    save_tensor(base.string() + "_masks.mcmt", *packed);
  }
}

Phantom load_phantom(const std::string& dir, const std::string& name) {
  namespace fs = std::filesystem;
  fs::path base = fs::path(dir) / name;
  Phantom ph;
  ph.seq = load_tensor(base.string() + "_seq.mcmt");
  require(ph.seq->shape.size() == 3, "expected a [T,H,W] sequence");
  int t_len = ph.seq->dim(0), h = ph.seq->dim(1), w = ph.seq->dim(2);
  int64_t np = static_cast<int64_t>(h) * w;
  std::string gt_path = base.string() + "_gt.mcmt";
  if (fs::exists(gt_path)) {
    auto packed = load_tensor(gt_path);
    require(packed->shape.size() == 4 && packed->dim(0) == t_len && packed->dim(1) == 2 &&
                packed->dim(2) == h && packed->dim(3) == w,
            "ground truth shape mismatch");
    for (int t = 0; t < t_len; ++t) {
      auto phi = make_tensor({2, h, w});
      std::copy_n(packed->v.begin() + t * 2 * np, 2 * np, phi->v.begin());
      ph.gt.push_back(phi);
    }
  }
  std::string masks_path = base.string() + "_masks.mcmt";
  if (fs::exists(masks_path)) {
    auto packed = load_tensor(masks_path);
    require(packed->shape.size() == 3 && packed->dim(0) == t_len && packed->dim(1) == h &&
                packed->dim(2) == w,
            "mask shape mismatch");
    for (int t = 0; t < t_len; ++t) {
      LabelMask mask;
      mask.h = h;
      mask.w = w;
      mask.labels.resize(static_cast<size_t>(np));
      for (int64_t p = 0; p < np; ++p) {
        mask.labels[p] = static_cast<int>(std::lround(packed->v[t * np + p]));
      }
      ph.masks.push_back(std::move(mask));
    }
  }
  return ph;
}

std::vector<std::string> dataset_names(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> names;
  const std::string suffix = "_seq.mcmt";
  if (!fs::is_directory(dir)) return names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string fn = entry.path().filename().string();
    if (fn.size() > suffix.size() && fn.ends_with(suffix)) {
      names.push_back(fn.substr(0, fn.size() - suffix.size()));
    }
  }
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace mcm
