#pragma once

#include <string>
#include <vector>

#include "mcm/metrics.hpp"
#include "mcm/tensor.hpp"

namespace mcm {

// Tensor file format (little-endian): "MCMT", u8 version = 1, u8 dtype = 1
// (float32), u8 ndim, u8 reserved = 0, ndim x u32 dims, row-major float32
// payload. Values are cast to float32 on save.
void save_tensor(const std::string& path, const Tensor& t);
TensorPtr load_tensor(const std::string& path);

// Stream variants; a blob can be embedded in a larger container.
void write_tensor(std::ostream& os, const Tensor& t);
TensorPtr read_tensor(std::istream& is);

// [T, H', W'] -> [T, crop, crop]: center crop (offset floor((H'-crop)/2)),
// then min-max normalization of the whole sequence to [0,1]; a constant
// sequence maps to all zeros.
TensorPtr preprocess(const TensorPtr& raw, int crop = 128);

struct PhantomSpec {
  int T = 10, H = 128, W = 128;
  double cx = 63.5, cy = 63.5;  // annulus center
  double r1 = 19.2, r2 = 38.4;  // annulus radii, px
  double a = 0.1;               // peak fractional contraction
  uint64_t seed = 0;
  double noise_sigma = 0.0;
  void validate() const;
};

// Center, radii scaled from the image size: r1 = 0.15 min(H,W), r2 = 0.3 min(H,W).
PhantomSpec make_phantom_spec(int T, int H, int W, double a = 0.1, uint64_t seed = 0,
                              double noise_sigma = 0.0);

struct Phantom {
  TensorPtr seq;                 // [T, H, W] in [0,1], float32 grid
  std::vector<TensorPtr> gt;     // T fields [2, H, W] (pull displacements)
  std::vector<LabelMask> masks;  // per-frame annulus labels (1 = myocardium)
};

// Radially contracting annulus with analytic pull-consistent ground truth:
// u(x,t) = -a sin(pi t/(T-1)) (x-c) w(|x-c|), w = 1 inside r2 and tapering
// to 0 by 1.5 r2 such that |x-c| w never exceeds r2. Frames and masks are
// evaluated analytically at the displaced source radius.
Phantom synth_phantom(const PhantomSpec& spec);

// Writes <name>_seq.mcmt, <name>_gt.mcmt ([T,2,H,W]) and <name>_masks.mcmt
// ([T,H,W], labels stored as floats) under dir.
void save_phantom(const std::string& dir, const std::string& name, const Phantom& ph);

// Loads a sequence plus ground truth and masks when the side files exist.
Phantom load_phantom(const std::string& dir, const std::string& name);

// Sorted base names of all *_seq.mcmt files in dir.
std::vector<std::string> dataset_names(const std::string& dir);

}  // namespace mcm
