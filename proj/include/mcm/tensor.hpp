#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcm {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

// Global autograd switch. Ops skip recording backward closures while disabled.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major tensor with an optional gradient buffer and a tape node.
// The tape is a DAG: every non-leaf keeps shared ownership of its inputs, so a
// forward pass stays alive exactly as long as its outputs do. backward_fn
// reads this tensor's grad and accumulates into the parents' grads.
class Tensor {
 public:
  std::vector<int> shape;
  std::vector<double> v;  // values, row-major
  std::vector<double> g;  // gradient, same layout; empty until ensure_grad()
  bool requires_grad = false;
  std::vector<TensorPtr> parents;
  std::function<void(Tensor&)> backward_fn;

  Tensor() = default;
  explicit Tensor(std::vector<int> shp, double fill = 0.0);
  ~Tensor();
  Tensor(const Tensor&) = delete;
  Tensor& operator=(const Tensor&) = delete;

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  void ensure_grad();
  void zero_grad();
  bool all_finite() const;
};

int64_t numel_of(const std::vector<int>& shape);

TensorPtr make_tensor(std::vector<int> shape, double fill = 0.0);
TensorPtr make_param(std::vector<int> shape);  // leaf with requires_grad set

struct NamedParam {
  std::string name;
  TensorPtr t;
};

// Reverse-mode accumulation from a scalar root.
void backward(const TensorPtr& root);

// Live/peak byte accounting for value+grad buffers; the profiler reports the
// peak as its memory figure.
int64_t live_tensor_bytes();
int64_t peak_tensor_bytes();
void reset_peak_tensor_bytes();

// Parameters are kept on the float32 grid so the float32 container format
// round-trips them bit-exactly.
inline double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }
void round_f32_inplace(Tensor& t);
void round_f32_inplace(std::vector<double>& v);

// Worker count for the parallel forward kernels. 1 selects the serial
// reference path. Initialized from hardware_concurrency, overridable via the
// MCM_THREADS environment variable or set_num_threads().
int num_threads();
void set_num_threads(int n);
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body);

// Deterministic RNG with explicitly coded distributions so streams do not
// depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed);
  uint64_t next_u64();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  double normal();
  double normal(double mean, double stddev);
  int uniform_int(int n);  // [0, n)

 private:
  uint64_t s_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mcm
