#include "mcm/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <unordered_set>

namespace mcm {

namespace {
bool g_grad_enabled = true;
std::atomic<int64_t> g_live_bytes{0};
std::atomic<int64_t> g_peak_bytes{0};
int g_num_threads = 0;  // 0 = not initialized yet

void account(int64_t delta) {
  int64_t live = g_live_bytes.fetch_add(delta) + delta;
  int64_t peak = g_peak_bytes.load();
  while (live > peak && !g_peak_bytes.compare_exchange_weak(peak, live)) {
  }
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

int64_t numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    require(d >= 0, "tensor dims must be >= 0");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shp, double fill) : shape(std::move(shp)) {
  v.assign(static_cast<size_t>(numel_of(shape)), fill);
  account(static_cast<int64_t>(v.size()) * 8);
}

Tensor::~Tensor() { account(-static_cast<int64_t>(v.size() + g.size()) * 8); }

void Tensor::ensure_grad() {
  if (g.empty()) {
    g.assign(v.size(), 0.0);
    account(static_cast<int64_t>(g.size()) * 8);
  }
}

void Tensor::zero_grad() {
  ensure_grad();
  std::fill(g.begin(), g.end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

TensorPtr make_tensor(std::vector<int> shape, double fill) {
  return std::make_shared<Tensor>(std::move(shape), fill);
}

TensorPtr make_param(std::vector<int> shape) {
  auto t = make_tensor(std::move(shape));
  t->requires_grad = true;
  return t;
}

void backward(const TensorPtr& root) {
  require(root && root->numel() == 1, "backward root must be a scalar");
  require(root->requires_grad, "backward root does not require grad");

  // Post-order over the subgraph that requires grad; pruned branches never
  // receive gradient anyway.
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> seen{root.get()};
  std::vector<std::pair<Tensor*, size_t>> stack{{root.get(), 0}};
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor* child = node->parents[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->g[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

int64_t live_tensor_bytes() { return g_live_bytes.load(); }
int64_t peak_tensor_bytes() { return g_peak_bytes.load(); }
void reset_peak_tensor_bytes() { g_peak_bytes.store(g_live_bytes.load()); }

void round_f32_inplace(Tensor& t) { round_f32_inplace(t.v); }

void round_f32_inplace(std::vector<double>& v) {
  for (double& x : v) x = to_f32(x);
}

int num_threads() {
  if (g_num_threads == 0) {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* env = std::getenv("MCM_THREADS")) {
      int e = std::atoi(env);
      if (e >= 1) n = e;
    }
    g_num_threads = std::max(1, std::min(n, 16));
  }
  return g_num_threads;
}

void set_num_threads(int n) { g_num_threads = std::max(1, n); }

// Static partition over [0, n). Each worker owns a disjoint output range, so
// results are bitwise identical to the serial path regardless of thread count.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
  int workers = num_threads();
  if (workers <= 1 || n < 2) {
    body(0, n);
    return;
  }
  workers = static_cast<int>(std::min<int64_t>(workers, n));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers - 1));
  int64_t chunk = (n + workers - 1) / workers;
  for (int w = 1; w < workers; ++w) {
    int64_t lo = w * chunk;
    int64_t hi = std::min(n, lo + chunk);
    if (lo < hi) pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  body(0, std::min(n, chunk));
  for (auto& th : pool) th.join();
}

// splitmix64; a fixed, portable stream.
Rng::Rng(uint64_t seed) : s_(seed + 0x9e3779b97f4a7c15ULL) {}

uint64_t Rng::next_u64() {
  uint64_t z = (s_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

int Rng::uniform_int(int n) {
  require(n >= 1, "uniform_int needs n >= 1");
  return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
}

}  // namespace mcm
