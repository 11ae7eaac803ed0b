#include "qpeer/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace qpeer {

namespace {
uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}
}  // namespace

uint64_t derive_seed(uint64_t master, uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream + 1));
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // u1 in (0, 1] so the log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double angle = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(angle);
  have_spare_ = true;
  return r * std::cos(angle);
}

int Rng::poisson(double rate) {
  if (rate < 0.0) throw std::invalid_argument("poisson: rate must be >= 0");
  const double limit = std::exp(-rate);
  int k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= uniform();
  } while (p > limit);
  return k - 1;
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t bound = UINT64_MAX - UINT64_MAX % un;
  uint64_t raw;
  do {
    raw = next_u64();
  } while (raw >= bound);
  return static_cast<int>(raw % un);
}

std::vector<int> Rng::sample_without_replacement(int n, int k, int excluded) {
  std::vector<int> pool;
  pool.reserve(n);
  for (int v = 0; v < n; ++v) {
    if (v != excluded) pool.push_back(v);
  }
  const int m = static_cast<int>(pool.size());
  if (k > m) throw std::invalid_argument("sample_without_replacement: k exceeds pool");
  for (int j = 0; j < k; ++j) {
    const int pick = j + uniform_int(m - j);
    std::swap(pool[j], pool[pick]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace qpeer
