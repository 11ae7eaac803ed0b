#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace qpeer {

// Derives an independent child seed from a master seed and a stream index.
// Used to split replication/stage streams so parallel and serial runs agree.
uint64_t derive_seed(uint64_t master, uint64_t stream);

// Deterministic random source. All distribution transforms are implemented
// here (not via std:: distributions) so that sequences are identical across
// platforms and standard-library implementations. The underlying generator
// is std::mt19937_64, whose output sequence is pinned by the standard.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; one spare value is cached.
  double normal();

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Poisson by Knuth multiplication; adequate for small rates.
  int poisson(double rate);

  // Uniform integer on {0, ..., n-1} without modulo bias.
  int uniform_int(int n);

  // k distinct values from {0, ..., n-1} \ {excluded}, by partial
  // Fisher-Yates. excluded < 0 disables the exclusion.
  std::vector<int> sample_without_replacement(int n, int k, int excluded = -1);

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace qpeer
