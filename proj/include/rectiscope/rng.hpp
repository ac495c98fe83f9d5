#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

namespace rectiscope {

// Seeded generator with platform-independent draws (the std distributions
// are implementation defined, so they are avoided).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  std::uint64_t next() { return eng_(); }
  // [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  // [0, m)
  std::uint64_t below(std::uint64_t m) { return m == 0 ? 0 : eng_() % m; }
  // k distinct values from [0, m), ascending.
  std::vector<int> choose(int m, int k);

 private:
  std::mt19937_64 eng_;
};

inline std::vector<int> Rng::choose(int m, int k) {
  std::vector<int> pool(m);
  for (int i = 0; i < m; ++i) pool[i] = i;
  if (k > m) k = m;
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(below(static_cast<std::uint64_t>(m - i)));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace rectiscope
