#ifndef MPP_RNG_HPP
#define MPP_RNG_HPP

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace mpp {

// Counter-based stream built on splitmix64. Each seed owns an independent
// stream, so Monte Carlo batches can be distributed over seeds without
// coordination and still reproduce bit-identically.
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform on (0,1); never returns 0 or 1
  double uniform() {
    const std::uint64_t u = next_u64() >> 11;  // 53 bits
    return (static_cast<double>(u) + 0.5) * 0x1p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // categorical draw from a probability vector
  int pick(const std::vector<double>& probs) {
    const double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

 private:
  std::uint64_t state_;
};

// Derives a child seed for substream `stream` of `base`.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  SeedStream s(base ^ (0x632be59bd9b4e019ULL + stream * 0x9e3779b97f4a7c15ULL));
  return s.next_u64();
}

}  // namespace mpp

#endif  // MPP_RNG_HPP
