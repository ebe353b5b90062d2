#ifndef GEODESIGN_RANDOM_HPP
#define GEODESIGN_RANDOM_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Dense>

namespace geodesign {

// splitmix64 finaliser; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic seed for the stream identified by (root, path...).
// Different paths give statistically unrelated streams.
inline std::uint64_t derive_seed(std::uint64_t root,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(root);
  for (auto p : path) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

// Stream tags used with derive_seed, so that unrelated consumers of the same
// root never share a stream.
namespace stream {
inline constexpr std::uint64_t kPriorDraw = 1;
inline constexpr std::uint64_t kDesignField = 2;
inline constexpr std::uint64_t kData = 3;
inline constexpr std::uint64_t kFitNoise = 4;
inline constexpr std::uint64_t kFitRestart = 5;
inline constexpr std::uint64_t kPredictive = 6;
inline constexpr std::uint64_t kNested = 7;
inline constexpr std::uint64_t kReplicate = 8;
inline constexpr std::uint64_t kStart = 9;
inline constexpr std::uint64_t kRandomDesign = 10;
inline constexpr std::uint64_t kBaseline = 11;
}  // namespace stream

// A single random stream. Owned by exactly one Monte Carlo worker.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  RngStream child(std::initializer_list<std::uint64_t> path) {
    return RngStream(derive_seed(engine_(), path));
  }

  // Uniform on the open interval (0, 1).
  double uniform() {
    double u;
    do {
      u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    } while (u == 0.0);
    return u;
  }

  double normal() { return normal_(engine_); }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace geodesign

#endif  // GEODESIGN_RANDOM_HPP
