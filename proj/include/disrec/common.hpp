#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace disrec {

// Thrown when an operation's preconditions are violated (shape mismatches,
// out-of-range arguments, misuse of the tape).
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

// Thrown on malformed input files; message carries file and line number.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when structurally well-formed data breaks a dataset invariant.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when the training loop encounters a non-finite loss.
struct NonFiniteLossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

// Deterministic splitmix64 generator. Used everywhere instead of <random>
// distributions so that frozen test values and run outputs are identical
// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t below(std::size_t n) {
    require(n > 0, "Rng::below: n must be positive");
    return static_cast<std::size_t>(next_u64() % n);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  // Derives an independent stream; used to keep initialization, negative
  // sampling and dropout decoupled from one another.
  Rng fork(std::uint64_t stream) const {
    Rng r(state_ ^ (0xd1342543de82ef95ull * (stream + 1)));
    r.next_u64();
    return r;
  }

 private:
  std::uint64_t state_;
};

}  // namespace disrec
