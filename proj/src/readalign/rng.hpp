#pragma once

// Counter-based random streams for permutation tests. A draw is a pure
// function of (seed, stream, index, position), so permutation k produces the
// same signs/ordering no matter which worker evaluates it.

#include <array>
#include <cstdint>

namespace readalign {

class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter generate(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      ctr = single_round(ctr, key);
      key[0] += 0x9E3779B9u;
      key[1] += 0xBB67AE85u;
    }
    return ctr;
  }

 private:
  static constexpr Counter single_round(const Counter& c, const Key& k) noexcept {
    const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
    const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept {
    const std::uint64_t k = splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ull));
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  }

  // Sequential view of sub-stream `index` (typically a permutation number).
  class Sequence {
   public:
    Sequence(Philox4x32::Key key, std::uint64_t index) noexcept : key_(key), index_(index) {}

    std::uint64_t next() noexcept {
      if (!have_spare_) {
        const auto out = Philox4x32::generate(
            {static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
             static_cast<std::uint32_t>(index_), static_cast<std::uint32_t>(index_ >> 32)},
            key_);
        ++block_;
        spare_ = (std::uint64_t{out[3]} << 32) | out[2];
        have_spare_ = true;
        return (std::uint64_t{out[1]} << 32) | out[0];
      }
      have_spare_ = false;
      return spare_;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n), n > 0 (Lemire's multiply-and-reject).
    std::uint64_t below(std::uint64_t n) noexcept {
      unsigned __int128 m = static_cast<unsigned __int128>(next()) * n;
      auto low = static_cast<std::uint64_t>(m);
      if (low < n) {
        const std::uint64_t threshold = (0 - n) % n;
        while (low < threshold) {
          m = static_cast<unsigned __int128>(next()) * n;
          low = static_cast<std::uint64_t>(m);
        }
      }
      return static_cast<std::uint64_t>(m >> 64);
    }

   private:
    Philox4x32::Key key_;
    std::uint64_t index_;
    std::uint64_t block_ = 0;
    std::uint64_t spare_ = 0;
    bool have_spare_ = false;
  };

  Sequence sequence(std::uint64_t index) const noexcept { return Sequence(key_, index); }

 private:
  Philox4x32::Key key_{};
};

}  // namespace readalign
