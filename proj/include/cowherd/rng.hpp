#pragma once

#include <cstdint>

namespace cowherd {

//! Counter-based random stream.
//!
//! Output k of a stream is a pure function of (key, k), so a stream can be
//! split into independent children without shared state.  Children are
//! derived by hashing the parent key with the child index; parallel loops
//! obtain reproducible results by giving iteration i the child `split(i)`.
class RngStream
{
public:
  explicit RngStream(std::uint64_t seed = 0) : key_(mix(seed ^ 0x5851f42d4c957f2dULL)) {}

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

  //! Uniform on the open interval (0, 1); never returns 0 or 1.
  double uniform()
  {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  //! Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n)
  {
    // Lemire's multiply-shift; bias is < n / 2^64 and irrelevant here.
    return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  //! Independent child stream; does not advance this stream.
  RngStream split(std::uint64_t index) const
  {
    RngStream child;
    child.key_ = mix(key_ ^ mix(index + 0x632be59bd9b4e019ULL));
    child.counter_ = 0;
    return child;
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z)
  {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

} // namespace cowherd
