#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedpriv/model.hpp"

namespace fedpriv {

// Elements of Z / 2^64; arithmetic wraps.
using RingVector = std::vector<std::uint64_t>;

// Signed fixed point with 16 fractional bits embedded two's-complement style
// in the 64-bit ring.
struct FixedPointCodec {
  static constexpr int kFracBits = 16;
  static constexpr double kScale = 65536.0;
  static constexpr double kBound = 1099511627776.0;  // 2^40

  // Throws RangeError when |x| >= 2^40 or x is not finite.
  static std::uint64_t encode(double x);
  static double decode(std::uint64_t r);
};

RingVector encode_fixed(const ParamVector& v);
ParamVector decode_fixed(std::span<const std::uint64_t> r, const std::vector<Block>& layout);

// m additive shares of one client's encoded vector. The layout is public
// metadata; only the share words are secret.
struct ShareSet {
  std::uint32_t client_id = 0;
  std::vector<RingVector> shares;
  std::vector<Block> layout;

  std::size_t share_count() const { return shares.size(); }
  std::size_t length() const { return shares.empty() ? 0 : shares.front().size(); }
};

// First m-1 shares are uniform ring words; the last makes the sum exact.
ShareSet split_shares(const ParamVector& v, std::size_t m, std::uint64_t seed,
                      std::uint32_t client_id = 0);

// Modular sum of all shares, still encoded.
RingVector ring_sum(const ShareSet& set);
void ring_accumulate(RingVector& acc, std::span<const std::uint64_t> v);

ParamVector reconstruct(const ShareSet& set);

// (1/n) * decode(sum_i sum_j s_ij), n = share_sets.size().
ParamVector secure_aggregate(std::span<const ShareSet> share_sets);

// Decodes an already-summed ring vector and divides by n.
ParamVector finalize_ring_sum(std::span<const std::uint64_t> sum, std::size_t n,
                              const std::vector<Block>& layout);

// Wire form: little-endian {client_id u32, m u16, length u32} then m*length
// little-endian u64 words.
std::vector<std::uint8_t> serialize_shares(const ShareSet& set);
ShareSet deserialize_shares(std::span<const std::uint8_t> bytes, const std::vector<Block>& layout);
inline constexpr std::size_t kShareHeaderBytes = 10;

}  // namespace fedpriv
