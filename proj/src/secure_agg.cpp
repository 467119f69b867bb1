#include "fedpriv/secure_agg.hpp"

#include <cmath>
#include <random>
#include <string>

#include "fedpriv/errors.hpp"

namespace fedpriv {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("share payload truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in[pos + i]) << (8 * i);
  pos += sizeof(T);
  return v;
}

}  // namespace

std::uint64_t FixedPointCodec::encode(double x) {
  if (!std::isfinite(x) || std::fabs(x) >= kBound) {
    throw RangeError("value outside fixed-point range: " + std::to_string(x));
  }
  const auto raw = static_cast<std::int64_t>(std::llround(x * kScale));
  return static_cast<std::uint64_t>(raw);
}

double FixedPointCodec::decode(std::uint64_t r) {
  return static_cast<double>(static_cast<std::int64_t>(r)) / kScale;
}

RingVector encode_fixed(const ParamVector& v) {
  RingVector out;
  out.reserve(v.size());
  for (double x : v.values()) out.push_back(FixedPointCodec::encode(x));
  return out;
}

ParamVector decode_fixed(std::span<const std::uint64_t> r, const std::vector<Block>& layout) {
  std::vector<double> values;
  values.reserve(r.size());
  for (std::uint64_t w : r) values.push_back(FixedPointCodec::decode(w));
  return ParamVector(std::move(values), layout);
}

ShareSet split_shares(const ParamVector& v, std::size_t m, std::uint64_t seed,
                      std::uint32_t client_id) {
  if (m == 0) throw ParameterError("share count must be >= 1");
  if (m > 0xffff) throw ParameterError("share count exceeds the wire limit");
  ShareSet set;
  set.client_id = client_id;
  set.layout = v.layout();
  RingVector last = encode_fixed(v);
  std::mt19937_64 rng(seed);
  for (std::size_t j = 0; j + 1 < m; ++j) {
    RingVector s(last.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
      s[k] = rng();
      last[k] -= s[k];
    }
    set.shares.push_back(std::move(s));
  }
  set.shares.push_back(std::move(last));
  return set;
}

void ring_accumulate(RingVector& acc, std::span<const std::uint64_t> v) {
  if (acc.size() != v.size()) throw ShapeError("ring vector length mismatch");
  for (std::size_t k = 0; k < v.size(); ++k) acc[k] += v[k];
}

RingVector ring_sum(const ShareSet& set) {
  if (set.shares.empty()) throw ParameterError("share set is empty");
  RingVector acc(set.length(), 0);
  for (const RingVector& s : set.shares) ring_accumulate(acc, s);
  return acc;
}

ParamVector reconstruct(const ShareSet& set) { return decode_fixed(ring_sum(set), set.layout); }

ParamVector finalize_ring_sum(std::span<const std::uint64_t> sum, std::size_t n,
                              const std::vector<Block>& layout) {
  if (n == 0) throw ParameterError("cannot average zero clients");
  ParamVector out = decode_fixed(sum, layout);
  out *= 1.0 / static_cast<double>(n);
  return out;
}

ParamVector secure_aggregate(std::span<const ShareSet> share_sets) {
  if (share_sets.empty()) throw ParameterError("secure_aggregate: no share sets");
  RingVector acc(share_sets.front().length(), 0);
  for (const ShareSet& set : share_sets) {
    if (set.shares.empty()) throw ParameterError("secure_aggregate: empty share set");
    for (const RingVector& s : set.shares) ring_accumulate(acc, s);
  }
  return finalize_ring_sum(acc, share_sets.size(), share_sets.front().layout);
}

std::vector<std::uint8_t> serialize_shares(const ShareSet& set) {
  std::vector<std::uint8_t> out;
  out.reserve(kShareHeaderBytes + 8 * set.share_count() * set.length());
  put_le<std::uint32_t>(out, set.client_id);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(set.share_count()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.length()));
  for (const RingVector& s : set.shares) {
    if (s.size() != set.length()) throw ShapeError("shares differ in length");
    for (std::uint64_t w : s) put_le<std::uint64_t>(out, w);
  }
  return out;
}

ShareSet deserialize_shares(std::span<const std::uint8_t> bytes, const std::vector<Block>& layout) {
  std::size_t pos = 0;
  ShareSet set;
  set.client_id = get_le<std::uint32_t>(bytes, pos);
  const auto m = get_le<std::uint16_t>(bytes, pos);
  const auto len = get_le<std::uint32_t>(bytes, pos);
  std::size_t expected = 0;
  for (const Block& b : layout) expected += b.size();
  if (len != expected) throw FormatError("share length does not match the model layout");
  set.layout = layout;
  for (std::size_t j = 0; j < m; ++j) {
    RingVector s(len);
    for (auto& w : s) w = get_le<std::uint64_t>(bytes, pos);
    set.shares.push_back(std::move(s));
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after share payload");
  return set;
}

}  // namespace fedpriv
