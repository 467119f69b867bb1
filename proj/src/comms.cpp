#include "fedpriv/comms.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <string>

#include "fedpriv/errors.hpp"

namespace fedpriv {

// ---------------------------------------------------------------------------
// Sparse updates
// ---------------------------------------------------------------------------

void SparseUpdate::validate() const {
  if (indices.size() != values.size()) throw ShapeError("sparse indices/values length mismatch");
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= dim) throw ShapeError("sparse index out of range");
    if (i > 0 && indices[i] <= indices[i - 1]) {
      throw ShapeError("sparse indices must be strictly increasing");
    }
  }
}

std::vector<double> SparseUpdate::to_dense() const {
  std::vector<double> out(dim, 0.0);
  for (std::size_t i = 0; i < indices.size(); ++i) out[indices[i]] = values[i];
  return out;
}

SparseUpdate SparseUpdate::from_dense(std::span<const double> dense) {
  SparseUpdate s;
  s.dim = dense.size();
  for (std::size_t i = 0; i < dense.size(); ++i) {
    s.indices.push_back(static_cast<std::uint32_t>(i));
    s.values.push_back(dense[i]);
  }
  return s;
}

SparsifyResult topk_sparsify(const ParamVector& delta, std::size_t k, const ParamVector& residual) {
  const std::size_t dim = delta.size();
  if (k > dim) throw ParameterError("k exceeds dimension");
  if (!residual.same_layout(delta)) throw ShapeError("residual layout differs from delta");
  ParamVector acc = delta + residual;
  const auto v = acc.values();

  std::vector<std::uint32_t> order(dim);
  std::iota(order.begin(), order.end(), 0u);
  auto larger = [&](std::uint32_t a, std::uint32_t b) {
    const double ma = std::fabs(v[a]);
    const double mb = std::fabs(v[b]);
    return ma != mb ? ma > mb : a < b;
  };
  if (k < dim) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                     larger);
  }
  order.resize(k);
  std::sort(order.begin(), order.end());

  SparsifyResult out;
  out.update.dim = dim;
  out.residual = acc;
  for (std::uint32_t i : order) {
    out.update.indices.push_back(i);
    out.update.values.push_back(v[i]);
    out.residual[i] = 0.0;
  }
  return out;
}

namespace {

// Value of `s` at index `idx`, advancing a merge cursor; 0 when absent.
double lookup(const SparseUpdate& s, std::uint32_t idx, std::size_t& cursor) {
  while (cursor < s.indices.size() && s.indices[cursor] < idx) ++cursor;
  return cursor < s.indices.size() && s.indices[cursor] == idx ? s.values[cursor] : 0.0;
}

}  // namespace

DeltaPayload delta_encode(const SparseUpdate& current, const SparseUpdate& previous) {
  current.validate();
  if (previous.dim != current.dim) throw ShapeError("delta_encode: dimension mismatch");
  DeltaPayload out;
  out.diff.dim = current.dim;
  out.diff.indices = current.indices;
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < current.indices.size(); ++i) {
    const double p = lookup(previous, current.indices[i], cursor);
    const double c = current.values[i];
    const double d = c - p;
    if (std::bit_cast<std::uint64_t>(p + d) == std::bit_cast<std::uint64_t>(c)) {
      out.diff.values.push_back(d);
    } else {
      out.diff.values.push_back(c);
      out.literal.push_back(static_cast<std::uint32_t>(i));
    }
  }
  return out;
}

SparseUpdate delta_decode(const DeltaPayload& payload, const SparseUpdate& previous) {
  payload.diff.validate();
  if (previous.dim != payload.diff.dim) throw ShapeError("delta_decode: dimension mismatch");
  SparseUpdate out;
  out.dim = payload.diff.dim;
  out.indices = payload.diff.indices;
  std::size_t cursor = 0;
  std::size_t lit = 0;
  for (std::size_t i = 0; i < payload.diff.indices.size(); ++i) {
    const double p = lookup(previous, payload.diff.indices[i], cursor);
    if (lit < payload.literal.size() && payload.literal[lit] == i) {
      out.values.push_back(payload.diff.values[i]);
      ++lit;
    } else {
      out.values.push_back(p + payload.diff.values[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quantization
// ---------------------------------------------------------------------------

namespace {
void check_quantizer(int bits, double clip) {
  if (bits < 2 || bits > 16) throw ParameterError("quantizer bits must lie in [2, 16]");
  if (!(clip > 0.0) || !std::isfinite(clip)) throw ParameterError("quantizer clip must be > 0");
}
}  // namespace

double quantizer_step(int bits, double clip) {
  check_quantizer(bits, clip);
  return 2.0 * clip / static_cast<double>((1u << bits) - 1u);
}

Quantized quantize(std::span<const double> values, int bits, double clip) {
  const double step = quantizer_step(bits, clip);
  const auto top = static_cast<double>((1u << bits) - 1u);
  Quantized q;
  q.symbols.reserve(values.size());
  for (double x : values) {
    if (x > clip || x < -clip) ++q.clamped;
    const double c = std::clamp(x, -clip, clip);
    const double level = std::clamp(std::round((c + clip) / step), 0.0, top);
    q.symbols.push_back(static_cast<std::uint16_t>(level));
  }
  return q;
}

std::vector<double> dequantize(std::span<const std::uint16_t> symbols, int bits, double clip) {
  const double step = quantizer_step(bits, clip);
  const std::uint32_t top = (1u << bits) - 1u;
  std::vector<double> out;
  out.reserve(symbols.size());
  for (std::uint16_t s : symbols) {
    if (s > top) throw FormatError("quantized symbol exceeds level count");
    // Top level maps to exactly +clip.
    out.push_back(s == top ? clip : -clip + static_cast<double>(s) * step);
  }
  return out;
}

double abs_percentile(std::span<const double> values, double q) {
  if (values.empty()) return 0.0;
  std::vector<double> mags;
  mags.reserve(values.size());
  for (double v : values) mags.push_back(std::fabs(v));
  std::sort(mags.begin(), mags.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(mags.size())));
  return mags[std::clamp<std::size_t>(rank, 1, mags.size()) - 1];
}

// ---------------------------------------------------------------------------
// Byte helpers
// ---------------------------------------------------------------------------

void put_varint(std::vector<std::uint8_t>& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint64_t get_varint(std::span<const std::uint8_t> in, std::size_t& pos) {
  std::uint64_t v = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    if (pos >= in.size()) throw FormatError("varint truncated");
    const std::uint8_t b = in[pos++];
    v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
    if ((b & 0x80) == 0) return v;
  }
  throw FormatError("varint too long");
}

namespace {

template <typename T>
void put_be(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = sizeof(T); i-- > 0;) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_be(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("message truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v = static_cast<T>((v << 8) | in[pos + i]);
  pos += sizeof(T);
  return v;
}

class BitWriter {
 public:
  void put(std::uint64_t code, unsigned len) {
    for (unsigned i = len; i-- > 0;) {
      cur_ = static_cast<std::uint8_t>((cur_ << 1) | ((code >> i) & 1u));
      if (++fill_ == 8) {
        bytes_.push_back(cur_);
        cur_ = 0;
        fill_ = 0;
      }
    }
  }
  std::vector<std::uint8_t> finish() {
    if (fill_ > 0) bytes_.push_back(static_cast<std::uint8_t>(cur_ << (8 - fill_)));
    fill_ = 0;
    cur_ = 0;
    return std::move(bytes_);
  }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint8_t cur_ = 0;
  unsigned fill_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  unsigned next() {
    if (pos_ >= bytes_.size() * 8) throw FormatError("Huffman bitstream truncated");
    const unsigned bit = (bytes_[pos_ / 8] >> (7 - pos_ % 8)) & 1u;
    ++pos_;
    return bit;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct CanonicalCode {
  std::map<std::uint16_t, std::pair<std::uint64_t, std::uint8_t>> codes;  // symbol -> (code, len)
  // Decoding tables indexed by length.
  std::vector<std::uint64_t> first;
  std::vector<std::uint32_t> count;
  std::vector<std::uint32_t> offset;
  std::vector<std::uint16_t> sorted;
};

constexpr std::uint8_t kMaxCodeLength = 63;

CanonicalCode build_canonical(const std::map<std::uint16_t, std::uint8_t>& lengths) {
  CanonicalCode cc;
  std::vector<std::pair<std::uint8_t, std::uint16_t>> order;
  std::uint8_t max_len = 0;
  for (auto [sym, len] : lengths) {
    if (len == 0 || len > kMaxCodeLength) throw FormatError("invalid Huffman code length");
    order.emplace_back(len, sym);
    max_len = std::max(max_len, len);
  }
  std::sort(order.begin(), order.end());
  cc.first.assign(max_len + 2u, 0);
  cc.count.assign(max_len + 2u, 0);
  cc.offset.assign(max_len + 2u, 0);
  std::uint64_t code = 0;
  std::uint8_t prev = order.empty() ? 0 : order.front().first;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto [len, sym] = order[i];
    code <<= (len - prev);
    if (cc.count[len] == 0) {
      cc.first[len] = code;
      cc.offset[len] = static_cast<std::uint32_t>(i);
    }
    ++cc.count[len];
    cc.codes[sym] = {code, len};
    cc.sorted.push_back(sym);
    ++code;
    prev = len;
  }
  // Kraft check: an over-subscribed table cannot come from a valid encoder.
  if (!order.empty() && code > (std::uint64_t{1} << prev)) {
    throw FormatError("Huffman code lengths are over-subscribed");
  }
  return cc;
}

void write_length_table(std::vector<std::uint8_t>& out,
                        const std::map<std::uint16_t, std::uint8_t>& lengths) {
  put_varint(out, lengths.size());
  std::uint32_t prev = 0;
  bool first = true;
  for (auto [sym, len] : lengths) {
    put_varint(out, first ? sym : sym - prev - 1);
    out.push_back(len);
    prev = sym;
    first = false;
  }
}

std::map<std::uint16_t, std::uint8_t> read_length_table(std::span<const std::uint8_t> in,
                                                        std::size_t& pos) {
  const std::uint64_t n = get_varint(in, pos);
  if (n > 65536) throw FormatError("Huffman table too large");
  std::map<std::uint16_t, std::uint8_t> lengths;
  std::uint64_t prev = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t gap = get_varint(in, pos);
    const std::uint64_t sym = i == 0 ? gap : prev + gap + 1;
    if (sym > 0xffff) throw FormatError("Huffman symbol out of range");
    if (pos >= in.size()) throw FormatError("Huffman table truncated");
    lengths[static_cast<std::uint16_t>(sym)] = in[pos++];
    prev = sym;
  }
  return lengths;
}

std::vector<std::uint16_t> decode_bits(const std::map<std::uint16_t, std::uint8_t>& lengths,
                                       std::span<const std::uint8_t> bits, std::size_t count) {
  std::vector<std::uint16_t> out;
  if (count == 0) return out;
  if (lengths.empty()) throw FormatError("Huffman table is empty");
  if (lengths.size() == 1) {
    if (lengths.begin()->second != 0) throw FormatError("single-symbol table must use length 0");
    return std::vector<std::uint16_t>(count, lengths.begin()->first);
  }
  const CanonicalCode cc = build_canonical(lengths);
  BitReader reader(bits);
  out.reserve(count);
  const std::size_t max_len = cc.count.size() - 2;
  for (std::size_t n = 0; n < count; ++n) {
    std::uint64_t code = 0;
    std::size_t len = 0;
    while (true) {
      code = (code << 1) | reader.next();
      ++len;
      if (len > max_len) throw FormatError("invalid Huffman code in bitstream");
      if (cc.count[len] > 0 && code >= cc.first[len] && code - cc.first[len] < cc.count[len]) {
        out.push_back(cc.sorted[cc.offset[len] + (code - cc.first[len])]);
        break;
      }
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Canonical Huffman
// ---------------------------------------------------------------------------

std::map<std::uint16_t, std::uint8_t> huffman_code_lengths(
    const std::map<std::uint16_t, std::uint64_t>& freqs) {
  std::map<std::uint16_t, std::uint8_t> lengths;
  if (freqs.empty()) return lengths;
  if (freqs.size() == 1) {
    lengths[freqs.begin()->first] = 0;
    return lengths;
  }
  // Nodes 0..n-1 are leaves; merged nodes follow. Ordering by (weight, id)
  // makes the tree deterministic.
  struct Node {
    std::uint64_t weight;
    std::int64_t parent;
  };
  std::vector<Node> nodes;
  std::vector<std::uint16_t> symbols;
  for (auto [sym, f] : freqs) {
    nodes.push_back({f, -1});
    symbols.push_back(sym);
  }
  using Item = std::pair<std::uint64_t, std::size_t>;
  std::vector<Item> heap;
  for (std::size_t i = 0; i < nodes.size(); ++i) heap.emplace_back(nodes[i].weight, i);
  auto cmp = std::greater<Item>();
  std::make_heap(heap.begin(), heap.end(), cmp);
  while (heap.size() > 1) {
    std::pop_heap(heap.begin(), heap.end(), cmp);
    const Item a = heap.back();
    heap.pop_back();
    std::pop_heap(heap.begin(), heap.end(), cmp);
    const Item b = heap.back();
    heap.pop_back();
    const std::size_t id = nodes.size();
    nodes.push_back({a.first + b.first, -1});
    nodes[a.second].parent = static_cast<std::int64_t>(id);
    nodes[b.second].parent = static_cast<std::int64_t>(id);
    heap.emplace_back(a.first + b.first, id);
    std::push_heap(heap.begin(), heap.end(), cmp);
  }
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    std::size_t depth = 0;
    for (std::int64_t p = nodes[i].parent; p >= 0; p = nodes[static_cast<std::size_t>(p)].parent) ++depth;
    if (depth > kMaxCodeLength) throw RangeError("Huffman code length exceeds 63 bits");
    lengths[symbols[i]] = static_cast<std::uint8_t>(depth);
  }
  return lengths;
}

EncodedBlob entropy_encode(std::span<const std::uint16_t> symbols) {
  EncodedBlob blob;
  blob.codec = CodecId::kHuffman;
  blob.symbol_count = symbols.size();
  std::map<std::uint16_t, std::uint64_t> freqs;
  for (std::uint16_t s : symbols) ++freqs[s];
  blob.code_lengths = huffman_code_lengths(freqs);
  if (blob.code_lengths.size() <= 1) return blob;  // empty or run-length form
  const CanonicalCode cc = build_canonical(blob.code_lengths);
  BitWriter w;
  for (std::uint16_t s : symbols) {
    const auto& [code, len] = cc.codes.at(s);
    w.put(code, len);
  }
  blob.payload = w.finish();
  return blob;
}

std::vector<std::uint16_t> entropy_decode(const EncodedBlob& blob) {
  if (blob.codec == CodecId::kRaw) {
    if (blob.payload.size() != 2 * blob.symbol_count) throw FormatError("raw blob size mismatch");
    std::vector<std::uint16_t> out;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < blob.symbol_count; ++i) out.push_back(get_be<std::uint16_t>(blob.payload, pos));
    return out;
  }
  return decode_bits(blob.code_lengths, blob.payload, blob.symbol_count);
}

std::vector<std::uint8_t> EncodedBlob::serialize() const {
  std::vector<std::uint8_t> out;
  out.push_back(static_cast<std::uint8_t>(codec));
  put_varint(out, symbol_count);
  if (codec == CodecId::kHuffman) write_length_table(out, code_lengths);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

EncodedBlob EncodedBlob::deserialize(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  if (bytes.empty()) throw FormatError("blob is empty");
  EncodedBlob blob;
  const std::uint8_t codec = bytes[pos++];
  if (codec > 1) throw FormatError("unknown blob codec " + std::to_string(codec));
  blob.codec = static_cast<CodecId>(codec);
  blob.symbol_count = get_varint(bytes, pos);
  if (blob.codec == CodecId::kHuffman) blob.code_lengths = read_length_table(bytes, pos);
  blob.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return blob;
}

// ---------------------------------------------------------------------------
// Upload wire format
// ---------------------------------------------------------------------------

namespace {
std::size_t symbol_width(int bits) { return bits <= 8 ? 1 : 2; }
}  // namespace

std::vector<std::uint8_t> encode_wire(const WireMessage& msg, int bits) {
  const WireHeader& h = msg.header;
  std::vector<std::uint8_t> out;
  put_be<std::uint32_t>(out, h.round);
  put_be<std::uint32_t>(out, h.client);
  out.push_back(static_cast<std::uint8_t>(h.codec));
  put_be<std::uint32_t>(out, h.dim);
  put_be<std::uint32_t>(out, h.nnz);
  put_be<std::uint64_t>(out, std::bit_cast<std::uint64_t>(h.clip));

  if (h.nnz != h.dim) {
    if (msg.indices.size() != h.nnz) throw ShapeError("wire index count differs from nnz");
    std::uint32_t prev = 0;
    for (std::size_t i = 0; i < msg.indices.size(); ++i) {
      put_varint(out, i == 0 ? msg.indices[i] : msg.indices[i] - prev);
      prev = msg.indices[i];
    }
  }
  switch (h.codec) {
    case WireCodec::kRawF32:
      if (msg.raw_values.size() != h.nnz) throw ShapeError("wire value count differs from nnz");
      for (float f : msg.raw_values) put_be<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
      break;
    case WireCodec::kRawQuantized:
      if (msg.symbols.size() != h.nnz) throw ShapeError("wire symbol count differs from nnz");
      for (std::uint16_t s : msg.symbols) {
        if (symbol_width(bits) == 1) {
          out.push_back(static_cast<std::uint8_t>(s));
        } else {
          put_be<std::uint16_t>(out, s);
        }
      }
      break;
    case WireCodec::kHuffman: {
      if (msg.symbols.size() != h.nnz) throw ShapeError("wire symbol count differs from nnz");
      const EncodedBlob blob = entropy_encode(msg.symbols);
      write_length_table(out, blob.code_lengths);
      out.insert(out.end(), blob.payload.begin(), blob.payload.end());
      break;
    }
  }
  return out;
}

WireMessage decode_wire(std::span<const std::uint8_t> bytes, int bits) {
  std::size_t pos = 0;
  WireMessage msg;
  WireHeader& h = msg.header;
  h.round = get_be<std::uint32_t>(bytes, pos);
  h.client = get_be<std::uint32_t>(bytes, pos);
  if (pos >= bytes.size()) throw FormatError("message truncated");
  const std::uint8_t codec = bytes[pos++];
  if (codec > 2) throw FormatError("unknown wire codec " + std::to_string(codec));
  h.codec = static_cast<WireCodec>(codec);
  h.dim = get_be<std::uint32_t>(bytes, pos);
  h.nnz = get_be<std::uint32_t>(bytes, pos);
  h.clip = std::bit_cast<double>(get_be<std::uint64_t>(bytes, pos));
  if (h.nnz > h.dim) throw FormatError("nnz exceeds dim");

  if (h.nnz == h.dim) {
    msg.indices.resize(h.dim);
    std::iota(msg.indices.begin(), msg.indices.end(), 0u);
  } else {
    std::uint64_t prev = 0;
    for (std::uint32_t i = 0; i < h.nnz; ++i) {
      const std::uint64_t gap = get_varint(bytes, pos);
      const std::uint64_t idx = i == 0 ? gap : prev + gap;
      if (idx >= h.dim || (i > 0 && gap == 0)) throw FormatError("invalid index stream");
      msg.indices.push_back(static_cast<std::uint32_t>(idx));
      prev = idx;
    }
  }
  switch (h.codec) {
    case WireCodec::kRawF32:
      for (std::uint32_t i = 0; i < h.nnz; ++i) {
        msg.raw_values.push_back(std::bit_cast<float>(get_be<std::uint32_t>(bytes, pos)));
      }
      break;
    case WireCodec::kRawQuantized:
      for (std::uint32_t i = 0; i < h.nnz; ++i) {
        if (symbol_width(bits) == 1) {
          if (pos >= bytes.size()) throw FormatError("message truncated");
          msg.symbols.push_back(bytes[pos++]);
        } else {
          msg.symbols.push_back(get_be<std::uint16_t>(bytes, pos));
        }
      }
      break;
    case WireCodec::kHuffman: {
      const auto lengths = read_length_table(bytes, pos);
      msg.symbols = decode_bits(lengths, bytes.subspan(pos), h.nnz);
      // Remaining bytes belong to the bitstream; count them as consumed.
      pos = bytes.size();
      break;
    }
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after message payload");
  return msg;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

void CommsConfig::validate() const {
  if (!(k_fraction > 0.0 && k_fraction <= 1.0)) throw ParameterError("k_fraction must lie in (0, 1]");
  if (quantize && (bits < 2 || bits > 16)) throw ParameterError("bits must lie in [2, 16]");
  if (!(clip_percentile > 0.0 && clip_percentile <= 1.0)) {
    throw ParameterError("clip_percentile must lie in (0, 1]");
  }
  if (entropy && !quantize) throw ParameterError("entropy coding requires quantization");
}

std::size_t CommsConfig::k_for(std::size_t dim) const {
  if (!sparsify) return dim;
  const auto k = static_cast<std::size_t>(std::llround(k_fraction * static_cast<double>(dim)));
  return std::clamp<std::size_t>(k, 1, dim);
}

std::size_t dense_message_bytes(std::size_t dim) { return kWireHeaderBytes + 4 * dim; }

namespace {

// Smallest clip used when every payload value is zero.
constexpr double kMinClip = 1e-12;

SparseUpdate reconstruct_values(const SparseUpdate& payload, const SparseUpdate& previous,
                                bool delta) {
  if (!delta) return payload;
  SparseUpdate out = payload;
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < out.indices.size(); ++i) {
    out.values[i] = lookup(previous, out.indices[i], cursor) + payload.values[i];
  }
  return out;
}

SparseUpdate empty_like(std::size_t dim) {
  SparseUpdate s;
  s.dim = dim;
  return s;
}

}  // namespace

UploadEncoder::UploadEncoder(CommsConfig cfg, const ParamVector& shape)
    : cfg_(cfg), residual_(ParamVector::zeros_like(shape)), previous_(empty_like(shape.size())) {
  cfg_.validate();
}

UploadEncoder::Output UploadEncoder::encode(const ParamVector& delta, std::uint32_t round,
                                            std::uint32_t client) {
  const std::size_t dim = delta.size();
  const ParamVector input = delta + residual_;
  SparseUpdate current = topk_sparsify(delta, cfg_.k_for(dim), residual_).update;

  // Payload values: either the current values or their change against the
  // receiver's copy of the previous upload.
  SparseUpdate payload = current;
  if (cfg_.delta) {
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < payload.indices.size(); ++i) {
      payload.values[i] = current.values[i] - lookup(previous_, payload.indices[i], cursor);
    }
  }

  WireMessage msg;
  msg.header.round = round;
  msg.header.client = client;
  msg.header.dim = static_cast<std::uint32_t>(dim);
  msg.header.nnz = static_cast<std::uint32_t>(payload.nnz());
  msg.indices = payload.indices;
  SparseUpdate sent = payload;  // payload as the receiver will see it
  if (cfg_.quantize) {
    double clip = abs_percentile(payload.values, cfg_.clip_percentile);
    if (!(clip > 0.0)) clip = kMinClip;
    msg.header.clip = clip;
    msg.header.codec = cfg_.entropy ? WireCodec::kHuffman : WireCodec::kRawQuantized;
    msg.symbols = quantize(payload.values, cfg_.bits, clip).symbols;
    sent.values = dequantize(msg.symbols, cfg_.bits, clip);
  } else {
    msg.header.codec = WireCodec::kRawF32;
    for (std::size_t i = 0; i < payload.values.size(); ++i) {
      const auto f = static_cast<float>(payload.values[i]);
      msg.raw_values.push_back(f);
      sent.values[i] = static_cast<double>(f);
    }
  }

  const SparseUpdate received = reconstruct_values(sent, previous_, cfg_.delta);
  ParamVector transmitted = ParamVector::zeros_like(delta);
  for (std::size_t i = 0; i < received.indices.size(); ++i) {
    transmitted[received.indices[i]] = received.values[i];
  }
  residual_ = input - transmitted;
  previous_ = received;
  return {encode_wire(msg, cfg_.bits), std::move(transmitted)};
}

UploadDecoder::UploadDecoder(CommsConfig cfg, const ParamVector& shape)
    : cfg_(cfg), shape_(ParamVector::zeros_like(shape)), previous_(empty_like(shape.size())) {
  cfg_.validate();
}

ParamVector UploadDecoder::decode(std::span<const std::uint8_t> bytes) {
  const WireMessage msg = decode_wire(bytes, cfg_.bits);
  if (msg.header.dim != shape_.size()) throw FormatError("upload dimension does not match model");
  SparseUpdate sent;
  sent.dim = msg.header.dim;
  sent.indices = msg.indices;
  if (msg.header.codec == WireCodec::kRawF32) {
    for (float f : msg.raw_values) sent.values.push_back(static_cast<double>(f));
  } else {
    sent.values = dequantize(msg.symbols, cfg_.bits, msg.header.clip);
  }
  const SparseUpdate received = reconstruct_values(sent, previous_, cfg_.delta);
  ParamVector out = shape_;
  for (std::size_t i = 0; i < received.indices.size(); ++i) out[received.indices[i]] = received.values[i];
  previous_ = received;
  return out;
}

// ---------------------------------------------------------------------------
// Network model
// ---------------------------------------------------------------------------

double transmit(std::uint64_t bytes, const LinkModel& link) {
  if (!(link.bandwidth > 0.0)) throw ParameterError("link bandwidth must be > 0");
  if (!(link.latency >= 0.0)) throw ParameterError("link latency must be >= 0");
  return link.latency + static_cast<double>(bytes) / link.bandwidth;
}

void TrafficLedger::record(std::uint32_t round, Direction dir, std::uint32_t node,
                           std::uint64_t bytes) {
  entries_.push_back({round, dir, node, bytes});
}

std::uint64_t TrafficLedger::total(Direction dir) const {
  std::uint64_t t = 0;
  for (const Entry& e : entries_) {
    if (e.dir == dir) t += e.bytes;
  }
  return t;
}

std::uint64_t TrafficLedger::round_total(std::uint32_t round, Direction dir) const {
  std::uint64_t t = 0;
  for (const Entry& e : entries_) {
    if (e.dir == dir && e.round == round) t += e.bytes;
  }
  return t;
}

std::uint64_t TrafficLedger::node_total(std::uint32_t node, Direction dir) const {
  std::uint64_t t = 0;
  for (const Entry& e : entries_) {
    if (e.dir == dir && e.node == node) t += e.bytes;
  }
  return t;
}

}  // namespace fedpriv
