#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "fedpriv/model.hpp"

namespace fedpriv {

// ---------------------------------------------------------------------------
// Sparse updates
// ---------------------------------------------------------------------------

struct SparseUpdate {
  std::size_t dim = 0;
  std::vector<std::uint32_t> indices;  // strictly increasing, < dim
  std::vector<double> values;

  std::size_t nnz() const { return indices.size(); }
  void validate() const;
  std::vector<double> to_dense() const;
  static SparseUpdate from_dense(std::span<const double> dense);
  friend bool operator==(const SparseUpdate&, const SparseUpdate&) = default;
};

struct SparsifyResult {
  SparseUpdate update;
  ParamVector residual;
};

// Keeps the k largest |delta + residual| coordinates (ties to the lower
// index); everything dropped becomes the next residual.
SparsifyResult topk_sparsify(const ParamVector& delta, std::size_t k, const ParamVector& residual);

// Difference of `current` against the previous upload, restricted to the
// support of `current`. Entries where previous + (current - previous) would
// not reproduce current bit-for-bit carry the current value verbatim and are
// marked in `literal`.
struct DeltaPayload {
  SparseUpdate diff;
  std::vector<std::uint32_t> literal;  // positions into diff.indices
};

DeltaPayload delta_encode(const SparseUpdate& current, const SparseUpdate& previous);
SparseUpdate delta_decode(const DeltaPayload& payload, const SparseUpdate& previous);

// ---------------------------------------------------------------------------
// Quantization
// ---------------------------------------------------------------------------

struct Quantized {
  std::vector<std::uint16_t> symbols;
  std::size_t clamped = 0;
};

// 2^bits evenly spaced levels spanning [-clip, clip].
Quantized quantize(std::span<const double> values, int bits, double clip);
std::vector<double> dequantize(std::span<const std::uint16_t> symbols, int bits, double clip);
double quantizer_step(int bits, double clip);

// Nearest-rank percentile of |values|; 0 for an empty input.
double abs_percentile(std::span<const double> values, double q);

// ---------------------------------------------------------------------------
// Canonical Huffman
// ---------------------------------------------------------------------------

enum class CodecId : std::uint8_t { kRaw = 0, kHuffman = 1 };

struct EncodedBlob {
  CodecId codec = CodecId::kHuffman;
  std::vector<std::uint8_t> payload;
  std::size_t symbol_count = 0;
  std::map<std::uint16_t, std::uint8_t> code_lengths;

  // Self-describing byte form: codec, symbol count, length table, payload.
  std::vector<std::uint8_t> serialize() const;
  static EncodedBlob deserialize(std::span<const std::uint8_t> bytes);
};

// Optimal prefix-code lengths for the given symbol frequencies.
std::map<std::uint16_t, std::uint8_t> huffman_code_lengths(
    const std::map<std::uint16_t, std::uint64_t>& freqs);

EncodedBlob entropy_encode(std::span<const std::uint16_t> symbols);
std::vector<std::uint16_t> entropy_decode(const EncodedBlob& blob);

// ---------------------------------------------------------------------------
// Byte helpers
// ---------------------------------------------------------------------------

void put_varint(std::vector<std::uint8_t>& out, std::uint64_t v);
std::uint64_t get_varint(std::span<const std::uint8_t> in, std::size_t& pos);

// ---------------------------------------------------------------------------
// Upload wire format
// ---------------------------------------------------------------------------

// Payload encodings carried in the header's codec byte.
enum class WireCodec : std::uint8_t { kRawF32 = 0, kRawQuantized = 1, kHuffman = 2 };

// Big-endian header; 25 bytes on the wire.
struct WireHeader {
  std::uint32_t round = 0;
  std::uint32_t client = 0;
  WireCodec codec = WireCodec::kRawF32;
  std::uint32_t dim = 0;
  std::uint32_t nnz = 0;
  double clip = 0.0;
};
inline constexpr std::size_t kWireHeaderBytes = 25;

struct WireMessage {
  WireHeader header;
  std::vector<std::uint32_t> indices;
  // Exactly one of these is populated depending on the codec.
  std::vector<float> raw_values;
  std::vector<std::uint16_t> symbols;
};

// Header, then delta-gapped varint indices (omitted when nnz == dim), then
// the payload: f32 values, fixed-width symbols, or a Huffman body.
std::vector<std::uint8_t> encode_wire(const WireMessage& msg, int bits);
WireMessage decode_wire(std::span<const std::uint8_t> bytes, int bits);

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct CommsConfig {
  bool sparsify = false;
  double k_fraction = 0.1;
  bool delta = false;
  bool quantize = false;
  int bits = 8;
  double clip_percentile = 0.999;
  bool entropy = false;

  void validate() const;
  std::size_t k_for(std::size_t dim) const;
};

// Client-side encoder. Owns the error-feedback residual and the copy of the
// previous upload as the receiver reconstructed it.
class UploadEncoder {
 public:
  UploadEncoder(CommsConfig cfg, const ParamVector& shape);

  struct Output {
    std::vector<std::uint8_t> bytes;
    ParamVector transmitted;  // what the receiver will decode
  };
  Output encode(const ParamVector& delta, std::uint32_t round, std::uint32_t client);

  const ParamVector& residual() const { return residual_; }

 private:
  CommsConfig cfg_;
  ParamVector residual_;
  SparseUpdate previous_;
};

// Receiver-side counterpart holding its own previous-upload cache.
class UploadDecoder {
 public:
  UploadDecoder(CommsConfig cfg, const ParamVector& shape);
  ParamVector decode(std::span<const std::uint8_t> bytes);

 private:
  CommsConfig cfg_;
  ParamVector shape_;
  SparseUpdate previous_;
};

// Dense f32 model broadcast size for a parameter count.
std::size_t dense_message_bytes(std::size_t dim);

// ---------------------------------------------------------------------------
// Network model
// ---------------------------------------------------------------------------

struct LinkModel {
  double bandwidth = 1e6;  // bytes per second
  double latency = 0.0;    // seconds
};

// latency + bytes / bandwidth
double transmit(std::uint64_t bytes, const LinkModel& link);

enum class Direction { kUp, kDown, kEdgeToCloud };

class TrafficLedger {
 public:
  void record(std::uint32_t round, Direction dir, std::uint32_t node, std::uint64_t bytes);

  std::uint64_t total(Direction dir) const;
  std::uint64_t round_total(std::uint32_t round, Direction dir) const;
  std::uint64_t node_total(std::uint32_t node, Direction dir) const;

  struct Entry {
    std::uint32_t round;
    Direction dir;
    std::uint32_t node;
    std::uint64_t bytes;
  };
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
};

}  // namespace fedpriv
