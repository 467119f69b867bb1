#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace fedpriv {

enum class Activation { kRelu, kTanh, kIdentity };

// Dense encoder/classifier shape. layer_dims = {input, hidden..., classes};
// one activation per hidden layer, softmax on the output.
struct EncoderConfig {
  std::vector<std::size_t> layer_dims;
  std::vector<Activation> activations;

  std::size_t num_layers() const { return layer_dims.size() - 1; }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t num_classes() const { return layer_dims.back(); }
  std::size_t param_count() const;

  // Throws ParameterError unless >= 2 dims, all dims >= 1 and
  // activations.size() == num_layers() - 1.
  void validate() const;
};

// Contiguous region of a ParamVector holding one weight matrix (row-major,
// rows x cols) or one bias vector (rows x 1).
struct Block {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  friend bool operator==(const Block&, const Block&) = default;
};

// Flat model parameters plus the per-layer layout {W1, b1, W2, b2, ...}.
// Every training, noising, sharing and aggregation step works on this type.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(std::vector<double> values, std::vector<Block> layout);

  static ParamVector zeros(const EncoderConfig& cfg);
  static ParamVector zeros_like(const ParamVector& other);
  // Uniform Glorot initialization, deterministic per seed.
  static ParamVector glorot(const EncoderConfig& cfg, std::uint64_t seed);

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  const std::vector<Block>& layout() const { return layout_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  const Block& weight_block(std::size_t layer) const { return layout_[2 * layer]; }
  const Block& bias_block(std::size_t layer) const { return layout_[2 * layer + 1]; }

  bool same_layout(const ParamVector& other) const { return layout_ == other.layout_; }
  bool all_finite() const;

  double norm() const;
  double dot(const ParamVector& other) const;

  ParamVector& operator+=(const ParamVector& other);
  ParamVector& operator-=(const ParamVector& other);
  ParamVector& operator*=(double s);
  // this += s * other
  ParamVector& axpy(double s, const ParamVector& other);

  friend ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
  friend ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
  friend ParamVector operator*(ParamVector a, double s) { return a *= s; }
  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  void check_same(const ParamVector& other) const;

  std::vector<double> values_;
  std::vector<Block> layout_;
};

// Row-major n x d feature matrix with integer labels.
struct Dataset {
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::vector<double> features;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features).subspan(i * dim, dim);
  }
  void push_back(std::span<const double> x, std::uint32_t label);
  // Throws ShapeError on ragged rows or out-of-range labels.
  void validate() const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// One client's contribution for a round.
struct ClientUpdate {
  std::uint32_t client_id = 0;
  ParamVector delta;
  std::size_t sample_count = 1;
  // Local loss after training minus local loss before training.
  double loss_delta = 0.0;
  std::uint32_t staleness = 0;
};

struct TrainOptions {
  std::size_t epochs = 5;
  std::size_t batch = 32;
  double lr = 0.1;
  std::optional<double> clip_norm;
  std::uint64_t seed = 0;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

// Activations h^(1..L) for one input; the last entry holds output logits.
std::vector<std::vector<double>> forward_encode(std::span<const double> x,
                                                const ParamVector& params,
                                                const EncoderConfig& cfg);

// Mean softmax cross-entropy over `rows` of `data` and its gradient.
struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};
LossGrad loss_and_gradient(const ParamVector& params, const EncoderConfig& cfg,
                           const Dataset& data, std::span<const std::size_t> rows);
double mean_loss(const ParamVector& params, const EncoderConfig& cfg, const Dataset& data);

// Mini-batch SGD on local data; returns theta_after - theta_before, rescaled
// to clip_norm when set.
ClientUpdate local_train(const Dataset& data, const ParamVector& params,
                         const EncoderConfig& cfg, const TrainOptions& opts,
                         std::uint32_t client_id = 0);

// Scales `delta` in place so its L2 norm is at most `clip`.
void clip_to_norm(ParamVector& delta, double clip);

EvalResult evaluate(const ParamVector& params, const EncoderConfig& cfg, const Dataset& data);

// Index of the largest logit; ties go to the lowest index.
std::size_t argmax(std::span<const double> logits);

}  // namespace fedpriv
