#include "fedpriv/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "fedpriv/errors.hpp"

namespace fedpriv {

namespace {

double activate(Activation a, double z) {
  switch (a) {
    case Activation::kRelu:
      return z > 0.0 ? z : 0.0;
    case Activation::kTanh:
      return std::tanh(z);
    case Activation::kIdentity:
      return z;
  }
  return z;
}

// Derivative expressed through the pre-activation z.
double activate_grad(Activation a, double z) {
  switch (a) {
    case Activation::kRelu:
      return z > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::kIdentity:
      return 1.0;
  }
  return 1.0;
}

std::vector<Block> make_layout(const EncoderConfig& cfg) {
  std::vector<Block> layout;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < cfg.num_layers(); ++l) {
    const std::size_t in = cfg.layer_dims[l];
    const std::size_t out = cfg.layer_dims[l + 1];
    layout.push_back({offset, out, in});
    offset += out * in;
    layout.push_back({offset, out, 1});
    offset += out;
  }
  return layout;
}

void check_params(const ParamVector& params, const EncoderConfig& cfg) {
  cfg.validate();
  if (params.layout() != make_layout(cfg)) {
    throw ShapeError("parameter layout does not match encoder config");
  }
}

// Pre-activations z^(1..L) for input x.
std::vector<std::vector<double>> pre_activations(std::span<const double> x,
                                                 const ParamVector& params,
                                                 const EncoderConfig& cfg) {
  std::vector<std::vector<double>> zs;
  zs.reserve(cfg.num_layers());
  std::vector<double> input(x.begin(), x.end());
  const auto vals = params.values();
  for (std::size_t l = 0; l < cfg.num_layers(); ++l) {
    const Block& w = params.weight_block(l);
    const Block& b = params.bias_block(l);
    std::vector<double> z(w.rows);
    for (std::size_t r = 0; r < w.rows; ++r) {
      double acc = vals[b.offset + r];
      const double* row = vals.data() + w.offset + r * w.cols;
      for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * input[c];
      z[r] = acc;
    }
    const bool hidden = l + 1 < cfg.num_layers();
    input.assign(z.size(), 0.0);
    for (std::size_t r = 0; r < z.size(); ++r) {
      input[r] = hidden ? activate(cfg.activations[l], z[r]) : z[r];
    }
    zs.push_back(std::move(z));
  }
  return zs;
}

double cross_entropy(std::span<const double> logits, std::size_t label) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return std::log(sum) + mx - logits[label];
}

}  // namespace

std::size_t EncoderConfig::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    n += layer_dims[l + 1] * (layer_dims[l] + 1);
  }
  return n;
}

void EncoderConfig::validate() const {
  if (layer_dims.size() < 2) throw ParameterError("encoder needs at least 2 layer dims");
  for (std::size_t d : layer_dims) {
    if (d == 0) throw ParameterError("encoder layer dims must be >= 1");
  }
  if (activations.size() != layer_dims.size() - 2) {
    throw ParameterError("expected one activation per hidden layer, got " +
                         std::to_string(activations.size()));
  }
}

ParamVector::ParamVector(std::vector<double> values, std::vector<Block> layout)
    : values_(std::move(values)), layout_(std::move(layout)) {
  std::size_t expect = 0;
  for (const Block& b : layout_) {
    if (b.offset != expect) throw ShapeError("parameter layout is not contiguous");
    expect += b.size();
  }
  if (expect != values_.size()) {
    throw ShapeError("parameter layout covers " + std::to_string(expect) + " values, have " +
                     std::to_string(values_.size()));
  }
}

ParamVector ParamVector::zeros(const EncoderConfig& cfg) {
  cfg.validate();
  return ParamVector(std::vector<double>(cfg.param_count(), 0.0), make_layout(cfg));
}

ParamVector ParamVector::zeros_like(const ParamVector& other) {
  ParamVector out = other;
  std::fill(out.values_.begin(), out.values_.end(), 0.0);
  return out;
}

ParamVector ParamVector::glorot(const EncoderConfig& cfg, std::uint64_t seed) {
  ParamVector p = zeros(cfg);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < cfg.num_layers(); ++l) {
    const Block& w = p.weight_block(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t i = 0; i < w.size(); ++i) p.values_[w.offset + i] = dist(rng);
  }
  return p;
}

bool ParamVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double ParamVector::norm() const { return std::sqrt(dot(*this)); }

double ParamVector::dot(const ParamVector& other) const {
  if (other.size() != size()) throw ShapeError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) acc += values_[i] * other.values_[i];
  return acc;
}

void ParamVector::check_same(const ParamVector& other) const {
  if (!same_layout(other)) throw ShapeError("parameter layouts differ");
}

ParamVector& ParamVector::operator+=(const ParamVector& other) {
  check_same(other);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator-=(const ParamVector& other) {
  check_same(other);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

ParamVector& ParamVector::axpy(double s, const ParamVector& other) {
  check_same(other);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += s * other.values_[i];
  return *this;
}

void Dataset::push_back(std::span<const double> x, std::uint32_t label) {
  if (x.size() != dim) throw ShapeError("feature row has wrong dimension");
  features.insert(features.end(), x.begin(), x.end());
  labels.push_back(label);
}

void Dataset::validate() const {
  if (features.size() != labels.size() * dim) throw ShapeError("ragged feature matrix");
  for (std::uint32_t y : labels) {
    if (y >= num_classes) throw ShapeError("label " + std::to_string(y) + " out of range");
  }
}

std::size_t argmax(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

std::vector<std::vector<double>> forward_encode(std::span<const double> x,
                                                const ParamVector& params,
                                                const EncoderConfig& cfg) {
  check_params(params, cfg);
  if (x.size() != cfg.input_dim()) {
    throw ShapeError("input has " + std::to_string(x.size()) + " features, encoder expects " +
                     std::to_string(cfg.input_dim()));
  }
  auto hs = pre_activations(x, params, cfg);
  for (std::size_t l = 0; l + 1 < hs.size(); ++l) {
    for (double& v : hs[l]) v = activate(cfg.activations[l], v);
  }
  return hs;
}

LossGrad loss_and_gradient(const ParamVector& params, const EncoderConfig& cfg,
                           const Dataset& data, std::span<const std::size_t> rows) {
  check_params(params, cfg);
  if (data.dim != cfg.input_dim()) throw ShapeError("dataset dimension does not match encoder");
  LossGrad out{0.0, ParamVector::zeros_like(params)};
  if (rows.empty()) return out;
  const std::size_t L = cfg.num_layers();
  const double inv_b = 1.0 / static_cast<double>(rows.size());
  const auto vals = params.values();
  auto grad = out.grad.values();

  for (std::size_t row : rows) {
    const auto x = data.row(row);
    const std::size_t y = data.labels[row];
    const auto zs = pre_activations(x, params, cfg);
    out.loss += cross_entropy(zs.back(), y);

    // delta at the output: softmax(z) - onehot(y)
    const auto& logits = zs.back();
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> delta(logits.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) sum += delta[k] = std::exp(logits[k] - mx);
    for (std::size_t k = 0; k < logits.size(); ++k) delta[k] = delta[k] / sum * inv_b;
    delta[y] -= inv_b;

    for (std::size_t l = L; l-- > 0;) {
      const Block& w = params.weight_block(l);
      const Block& b = params.bias_block(l);
      // Input activation to layer l.
      std::vector<double> a_prev;
      if (l == 0) {
        a_prev.assign(x.begin(), x.end());
      } else {
        a_prev.resize(zs[l - 1].size());
        for (std::size_t i = 0; i < a_prev.size(); ++i) {
          a_prev[i] = activate(cfg.activations[l - 1], zs[l - 1][i]);
        }
      }
      for (std::size_t r = 0; r < w.rows; ++r) {
        grad[b.offset + r] += delta[r];
        double* grow = grad.data() + w.offset + r * w.cols;
        for (std::size_t c = 0; c < w.cols; ++c) grow[c] += delta[r] * a_prev[c];
      }
      if (l == 0) break;
      std::vector<double> next(w.cols, 0.0);
      for (std::size_t r = 0; r < w.rows; ++r) {
        const double* wrow = vals.data() + w.offset + r * w.cols;
        for (std::size_t c = 0; c < w.cols; ++c) next[c] += wrow[c] * delta[r];
      }
      for (std::size_t c = 0; c < next.size(); ++c) {
        next[c] *= activate_grad(cfg.activations[l - 1], zs[l - 1][c]);
      }
      delta = std::move(next);
    }
  }
  out.loss *= inv_b;
  return out;
}

double mean_loss(const ParamVector& params, const EncoderConfig& cfg, const Dataset& data) {
  return evaluate(params, cfg, data).mean_loss;
}

void clip_to_norm(ParamVector& delta, double clip) {
  if (!(clip > 0.0)) throw ParameterError("clip norm must be positive");
  const double n = delta.norm();
  if (n > clip) delta *= clip / n;
}

ClientUpdate local_train(const Dataset& data, const ParamVector& params,
                         const EncoderConfig& cfg, const TrainOptions& opts,
                         std::uint32_t client_id) {
  if (data.empty()) throw ParameterError("local_train: empty dataset");
  if (!(opts.lr >= 0.0)) throw ParameterError("local_train: learning rate must be >= 0");
  if (opts.batch == 0) throw ParameterError("local_train: batch size must be >= 1");
  check_params(params, cfg);

  const double loss_before = mean_loss(params, cfg, data);
  if (!std::isfinite(loss_before)) throw RangeError("local_train: non-finite loss");

  ParamVector theta = params;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(opts.seed);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += opts.batch) {
      const std::size_t stop = std::min(order.size(), start + opts.batch);
      auto lg = loss_and_gradient(theta, cfg, data,
                                  std::span<const std::size_t>(order).subspan(start, stop - start));
      if (!std::isfinite(lg.loss)) throw RangeError("local_train: non-finite loss");
      theta.axpy(-opts.lr, lg.grad);
    }
    if (!theta.all_finite()) throw RangeError("local_train: parameters diverged");
  }

  ClientUpdate update;
  update.client_id = client_id;
  update.sample_count = data.size();
  update.delta = theta - params;
  if (opts.clip_norm) clip_to_norm(update.delta, *opts.clip_norm);
  const double loss_after = mean_loss(params + update.delta, cfg, data);
  if (!std::isfinite(loss_after)) throw RangeError("local_train: non-finite loss");
  update.loss_delta = loss_after - loss_before;
  return update;
}

EvalResult evaluate(const ParamVector& params, const EncoderConfig& cfg, const Dataset& data) {
  if (data.empty()) throw ParameterError("evaluate: empty dataset");
  check_params(params, cfg);
  if (data.dim != cfg.input_dim()) throw ShapeError("dataset dimension does not match encoder");
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto zs = pre_activations(data.row(i), params, cfg);
    const auto& logits = zs.back();
    if (argmax(logits) == data.labels[i]) ++correct;
    loss += cross_entropy(logits, data.labels[i]);
  }
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(correct) / n, loss / n};
}

}  // namespace fedpriv
