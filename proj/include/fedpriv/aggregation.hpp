#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "fedpriv/model.hpp"

namespace fedpriv {

enum class Strategy { kFedAvg, kWeighted, kRobust };

const char* to_string(Strategy s);

// Non-negative per-client weights summing to one.
class WeightVector {
 public:
  WeightVector() = default;
  // Normalizes `raw`; throws ParameterError when any entry is negative or
  // the sum is not positive.
  static WeightVector normalized(std::vector<double> raw);

  std::size_t size() const { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }
  const std::vector<double>& values() const { return w_; }

 private:
  std::vector<double> w_;
};

struct Lambdas {
  double norm = 1.0;
  double direction = 1.0;
  double loss = 1.0;
};

struct AnomalyReport {
  std::vector<std::uint32_t> client_ids;
  std::vector<double> scores;
  double threshold = 0.0;
  std::vector<std::uint32_t> filtered;
  Lambdas lambdas;
};

struct AggregatorConfig {
  Strategy strategy = Strategy::kRobust;
  std::size_t krum_f = 1;
  // 0 selects n - f - 2; a value >= the survivor count keeps every survivor.
  std::size_t multi_krum_m = 0;
  Lambdas lambdas;
  double filter_c = 2.0;
  std::uint32_t staleness_tau = 3;
  double staleness_rho = 0.5;
};

// Per-client quality EMA owned by the coordinator.
using QualityHistory = std::map<std::uint32_t, double>;

// base + sum_i (n_i / sum n) * delta_i
ParamVector fedavg(std::span<const ClientUpdate> updates, const ParamVector& base);

// w_i proportional to (n_i / sum n) * q_i * m_i, where q_i is the clipped
// quality EMA and m_i = clip(median norm / own norm, 0.5, 1.5).
WeightVector compute_weights(std::span<const ClientUpdate> updates, const QualityHistory& history);

// base + sum_i w_i * delta_i
ParamVector weighted_aggregate(std::span<const ClientUpdate> updates, const WeightVector& weights,
                               const ParamVector& base);

ParamVector mean_delta(std::span<const ClientUpdate> updates);

// S_i = l1 * |d_i| + l2 * (1 - cos(d_i, mean)) + l3 * max(0, dL_i);
// filtered = {i : S_i > mean(S) + filter_c * std(S)}.
AnomalyReport anomaly_scores(std::span<const ClientUpdate> updates, const ParamVector& global_mean,
                             const Lambdas& lambdas, double filter_c);

// Multi-Krum: the m_select ids with the smallest sum of squared distances to
// their n - f - 2 nearest neighbours, ordered by score then id.
std::vector<std::uint32_t> krum_select(std::span<const ClientUpdate> updates, std::size_t f,
                                       std::size_t m_select);

// rho^staleness while staleness <= tau, else 0.
double staleness_discount(std::uint32_t staleness, std::uint32_t tau, double rho);

struct RobustResult {
  ParamVector params;
  AnomalyReport report;
  std::vector<std::uint32_t> selected;
  bool fallback = false;
};

// Anomaly filter, then Krum on the survivors, then dynamic weights with
// staleness folded in. Falls back to weighting all survivors when too few
// remain for Krum.
RobustResult robust_aggregate(std::span<const ClientUpdate> updates, const AggregatorConfig& cfg,
                              const ParamVector& base, const QualityHistory& history);

// Strategy weights (sample share for fedavg, compute_weights otherwise)
// multiplied by staleness discounts and renormalized. Empty when every update
// is discounted to zero.
std::vector<double> strategy_weights(std::span<const ClientUpdate> updates, Strategy strategy,
                                     const AggregatorConfig& cfg, const QualityHistory& history);

// Quality EMA step: q <- 0.8 q + 0.2 (1 + cos(delta_i, applied)).
void update_quality(QualityHistory& history, std::span<const ClientUpdate> updates,
                    const ParamVector& applied_delta);

}  // namespace fedpriv
