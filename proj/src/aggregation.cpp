#include "fedpriv/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedpriv/errors.hpp"

namespace fedpriv {

namespace {

void check_updates(std::span<const ClientUpdate> updates, const ParamVector* base) {
  if (updates.empty()) throw ParameterError("aggregation needs at least one update");
  const ParamVector& ref = base ? *base : updates.front().delta;
  for (const ClientUpdate& u : updates) {
    if (!u.delta.same_layout(ref)) throw ShapeError("update layout differs from the model");
  }
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// cos(a, b) with a zero operand treated as perfectly aligned.
double cosine(const ParamVector& a, const ParamVector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 1.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double squared_distance(const ParamVector& a, const ParamVector& b) {
  const auto x = a.values();
  const auto y = b.values();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

std::vector<ClientUpdate> subset(std::span<const ClientUpdate> updates,
                                 const std::vector<std::uint32_t>& ids) {
  std::vector<ClientUpdate> out;
  for (const ClientUpdate& u : updates) {
    if (std::find(ids.begin(), ids.end(), u.client_id) != ids.end()) out.push_back(u);
  }
  return out;
}

std::vector<double> with_staleness(std::vector<double> w, std::span<const ClientUpdate> updates,
                                   const AggregatorConfig& cfg) {
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] *= staleness_discount(updates[i].staleness, cfg.staleness_tau, cfg.staleness_rho);
    total += w[i];
  }
  if (total <= 0.0) return {};
  for (double& v : w) v /= total;
  return w;
}

ParamVector apply_weights(std::span<const ClientUpdate> updates, const std::vector<double>& raw,
                          const ParamVector& base) {
  if (raw.empty()) return base;
  return weighted_aggregate(updates, WeightVector::normalized(raw), base);
}

}  // namespace

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kFedAvg:
      return "fedavg";
    case Strategy::kWeighted:
      return "weighted";
    case Strategy::kRobust:
      return "robust";
  }
  return "?";
}

WeightVector WeightVector::normalized(std::vector<double> raw) {
  double total = 0.0;
  for (double w : raw) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ParameterError("weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw ParameterError("weights sum to zero");
  for (double& w : raw) w /= total;
  WeightVector out;
  out.w_ = std::move(raw);
  return out;
}

ParamVector fedavg(std::span<const ClientUpdate> updates, const ParamVector& base) {
  check_updates(updates, &base);
  double total = 0.0;
  for (const ClientUpdate& u : updates) total += static_cast<double>(u.sample_count);
  ParamVector out = base;
  for (const ClientUpdate& u : updates) {
    out.axpy(static_cast<double>(u.sample_count) / total, u.delta);
  }
  return out;
}

WeightVector compute_weights(std::span<const ClientUpdate> updates, const QualityHistory& history) {
  check_updates(updates, nullptr);
  std::vector<double> norms;
  double total_n = 0.0;
  for (const ClientUpdate& u : updates) {
    norms.push_back(u.delta.norm());
    total_n += static_cast<double>(u.sample_count);
  }
  const double med = median(norms);
  std::vector<double> raw;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const auto it = history.find(updates[i].client_id);
    const double q = std::clamp(it == history.end() ? 1.0 : it->second, 0.5, 1.5);
    const double m = std::clamp(med / std::max(norms[i], 1e-12), 0.5, 1.5);
    raw.push_back(static_cast<double>(updates[i].sample_count) / total_n * q * m);
  }
  return WeightVector::normalized(std::move(raw));
}

ParamVector weighted_aggregate(std::span<const ClientUpdate> updates, const WeightVector& weights,
                               const ParamVector& base) {
  check_updates(updates, &base);
  if (weights.size() != updates.size()) {
    throw ShapeError("weight count " + std::to_string(weights.size()) +
                         " does not match update count " + std::to_string(updates.size()));
  }
  ParamVector out = base;
  for (std::size_t i = 0; i < updates.size(); ++i) out.axpy(weights[i], updates[i].delta);
  return out;
}

ParamVector mean_delta(std::span<const ClientUpdate> updates) {
  check_updates(updates, nullptr);
  ParamVector m = ParamVector::zeros_like(updates.front().delta);
  for (const ClientUpdate& u : updates) m += u.delta;
  m *= 1.0 / static_cast<double>(updates.size());
  return m;
}

AnomalyReport anomaly_scores(std::span<const ClientUpdate> updates, const ParamVector& global_mean,
                             const Lambdas& lambdas, double filter_c) {
  check_updates(updates, &global_mean);
  AnomalyReport report;
  report.lambdas = lambdas;
  for (const ClientUpdate& u : updates) {
    const double s = lambdas.norm * u.delta.norm() +
                     lambdas.direction * (1.0 - cosine(u.delta, global_mean)) +
                     lambdas.loss * std::max(0.0, u.loss_delta);
    report.client_ids.push_back(u.client_id);
    report.scores.push_back(s);
  }
  const double n = static_cast<double>(report.scores.size());
  const double mean = std::accumulate(report.scores.begin(), report.scores.end(), 0.0) / n;
  double var = 0.0;
  for (double s : report.scores) var += (s - mean) * (s - mean);
  const double sd = std::sqrt(var / n);
  report.threshold = mean + filter_c * sd;
  for (std::size_t i = 0; i < report.scores.size(); ++i) {
    if (report.scores[i] > report.threshold) report.filtered.push_back(report.client_ids[i]);
  }
  return report;
}

std::vector<std::uint32_t> krum_select(std::span<const ClientUpdate> updates, std::size_t f,
                                       std::size_t m_select) {
  const std::size_t n = updates.size();
  if (n < 2 * f + 3) {
    throw ParameterError("krum needs n >= 2f + 3 (n=" + std::to_string(n) +
                         ", f=" + std::to_string(f) + ")");
  }
  if (m_select < 1 || m_select > n - f - 2) {
    throw ParameterError("krum selection size must lie in [1, n - f - 2]");
  }
  check_updates(updates, nullptr);
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      dist[i][j] = dist[j][i] = squared_distance(updates[i].delta, updates[j].delta);
    }
  }
  const std::size_t neighbours = n - f - 2;
  std::vector<std::pair<double, std::uint32_t>> scored;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) row.push_back(dist[i][j]);
    }
    std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(neighbours), row.end());
    scored.emplace_back(std::accumulate(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(neighbours), 0.0),
                        updates[i].client_id);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<std::uint32_t> out;
  for (std::size_t k = 0; k < m_select; ++k) out.push_back(scored[k].second);
  return out;
}

double staleness_discount(std::uint32_t staleness, std::uint32_t tau, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) throw ParameterError("staleness rho must lie in (0, 1]");
  if (staleness > tau) return 0.0;
  return std::pow(rho, static_cast<double>(staleness));
}

std::vector<double> strategy_weights(std::span<const ClientUpdate> updates, Strategy strategy,
                                     const AggregatorConfig& cfg, const QualityHistory& history) {
  check_updates(updates, nullptr);
  std::vector<double> w;
  if (strategy == Strategy::kFedAvg) {
    for (const ClientUpdate& u : updates) w.push_back(static_cast<double>(u.sample_count));
  } else {
    w = compute_weights(updates, history).values();
  }
  return with_staleness(std::move(w), updates, cfg);
}

RobustResult robust_aggregate(std::span<const ClientUpdate> updates, const AggregatorConfig& cfg,
                              const ParamVector& base, const QualityHistory& history) {
  check_updates(updates, &base);
  RobustResult result;
  result.report = anomaly_scores(updates, mean_delta(updates), cfg.lambdas, cfg.filter_c);
  std::vector<std::uint32_t> survivors;
  for (const ClientUpdate& u : updates) {
    const auto& f = result.report.filtered;
    if (std::find(f.begin(), f.end(), u.client_id) == f.end()) survivors.push_back(u.client_id);
  }
  const auto kept = subset(updates, survivors);

  if (kept.size() < 2 * cfg.krum_f + 3) {
    result.fallback = true;
    result.selected = survivors;
    result.params = kept.empty()
                        ? base
                        : apply_weights(kept, strategy_weights(kept, Strategy::kWeighted, cfg, history),
                                        base);
    return result;
  }

  const std::size_t krum_cap = kept.size() - cfg.krum_f - 2;
  if (cfg.multi_krum_m >= kept.size()) {
    result.selected = survivors;
  } else {
    const std::size_t m = cfg.multi_krum_m == 0 ? krum_cap : std::min(cfg.multi_krum_m, krum_cap);
    result.selected = krum_select(kept, cfg.krum_f, m);
  }
  // Aggregate in canonical client order regardless of Krum rank.
  std::vector<std::uint32_t> chosen = result.selected;
  std::sort(chosen.begin(), chosen.end());
  const auto picked = subset(kept, chosen);
  result.params =
      apply_weights(picked, strategy_weights(picked, Strategy::kWeighted, cfg, history), base);
  return result;
}

void update_quality(QualityHistory& history, std::span<const ClientUpdate> updates,
                    const ParamVector& applied_delta) {
  for (const ClientUpdate& u : updates) {
    auto [it, inserted] = history.try_emplace(u.client_id, 1.0);
    it->second = 0.8 * it->second + 0.2 * (1.0 + cosine(u.delta, applied_delta));
  }
}

}  // namespace fedpriv
