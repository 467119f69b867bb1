#pragma once

// Independent reference implementations shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "fedpriv/model.hpp"

namespace fedpriv::testkit {

// Worst relative error between the analytic gradient and central differences
// for one random network with dims <= [4, 5, 3].
inline double gradient_check(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  EncoderConfig cfg;
  cfg.layer_dims = {pick(1, 4), pick(1, 5), pick(2, 3)};
  cfg.activations = {seed % 2 == 0 ? Activation::kTanh : Activation::kRelu};

  Dataset data;
  data.dim = cfg.input_dim();
  data.num_classes = cfg.num_classes();
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t n = pick(1, 6);
  std::vector<double> x(data.dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : x) v = gauss(rng);
    data.push_back(x, static_cast<std::uint32_t>(pick(0, data.num_classes - 1)));
  }
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;

  ParamVector params = ParamVector::glorot(cfg, seed ^ 0xabcdefULL);
  for (double& v : params.values()) v += 0.1 * gauss(rng);
  const ParamVector grad = loss_and_gradient(params, cfg, data, rows).grad;

  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamVector plus = params;
    ParamVector minus = params;
    plus[i] += h;
    minus[i] -= h;
    const double numeric = (mean_loss(plus, cfg, data) - mean_loss(minus, cfg, data)) / (2.0 * h);
    const double scale = std::max({std::abs(numeric), std::abs(grad[i]), 1e-6});
    worst = std::max(worst, std::abs(numeric - grad[i]) / scale);
  }
  return worst;
}

// Multi-Krum by exhaustive search: each score is the minimum over every
// subset of n - f - 2 other points of the summed squared distances.
inline std::vector<std::uint32_t> brute_force_krum(const std::vector<std::vector<double>>& points,
                                                   const std::vector<std::uint32_t>& ids, std::size_t f,
                                                   std::size_t m) {
  const std::size_t n = points.size();
  const std::size_t k = n - f - 2;
  auto dist2 = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t j = 0; j < points[a].size(); ++j) s += (points[a][j] - points[b][j]) * (points[a][j] - points[b][j]);
    return s;
  };
  std::vector<std::pair<double, std::uint32_t>> scored;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
      if ((mask >> i) & 1u) continue;
      if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if ((mask >> j) & 1u) s += dist2(i, j);
      }
      best = std::min(best, s);
    }
    scored.emplace_back(best, ids[i]);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < m; ++i) out.push_back(scored[i].second);
  return out;
}

}  // namespace fedpriv::testkit
