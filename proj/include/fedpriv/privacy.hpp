#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fedpriv/model.hpp"

namespace fedpriv {

inline constexpr double kDefaultDelta = 1e-5;

// Gaussian mechanism parameters; sigma is derived, never set directly.
struct NoiseSpec {
  double epsilon = 1.0;
  double delta = kDefaultDelta;
  double sensitivity = 0.0;
  double sigma = 0.0;

  static NoiseSpec make(double epsilon, double delta, double sensitivity);
};

// sigma = sensitivity * sqrt(2 ln(1.25 / delta)) / epsilon
double calibrate_sigma(double epsilon, double delta, double sensitivity);

// Adds i.i.d. N(0, sigma^2) to every coordinate.
ParamVector add_gaussian_noise(const ParamVector& delta_theta, double sigma, std::uint64_t seed);

// epsilon_t = epsilon_total / rounds
double per_round_budget(double epsilon_total, std::uint32_t rounds);

// epsilon_{i,t} = epsilon_t * n_i * gamma_i / denom
double per_client_budget(double epsilon_round, double sample_count, double contribution,
                         double denom);

// Tracks the total budget, its even split across rounds and what each client
// has been charged. Single writer.
class PrivacyLedger {
 public:
  struct Spend {
    std::uint32_t round;
    std::uint32_t client_id;
    double epsilon;
  };

  PrivacyLedger(double epsilon_total, std::uint32_t rounds);

  double epsilon_total() const { return epsilon_total_; }
  std::uint32_t rounds() const { return static_cast<std::uint32_t>(per_round_.size()); }
  const std::vector<double>& per_round() const { return per_round_; }
  double round_budget(std::uint32_t round) const;
  const std::vector<Spend>& spend_log() const { return log_; }
  double spent() const { return spent_; }
  double remaining() const { return epsilon_total_ - spent_; }
  double spent_in_round(std::uint32_t round) const;

  // Records the spend and returns true, or returns false (recording nothing)
  // when the remaining budget cannot cover it.
  bool try_spend(std::uint32_t round, std::uint32_t client_id, double epsilon);

 private:
  double epsilon_total_;
  std::vector<double> per_round_;
  std::vector<Spend> log_;
  double spent_ = 0.0;
};

struct PULConfig {
  double alpha = 1.0;
  double beta = 1.0;
  std::vector<double> sigma_grid;
  std::vector<double> epsilon_grid;
};

struct PULResult {
  double sigma = 0.0;
  double epsilon = 0.0;
  double loss = 0.0;
};

// Grid minimum of alpha * error(sigma) + beta / epsilon. Ties prefer the
// smaller sigma, then the larger epsilon.
PULResult pul_search(const std::function<double(double)>& error_fn, const PULConfig& cfg);

}  // namespace fedpriv
