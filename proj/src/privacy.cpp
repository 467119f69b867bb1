#include "fedpriv/privacy.hpp"

#include <cmath>
#include <random>

#include "fedpriv/errors.hpp"

namespace fedpriv {

namespace {
constexpr double kLedgerSlack = 1e-9;
}

NoiseSpec NoiseSpec::make(double epsilon, double delta, double sensitivity) {
  return {epsilon, delta, sensitivity, calibrate_sigma(epsilon, delta, sensitivity)};
}

double calibrate_sigma(double epsilon, double delta, double sensitivity) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ParameterError("epsilon must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("delta must lie in (0, 1)");
  if (!(sensitivity >= 0.0) || !std::isfinite(sensitivity)) {
    throw ParameterError("sensitivity must be >= 0");
  }
  return sensitivity * std::sqrt(2.0 * std::log(1.25 / delta)) / epsilon;
}

ParamVector add_gaussian_noise(const ParamVector& delta_theta, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ParameterError("sigma must be >= 0");
  if (!delta_theta.all_finite()) throw RangeError("add_gaussian_noise: non-finite input");
  ParamVector out = delta_theta;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (double& v : out.values()) v += noise(rng);
  return out;
}

double per_round_budget(double epsilon_total, std::uint32_t rounds) {
  if (!(epsilon_total > 0.0)) throw ParameterError("epsilon_total must be > 0");
  if (rounds == 0) throw ParameterError("round count must be >= 1");
  return epsilon_total / static_cast<double>(rounds);
}

double per_client_budget(double epsilon_round, double sample_count, double contribution,
                         double denom) {
  if (!(denom > 0.0)) throw ParameterError("budget denominator must be > 0");
  if (!(epsilon_round > 0.0) || !(sample_count > 0.0) || !(contribution > 0.0)) {
    throw ParameterError("budget inputs must be positive");
  }
  return epsilon_round * (sample_count * contribution / denom);
}

PrivacyLedger::PrivacyLedger(double epsilon_total, std::uint32_t rounds)
    : epsilon_total_(epsilon_total),
      per_round_(rounds, per_round_budget(epsilon_total, rounds)) {}

double PrivacyLedger::round_budget(std::uint32_t round) const {
  if (round >= per_round_.size()) throw ParameterError("round outside the planned horizon");
  return per_round_[round];
}

double PrivacyLedger::spent_in_round(std::uint32_t round) const {
  double s = 0.0;
  for (const Spend& e : log_) {
    if (e.round == round) s += e.epsilon;
  }
  return s;
}

bool PrivacyLedger::try_spend(std::uint32_t round, std::uint32_t client_id, double epsilon) {
  if (!(epsilon >= 0.0)) throw ParameterError("spend must be >= 0");
  if (spent_ + epsilon > epsilon_total_ + kLedgerSlack) return false;
  log_.push_back({round, client_id, epsilon});
  spent_ += epsilon;
  return true;
}

PULResult pul_search(const std::function<double(double)>& error_fn, const PULConfig& cfg) {
  if (cfg.sigma_grid.empty() || cfg.epsilon_grid.empty()) {
    throw ParameterError("PUL grids must be nonempty");
  }
  if (!(cfg.alpha >= 0.0) || !(cfg.beta >= 0.0)) throw ParameterError("PUL weights must be >= 0");
  bool have = false;
  PULResult best;
  for (double sigma : cfg.sigma_grid) {
    const double err = error_fn(sigma);
    if (!std::isfinite(err)) throw RangeError("PUL error function returned a non-finite value");
    for (double eps : cfg.epsilon_grid) {
      if (!(eps > 0.0)) throw ParameterError("epsilon grid values must be > 0");
      const double loss = cfg.alpha * err + cfg.beta / eps;
      const bool better =
          !have || loss < best.loss ||
          (loss == best.loss &&
           (sigma < best.sigma || (sigma == best.sigma && eps > best.epsilon)));
      if (better) {
        best = {sigma, eps, loss};
        have = true;
      }
    }
  }
  return best;
}

}  // namespace fedpriv
