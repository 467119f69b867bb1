#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedpriv/data.hpp"
#include "fedpriv/simulation.hpp"

namespace fedpriv {

enum class DataSource { kSynthetic, kIdx };

struct DataConfig {
  DataSource source = DataSource::kSynthetic;
  SyntheticSpec synthetic;
  PartitionKind partition = PartitionKind::kDirichlet;
  double alpha = 0.3;
  std::filesystem::path images;
  std::filesystem::path labels;
  double eval_fraction = 0.2;
};

struct NetworkConfig {
  double uplink_bandwidth = 20000.0;  // bytes/s
  double uplink_latency = 0.05;
  // Slowest client's bandwidth as a fraction of uplink_bandwidth; per-client
  // factors are log-uniform in [heterogeneity, 1].
  double heterogeneity = 0.25;
  std::size_t edges = 2;
  double edge_bandwidth = 1e6;
  double edge_latency = 0.02;
};

struct AttackConfig {
  bool active = false;
  AttackMode mode = AttackMode::kSignFlip;
  double factor = 10.0;
  std::vector<std::uint32_t> malicious;  // explicit ids
  std::size_t malicious_count = 0;       // used when `malicious` is empty
};

// Everything a run needs; parsed from one JSON document.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::uint32_t rounds = 20;
  std::size_t clients = 10;
  double participation = 0.8;
  RoundMode mode = RoundMode::kSync;
  bool mpc = false;
  std::size_t mpc_shares = 3;
  double async_quantile = 0.5;

  std::vector<std::size_t> hidden = {32};
  Activation activation = Activation::kRelu;
  TrainOptions train{5, 32, 0.05, std::nullopt, 0};

  AggregatorConfig aggregator;
  PrivacySettings privacy;
  CommsConfig comms;
  AttackConfig attack;
  DataConfig data;
  NetworkConfig network;

  std::optional<double> target_accuracy;
  double target_fraction = 0.9;
};

// Throws ConfigError naming the offending key.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
// Full document accepted by parse_config; parsing it back yields the same config.
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);

// Built simulation inputs.
struct Scenario {
  SimulationConfig sim;
  Topology topology;
  Dataset test;
  ParamVector initial;
};
Scenario build_scenario(const ExperimentConfig& cfg);

struct RunSummary {
  std::uint32_t rounds = 0;
  double final_accuracy = 0.0;
  double final_loss = 0.0;
  double best_accuracy = 0.0;
  std::uint64_t total_bytes_up = 0;
  std::uint64_t total_bytes_edge_cloud = 0;
  std::uint64_t total_bytes_down = 0;
  double total_seconds = 0.0;
  double mean_participation = 0.0;
  double epsilon_spent = 0.0;
  double target_accuracy = 0.0;
  // 1-based round at which accuracy first reached the target.
  std::optional<std::uint32_t> rounds_to_target;
  std::vector<std::uint32_t> malicious;  // empty unless an attack is active
};

struct RunResult {
  std::vector<RoundReport> reports;
  RunSummary summary;
  AttackSpec attack;
};

RunResult run_experiment(const ExperimentConfig& cfg);

std::optional<std::uint32_t> rounds_to_target(const std::vector<RoundReport>& reports, double target);

// One JSON object per line; field order is fixed.
nlohmann::ordered_json round_record(const RoundReport& r);
nlohmann::ordered_json summary_record(const RunSummary& s);
void write_jsonl(std::ostream& out, const RunResult& result);

// Checks every line of a metrics file; returns a list of problems (empty on
// success).
std::vector<std::string> validate_metrics(std::istream& in);

double median(std::vector<double> v);

// ---------------------------------------------------------------------------
// Comparison tables
// ---------------------------------------------------------------------------

struct AggregatorRow {
  std::string strategy;
  double final_accuracy = 0.0;
  double rounds_to_target = 0.0;  // rounds + 1 when never reached
  double participation = 0.0;
  double mb_up = 0.0;
};
// fedavg / robust / weighted on identical seeds, median over `seeds`.
std::vector<AggregatorRow> compare_aggregators(const ExperimentConfig& cfg, std::size_t seeds);

struct CommsRow {
  std::string name;
  double mb_up = 0.0;
  double delay_reduction_pct = 0.0;
  double final_accuracy = 0.0;
  double seconds = 0.0;
};
// none / sparsify / sparsify+delta / all, median over `seeds`.
std::vector<CommsRow> compare_comms(const ExperimentConfig& cfg, std::size_t seeds);

struct AttackRow {
  std::string attack;
  bool defended = false;
  std::optional<double> defense_rate;  // empty for the no-attack baseline
  double final_accuracy = 0.0;
  double accuracy_drop_pts = 0.0;
};
// No-attack baseline plus sign_flip / norm_boost / label_flip, each with the
// robust pipeline and with plain fedavg.
std::vector<AttackRow> attack_eval(const ExperimentConfig& cfg, std::size_t seeds);

struct BudgetClient {
  double samples = 0.0;
  double contribution = 1.0;
};
struct BudgetPlan {
  double epsilon_round = 0.0;
  double denom = 0.0;
  std::vector<double> per_client;
  double per_client_sum = 0.0;
  double total_over_rounds = 0.0;
};
// denom defaults to sum_j n_j gamma_j.
BudgetPlan budget_plan(double epsilon_total, std::uint32_t rounds,
                       const std::vector<BudgetClient>& clients, std::optional<double> denom);

void print_aggregator_table(std::ostream& out, const std::vector<AggregatorRow>& rows);
void print_comms_table(std::ostream& out, const std::vector<CommsRow>& rows);
void print_attack_table(std::ostream& out, const std::vector<AttackRow>& rows);
void print_budget_plan(std::ostream& out, const BudgetPlan& plan, std::uint32_t rounds,
                       const std::vector<BudgetClient>& clients);

}  // namespace fedpriv
