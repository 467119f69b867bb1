#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "fedpriv/aggregation.hpp"
#include "fedpriv/comms.hpp"
#include "fedpriv/model.hpp"
#include "fedpriv/privacy.hpp"
#include "fedpriv/secure_agg.hpp"

namespace fedpriv {

enum class RoundMode { kSync, kAsync };
enum class AttackMode { kSignFlip, kNormBoost, kLabelFlip };

const char* to_string(RoundMode m);
const char* to_string(AttackMode m);

struct AttackSpec {
  std::set<std::uint32_t> malicious_ids;
  AttackMode mode = AttackMode::kSignFlip;
  double factor = 10.0;  // norm_boost multiplier
  bool active = false;

  bool is_malicious(std::uint32_t id) const { return active && malicious_ids.contains(id); }
};

struct ClientNode {
  std::uint32_t id = 0;
  std::uint32_t edge_id = 0;
  Dataset data;
  LinkModel uplink;
};

struct EdgeNode {
  std::uint32_t id = 0;
  LinkModel cloud_link;
};

struct Topology {
  std::vector<ClientNode> clients;  // sorted by id
  std::vector<EdgeNode> edges;

  // Every client must map to an existing edge; ids unique.
  void validate() const;
  const EdgeNode& edge(std::uint32_t id) const;
};

struct PrivacySettings {
  bool enabled = false;
  double epsilon_total = 2.0;
  double delta = kDefaultDelta;
  // Contribution weight gamma_i per client; missing ids use 1.0.
  std::map<std::uint32_t, double> contribution;
};

struct SimulationConfig {
  EncoderConfig model;
  TrainOptions train;
  AggregatorConfig aggregator;
  PrivacySettings privacy;
  CommsConfig comms;
  AttackSpec attack;
  RoundMode mode = RoundMode::kSync;
  bool mpc = false;
  std::size_t mpc_shares = 3;
  double participation = 0.8;
  std::uint32_t rounds = 20;
  // Async rounds close once this quantile of the round's dispatched clients
  // would have arrived.
  double async_quantile = 0.5;
  std::uint64_t seed = 0;

  bool comms_enabled() const;
  void validate() const;
};

struct RoundPlan {
  std::uint32_t round = 0;
  RoundMode mode = RoundMode::kSync;
  bool mpc_enabled = false;
  bool comms_enabled = false;
  double participation_rate = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RoundReport {
  std::uint32_t round = 0;
  bool skipped = false;
  bool fallback = false;
  double accuracy = 0.0;
  double loss = 0.0;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_edge_cloud = 0;
  std::uint64_t bytes_down = 0;
  double seconds = 0.0;
  std::vector<std::uint32_t> participants;  // dispatched this round
  std::vector<std::uint32_t> candidates;    // updates handed to the aggregator
  std::vector<std::uint32_t> filtered;
  std::vector<std::uint32_t> selected;      // updates actually applied
  std::vector<std::uint32_t> budget_skipped;
  double epsilon_spent = 0.0;
  std::map<std::uint32_t, std::uint32_t> staleness_histogram;
};

// sign_flip negates, norm_boost scales by factor; label_flip acts on data
// and leaves updates untouched.
std::vector<ClientUpdate> inject_attack(std::vector<ClientUpdate> updates, const AttackSpec& spec);

// Labels shifted cyclically: y -> (y + 1) mod classes.
Dataset flip_labels(Dataset data);

// Share of (malicious client, round) candidate pairs that were filtered or
// not selected.
double defense_rate(std::span<const RoundReport> reports, const AttackSpec& spec);

// One edge's share of a synchronous round: it waits for its slowest client,
// then forwards `forward_bytes` over `cloud_link`.
struct EdgeLoad {
  double slowest_uplink = 0.0;
  std::uint64_t forward_bytes = 0;
  LinkModel cloud_link;
};

// max over edges of slowest_uplink + transmit(forward_bytes, cloud_link).
double sync_round_seconds(std::span<const EdgeLoad> edges);

// Sum of per-round simulated seconds.
double measure_latency(std::span<const RoundReport> reports);

class Simulator {
 public:
  Simulator(SimulationConfig cfg, Topology topology, Dataset test_set, ParamVector initial);

  RoundPlan plan_for(std::uint32_t round) const;
  RoundReport run_round(const RoundPlan& plan);
  std::vector<RoundReport> run(std::uint32_t rounds);

  const ParamVector& global_model() const { return global_; }
  const PrivacyLedger& privacy_ledger() const { return ledger_; }
  const TrafficLedger& traffic() const { return traffic_; }
  const QualityHistory& quality() const { return history_; }
  const SimulationConfig& config() const { return cfg_; }
  const Topology& topology() const { return topo_; }

 private:
  struct Upload {
    ClientUpdate update;
    std::uint32_t origin_round = 0;
    std::uint32_t edge_id = 0;
    std::uint64_t bytes = 0;
    double uplink_seconds = 0.0;
    std::optional<ShareSet> shares;  // MPC mode only
  };
  struct InFlight {
    double arrival = 0.0;
    std::uint64_t seq = 0;
    Upload upload;
  };

  std::vector<std::uint32_t> sample_participants(const RoundPlan& plan) const;
  // Trains, attacks, noises and encodes one client's contribution.
  Upload prepare_upload(const RoundPlan& plan, const ClientNode& client, double sigma);
  void aggregate(std::vector<Upload> arrived, RoundReport& report);
  void finish_report(RoundReport& report);

  SimulationConfig cfg_;
  Topology topo_;
  Dataset test_;
  ParamVector global_;
  PrivacyLedger ledger_;
  TrafficLedger traffic_;
  QualityHistory history_;
  std::map<std::uint32_t, UploadEncoder> encoders_;
  std::map<std::uint32_t, UploadDecoder> decoders_;
  std::vector<InFlight> pending_;
  std::set<std::uint32_t> busy_;
  double clock_ = 0.0;
  std::uint64_t seq_ = 0;
};

}  // namespace fedpriv
