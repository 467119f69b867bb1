#include "fedpriv/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "fedpriv/errors.hpp"
#include "fedpriv/rng.hpp"

namespace fedpriv {

namespace {

// Stream tags for derive_seed.
enum : std::uint64_t { kTagSample = 1, kTagTrain = 2, kTagNoise = 3, kTagShares = 4 };

}  // namespace

const char* to_string(RoundMode m) { return m == RoundMode::kSync ? "sync" : "async"; }

const char* to_string(AttackMode m) {
  switch (m) {
    case AttackMode::kSignFlip:
      return "sign_flip";
    case AttackMode::kNormBoost:
      return "norm_boost";
    case AttackMode::kLabelFlip:
      return "label_flip";
  }
  return "?";
}

void Topology::validate() const {
  std::set<std::uint32_t> edge_ids;
  for (const EdgeNode& e : edges) {
    if (!edge_ids.insert(e.id).second) throw ParameterError("duplicate edge id");
  }
  std::set<std::uint32_t> client_ids;
  for (const ClientNode& c : clients) {
    if (!client_ids.insert(c.id).second) throw ParameterError("duplicate client id");
    if (!edge_ids.contains(c.edge_id)) {
      throw ParameterError("client " + std::to_string(c.id) + " maps to unknown edge " +
                           std::to_string(c.edge_id));
    }
  }
  if (!std::is_sorted(clients.begin(), clients.end(),
                      [](const ClientNode& a, const ClientNode& b) { return a.id < b.id; })) {
    throw ParameterError("clients must be sorted by id");
  }
}

const EdgeNode& Topology::edge(std::uint32_t id) const {
  for (const EdgeNode& e : edges) {
    if (e.id == id) return e;
  }
  throw ParameterError("unknown edge " + std::to_string(id));
}

bool SimulationConfig::comms_enabled() const {
  return comms.sparsify || comms.delta || comms.quantize || comms.entropy;
}

void SimulationConfig::validate() const {
  model.validate();
  comms.validate();
  if (!(participation > 0.0 && participation <= 1.0)) {
    throw ParameterError("participation must lie in (0, 1]");
  }
  if (mpc && comms_enabled()) throw ParameterError("MPC mode and compression are mutually exclusive");
  if (mpc && mode == RoundMode::kAsync) throw ParameterError("MPC mode requires synchronous rounds");
  if (mpc && mpc_shares == 0) throw ParameterError("MPC needs at least one share");
  if (privacy.enabled && !train.clip_norm) {
    throw ParameterError("differential privacy requires a clipping bound (sensitivity)");
  }
  if (!(async_quantile > 0.0 && async_quantile <= 1.0)) {
    throw ParameterError("async_quantile must lie in (0, 1]");
  }
  if (!(aggregator.staleness_rho > 0.0 && aggregator.staleness_rho <= 1.0)) {
    throw ParameterError("staleness rho must lie in (0, 1]");
  }
}

void RoundPlan::validate() const {
  if (mpc_enabled && comms_enabled) {
    throw ParameterError("MPC mode and compression are mutually exclusive");
  }
  if (!(participation_rate > 0.0 && participation_rate <= 1.0)) {
    throw ParameterError("participation must lie in (0, 1]");
  }
}

std::vector<ClientUpdate> inject_attack(std::vector<ClientUpdate> updates, const AttackSpec& spec) {
  if (!spec.active) return updates;
  for (ClientUpdate& u : updates) {
    if (!spec.malicious_ids.contains(u.client_id)) continue;
    switch (spec.mode) {
      case AttackMode::kSignFlip:
        u.delta *= -1.0;
        break;
      case AttackMode::kNormBoost:
        u.delta *= spec.factor;
        break;
      case AttackMode::kLabelFlip:
        break;
    }
  }
  return updates;
}

Dataset flip_labels(Dataset data) {
  for (std::uint32_t& y : data.labels) {
    y = static_cast<std::uint32_t>((y + 1) % data.num_classes);
  }
  return data;
}

double defense_rate(std::span<const RoundReport> reports, const AttackSpec& spec) {
  if (spec.malicious_ids.empty()) throw ParameterError("defense_rate: no malicious clients");
  std::size_t total = 0;
  std::size_t excluded = 0;
  for (const RoundReport& r : reports) {
    for (std::uint32_t id : r.candidates) {
      if (!spec.malicious_ids.contains(id)) continue;
      ++total;
      const bool applied = std::find(r.selected.begin(), r.selected.end(), id) != r.selected.end();
      if (!applied) ++excluded;
    }
  }
  if (total == 0) return 1.0;
  return static_cast<double>(excluded) / static_cast<double>(total);
}

double sync_round_seconds(std::span<const EdgeLoad> edges) {
  double seconds = 0.0;
  for (const EdgeLoad& e : edges) {
    seconds = std::max(seconds, e.slowest_uplink + transmit(e.forward_bytes, e.cloud_link));
  }
  return seconds;
}

double measure_latency(std::span<const RoundReport> reports) {
  if (reports.empty()) throw ParameterError("measure_latency: no reports");
  double t = 0.0;
  for (const RoundReport& r : reports) t += r.seconds;
  return t;
}

Simulator::Simulator(SimulationConfig cfg, Topology topology, Dataset test_set, ParamVector initial)
    : cfg_(std::move(cfg)),
      topo_(std::move(topology)),
      test_(std::move(test_set)),
      global_(std::move(initial)),
      ledger_(cfg_.privacy.epsilon_total, std::max<std::uint32_t>(cfg_.rounds, 1)) {
  cfg_.validate();
  topo_.validate();
  if (global_.layout() != ParamVector::zeros(cfg_.model).layout()) {
    throw ShapeError("initial model does not match the encoder config");
  }
  if (!cfg_.mpc) {
    for (const ClientNode& c : topo_.clients) {
      encoders_.emplace(c.id, UploadEncoder(cfg_.comms, global_));
      decoders_.emplace(c.id, UploadDecoder(cfg_.comms, global_));
    }
  }
}

RoundPlan Simulator::plan_for(std::uint32_t round) const {
  RoundPlan plan;
  plan.round = round;
  plan.mode = cfg_.mode;
  plan.mpc_enabled = cfg_.mpc;
  plan.comms_enabled = cfg_.comms_enabled();
  plan.participation_rate = cfg_.participation;
  plan.seed = derive_seed(cfg_.seed, {round});
  return plan;
}

std::vector<std::uint32_t> Simulator::sample_participants(const RoundPlan& plan) const {
  std::mt19937_64 rng(derive_seed(plan.seed, {kTagSample}));
  std::bernoulli_distribution coin(plan.participation_rate);
  std::vector<std::uint32_t> out;
  for (const ClientNode& c : topo_.clients) {
    // Draw for every client so the stream does not depend on who is busy.
    const bool picked = coin(rng);
    if (picked && !busy_.contains(c.id)) out.push_back(c.id);
  }
  return out;
}

Simulator::Upload Simulator::prepare_upload(const RoundPlan& plan, const ClientNode& client,
                                            double sigma) {
  const bool label_flip =
      cfg_.attack.is_malicious(client.id) && cfg_.attack.mode == AttackMode::kLabelFlip;
  TrainOptions opts = cfg_.train;
  opts.seed = derive_seed(plan.seed, {kTagTrain, client.id});
  const Dataset& data = client.data;
  ClientUpdate update = label_flip ? local_train(flip_labels(data), global_, cfg_.model, opts, client.id)
                                   : local_train(data, global_, cfg_.model, opts, client.id);

  std::vector<ClientUpdate> one{std::move(update)};
  one = inject_attack(std::move(one), cfg_.attack);
  update = std::move(one.front());
  if (sigma > 0.0) {
    update.delta = add_gaussian_noise(update.delta, sigma,
                                      derive_seed(plan.seed, {kTagNoise, client.id}));
  }

  Upload up;
  up.origin_round = plan.round;
  up.edge_id = client.edge_id;
  if (plan.mpc_enabled) {
    up.shares = split_shares(update.delta, cfg_.mpc_shares,
                             derive_seed(plan.seed, {kTagShares, client.id}), client.id);
    up.bytes = serialize_shares(*up.shares).size();
    // The cloud never sees the plaintext delta in this mode.
    update.delta = ParamVector::zeros_like(update.delta);
  } else {
    auto encoded = encoders_.at(client.id).encode(update.delta, plan.round, client.id);
    up.bytes = encoded.bytes.size();
    update.delta = decoders_.at(client.id).decode(encoded.bytes);
  }
  up.uplink_seconds = transmit(up.bytes, client.uplink);
  up.update = std::move(update);
  return up;
}

void Simulator::aggregate(std::vector<Upload> arrived, RoundReport& report) {
  std::sort(arrived.begin(), arrived.end(), [](const Upload& a, const Upload& b) {
    return a.update.client_id < b.update.client_id;
  });
  const ParamVector base = global_;
  std::vector<ClientUpdate> updates;
  for (const Upload& u : arrived) {
    report.candidates.push_back(u.update.client_id);
    ++report.staleness_histogram[u.update.staleness];
    updates.push_back(u.update);
  }

  if (cfg_.mpc) {
    // Edges add their clients' shares; the cloud adds the edge sums.
    std::map<std::uint32_t, RingVector> edge_sums;
    for (const Upload& u : arrived) {
      auto [it, fresh] = edge_sums.try_emplace(u.edge_id, RingVector(global_.size(), 0));
      for (const RingVector& s : u.shares->shares) ring_accumulate(it->second, s);
    }
    RingVector total(global_.size(), 0);
    for (const auto& [edge, sum] : edge_sums) ring_accumulate(total, sum);
    global_ = base + finalize_ring_sum(total, arrived.size(), base.layout());
    report.selected = report.candidates;
    return;
  }

  const AggregatorConfig& agg = cfg_.aggregator;
  if (agg.strategy == Strategy::kRobust) {
    RobustResult rr = robust_aggregate(updates, agg, base, history_);
    global_ = std::move(rr.params);
    report.filtered = rr.report.filtered;
    report.selected = rr.selected;
    std::sort(report.selected.begin(), report.selected.end());
    report.fallback = rr.fallback;
  } else {
    const auto w = strategy_weights(updates, agg.strategy, agg, history_);
    if (!w.empty()) global_ = weighted_aggregate(updates, WeightVector::normalized(w), base);
    for (std::size_t i = 0; i < updates.size(); ++i) {
      if (!w.empty() && w[i] > 0.0) report.selected.push_back(updates[i].client_id);
    }
  }
  // Drop updates that the staleness rule zeroed out of the selection.
  std::erase_if(report.selected, [&](std::uint32_t id) {
    for (const ClientUpdate& u : updates) {
      if (u.client_id == id) return staleness_discount(u.staleness, agg.staleness_tau, agg.staleness_rho) == 0.0;
    }
    return false;
  });
  update_quality(history_, updates, global_ - base);
}

void Simulator::finish_report(RoundReport& report) {
  if (!test_.empty()) {
    const EvalResult ev = evaluate(global_, cfg_.model, test_);
    report.accuracy = ev.accuracy;
    report.loss = ev.mean_loss;
  }
  report.bytes_up = traffic_.round_total(report.round, Direction::kUp);
  report.bytes_edge_cloud = traffic_.round_total(report.round, Direction::kEdgeToCloud);
  report.bytes_down = traffic_.round_total(report.round, Direction::kDown);
  report.epsilon_spent = 0.0;
  for (const auto& s : ledger_.spend_log()) {
    if (s.round == report.round) report.epsilon_spent += s.epsilon;
  }
}

RoundReport Simulator::run_round(const RoundPlan& plan) {
  plan.validate();
  if (plan.mpc_enabled != cfg_.mpc || plan.comms_enabled != cfg_.comms_enabled()) {
    throw ParameterError("round plan disagrees with the simulator's transport mode");
  }
  RoundReport report;
  report.round = plan.round;
  report.participants = sample_participants(plan);

  // Budget: even split per round, then by n_i * gamma_i among participants.
  double eps_round = 0.0;
  double denom = 0.0;
  const auto gamma = [&](std::uint32_t id) {
    const auto it = cfg_.privacy.contribution.find(id);
    return it == cfg_.privacy.contribution.end() ? 1.0 : it->second;
  };
  if (cfg_.privacy.enabled && plan.round < ledger_.rounds()) {
    eps_round = ledger_.round_budget(plan.round);
    for (const ClientNode& c : topo_.clients) {
      if (std::find(report.participants.begin(), report.participants.end(), c.id) !=
          report.participants.end()) {
        denom += static_cast<double>(c.data.size()) * gamma(c.id);
      }
    }
  }

  std::vector<Upload> uploads;
  for (const ClientNode& c : topo_.clients) {
    if (std::find(report.participants.begin(), report.participants.end(), c.id) ==
        report.participants.end()) {
      continue;
    }
    double eps = 0.0;
    double sigma = 0.0;
    if (cfg_.privacy.enabled) {
      if (eps_round <= 0.0) {
        report.budget_skipped.push_back(c.id);
        continue;
      }
      eps = per_client_budget(eps_round, static_cast<double>(c.data.size()), gamma(c.id), denom);
      if (!ledger_.try_spend(plan.round, c.id, eps)) {
        report.budget_skipped.push_back(c.id);
        continue;
      }
      sigma = calibrate_sigma(eps, cfg_.privacy.delta, *cfg_.train.clip_norm);
    }
    Upload up = prepare_upload(plan, c, sigma);
    traffic_.record(plan.round, Direction::kUp, c.id, up.bytes);
    traffic_.record(plan.round, Direction::kDown, c.id, dense_message_bytes(global_.size()));
    uploads.push_back(std::move(up));
  }

  if (plan.mode == RoundMode::kSync) {
    if (uploads.empty()) {
      report.skipped = true;
      finish_report(report);
      return report;
    }
    std::map<std::uint32_t, EdgeLoad> edges;
    for (const Upload& u : uploads) {
      EdgeLoad& e = edges[u.edge_id];
      e.slowest_uplink = std::max(e.slowest_uplink, u.uplink_seconds);
      e.forward_bytes += plan.mpc_enabled ? 0 : u.bytes;
    }
    std::vector<EdgeLoad> loads;
    for (auto& [edge_id, e] : edges) {
      if (plan.mpc_enabled) e.forward_bytes = kShareHeaderBytes + 8 * global_.size();
      e.cloud_link = topo_.edge(edge_id).cloud_link;
      traffic_.record(plan.round, Direction::kEdgeToCloud, edge_id, e.forward_bytes);
      loads.push_back(e);
    }
    const double seconds = sync_round_seconds(loads);
    report.seconds = seconds;
    clock_ += seconds;
    aggregate(std::move(uploads), report);
    finish_report(report);
    return report;
  }

  // Async: uploads travel independently; the round closes at a quantile of
  // this round's arrival offsets and takes whatever has landed by then.
  std::vector<double> offsets;
  for (Upload& u : uploads) {
    const double hop = transmit(u.bytes, topo_.edge(u.edge_id).cloud_link);
    traffic_.record(plan.round, Direction::kEdgeToCloud, u.edge_id, u.bytes);
    const double offset = u.uplink_seconds + hop;
    offsets.push_back(offset);
    busy_.insert(u.update.client_id);
    pending_.push_back({clock_ + offset, seq_++, std::move(u)});
  }
  double deadline = clock_;
  if (!offsets.empty()) {
    std::sort(offsets.begin(), offsets.end());
    const auto rank = static_cast<std::size_t>(
        std::ceil(cfg_.async_quantile * static_cast<double>(offsets.size())));
    deadline = clock_ + offsets[std::clamp<std::size_t>(rank, 1, offsets.size()) - 1];
  } else if (!pending_.empty()) {
    deadline = std::min_element(pending_.begin(), pending_.end(), [](const auto& a, const auto& b) {
                 return a.arrival < b.arrival;
               })->arrival;
  }
  std::sort(pending_.begin(), pending_.end(), [](const InFlight& a, const InFlight& b) {
    return a.arrival != b.arrival ? a.arrival < b.arrival : a.seq < b.seq;
  });
  std::vector<Upload> arrived;
  while (!pending_.empty() && pending_.front().arrival <= deadline) {
    Upload u = std::move(pending_.front().upload);
    pending_.erase(pending_.begin());
    u.update.staleness = plan.round - u.origin_round;
    busy_.erase(u.update.client_id);
    arrived.push_back(std::move(u));
  }
  report.seconds = deadline - clock_;
  clock_ = deadline;
  if (arrived.empty()) {
    report.skipped = true;
    finish_report(report);
    return report;
  }
  aggregate(std::move(arrived), report);
  finish_report(report);
  return report;
}

std::vector<RoundReport> Simulator::run(std::uint32_t rounds) {
  std::vector<RoundReport> out;
  out.reserve(rounds);
  for (std::uint32_t r = 0; r < rounds; ++r) out.push_back(run_round(plan_for(r)));
  return out;
}

}  // namespace fedpriv
