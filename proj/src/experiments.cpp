#include "fedpriv/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "fedpriv/errors.hpp"
#include "fedpriv/rng.hpp"

namespace fedpriv {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

enum : std::uint64_t { kTagInit = 11, kTagData = 12, kTagSplit = 13, kTagPartition = 14,
                       kTagLinks = 15, kTagMalicious = 16 };

// Reads fields out of one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(join(key), "invalid value for '" + join(key) + "': " + e.what());
    }
  }

  template <typename T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    if (it->is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.contains(key)) throw ConfigError(join(key), "unknown config key '" + join(key) + "'");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E>
E parse_enum(const std::string& key, const std::string& value,
             std::initializer_list<std::pair<const char*, E>> options) {
  for (const auto& [name, e] : options) {
    if (value == name) return e;
  }
  throw ConfigError(key, "invalid value '" + value + "' for '" + key + "'");
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key, "invalid value for '" + key + "': " + what);
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig cfg;
  ObjectReader root(doc, "");
  root.get("seed", cfg.seed);
  root.get("rounds", cfg.rounds);
  root.get("clients", cfg.clients);
  require(cfg.clients >= 1, "clients", "must be >= 1");
  root.get("participation", cfg.participation);
  require(cfg.participation > 0.0 && cfg.participation <= 1.0, "participation", "must lie in (0, 1]");
  std::string mode = "sync";
  root.get("mode", mode);
  cfg.mode = parse_enum<RoundMode>("mode", mode, {{"sync", RoundMode::kSync}, {"async", RoundMode::kAsync}});
  root.get("mpc", cfg.mpc);
  root.get("mpc_shares", cfg.mpc_shares);
  require(cfg.mpc_shares >= 1 && cfg.mpc_shares <= 0xffff, "mpc_shares", "must lie in [1, 65535]");
  root.get("async_quantile", cfg.async_quantile);
  require(cfg.async_quantile > 0.0 && cfg.async_quantile <= 1.0, "async_quantile", "must lie in (0, 1]");
  root.get("local_epochs", cfg.train.epochs);
  root.get("batch_size", cfg.train.batch);
  require(cfg.train.batch >= 1, "batch_size", "must be >= 1");
  root.get("learning_rate", cfg.train.lr);
  require(cfg.train.lr >= 0.0, "learning_rate", "must be >= 0");
  root.get_optional("clip_norm", cfg.train.clip_norm);
  require(!cfg.train.clip_norm || *cfg.train.clip_norm > 0.0, "clip_norm", "must be > 0");
  root.get_optional("target_accuracy", cfg.target_accuracy);
  root.get("target_fraction", cfg.target_fraction);
  require(cfg.target_fraction > 0.0 && cfg.target_fraction <= 1.0, "target_fraction", "must lie in (0, 1]");

  if (const json* m = root.sub("model")) {
    ObjectReader r(*m, "model");
    r.get("hidden", cfg.hidden);
    for (std::size_t h : cfg.hidden) require(h >= 1, "model.hidden", "layer widths must be >= 1");
    std::string act = "relu";
    r.get("activation", act);
    cfg.activation = parse_enum<Activation>(
        "model.activation", act,
        {{"relu", Activation::kRelu}, {"tanh", Activation::kTanh}, {"identity", Activation::kIdentity}});
    r.finish();
  }

  if (const json* d = root.sub("data")) {
    ObjectReader r(*d, "data");
    std::string source = "synthetic";
    r.get("source", source);
    cfg.data.source = parse_enum<DataSource>("data.source", source,
                                             {{"synthetic", DataSource::kSynthetic}, {"idx", DataSource::kIdx}});
    r.get("n", cfg.data.synthetic.n);
    r.get("d", cfg.data.synthetic.d);
    r.get("classes", cfg.data.synthetic.classes);
    r.get("separation", cfg.data.synthetic.separation);
    r.get("noise_std", cfg.data.synthetic.noise_std);
    std::string part = "dirichlet";
    r.get("partition", part);
    cfg.data.partition = parse_enum<PartitionKind>(
        "data.partition", part, {{"iid", PartitionKind::kIid}, {"dirichlet", PartitionKind::kDirichlet}});
    r.get("alpha", cfg.data.alpha);
    require(cfg.data.alpha > 0.0, "data.alpha", "must be > 0");
    std::string images, labels;
    r.get("images", images);
    r.get("labels", labels);
    cfg.data.images = images;
    cfg.data.labels = labels;
    r.get("eval_fraction", cfg.data.eval_fraction);
    require(cfg.data.eval_fraction > 0.0 && cfg.data.eval_fraction < 1.0, "data.eval_fraction",
            "must lie in (0, 1)");
    if (cfg.data.source == DataSource::kIdx) {
      require(!images.empty() && !labels.empty(), "data.images", "idx source needs images and labels");
    } else {
      try {
        cfg.data.synthetic.validate();
      } catch (const ParameterError& e) {
        throw ConfigError("data", std::string("invalid synthetic data spec: ") + e.what());
      }
    }
    r.finish();
  }

  if (const json* a = root.sub("aggregator")) {
    ObjectReader r(*a, "aggregator");
    std::string strategy = "robust";
    r.get("strategy", strategy);
    cfg.aggregator.strategy = parse_enum<Strategy>(
        "aggregator.strategy", strategy,
        {{"fedavg", Strategy::kFedAvg}, {"weighted", Strategy::kWeighted}, {"robust", Strategy::kRobust}});
    r.get("krum_f", cfg.aggregator.krum_f);
    r.get("multi_krum_m", cfg.aggregator.multi_krum_m);
    std::vector<double> lambdas{cfg.aggregator.lambdas.norm, cfg.aggregator.lambdas.direction,
                                cfg.aggregator.lambdas.loss};
    r.get("lambdas", lambdas);
    require(lambdas.size() == 3, "aggregator.lambdas", "expected three weights");
    cfg.aggregator.lambdas = {lambdas[0], lambdas[1], lambdas[2]};
    r.get("filter_c", cfg.aggregator.filter_c);
    r.get("staleness_tau", cfg.aggregator.staleness_tau);
    r.get("staleness_rho", cfg.aggregator.staleness_rho);
    require(cfg.aggregator.staleness_rho > 0.0 && cfg.aggregator.staleness_rho <= 1.0,
            "aggregator.staleness_rho", "must lie in (0, 1]");
    r.finish();
  }

  if (const json* p = root.sub("privacy")) {
    ObjectReader r(*p, "privacy");
    r.get("enabled", cfg.privacy.enabled);
    r.get("epsilon_total", cfg.privacy.epsilon_total);
    require(cfg.privacy.epsilon_total > 0.0, "privacy.epsilon_total", "must be > 0");
    r.get("delta", cfg.privacy.delta);
    require(cfg.privacy.delta > 0.0 && cfg.privacy.delta < 1.0, "privacy.delta", "must lie in (0, 1)");
    if (const json* c = r.sub("contribution")) {
      require(c->is_object(), "privacy.contribution", "expected an object of id -> gamma");
      for (const auto& [id, gamma] : c->items()) {
        const std::string key = "privacy.contribution." + id;
        std::uint32_t cid = 0;
        try {
          cid = static_cast<std::uint32_t>(std::stoul(id));
        } catch (const std::exception&) {
          throw ConfigError(key, "client ids must be integers");
        }
        require(gamma.is_number() && gamma.get<double>() > 0.0, key, "gamma must be > 0");
        cfg.privacy.contribution[cid] = gamma.get<double>();
      }
    }
    r.finish();
    require(!cfg.privacy.enabled || cfg.train.clip_norm.has_value(), "clip_norm",
            "differential privacy needs clip_norm (the sensitivity bound)");
  }

  if (const json* c = root.sub("comms")) {
    ObjectReader r(*c, "comms");
    r.get("sparsify", cfg.comms.sparsify);
    r.get("k_fraction", cfg.comms.k_fraction);
    require(cfg.comms.k_fraction > 0.0 && cfg.comms.k_fraction <= 1.0, "comms.k_fraction", "must lie in (0, 1]");
    r.get("delta", cfg.comms.delta);
    r.get("quantize", cfg.comms.quantize);
    r.get("bits", cfg.comms.bits);
    require(cfg.comms.bits >= 2 && cfg.comms.bits <= 16, "comms.bits", "must lie in [2, 16]");
    r.get("clip_percentile", cfg.comms.clip_percentile);
    require(cfg.comms.clip_percentile > 0.0 && cfg.comms.clip_percentile <= 1.0, "comms.clip_percentile",
            "must lie in (0, 1]");
    r.get("entropy", cfg.comms.entropy);
    require(!cfg.comms.entropy || cfg.comms.quantize, "comms.entropy", "entropy coding needs quantize");
    r.finish();
  }

  if (const json* a = root.sub("attack")) {
    ObjectReader r(*a, "attack");
    r.get("active", cfg.attack.active);
    std::string mode = "sign_flip";
    r.get("mode", mode);
    cfg.attack.mode = parse_enum<AttackMode>("attack.mode", mode,
                                             {{"sign_flip", AttackMode::kSignFlip},
                                              {"norm_boost", AttackMode::kNormBoost},
                                              {"label_flip", AttackMode::kLabelFlip}});
    r.get("factor", cfg.attack.factor);
    r.get("malicious", cfg.attack.malicious);
    r.get("malicious_count", cfg.attack.malicious_count);
    for (std::uint32_t id : cfg.attack.malicious) {
      require(id < cfg.clients, "attack.malicious", "id " + std::to_string(id) + " is not a client");
    }
    require(cfg.attack.malicious_count <= cfg.clients, "attack.malicious_count", "exceeds client count");
    r.finish();
  }

  if (const json* n = root.sub("network")) {
    ObjectReader r(*n, "network");
    r.get("uplink_bandwidth", cfg.network.uplink_bandwidth);
    require(cfg.network.uplink_bandwidth > 0.0, "network.uplink_bandwidth", "must be > 0");
    r.get("uplink_latency", cfg.network.uplink_latency);
    require(cfg.network.uplink_latency >= 0.0, "network.uplink_latency", "must be >= 0");
    r.get("heterogeneity", cfg.network.heterogeneity);
    require(cfg.network.heterogeneity > 0.0 && cfg.network.heterogeneity <= 1.0, "network.heterogeneity",
            "must lie in (0, 1]");
    r.get("edges", cfg.network.edges);
    require(cfg.network.edges >= 1, "network.edges", "must be >= 1");
    r.get("edge_bandwidth", cfg.network.edge_bandwidth);
    require(cfg.network.edge_bandwidth > 0.0, "network.edge_bandwidth", "must be > 0");
    r.get("edge_latency", cfg.network.edge_latency);
    require(cfg.network.edge_latency >= 0.0, "network.edge_latency", "must be >= 0");
    r.finish();
  }

  root.finish();
  require(!(cfg.mpc && (cfg.comms.sparsify || cfg.comms.delta || cfg.comms.quantize)), "mpc",
          "secure aggregation cannot be combined with compression");
  require(!(cfg.mpc && cfg.mode == RoundMode::kAsync), "mpc", "secure aggregation needs sync mode");
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

ordered_json config_to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["seed"] = cfg.seed;
  j["rounds"] = cfg.rounds;
  j["clients"] = cfg.clients;
  j["participation"] = cfg.participation;
  j["mode"] = to_string(cfg.mode);
  j["mpc"] = cfg.mpc;
  j["mpc_shares"] = cfg.mpc_shares;
  j["async_quantile"] = cfg.async_quantile;
  j["local_epochs"] = cfg.train.epochs;
  j["batch_size"] = cfg.train.batch;
  j["learning_rate"] = cfg.train.lr;
  if (cfg.train.clip_norm) j["clip_norm"] = *cfg.train.clip_norm;
  if (cfg.target_accuracy) j["target_accuracy"] = *cfg.target_accuracy;
  j["target_fraction"] = cfg.target_fraction;

  const char* act = cfg.activation == Activation::kRelu   ? "relu"
                    : cfg.activation == Activation::kTanh ? "tanh"
                                                          : "identity";
  j["model"] = {{"hidden", cfg.hidden}, {"activation", act}};

  ordered_json data;
  data["source"] = cfg.data.source == DataSource::kIdx ? "idx" : "synthetic";
  data["n"] = cfg.data.synthetic.n;
  data["d"] = cfg.data.synthetic.d;
  data["classes"] = cfg.data.synthetic.classes;
  data["separation"] = cfg.data.synthetic.separation;
  data["noise_std"] = cfg.data.synthetic.noise_std;
  data["partition"] = cfg.data.partition == PartitionKind::kIid ? "iid" : "dirichlet";
  data["alpha"] = cfg.data.alpha;
  if (!cfg.data.images.empty()) data["images"] = cfg.data.images.string();
  if (!cfg.data.labels.empty()) data["labels"] = cfg.data.labels.string();
  data["eval_fraction"] = cfg.data.eval_fraction;
  j["data"] = data;

  const auto& a = cfg.aggregator;
  j["aggregator"] = {{"strategy", to_string(a.strategy)},
                     {"krum_f", a.krum_f},
                     {"multi_krum_m", a.multi_krum_m},
                     {"lambdas", {a.lambdas.norm, a.lambdas.direction, a.lambdas.loss}},
                     {"filter_c", a.filter_c},
                     {"staleness_tau", a.staleness_tau},
                     {"staleness_rho", a.staleness_rho}};

  ordered_json contribution = ordered_json::object();
  for (const auto& [id, gamma] : cfg.privacy.contribution) contribution[std::to_string(id)] = gamma;
  j["privacy"] = {{"enabled", cfg.privacy.enabled},
                  {"epsilon_total", cfg.privacy.epsilon_total},
                  {"delta", cfg.privacy.delta},
                  {"contribution", contribution}};

  j["comms"] = {{"sparsify", cfg.comms.sparsify},   {"k_fraction", cfg.comms.k_fraction},
                {"delta", cfg.comms.delta},         {"quantize", cfg.comms.quantize},
                {"bits", cfg.comms.bits},           {"clip_percentile", cfg.comms.clip_percentile},
                {"entropy", cfg.comms.entropy}};
  j["attack"] = {{"active", cfg.attack.active},
                 {"mode", to_string(cfg.attack.mode)},
                 {"factor", cfg.attack.factor},
                 {"malicious", cfg.attack.malicious},
                 {"malicious_count", cfg.attack.malicious_count}};
  j["network"] = {{"uplink_bandwidth", cfg.network.uplink_bandwidth},
                  {"uplink_latency", cfg.network.uplink_latency},
                  {"heterogeneity", cfg.network.heterogeneity},
                  {"edges", cfg.network.edges},
                  {"edge_bandwidth", cfg.network.edge_bandwidth},
                  {"edge_latency", cfg.network.edge_latency}};
  return j;
}

Scenario build_scenario(const ExperimentConfig& cfg) {
  Dataset all;
  if (cfg.data.source == DataSource::kIdx) {
    all = load_idx(cfg.data.images, cfg.data.labels);
  } else {
    all = gen_synthetic(cfg.data.synthetic, derive_seed(cfg.seed, {kTagData}));
  }
  Split split = train_test_split(all, cfg.data.eval_fraction, derive_seed(cfg.seed, {kTagSplit}));
  PartitionSpec pspec{cfg.data.partition, cfg.data.alpha, cfg.clients};
  std::vector<Dataset> shards = partition(split.train, pspec, derive_seed(cfg.seed, {kTagPartition}));

  Scenario sc;
  for (std::size_t e = 0; e < cfg.network.edges; ++e) {
    sc.topology.edges.push_back(
        {static_cast<std::uint32_t>(e), {cfg.network.edge_bandwidth, cfg.network.edge_latency}});
  }
  std::mt19937_64 link_rng(derive_seed(cfg.seed, {kTagLinks}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < shards.size(); ++i) {
    const double factor = std::pow(cfg.network.heterogeneity, unit(link_rng));
    ClientNode node;
    node.id = static_cast<std::uint32_t>(i);
    node.edge_id = static_cast<std::uint32_t>(i % cfg.network.edges);
    node.data = std::move(shards[i]);
    node.uplink = {cfg.network.uplink_bandwidth * factor, cfg.network.uplink_latency};
    sc.topology.clients.push_back(std::move(node));
  }

  SimulationConfig& sim = sc.sim;
  sim.model.layer_dims.push_back(all.dim);
  for (std::size_t h : cfg.hidden) {
    sim.model.layer_dims.push_back(h);
    sim.model.activations.push_back(cfg.activation);
  }
  sim.model.layer_dims.push_back(all.num_classes);
  sim.train = cfg.train;
  sim.aggregator = cfg.aggregator;
  sim.privacy = cfg.privacy;
  sim.comms = cfg.comms;
  sim.mode = cfg.mode;
  sim.mpc = cfg.mpc;
  sim.mpc_shares = cfg.mpc_shares;
  sim.participation = cfg.participation;
  sim.rounds = cfg.rounds;
  sim.async_quantile = cfg.async_quantile;
  sim.seed = cfg.seed;

  AttackSpec& attack = sim.attack;
  attack.active = cfg.attack.active;
  attack.mode = cfg.attack.mode;
  attack.factor = cfg.attack.factor;
  if (!cfg.attack.malicious.empty()) {
    attack.malicious_ids.insert(cfg.attack.malicious.begin(), cfg.attack.malicious.end());
  } else if (cfg.attack.malicious_count > 0) {
    std::vector<std::uint32_t> ids(cfg.clients);
    std::iota(ids.begin(), ids.end(), 0u);
    std::mt19937_64 rng(derive_seed(cfg.seed, {kTagMalicious}));
    std::shuffle(ids.begin(), ids.end(), rng);
    attack.malicious_ids.insert(ids.begin(),
                                ids.begin() + static_cast<std::ptrdiff_t>(cfg.attack.malicious_count));
  }

  sc.test = std::move(split.test);
  sc.initial = ParamVector::glorot(sim.model, derive_seed(cfg.seed, {kTagInit}));
  return sc;
}

std::optional<std::uint32_t> rounds_to_target(const std::vector<RoundReport>& reports, double target) {
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (!reports[i].skipped && reports[i].accuracy >= target) return static_cast<std::uint32_t>(i + 1);
  }
  return std::nullopt;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  Scenario sc = build_scenario(cfg);
  RunResult result;
  result.attack = sc.sim.attack;
  const std::size_t n_clients = sc.topology.clients.size();
  Simulator sim(std::move(sc.sim), std::move(sc.topology), sc.test, std::move(sc.initial));
  result.reports = sim.run(cfg.rounds);

  RunSummary& s = result.summary;
  s.rounds = cfg.rounds;
  const EvalResult ev = evaluate(sim.global_model(), sim.config().model, sc.test);
  s.final_accuracy = ev.accuracy;
  s.final_loss = ev.mean_loss;
  s.best_accuracy = ev.accuracy;
  double participation = 0.0;
  for (const RoundReport& r : result.reports) {
    s.best_accuracy = std::max(s.best_accuracy, r.accuracy);
    participation += static_cast<double>(r.participants.size()) / static_cast<double>(n_clients);
  }
  s.mean_participation = result.reports.empty() ? 0.0 : participation / static_cast<double>(result.reports.size());
  s.total_bytes_up = sim.traffic().total(Direction::kUp);
  s.total_bytes_edge_cloud = sim.traffic().total(Direction::kEdgeToCloud);
  s.total_bytes_down = sim.traffic().total(Direction::kDown);
  s.total_seconds = result.reports.empty() ? 0.0 : measure_latency(result.reports);
  s.epsilon_spent = sim.privacy_ledger().spent();
  s.target_accuracy = cfg.target_accuracy.value_or(cfg.target_fraction * s.best_accuracy);
  s.rounds_to_target = rounds_to_target(result.reports, s.target_accuracy);
  if (result.attack.active) s.malicious.assign(result.attack.malicious_ids.begin(), result.attack.malicious_ids.end());
  return result;
}

ordered_json round_record(const RoundReport& r) {
  ordered_json j;
  j["type"] = "round";
  j["round"] = r.round;
  j["skipped"] = r.skipped;
  j["fallback"] = r.fallback;
  j["accuracy"] = r.accuracy;
  j["loss"] = r.loss;
  j["bytes_up"] = r.bytes_up;
  j["bytes_edge_cloud"] = r.bytes_edge_cloud;
  j["bytes_down"] = r.bytes_down;
  j["seconds"] = r.seconds;
  j["participants"] = r.participants;
  j["candidates"] = r.candidates;
  j["filtered"] = r.filtered;
  j["selected"] = r.selected;
  j["budget_skipped"] = r.budget_skipped;
  j["epsilon_spent"] = r.epsilon_spent;
  ordered_json hist = ordered_json::object();
  for (const auto& [staleness, count] : r.staleness_histogram) hist[std::to_string(staleness)] = count;
  j["staleness_histogram"] = hist;
  return j;
}

ordered_json summary_record(const RunSummary& s) {
  ordered_json j;
  j["type"] = "summary";
  j["rounds"] = s.rounds;
  j["final_accuracy"] = s.final_accuracy;
  j["final_loss"] = s.final_loss;
  j["best_accuracy"] = s.best_accuracy;
  j["total_bytes_up"] = s.total_bytes_up;
  j["total_mb_up"] = static_cast<double>(s.total_bytes_up) / 1e6;
  j["total_bytes_edge_cloud"] = s.total_bytes_edge_cloud;
  j["total_bytes_down"] = s.total_bytes_down;
  j["total_seconds"] = s.total_seconds;
  j["mean_participation"] = s.mean_participation;
  j["epsilon_spent"] = s.epsilon_spent;
  j["target_accuracy"] = s.target_accuracy;
  j["rounds_to_target"] = s.rounds_to_target ? ordered_json(*s.rounds_to_target) : ordered_json(nullptr);
  j["malicious"] = s.malicious;
  return j;
}

void write_jsonl(std::ostream& out, const RunResult& result) {
  for (const RoundReport& r : result.reports) out << round_record(r).dump() << '\n';
  out << summary_record(result.summary).dump() << '\n';
}

std::vector<std::string> validate_metrics(std::istream& in) {
  static const std::vector<std::pair<std::string, json::value_t>> kRoundKeys = {
      {"round", json::value_t::number_unsigned},  {"skipped", json::value_t::boolean},
      {"fallback", json::value_t::boolean},       {"accuracy", json::value_t::number_float},
      {"loss", json::value_t::number_float},      {"bytes_up", json::value_t::number_unsigned},
      {"bytes_edge_cloud", json::value_t::number_unsigned},
      {"bytes_down", json::value_t::number_unsigned},
      {"seconds", json::value_t::number_float},   {"participants", json::value_t::array},
      {"candidates", json::value_t::array},       {"filtered", json::value_t::array},
      {"selected", json::value_t::array},         {"budget_skipped", json::value_t::array},
      {"epsilon_spent", json::value_t::number_float},
      {"staleness_histogram", json::value_t::object}};
  static const std::vector<std::string> kSummaryKeys = {
      "rounds", "final_accuracy", "final_loss", "total_bytes_up", "total_mb_up", "total_seconds",
      "target_accuracy", "rounds_to_target"};

  std::vector<std::string> problems;
  std::string line;
  std::size_t lineno = 0;
  std::uint64_t expect_round = 0;
  bool summary_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (summary_seen) {
      problems.push_back(where + "record after summary");
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      problems.push_back(where + "not valid JSON");
      continue;
    }
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
      problems.push_back(where + "missing type");
      continue;
    }
    const std::string type = j["type"];
    if (type == "round") {
      for (const auto& [key, kind] : kRoundKeys) {
        if (!j.contains(key)) {
          problems.push_back(where + "missing " + key);
          continue;
        }
        const auto actual = j[key].type();
        const bool numeric_ok = kind == json::value_t::number_float && j[key].is_number();
        if (actual != kind && !numeric_ok) problems.push_back(where + "wrong type for " + key);
      }
      if (j.contains("round") && j["round"].is_number_unsigned()) {
        if (j["round"].get<std::uint64_t>() != expect_round) problems.push_back(where + "rounds out of order");
        expect_round = j["round"].get<std::uint64_t>() + 1;
      }
    } else if (type == "summary") {
      for (const auto& key : kSummaryKeys) {
        if (!j.contains(key)) problems.push_back(where + "missing " + key);
      }
      if (j.contains("rounds") && j["rounds"].is_number_unsigned() &&
          j["rounds"].get<std::uint64_t>() != expect_round) {
        problems.push_back(where + "summary round count does not match records");
      }
      summary_seen = true;
    } else {
      problems.push_back(where + "unknown record type '" + type + "'");
    }
  }
  if (!summary_seen) problems.emplace_back("missing summary record");
  return problems;
}

double median(std::vector<double> v) {
  if (v.empty()) throw ParameterError("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Comparison tables
// ---------------------------------------------------------------------------

std::vector<AggregatorRow> compare_aggregators(const ExperimentConfig& cfg, std::size_t seeds) {
  if (seeds == 0) throw ParameterError("need at least one seed");
  const std::vector<Strategy> strategies = {Strategy::kFedAvg, Strategy::kRobust, Strategy::kWeighted};
  std::vector<std::vector<double>> acc(strategies.size()), r2t(strategies.size()),
      part(strategies.size()), mb(strategies.size());
  for (std::size_t s = 0; s < seeds; ++s) {
    std::vector<RunResult> runs;
    double best = 0.0;
    for (Strategy strategy : strategies) {
      ExperimentConfig c = cfg;
      c.seed = cfg.seed + s;
      c.aggregator.strategy = strategy;
      runs.push_back(run_experiment(c));
      best = std::max(best, runs.back().summary.final_accuracy);
    }
    const double target = cfg.target_accuracy.value_or(cfg.target_fraction * best);
    for (std::size_t k = 0; k < strategies.size(); ++k) {
      const RunSummary& sum = runs[k].summary;
      acc[k].push_back(sum.final_accuracy);
      const auto reached = rounds_to_target(runs[k].reports, target);
      r2t[k].push_back(reached ? static_cast<double>(*reached) : static_cast<double>(cfg.rounds + 1));
      part[k].push_back(sum.mean_participation);
      mb[k].push_back(static_cast<double>(sum.total_bytes_up) / 1e6);
    }
  }
  std::vector<AggregatorRow> rows;
  for (std::size_t k = 0; k < strategies.size(); ++k) {
    rows.push_back({to_string(strategies[k]), median(acc[k]), median(r2t[k]), median(part[k]), median(mb[k])});
  }
  std::sort(rows.begin(), rows.end(),
            [](const AggregatorRow& a, const AggregatorRow& b) { return a.strategy < b.strategy; });
  return rows;
}

std::vector<CommsRow> compare_comms(const ExperimentConfig& cfg, std::size_t seeds) {
  if (seeds == 0) throw ParameterError("need at least one seed");
  struct Variant {
    const char* name;
    bool sparsify, delta, quantize;
  };
  const std::vector<Variant> variants = {{"none", false, false, false},
                                         {"sparsify", true, false, false},
                                         {"sparsify+delta", true, true, false},
                                         {"all", true, true, true}};
  std::vector<std::vector<double>> mb(variants.size()), delay(variants.size()),
      acc(variants.size()), secs(variants.size());
  for (std::size_t s = 0; s < seeds; ++s) {
    double baseline_seconds = 0.0;
    for (std::size_t k = 0; k < variants.size(); ++k) {
      ExperimentConfig c = cfg;
      c.seed = cfg.seed + s;
      c.mpc = false;
      c.comms.sparsify = variants[k].sparsify;
      c.comms.delta = variants[k].delta;
      c.comms.quantize = variants[k].quantize;
      c.comms.entropy = variants[k].quantize;
      const RunResult run = run_experiment(c);
      if (k == 0) baseline_seconds = run.summary.total_seconds;
      mb[k].push_back(static_cast<double>(run.summary.total_bytes_up) / 1e6);
      acc[k].push_back(run.summary.final_accuracy);
      secs[k].push_back(run.summary.total_seconds);
      delay[k].push_back(baseline_seconds > 0.0
                             ? 100.0 * (1.0 - run.summary.total_seconds / baseline_seconds)
                             : 0.0);
    }
  }
  std::vector<CommsRow> rows;
  for (std::size_t k = 0; k < variants.size(); ++k) {
    rows.push_back({variants[k].name, median(mb[k]), median(delay[k]), median(acc[k]), median(secs[k])});
  }
  return rows;
}

std::vector<AttackRow> attack_eval(const ExperimentConfig& cfg, std::size_t seeds) {
  if (seeds == 0) throw ParameterError("need at least one seed");
  ExperimentConfig base = cfg;
  if (base.attack.malicious.empty() && base.attack.malicious_count == 0) {
    base.attack.malicious_count = std::max<std::size_t>(1, base.clients / 5);
  }
  const std::vector<AttackMode> modes = {AttackMode::kSignFlip, AttackMode::kNormBoost,
                                         AttackMode::kLabelFlip};
  // rows: baseline, then (mode, defended), (mode, undefended) pairs
  const std::size_t n_rows = 1 + 2 * modes.size();
  std::vector<std::vector<double>> acc(n_rows), drop(n_rows), rate(n_rows);
  for (std::size_t s = 0; s < seeds; ++s) {
    ExperimentConfig clean = base;
    clean.seed = cfg.seed + s;
    clean.attack.active = false;
    clean.aggregator.strategy = Strategy::kRobust;
    const double baseline = run_experiment(clean).summary.final_accuracy;
    acc[0].push_back(baseline);
    drop[0].push_back(0.0);
    for (std::size_t m = 0; m < modes.size(); ++m) {
      for (int defended = 1; defended >= 0; --defended) {
        ExperimentConfig c = clean;
        c.attack.active = true;
        c.attack.mode = modes[m];
        c.aggregator.strategy = defended ? Strategy::kRobust : Strategy::kFedAvg;
        const RunResult run = run_experiment(c);
        const std::size_t row = 1 + 2 * m + (defended ? 0 : 1);
        acc[row].push_back(run.summary.final_accuracy);
        drop[row].push_back(100.0 * (baseline - run.summary.final_accuracy));
        rate[row].push_back(defense_rate(run.reports, run.attack));
      }
    }
  }
  std::vector<AttackRow> rows;
  rows.push_back({"none", true, std::nullopt, median(acc[0]), 0.0});
  for (std::size_t m = 0; m < modes.size(); ++m) {
    for (int defended = 1; defended >= 0; --defended) {
      const std::size_t row = 1 + 2 * m + (defended ? 0 : 1);
      rows.push_back({to_string(modes[m]), defended == 1, median(rate[row]), median(acc[row]),
                      median(drop[row])});
    }
  }
  return rows;
}

BudgetPlan budget_plan(double epsilon_total, std::uint32_t rounds,
                       const std::vector<BudgetClient>& clients, std::optional<double> denom) {
  BudgetPlan plan;
  plan.epsilon_round = per_round_budget(epsilon_total, rounds);
  double true_denom = 0.0;
  for (const BudgetClient& c : clients) true_denom += c.samples * c.contribution;
  plan.denom = denom.value_or(true_denom);
  for (const BudgetClient& c : clients) {
    plan.per_client.push_back(per_client_budget(plan.epsilon_round, c.samples, c.contribution, plan.denom));
    plan.per_client_sum += plan.per_client.back();
  }
  plan.total_over_rounds = plan.epsilon_round * static_cast<double>(rounds);
  return plan;
}

void print_aggregator_table(std::ostream& out, const std::vector<AggregatorRow>& rows) {
  fmt::print(out, "{:<10} {:>16} {:>17} {:>14} {:>12}\n", "strategy", "final_acc_pct",
             "rounds_to_target", "participation", "upload_mb");
  for (const auto& r : rows) {
    fmt::print(out, "{:<10} {:>16.2f} {:>17.1f} {:>13.0f}% {:>12.4f}\n", r.strategy,
               100.0 * r.final_accuracy, r.rounds_to_target, 100.0 * r.participation, r.mb_up);
  }
}

void print_comms_table(std::ostream& out, const std::vector<CommsRow>& rows) {
  fmt::print(out, "{:<16} {:>12} {:>18} {:>14}\n", "strategy", "upload_mb", "delay_reduction_pct",
             "final_acc_pct");
  for (const auto& r : rows) {
    fmt::print(out, "{:<16} {:>12.4f} {:>18.1f} {:>14.2f}\n", r.name, r.mb_up, r.delay_reduction_pct,
               100.0 * r.final_accuracy);
  }
}

void print_attack_table(std::ostream& out, const std::vector<AttackRow>& rows) {
  fmt::print(out, "{:<12} {:>9} {:>18} {:>14} {:>14}\n", "attack", "defense", "defense_rate_pct",
             "final_acc_pct", "acc_drop_pts");
  for (const auto& r : rows) {
    const std::string rate = r.defense_rate ? fmt::format("{:.1f}", 100.0 * *r.defense_rate) : "-";
    fmt::print(out, "{:<12} {:>9} {:>18} {:>14.2f} {:>14.2f}\n", r.attack, r.defended ? "robust" : "fedavg",
               rate, 100.0 * r.final_accuracy, r.accuracy_drop_pts);
  }
}

void print_budget_plan(std::ostream& out, const BudgetPlan& plan, std::uint32_t rounds,
                       const std::vector<BudgetClient>& clients) {
  fmt::print(out, "rounds: {}  epsilon_per_round: {:.12g}  denom: {:.12g}\n", rounds, plan.epsilon_round,
             plan.denom);
  fmt::print(out, "{:<8} {:>12} {:>12} {:>16}\n", "client", "samples", "gamma", "epsilon_client");
  for (std::size_t i = 0; i < clients.size(); ++i) {
    fmt::print(out, "{:<8} {:>12.6g} {:>12.6g} {:>16.12g}\n", i, clients[i].samples, clients[i].contribution,
               plan.per_client[i]);
  }
  fmt::print(out, "sum_per_round: {:.12g}  sum_over_rounds: {:.12g}\n", plan.per_client_sum,
             plan.total_over_rounds);
}

}  // namespace fedpriv
