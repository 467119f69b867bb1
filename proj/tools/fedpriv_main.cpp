#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "fedpriv/errors.hpp"
#include "fedpriv/experiments.hpp"

namespace {

using namespace fedpriv;

void configure_logging() {
  spdlog::set_level(spdlog::level::warn);
  const char* env = std::getenv("FEDPRIV_LOG");
  if (env == nullptr) return;
  const std::string level = env;
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::warn("ignoring FEDPRIV_LOG={} (expected error, info or debug)", level);
  }
}

// Writes to `path`, or to stdout when path is "-".
template <typename Fn>
void with_output(const std::string& path, Fn&& fn) {
  if (path == "-") {
    fn(std::cout);
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  fn(out);
  if (!out) throw std::runtime_error("write failed for " + path);
}

ExperimentConfig config_with_overrides(const std::string& path, std::optional<std::uint64_t> seed) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
  if (seed) cfg.seed = *seed;
  return cfg;
}

BudgetClient parse_client(const std::string& text) {
  BudgetClient c;
  const auto colon = text.find(':');
  try {
    std::size_t used = 0;
    c.samples = std::stod(text.substr(0, colon), &used);
    if (used != colon && colon != std::string::npos) throw std::invalid_argument(text);
    if (colon != std::string::npos) c.contribution = std::stod(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("client", "cannot parse client '" + text + "' (expected SAMPLES[:GAMMA])");
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Federated learning simulator with privacy, secure aggregation and compression"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  std::optional<std::uint64_t> seed;
  std::size_t seeds = 5;

  auto* run = app.add_subcommand("run", "Run one experiment and write per-round JSONL metrics");
  run->add_option("--config", config_path, "Experiment config (JSON)");
  run->add_option("--out", out_path, "JSONL output path ('-' for stdout)")->required();
  run->add_option("--seed", seed, "Override the config seed");

  auto add_compare = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "Experiment config (JSON)");
    sub->add_option("--out", out_path, "Also write the table rows as JSONL");
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--seeds", seeds, "Number of seeds for the median")->check(CLI::PositiveNumber);
    return sub;
  };
  auto* cmp_agg = add_compare("compare-aggregators", "Compare fedavg, weighted and robust aggregation");
  auto* cmp_comms = add_compare("compare-comms", "Compare upload compression settings");
  auto* attack = add_compare("attack-eval", "Evaluate poisoning attacks with and without defense");

  double eps_total = 2.0;
  std::uint32_t rounds = 20;
  std::vector<std::string> client_specs;
  std::optional<double> denom;
  auto* budget = app.add_subcommand("budget-plan", "Print per-round and per-client privacy budgets");
  budget->add_option("--epsilon-total", eps_total, "Total privacy budget")->required();
  budget->add_option("--rounds", rounds, "Number of rounds T")->required();
  budget->add_option("--client", client_specs, "SAMPLES[:GAMMA], repeatable")->required();
  budget->add_option("--denom", denom, "Override the normalising denominator");

  std::string metrics_path;
  auto* check = app.add_subcommand("check-metrics", "Validate a JSONL metrics file");
  check->add_option("file", metrics_path, "Metrics file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const ExperimentConfig cfg = config_with_overrides(config_path, seed);
      spdlog::info("run: seed={} rounds={} clients={}", cfg.seed, cfg.rounds, cfg.clients);
      const RunResult result = run_experiment(cfg);
      for (const RoundReport& r : result.reports) {
        spdlog::debug("round {} acc={:.4f} up={}B t={:.3f}s", r.round, r.accuracy, r.bytes_up, r.seconds);
      }
      with_output(out_path, [&](std::ostream& os) { write_jsonl(os, result); });
      if (out_path != "-") {
        const RunSummary& s = result.summary;
        std::cout << "final_accuracy " << s.final_accuracy << "\n"
                  << "total_mb_up " << static_cast<double>(s.total_bytes_up) / 1e6 << "\n"
                  << "total_seconds " << s.total_seconds << "\n"
                  << "rounds_to_target "
                  << (s.rounds_to_target ? std::to_string(*s.rounds_to_target) : std::string("-")) << "\n";
      }
    } else if (cmp_agg->parsed()) {
      const auto rows = compare_aggregators(config_with_overrides(config_path, seed), seeds);
      print_aggregator_table(std::cout, rows);
      if (!out_path.empty()) {
        with_output(out_path, [&](std::ostream& os) {
          for (const auto& r : rows) {
            nlohmann::ordered_json j{{"strategy", r.strategy},
                                     {"final_accuracy", r.final_accuracy},
                                     {"rounds_to_target", r.rounds_to_target},
                                     {"participation", r.participation},
                                     {"mb_up", r.mb_up}};
            os << j.dump() << '\n';
          }
        });
      }
    } else if (cmp_comms->parsed()) {
      const auto rows = compare_comms(config_with_overrides(config_path, seed), seeds);
      print_comms_table(std::cout, rows);
      if (!out_path.empty()) {
        with_output(out_path, [&](std::ostream& os) {
          for (const auto& r : rows) {
            nlohmann::ordered_json j{{"name", r.name},
                                     {"mb_up", r.mb_up},
                                     {"delay_reduction_pct", r.delay_reduction_pct},
                                     {"final_accuracy", r.final_accuracy},
                                     {"seconds", r.seconds}};
            os << j.dump() << '\n';
          }
        });
      }
    } else if (attack->parsed()) {
      const auto rows = attack_eval(config_with_overrides(config_path, seed), seeds);
      print_attack_table(std::cout, rows);
      if (!out_path.empty()) {
        with_output(out_path, [&](std::ostream& os) {
          for (const auto& r : rows) {
            nlohmann::ordered_json j{{"attack", r.attack},
                                     {"defended", r.defended},
                                     {"defense_rate", r.defense_rate ? nlohmann::ordered_json(*r.defense_rate)
                                                                     : nlohmann::ordered_json(nullptr)},
                                     {"final_accuracy", r.final_accuracy},
                                     {"accuracy_drop_pts", r.accuracy_drop_pts}};
            os << j.dump() << '\n';
          }
        });
      }
    } else if (budget->parsed()) {
      std::vector<BudgetClient> clients;
      for (const auto& spec : client_specs) clients.push_back(parse_client(spec));
      const BudgetPlan plan = budget_plan(eps_total, rounds, clients, denom);
      print_budget_plan(std::cout, plan, rounds, clients);
    } else if (check->parsed()) {
      std::ifstream in(metrics_path);
      const auto problems = validate_metrics(in);
      for (const auto& p : problems) std::cerr << metrics_path << ": " << p << "\n";
      return problems.empty() ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    spdlog::error("config error at '{}': {}", e.key(), e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
