#include <gtest/gtest.h>

#include <sstream>

#include "fedpriv/errors.hpp"
#include "fedpriv/experiments.hpp"

using namespace fedpriv;
using nlohmann::json;

namespace {

json tiny_doc() {
  return json::parse(R"({
    "seed": 2, "rounds": 2, "clients": 4, "participation": 1.0, "local_epochs": 1,
    "model": {"hidden": [4]},
    "data": {"n": 200, "d": 4, "classes": 2},
    "network": {"edges": 1}
  })");
}

std::string key_of(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<accepted>";
}

std::string jsonl(const RunResult& r) {
  std::ostringstream out;
  write_jsonl(out, r);
  return out.str();
}

}  // namespace

TEST(Config, DefaultsFillMissingKeys) {
  const ExperimentConfig cfg = parse_config(json::object());
  EXPECT_EQ(cfg.rounds, 20u);
  EXPECT_EQ(cfg.clients, 10u);
  EXPECT_FALSE(cfg.privacy.enabled);
  EXPECT_EQ(cfg.aggregator.strategy, Strategy::kRobust);
}

TEST(Config, ErrorsNameTheKey) {
  json doc = tiny_doc();
  doc["aggregator"] = {{"krum_fx", 1}};
  EXPECT_EQ(key_of(doc), "aggregator.krum_fx");

  doc = tiny_doc();
  doc["rounds"] = "many";
  EXPECT_EQ(key_of(doc), "rounds");

  doc = tiny_doc();
  doc["participation"] = 1.5;
  EXPECT_EQ(key_of(doc), "participation");

  doc = tiny_doc();
  doc["aggregator"] = {{"strategy", "median"}};
  EXPECT_EQ(key_of(doc), "aggregator.strategy");

  doc = tiny_doc();
  doc["privacy"] = {{"enabled", true}};
  EXPECT_EQ(key_of(doc), "clip_norm");

  doc = tiny_doc();
  doc["mpc"] = true;
  doc["comms"] = {{"sparsify", true}};
  EXPECT_EQ(key_of(doc), "mpc");

  EXPECT_EQ(key_of(tiny_doc()), "<accepted>");
  EXPECT_THROW(parse_config(json::array()), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  json doc = tiny_doc();
  doc["comms"] = {{"sparsify", true}, {"k_fraction", 0.25}};
  doc["privacy"] = {{"enabled", false}, {"contribution", {{"3", 0.5}}}};
  const ExperimentConfig cfg = parse_config(doc);
  const auto again = config_to_json(cfg);
  EXPECT_EQ(config_to_json(parse_config(again)).dump(), again.dump());
  EXPECT_EQ(parse_config(again).privacy.contribution.at(3), 0.5);
}

TEST(Config, LoadReportsUnreadableFiles) {
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Run, ZeroRoundsEmitsOnlyTheSummary) {
  json doc = tiny_doc();
  doc["rounds"] = 0;
  const RunResult r = run_experiment(parse_config(doc));
  EXPECT_TRUE(r.reports.empty());
  const std::string text = jsonl(r);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  std::istringstream in(text);
  EXPECT_TRUE(validate_metrics(in).empty());
}

TEST(Run, OutputIsValidAndReproducible) {
  const ExperimentConfig cfg = parse_config(tiny_doc());
  const std::string a = jsonl(run_experiment(cfg));
  EXPECT_EQ(a, jsonl(run_experiment(cfg)));
  std::istringstream in(a);
  EXPECT_TRUE(validate_metrics(in).empty());
}

TEST(Run, SummaryAgreesWithReports) {
  const RunResult r = run_experiment(parse_config(tiny_doc()));
  std::uint64_t up = 0;
  double best = 0.0;
  for (const auto& rep : r.reports) {
    up += rep.bytes_up;
    best = std::max(best, rep.accuracy);
  }
  EXPECT_EQ(r.summary.total_bytes_up, up);
  EXPECT_EQ(r.summary.best_accuracy, best);
  EXPECT_EQ(r.summary.final_accuracy, r.reports.back().accuracy);
  EXPECT_EQ(r.summary.rounds, 2u);
}

TEST(Metrics, DetectsDamage) {
  const std::string good = jsonl(run_experiment(parse_config(tiny_doc())));
  const auto problems = [](const std::string& text) {
    std::istringstream in(text);
    return validate_metrics(in);
  };
  EXPECT_TRUE(problems(good).empty());

  const auto first_nl = good.find('\n');
  EXPECT_FALSE(problems(good.substr(first_nl + 1)).empty());   // round 0 missing
  EXPECT_FALSE(problems(good.substr(0, good.rfind('{'))).empty());  // no summary
  EXPECT_FALSE(problems(good + good.substr(0, first_nl + 1)).empty());
  EXPECT_FALSE(problems("{not json}\n").empty());

  std::string retyped = good;
  retyped.replace(retyped.find("\"skipped\":false"), 15, "\"skipped\":0");
  EXPECT_FALSE(problems(retyped).empty());
}

TEST(RoundsToTarget, OneBasedFirstHit) {
  std::vector<RoundReport> reps(4);
  reps[0].accuracy = 0.5;
  reps[1].accuracy = 0.8;
  reps[2].accuracy = 0.7;
  reps[3].accuracy = 0.9;
  EXPECT_EQ(rounds_to_target(reps, 0.75), 2u);
  EXPECT_EQ(rounds_to_target(reps, 0.9), 4u);
  EXPECT_FALSE(rounds_to_target(reps, 0.95).has_value());
}

TEST(Median, OddEvenAndEmpty) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_THROW(median({}), ParameterError);
}

TEST(BudgetPlan, ProportionalSplit) {
  // n*gamma = 600, 2000, 2400; denominator 5000.
  const BudgetPlan plan = budget_plan(2.0, 20, {{600, 1.0}, {1000, 2.0}, {2400, 1.0}}, std::nullopt);
  EXPECT_DOUBLE_EQ(plan.epsilon_round, 0.1);
  EXPECT_DOUBLE_EQ(plan.denom, 5000.0);
  EXPECT_DOUBLE_EQ(plan.per_client[0], 0.012);
  EXPECT_DOUBLE_EQ(plan.per_client[1], 0.04);
  EXPECT_DOUBLE_EQ(plan.per_client[2], 0.048);
  EXPECT_DOUBLE_EQ(plan.per_client_sum, 0.1);
  EXPECT_DOUBLE_EQ(plan.total_over_rounds, 2.0);

  const BudgetPlan loose = budget_plan(2.0, 20, {{600, 1.0}}, 10000.0);
  EXPECT_DOUBLE_EQ(loose.per_client[0], 0.006);
}

TEST(Comparisons, RowShapes) {
  json doc = tiny_doc();
  doc["clients"] = 5;
  const ExperimentConfig cfg = parse_config(doc);

  const auto aggs = compare_aggregators(cfg, 2);
  ASSERT_EQ(aggs.size(), 3u);
  EXPECT_EQ(aggs[0].strategy, "fedavg");
  EXPECT_EQ(aggs[1].strategy, "robust");
  EXPECT_EQ(aggs[2].strategy, "weighted");
  for (const auto& r : aggs) EXPECT_LE(r.rounds_to_target, cfg.rounds + 1.0);

  const auto comms = compare_comms(cfg, 1);
  ASSERT_EQ(comms.size(), 4u);
  EXPECT_EQ(comms[0].name, "none");
  EXPECT_EQ(comms[0].delay_reduction_pct, 0.0);
  for (std::size_t i = 1; i < comms.size(); ++i) EXPECT_LT(comms[i].mb_up, comms[0].mb_up);

  const auto attacks = attack_eval(cfg, 1);
  ASSERT_EQ(attacks.size(), 7u);
  EXPECT_EQ(attacks[0].attack, "none");
  EXPECT_FALSE(attacks[0].defense_rate.has_value());
  for (std::size_t i = 1; i < attacks.size(); ++i) EXPECT_TRUE(attacks[i].defense_rate.has_value());
}
