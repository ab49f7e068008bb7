#include <filesystem>
#include <fstream>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "fgs/experiment.hpp"

using namespace fgs;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small(Approach a, TrainMode m, std::size_t rounds = 3) {
  ExperimentConfig c;
  c.model = ModelSpec{{8, 8, 16, 4}};
  c.approach = a;
  c.mode = m;
  c.rounds = rounds;
  c.lr = m == TrainMode::full ? 0.2 : 1.0;
  if (a == Approach::split) c.split_layer = 1;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("fgs_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("world construction", "[experiment]") {
  const ExperimentConfig c;
  const World w = build_world(c);
  CHECK(w.clients.size() == 5);
  for (const auto& cl : w.clients) {
    CHECK(cl.shard.size() == 4);
    CHECK(cl.d2d_links.size() == 4);
    CHECK(cl.link_up.bandwidth == c.uplink_bps);
  }
  CHECK(w.train.size() == 20);
  CHECK(w.holdout.size() == 20);
  // The teacher differs from the base only on the shifted layers.
  CHECK_FALSE(w.teacher.layers[0].weight == w.base.layers[0].weight);
  for (std::size_t i = 1; i < w.base.layers.size(); ++i) CHECK(w.teacher.layers[i].weight == w.base.layers[i].weight);
  // The run seed does not change the world.
  ExperimentConfig other = c;
  other.seed = 9;
  CHECK(build_world(other).train == w.train);
}

TEST_CASE("metrics rows track the ledger", "[experiment]") {
  for (auto a : {Approach::parallel, Approach::sequential, Approach::split}) {
    for (auto m : {TrainMode::full, TrainMode::lora}) {
      auto c = small(a, m, 4);
      c.compute_s_per_param_sample = 0.0;
      const auto r = run_experiment(c);
      REQUIRE(r.metrics.size() == 4);
      for (const auto& row : r.metrics) {
        CHECK(row.cum_bytes == r.outcome.ledger.totals(row.round).bytes);
        // A relay is one transfer at a time, so its wall clock is the ledger's serial sum.
        if (a == Approach::sequential)
          CHECK_THAT(row.cum_seconds, Catch::Matchers::WithinRel(r.outcome.ledger.totals(row.round).seconds, 1e-12));
        else
          CHECK(row.cum_seconds <= r.outcome.ledger.totals(row.round).seconds);
      }
      for (std::size_t i = 1; i < r.metrics.size(); ++i) {
        CHECK(r.metrics[i].cum_bytes >= r.metrics[i - 1].cum_bytes);
        CHECK(r.metrics[i].cum_seconds >= r.metrics[i - 1].cum_seconds);
      }
    }
  }
}

TEST_CASE("run writes every output", "[experiment]") {
  const auto dir = scratch("outputs");
  const auto r = run_experiment(small(Approach::sequential, TrainMode::lora));
  write_outputs(r, dir);
  const auto metrics = slurp(dir / "metrics.csv");
  CHECK(metrics.starts_with("round,global_loss,cum_bytes,cum_seconds\n"));
  CHECK(line_count(metrics) == 4);
  CHECK(slurp(dir / "ledger.csv").starts_with("round,src,dst,kind,bytes,seconds\n"));
  CHECK(line_count(slurp(dir / "ledger.csv")) == 1 + 3 * 6);
  const auto eval = slurp(dir / "eval.csv");
  CHECK(eval.starts_with("round,train_loss,holdout_loss\n0,"));
  CHECK(line_count(eval) == 5);

  const auto model = params_from_entries(decode_blob(read_file((dir / "model.fgs").string())));
  CHECK(model.layers.size() == 3);
  const auto adapter = adapter_from_entries(decode_blob(read_file((dir / "adapter.fgs").string())));
  CHECK(adapter.param_count() == r.outcome.adapter->param_count());
  fs::remove_all(dir);

  const auto full_dir = scratch("outputs_full");
  write_outputs(run_experiment(small(Approach::parallel, TrainMode::full)), full_dir);
  CHECK(fs::exists(full_dir / "model.fgs"));
  CHECK_FALSE(fs::exists(full_dir / "adapter.fgs"));
  fs::remove_all(full_dir);
}

TEST_CASE("identical runs produce identical bytes", "[experiment]") {
  for (auto a : {Approach::parallel, Approach::sequential, Approach::split}) {
    const auto c = small(a, TrainMode::lora, 5);
    const auto x = run_experiment(c), y = run_experiment(c);
    CHECK(metrics_csv(x.metrics) == metrics_csv(y.metrics));
    CHECK(ledger_csv(x.outcome.ledger) == ledger_csv(y.outcome.ledger));
    CHECK(eval_csv(x.outcome) == eval_csv(y.outcome));
  }
}

TEST_CASE("loss targets", "[experiment][compare]") {
  const auto p = LossTarget::parse("60%");
  CHECK(p.progress);
  CHECK(p.value == 0.6);
  CHECK(p.label() == "60%");
  const auto a = LossTarget::parse("0.02");
  CHECK_FALSE(a.progress);
  CHECK(a.value == 0.02);
  CHECK_THROWS_AS(LossTarget::parse("abc"), ConfigError);
  CHECK_THROWS_AS(LossTarget::parse("150%"), ConfigError);
  CHECK_THROWS_AS(LossTarget::parse(""), ConfigError);
}

TEST_CASE("comparing a run with itself gives unit ratios", "[experiment][compare]") {
  const auto r = run_experiment(small(Approach::parallel, TrainMode::full, 6));
  const auto rep = compare(r, r, {LossTarget::parse("20%"), LossTarget::parse("60%"), LossTarget::parse("100%")});
  for (const auto& row : rep.rows) {
    REQUIRE(row.a.round);
    CHECK(row.bytes_ratio == 1.0);
    CHECK(row.seconds_ratio == 1.0);
  }
}

TEST_CASE("an unreachable target is reported as such", "[experiment][compare]") {
  const auto a = run_experiment(small(Approach::parallel, TrainMode::full));
  const auto b = run_experiment(small(Approach::sequential, TrainMode::lora));
  const auto rep = compare(a, b, {LossTarget::parse("0.0")});
  CHECK_FALSE(rep.rows[0].a.round);
  CHECK_FALSE(rep.rows[0].b.round);
  CHECK_FALSE(rep.rows[0].bytes_ratio);
  const auto j = report_json(a, "a.ini", b, "b.ini", rep);
  CHECK(j["targets"][0]["a"]["reached"] == false);
  CHECK(j["targets"][0]["bytes_ratio"].is_null());
  CHECK(j["a"]["approach"] == "parallel");
  CHECK(j["b"]["mode"] == "lora");
  CHECK(j["b"]["transferred_params"] == b.counts.adapter_params);
}

TEST_CASE("progress targets sit between the start and the common floor", "[experiment][compare]") {
  const auto a = run_experiment(small(Approach::parallel, TrainMode::full, 10));
  const auto b = run_experiment(small(Approach::sequential, TrainMode::lora, 10));
  const auto rep = compare(a, b, {LossTarget::parse("0%"), LossTarget::parse("50%"), LossTarget::parse("100%")});
  const double start = std::max(a.outcome.initial_loss, b.outcome.initial_loss);
  const double floor = std::max(best_loss(a), best_loss(b));
  CHECK(rep.rows[0].loss == start);
  CHECK(rep.rows[1].loss == start - 0.5 * (start - floor));
  CHECK(rep.rows[2].loss == floor);
  // Both runs reach the common floor by construction.
  CHECK(rep.rows[2].a.round);
  CHECK(rep.rows[2].b.round);
  CHECK(rep.rows[0].a.round == std::optional<std::size_t>{0});
}
