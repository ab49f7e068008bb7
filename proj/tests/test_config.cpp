#include "catch_amalgamated.hpp"
#include "fgs/config.hpp"

using namespace fgs;
using Catch::Matchers::ContainsSubstring;

TEST_CASE("empty config is the five-client case study", "[config]") {
  const auto c = parse_config("");
  CHECK(c == ExperimentConfig{});
  CHECK(c.clients == 5);
  CHECK(c.samples_per_client == 4);
  CHECK(c.rank == 8);
  CHECK(c.rounds == 100);
  CHECK(c.approach == Approach::sequential);
  CHECK(c.mode == TrainMode::lora);
  CHECK(total_samples(c) == 20);
  CHECK(parse_config("# only a comment\n\n  ; another\n") == c);
}

TEST_CASE("config values are parsed", "[config]") {
  const auto c = parse_config(R"(
[model]
layer_dims = 4, 6, 2   # trailing comment
[finetune]
mode = full
rank = 2
[protocol]
approach = split
split_layer = 1
rounds = 7
order = cycle
[clients]
count = 3
partition = iid_sizes
sizes = 2, 3, 4
[data]
seed = 11
noise_sd = 0
[trainer]
lr = 0.25
batch_size = 2
[sizing]
precision = f64
[run]
seed = 42
output = /tmp/x
)");
  CHECK(c.model.layer_dims == std::vector<std::size_t>{4, 6, 2});
  CHECK(c.mode == TrainMode::full);
  CHECK(c.approach == Approach::split);
  CHECK(c.split_layer == std::optional<std::size_t>{1});
  CHECK(c.rounds == 7);
  CHECK(c.order == OrderPolicy::fixed_cycle);
  CHECK(c.partition.kind == PartitionScheme::Kind::iid_sizes);
  CHECK(total_samples(c) == 9);
  CHECK(c.data_seed == 11);
  CHECK(c.noise_sd == 0.0);
  CHECK(c.lr == 0.25);
  CHECK(c.precision == Precision::f64);
  CHECK(c.seed == 42);
  CHECK(c.output == "/tmp/x");
}

TEST_CASE("config errors name the key and line", "[config]") {
  CHECK_THROWS_WITH(parse_config("[finetune]\nrank = 0\n"), ContainsSubstring("rank") && ContainsSubstring("line 2"));
  CHECK_THROWS_WITH(parse_config("[finetune]\nrank = 150\n"), ContainsSubstring("rank"));
  CHECK_THROWS_WITH(parse_config("[finetune]\nrank = -1\n"), ContainsSubstring("rank"));
  // Full fine-tuning never builds the adapter, so its shape is not checked.
  CHECK_NOTHROW(parse_config("[finetune]\nmode = full\nrank = 150\n"));
  CHECK_THROWS_WITH(parse_config("[trainer]\nlr = fast\n"), ContainsSubstring("lr"));
  CHECK_THROWS_WITH(parse_config("[trainer]\nspeed = 1\n"), ContainsSubstring("speed"));
  CHECK_THROWS_WITH(parse_config("[bogus]\n"), ContainsSubstring("bogus"));
  CHECK_THROWS_WITH(parse_config("rounds = 3\n"), ContainsSubstring("section"));
  CHECK_THROWS_WITH(parse_config("[protocol]\nrounds = 3\nrounds = 4\n"), ContainsSubstring("duplicate"));
  CHECK_THROWS_WITH(parse_config("[protocol]\napproach = ring\n"), ContainsSubstring("approach"));
  CHECK_THROWS_WITH(parse_config("[protocol]\napproach = split\n"), ContainsSubstring("split_layer"));
  CHECK_THROWS_WITH(parse_config("[protocol]\nsplit_layer = 2\n"), ContainsSubstring("split_layer"));
  CHECK_THROWS_WITH(parse_config("[clients]\ncount = 2\npartition = iid_sizes\nsizes = 1\n"), ContainsSubstring("sizes"));
  CHECK_THROWS_WITH(parse_config("[model]\nlayer_dims = 4\n"), ContainsSubstring("layer_dims"));
  CHECK_THROWS_WITH(parse_config("[links]\nuplink_bps = 0\n"), ContainsSubstring("uplink_bps"));
  CHECK_THROWS_AS(parse_config("[protocol\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[protocol]\nrounds\n"), ConfigError);
}

TEST_CASE("serialize round-trips", "[config]") {
  CHECK(parse_config(serialize(ExperimentConfig{})) == ExperimentConfig{});

  ExperimentConfig c;
  c.model = ModelSpec{{3, 5, 5, 2}};
  c.mode = TrainMode::full;
  c.approach = Approach::split;
  c.split_layer = 2;
  c.order = OrderPolicy::fixed_cycle;
  c.clients = 2;
  c.partition = {PartitionScheme::Kind::iid_sizes, {3, 1}, 0.5};
  c.alpha = 1.0 / 3.0;
  c.rank = 2;
  c.targets = {0, 2};
  c.teacher_layers = {1};
  c.lr = 0.1;
  c.noise_sd = 1e-3;
  c.latency_s = 0.0;
  c.precision = Precision::f64;
  c.seed = 18446744073709551615ull;
  c.output = "some dir/out";
  CHECK(parse_config(serialize(c)) == c);
}
