#include <doctest.h>

#include <string>

#include "mola/config.hpp"
#include "mola/error.hpp"

using namespace mola;

namespace {

const char* kBasic = R"(
[dataset]
lookback = 8
horizon = 12

[synth]
n_points = 500
component1 = sine amplitude=2 period=12 phase=0

[paradigm]
kind = mola
segments = 3
experts = 2
rank = 1

[train]
lr = 0.005
)";

}  // namespace

TEST_CASE("parse a basic config") {
    const RunConfig c = parse_run_config(kBasic);
    CHECK(c.dataset.lookback == 8);
    CHECK(c.dataset.horizon == 12);
    REQUIRE(c.dataset.synth);
    CHECK(c.dataset.synth->n_points == 500);
    REQUIRE(c.dataset.synth->components.size() == 1);
    CHECK(c.dataset.synth->components[0].amplitude == 2.0);
    CHECK(c.model.lookback == 8);
    CHECK(c.paradigm.segments == 3);
    CHECK(c.train.learning_rate == 0.005);
    // stage learning rates fall back along adapt -> pretrain -> lr
    CHECK(c.pretrain.learning_rate == 0.005);
    CHECK(c.adapt.learning_rate == 0.005);
    CHECK(c.pretrain.max_epochs == 5);
    CHECK(c.pretrain.patience == 2);
    CHECK(c.adapt.max_epochs == 10);
}

TEST_CASE("built-in defaults") {
    const RunConfig c = default_run_config();
    CHECK(c.train.learning_rate == 1e-3);
    CHECK(c.paradigm.kind == ParadigmKind::mola);
    CHECK(c.dataset.lookback == 16);
    CHECK(c.dataset.horizon == 32);
    CHECK(c.model.hidden == std::vector<std::size_t>{16, 2});
    REQUIRE(c.dataset.synth);
    CHECK(c.dataset.synth->n_points == 2400);
}

TEST_CASE("overrides win over the file") {
    const RunConfig c = parse_run_config(kBasic, {"train.lr=0.1", "train.adapt_lr=0.02", "dataset.horizon=6"});
    CHECK(c.train.learning_rate == 0.1);
    CHECK(c.pretrain.learning_rate == 0.1);
    CHECK(c.adapt.learning_rate == 0.02);
    CHECK(c.dataset.horizon == 6);
    CHECK_THROWS_AS(parse_run_config(kBasic, {"train.lr"}), ConfigError);
    CHECK_THROWS_AS(parse_run_config(kBasic, {"bogus.lr=1"}), ConfigError);
    CHECK_THROWS_AS(parse_run_config(kBasic, {"train.nope=1"}), ConfigError);
}

TEST_CASE("config errors") {
    CHECK_THROWS_AS(parse_run_config("[extra]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[train]\nlr = fast\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[train]\nmax_epochs = -3\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[paradigm]\nkind = transformer\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[paradigm]\nkind = mtf\nrank = 2\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[paradigm]\nsegments = 5\n"), ConfigError);  // 5 does not divide 32
    CHECK_THROWS_AS(parse_run_config("[paradigm]\nplacement = head\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[dataset]\ncsv = a.csv\n[synth]\nn_points = 100\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[dataset]\ntrain_count = 10\nval_count = 5\ntest_count = 5\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[dataset]\ncsv = a.csv\ntrain_count = 10\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[synth]\ncomponent1 = square amplitude=1\n"), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/run.ini"), ConfigError);
}

TEST_CASE("csv source with explicit counts") {
    const RunConfig c = parse_run_config(
        "[dataset]\ncsv = data/x.csv\nlookback = 96\nhorizon = 96\ntrain_count = 8545\nval_count = 2881\n"
        "test_count = 2881\n[model]\nencoder = linear\n[paradigm]\nrank = 8\n");
    REQUIRE(c.dataset.csv);
    CHECK(*c.dataset.csv == "data/x.csv");
    CHECK(c.dataset.schema.train_count == 8545u);
    CHECK(c.model.kind == EncoderKind::linear);
    CHECK(c.model.hidden.empty());
}

TEST_CASE("config hash") {
    const RunConfig a = parse_run_config(kBasic);
    CHECK(a.hash().size() == 64);
    CHECK(a.hash() == parse_run_config(kBasic).hash());
    CHECK(a.hash() != parse_run_config(kBasic, {"train.seed=1"}).hash());
    // the output directory does not change what is computed
    CHECK(a.hash() == parse_run_config(kBasic, {"output.run_dir=/tmp/elsewhere"}).hash());
}

TEST_CASE("component strings round trip") {
    const SynthComponent c = parse_component("sine amplitude=0.5 period=7 phase=1.25");
    CHECK(c.kind == ComponentKind::sine);
    CHECK(c.period == 7.0);
    CHECK(c.phase == 1.25);
    const SynthComponent back = parse_component(format_component(c));
    CHECK(back.amplitude == c.amplitude);
    CHECK(back.period == c.period);
    CHECK(back.phase == c.phase);
    CHECK(parse_component("ar1 amplitude=1 ar_coeff=0.9").ar_coeff == 0.9);
    CHECK_THROWS_AS(parse_component("sine width=3"), ConfigError);

    const SynthSpec spec = default_case_study_spec(300, 7);
    const SynthSpec again = synth_spec_from_json(synth_spec_to_json(spec));
    CHECK(generate_synthetic(again).values == generate_synthetic(spec).values);
}

TEST_CASE("load_dataset standardizes synthetic data") {
    const RunConfig c = parse_run_config(kBasic);
    const LoadedData d = load_dataset(c.dataset);
    CHECK(d.dataset.length() == 500);
    CHECK(d.dataset.norm_stats.has_value());
    const RunConfig raw = parse_run_config(kBasic, {"dataset.standardize=false"});
    CHECK_FALSE(load_dataset(raw.dataset).dataset.norm_stats.has_value());
}
