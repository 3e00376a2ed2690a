#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>

#include "helpers.hpp"
#include "mola/data.hpp"
#include "mola/error.hpp"

using namespace mola;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "mola_test_data";
    fs::create_directories(dir);
    return dir / name;
}

fs::path write_text(const std::string& name, const std::string& text) {
    const fs::path p = scratch(name);
    std::ofstream(p) << text;
    return p;
}

std::string numbered_csv(std::size_t rows, std::size_t channels) {
    std::string s = "date";
    for (std::size_t c = 0; c < channels; ++c) s += ",c" + std::to_string(c);
    s += "\n";
    for (std::size_t r = 0; r < rows; ++r) {
        s += std::to_string(r);
        for (std::size_t c = 0; c < channels; ++c) s += "," + std::to_string(std::sin(0.1 * r + c) + 0.01 * r);
        s += "\n";
    }
    return s;
}

SeriesDataset ramp(std::size_t n, std::size_t d, SplitBounds split) {
    SeriesDataset ds;
    ds.values = Mat(n, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) ds.values(r, c) = 1000.0 * c + r;
    for (std::size_t c = 0; c < d; ++c) ds.channel_names.push_back("c" + std::to_string(c));
    ds.split = split;
    return ds;
}

}  // namespace

TEST_CASE("split helpers") {
    const SplitBounds s = split_from_ratios(10, 0.7, 0.1, 0.2);
    CHECK(s.train_end == 7);
    CHECK(s.val_end == 8);
    const SplitBounds e = split_from_counts(14305, 8545, 2881, 2881 - 2);
    CHECK(e.train_end == 8545);
    CHECK(e.val_end == 8545 + 2881);
    CHECK_THROWS_AS(split_from_counts(100, 50, 20, 20), DataError);
    CHECK_THROWS_AS(split_from_ratios(10, 0.5, 0.1, 0.1), DataError);
}

TEST_CASE("synthetic series follow the spec") {
    SynthSpec spec;
    spec.n_points = 240;
    spec.d_channels = 1;
    spec.components = {{ComponentKind::sine, 2.0, 24.0, 0.0, 0.0}};
    const SeriesDataset ds = generate_synthetic(spec);
    REQUIRE(ds.length() == 240);
    for (std::size_t t = 0; t + 24 < 240; ++t) CHECK(std::abs(ds.values(t, 0) - ds.values(t + 24, 0)) <= 1e-9);
    CHECK(std::abs(ds.values(6, 0) - 2.0) <= 1e-12);

    const SynthSpec cs = default_case_study_spec();
    const SeriesDataset a = generate_synthetic(cs), b = generate_synthetic(cs);
    CHECK(a.values == b.values);
    SynthSpec other = cs;
    other.seed += 1;
    CHECK_FALSE(generate_synthetic(other).values == a.values);
}

TEST_CASE("ar1 component has the requested lag-1 autocorrelation") {
    SynthSpec spec;
    spec.n_points = 10000;
    spec.components = {{ComponentKind::ar1, 1.0, 24.0, 0.0, 0.9}};
    spec.seed = 42;
    const SeriesDataset ds = generate_synthetic(spec);
    double mean = 0.0;
    for (std::size_t t = 0; t < ds.length(); ++t) mean += ds.values(t, 0);
    mean /= ds.length();
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < ds.length(); ++t) {
        const double x = ds.values(t, 0) - mean;
        den += x * x;
        if (t + 1 < ds.length()) num += x * (ds.values(t + 1, 0) - mean);
    }
    const double rho = num / den;
    CHECK(rho >= 0.85);
    CHECK(rho <= 0.95);
}

TEST_CASE("synth spec validation") {
    SynthSpec s = default_case_study_spec();
    s.components.push_back({ComponentKind::ar1, 1.0, 24.0, 0.0, 1.0});
    CHECK_THROWS_AS(s.validate(), ConfigError);
    CHECK_THROWS_AS(component_kind_from_string("square"), ConfigError);
}

TEST_CASE("csv split by ratios") {
    const auto p = write_text("ten.csv", numbered_csv(10, 2));
    const auto r = load_csv(p, CsvSchema{});
    CHECK(r.dataset.length() == 10);
    CHECK(r.dataset.channels() == 2);
    CHECK(r.dataset.split.train_end == 7);
    CHECK(r.dataset.split.val_end == 8);
    CHECK(r.warnings.empty());
}

TEST_CASE("csv with explicit counts of the hourly benchmark shape") {
    const auto p = write_text("etth.csv", numbered_csv(14307, 7));
    CsvSchema schema;
    schema.train_count = 8545;
    schema.val_count = 2881;
    schema.test_count = 2881;
    const auto r = load_csv(p, schema);
    const auto& ds = r.dataset;
    CHECK(ds.range(Split::train) == std::pair<std::size_t, std::size_t>{0, 8545});
    CHECK(ds.range(Split::val) == std::pair<std::size_t, std::size_t>{8545, 11426});
    CHECK(ds.range(Split::test) == std::pair<std::size_t, std::size_t>{11426, 14307});
}

TEST_CASE("csv errors name the offending row") {
    std::string text = numbered_csv(8, 1);
    // data row 5 is line index 5 (header is line 0)
    std::size_t pos = 0;
    for (int i = 0; i < 5; ++i) pos = text.find('\n', pos) + 1;
    const std::size_t comma = text.find(',', pos);
    const std::size_t eol = text.find('\n', pos);
    std::string bad = text;
    bad.replace(comma + 1, eol - comma - 1, "abc");
    try {
        load_csv(write_text("bad.csv", bad), CsvSchema{});
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("row 5") != std::string::npos);
    }
    std::string missing = text;
    missing.replace(comma + 1, eol - comma - 1, "");
    try {
        load_csv(write_text("missing.csv", missing), CsvSchema{});
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("missing") != std::string::npos);
    }
    CHECK_THROWS_AS(load_csv(write_text("short.csv", "date,a\n1,2,3\n"), CsvSchema{}), DataError);
    CHECK_THROWS_AS(load_csv(scratch("nope.csv"), CsvSchema{}), DataError);
}

TEST_CASE("non-monotone timestamps only warn") {
    const auto p = write_text("order.csv", "date,a\n1,0.5\n3,0.1\n2,0.7\n4,0.2\n5,0.3\n6,0.1\n7,0.4\n8,0.9\n9,1.0\n10,0.0\n");
    const auto r = load_csv(p, CsvSchema{});
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find("row 3") != std::string::npos);
}

TEST_CASE("csv round trip") {
    const SeriesDataset ds = generate_synthetic(default_case_study_spec(200, 1));
    const auto p = scratch("round.csv");
    write_csv(p, ds);
    const auto r = load_csv(p, CsvSchema{});
    CHECK(testing::max_abs_diff(r.dataset.values, ds.values) <= 1e-12);
}

TEST_CASE("standardization uses train statistics") {
    const SeriesDataset raw = generate_synthetic(default_case_study_spec(500, 9));
    const SeriesDataset z = standardize(raw);
    REQUIRE(z.norm_stats);
    const auto [s, e] = z.range(Split::train);
    for (std::size_t c = 0; c < z.channels(); ++c) {
        double m = 0.0, v = 0.0;
        for (std::size_t r = s; r < e; ++r) m += z.values(r, c);
        m /= (e - s);
        for (std::size_t r = s; r < e; ++r) v += (z.values(r, c) - m) * (z.values(r, c) - m);
        v /= (e - s);
        CHECK(std::abs(m) <= 1e-12);
        CHECK(std::abs(v - 1.0) <= 1e-12);
        // the test split carries the trend, so its mean is not 0
        const auto [ts, te] = z.range(Split::test);
        double tm = 0.0;
        for (std::size_t r = ts; r < te; ++r) tm += z.values(r, c);
        CHECK(std::abs(tm / (te - ts)) > 1e-3);
    }
    CHECK(testing::max_abs_diff(destandardize(z.values, *z.norm_stats), raw.values) <= 1e-9);

    SeriesDataset flat = raw;
    for (std::size_t r = 0; r < flat.length(); ++r) flat.values(r, 1) = 3.0;
    CHECK_THROWS_AS(standardize(flat), DataError);
}

TEST_CASE("window counts and contents") {
    const SeriesDataset tiny = ramp(100, 1, {100 - 2, 100 - 1});
    // N_train = 98 with L = 96, T = 4 leaves no train window
    CHECK(window_count(tiny, 96, 4, Split::train) == 0);
    CHECK_THROWS_AS(windows(tiny, 96, 4, Split::train), DataError);
    const SeriesDataset exact = ramp(102, 1, {100, 101});
    CHECK(window_count(exact, 96, 4, Split::train) == 1);

    const SeriesDataset ds = ramp(60, 2, {40, 50});
    const std::size_t L = 5, T = 3;
    const WindowSet tr = windows(ds, L, T, Split::train);
    CHECK(tr.size() == 40 - L - T + 1);
    for (const auto& w : tr) {
        CHECK(w.history.rows() == L);
        CHECK(w.label.rows() == T);
        for (std::size_t i = 0; i < L; ++i) CHECK(w.history(i, 1) == 1000.0 + w.origin - L + 1 + i);
        for (std::size_t j = 0; j < T; ++j) CHECK(w.label(j, 0) == double(w.origin + 1 + j));
        CHECK(w.origin + T < 40);
    }
    const WindowSet va = windows(ds, L, T, Split::val);
    CHECK(va.size() == 10 - T + 1);
    for (const auto& w : va) {
        CHECK(w.origin + 1 >= 40);
        CHECK(w.origin + T < 50);
    }
    const WindowSet te = windows(ds, L, T, Split::test);
    CHECK(te.size() == 10 - T + 1);
    for (const auto& w : te) CHECK(w.origin + 1 >= 50);
}

TEST_CASE("windows never mix splits, swept over shapes") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<std::size_t> n_dist(20, 200), l_dist(1, 12), t_dist(1, 12);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = n_dist(rng);
        const SplitBounds sb = split_from_ratios(n, 0.7, 0.1, 0.2);
        const SeriesDataset ds = ramp(n, 1, sb);
        const std::size_t L = l_dist(rng), T = t_dist(rng);
        for (Split sp : {Split::train, Split::val, Split::test}) {
            const auto [s, e] = ds.range(sp);
            const std::size_t count = window_count(ds, L, T, sp);
            if (sp == Split::train) CHECK(count == (e - s >= L + T ? e - s - L - T + 1 : 0));
            if (count == 0) continue;
            const WindowSet ws = windows(ds, L, T, sp);
            CHECK(ws.size() == count);
            for (const auto& w : ws) {
                const std::size_t first_label = static_cast<std::size_t>(w.label(0, 0));
                CHECK(first_label >= s);
                CHECK(first_label + T <= e);
                const std::size_t first_hist = static_cast<std::size_t>(w.history(0, 0));
                if (sp == Split::train) CHECK(first_hist >= s);
                CHECK(first_hist + L == first_label);
            }
        }
    }
}

TEST_CASE("window digests track content") {
    const SeriesDataset ds = generate_synthetic(default_case_study_spec(300, 2));
    const auto a = windows(ds, 8, 4, Split::val);
    CHECK(window_set_digest(a) == window_set_digest(windows(ds, 8, 4, Split::val)));
    CHECK(window_set_digest(a).size() == 64);
    CHECK(window_set_digest(a) != window_set_digest(windows(ds, 8, 4, Split::test)));
}
