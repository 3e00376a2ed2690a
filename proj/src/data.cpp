#include "mola/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "mola/digest.hpp"
#include "mola/error.hpp"

namespace mola {

const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

std::pair<std::size_t, std::size_t> SeriesDataset::range(Split s) const {
    switch (s) {
        case Split::train: return {0, split.train_end};
        case Split::val: return {split.train_end, split.val_end};
        case Split::test: return {split.val_end, length()};
    }
    return {0, 0};
}

void SeriesDataset::validate() const {
    if (!(0 < split.train_end && split.train_end < split.val_end && split.val_end <= length())) {
        throw DataError("dataset split must satisfy 0 < train_end < val_end <= N (got " +
                        std::to_string(split.train_end) + ", " + std::to_string(split.val_end) + ", N=" +
                        std::to_string(length()) + ")");
    }
    if (channel_names.size() != channels()) {
        throw DataError("dataset has " + std::to_string(channels()) + " channels but " +
                        std::to_string(channel_names.size()) + " names");
    }
    if (norm_stats) {
        if (norm_stats->mean.size() != channels() || norm_stats->stddev.size() != channels())
            throw DataError("normalization statistics do not match channel count");
        for (double s : norm_stats->stddev)
            if (!(s > 0.0)) throw DataError("normalization std must be positive");
    }
}

SplitBounds split_from_ratios(std::size_t n, double train, double val, double test) {
    if (train <= 0.0 || val <= 0.0 || test < 0.0 || std::abs(train + val + test - 1.0) > 1e-9) {
        throw DataError("split ratios must be positive and sum to 1");
    }
    SplitBounds b;
    // small epsilon so that e.g. 10 * 0.7 lands on 7, not 6
    b.train_end = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train + 1e-9));
    b.val_end = b.train_end + static_cast<std::size_t>(std::floor(static_cast<double>(n) * val + 1e-9));
    if (!(0 < b.train_end && b.train_end < b.val_end && b.val_end <= n)) {
        throw DataError("split ratios leave an empty split for N=" + std::to_string(n));
    }
    return b;
}

SplitBounds split_from_counts(std::size_t n, std::size_t train, std::size_t val, std::size_t test) {
    if (train + val + test != n) {
        throw DataError("split counts " + std::to_string(train) + "/" + std::to_string(val) + "/" +
                        std::to_string(test) + " do not sum to " + std::to_string(n) + " rows");
    }
    if (train == 0 || val == 0) throw DataError("train and val splits must be non-empty");
    return {train, train + val};
}

// ---- synthetic -------------------------------------------------------------

const char* to_string(ComponentKind k) {
    switch (k) {
        case ComponentKind::sine: return "sine";
        case ComponentKind::trend: return "trend";
        case ComponentKind::ar1: return "ar1";
    }
    return "?";
}

ComponentKind component_kind_from_string(const std::string& s) {
    if (s == "sine") return ComponentKind::sine;
    if (s == "trend") return ComponentKind::trend;
    if (s == "ar1") return ComponentKind::ar1;
    throw ConfigError("unknown synthetic component kind '" + s + "' (expected sine, trend or ar1)");
}

void SynthSpec::validate() const {
    if (n_points < 2) throw ConfigError("synth: n_points must be at least 2");
    if (d_channels < 1) throw ConfigError("synth: d_channels must be at least 1");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("synth: noise_std must be >= 0");
    for (const auto& c : components) {
        if (!std::isfinite(c.amplitude)) throw ConfigError("synth: amplitude must be finite");
        if (c.kind == ComponentKind::sine && !(c.period > 0.0))
            throw ConfigError("synth: sine period must be > 0");
        if (c.kind == ComponentKind::ar1 && !(std::abs(c.ar_coeff) < 1.0))
            throw ConfigError("synth: |ar_coeff| must be < 1");
    }
    split_from_ratios(n_points, train_ratio, val_ratio, test_ratio);
}

SynthSpec default_case_study_spec(std::size_t n_points, std::uint64_t seed) {
    SynthSpec spec;
    spec.n_points = n_points;
    spec.d_channels = 2;
    spec.noise_std = 0.1;
    spec.seed = seed;
    spec.components = {
        {ComponentKind::sine, 1.0, 24.0, 0.0, 0.0},
        {ComponentKind::sine, 0.6, 60.0, 0.5, 0.0},
        {ComponentKind::trend, 0.3, 0.0, 0.0, 0.0},
    };
    return spec;
}

SeriesDataset generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    const std::size_t n = spec.n_points;
    const std::size_t d = spec.d_channels;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Mat values(n, d);
    for (std::size_t c = 0; c < d; ++c) {
        const double channel_shift = std::numbers::pi * static_cast<double>(c) / static_cast<double>(d);
        for (const auto& comp : spec.components) {
            switch (comp.kind) {
                case ComponentKind::sine:
                    for (std::size_t i = 0; i < n; ++i) {
                        const double angle =
                            2.0 * std::numbers::pi * static_cast<double>(i) / comp.period + comp.phase + channel_shift;
                        values(i, c) += comp.amplitude * std::sin(angle);
                    }
                    break;
                case ComponentKind::trend:
                    for (std::size_t i = 0; i < n; ++i)
                        values(i, c) += comp.amplitude * static_cast<double>(i) / static_cast<double>(n);
                    break;
                case ComponentKind::ar1: {
                    const double phi = comp.ar_coeff;
                    double state = comp.amplitude / std::sqrt(1.0 - phi * phi) * gauss(rng);
                    for (std::size_t i = 0; i < n; ++i) {
                        if (i > 0) state = phi * state + comp.amplitude * gauss(rng);
                        values(i, c) += state;
                    }
                    break;
                }
            }
        }
        if (spec.noise_std > 0.0)
            for (std::size_t i = 0; i < n; ++i) values(i, c) += spec.noise_std * gauss(rng);
    }

    SeriesDataset ds;
    ds.values = std::move(values);
    for (std::size_t c = 0; c < d; ++c) ds.channel_names.push_back("ch" + std::to_string(c));
    ds.split = split_from_ratios(n, spec.train_ratio, spec.val_ratio, spec.test_ratio);
    ds.validate();
    return ds;
}

// ---- CSV -------------------------------------------------------------------

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(std::string s) {
    const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

bool is_missing(const std::string& s) {
    return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null";
}

std::optional<double> parse_number(const std::string& s) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || !std::isfinite(v)) return std::nullopt;
    return v;
}

}  // namespace

CsvLoadResult load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV file " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty file (a header row is required)");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_fields(line);
    if (header.size() < 2) throw DataError(path.string() + ": need a timestamp column and at least one channel");

    CsvLoadResult result;
    const std::size_t d = header.size() - 1;
    std::vector<double> data;
    std::vector<std::string> stamps;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        ++row;
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw DataError(path.string() + ": row " + std::to_string(row) + " has " +
                            std::to_string(fields.size()) + " fields, expected " + std::to_string(header.size()));
        }
        stamps.push_back(trim(fields[0]));
        for (std::size_t c = 1; c < fields.size(); ++c) {
            const std::string cell = trim(fields[c]);
            if (is_missing(cell)) {
                throw DataError(path.string() + ": row " + std::to_string(row) + ", column '" + header[c] +
                                "': missing value (imputation is not supported)");
            }
            const auto v = parse_number(cell);
            if (!v) {
                throw DataError(path.string() + ": row " + std::to_string(row) + ", column '" + header[c] +
                                "': cannot parse '" + cell + "' as a number");
            }
            data.push_back(*v);
        }
    }
    if (row == 0) throw DataError(path.string() + ": no data rows");

    for (std::size_t i = 1; i < stamps.size(); ++i) {
        const auto a = parse_number(stamps[i - 1]);
        const auto b = parse_number(stamps[i]);
        const bool increasing = (a && b) ? (*a < *b) : (stamps[i - 1] < stamps[i]);
        if (!increasing) {
            result.warnings.push_back("timestamps not strictly increasing at row " + std::to_string(i + 1));
            break;
        }
    }

    SeriesDataset& ds = result.dataset;
    ds.values = Mat(row, d, std::move(data));
    for (std::size_t c = 1; c < header.size(); ++c) ds.channel_names.push_back(trim(header[c]));
    if (schema.train_count || schema.val_count || schema.test_count) {
        if (!(schema.train_count && schema.val_count && schema.test_count))
            throw ConfigError("explicit split counts need train, val and test counts together");
        ds.split = split_from_counts(row, *schema.train_count, *schema.val_count, *schema.test_count);
    } else {
        ds.split = split_from_ratios(row, schema.train_ratio, schema.val_ratio, schema.test_ratio);
    }
    ds.validate();
    return result;
}

void write_csv(const std::filesystem::path& path, const SeriesDataset& ds) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write CSV file " + path.string());
    out << "step";
    for (const auto& name : ds.channel_names) out << ',' << name;
    out << '\n';
    char buf[40];
    for (std::size_t i = 0; i < ds.length(); ++i) {
        out << i;
        for (std::size_t c = 0; c < ds.channels(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", ds.values(i, c));
            out << ',' << buf;
        }
        out << '\n';
    }
}

// ---- normalization ---------------------------------------------------------

SeriesDataset standardize(const SeriesDataset& ds) {
    ds.validate();
    const std::size_t d = ds.channels();
    const std::size_t n_train = ds.split.train_end;
    NormStats stats{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (std::size_t c = 0; c < d; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n_train; ++i) mean += ds.values(i, c);
        mean /= static_cast<double>(n_train);
        double var = 0.0;
        for (std::size_t i = 0; i < n_train; ++i) {
            const double dev = ds.values(i, c) - mean;
            var += dev * dev;
        }
        var /= static_cast<double>(n_train);
        const double sd = std::sqrt(var);
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
            throw DataError("channel '" + ds.channel_names[c] + "' has zero variance in the train split");
        }
        stats.mean[c] = mean;
        stats.stddev[c] = sd;
    }
    SeriesDataset out = ds;
    for (std::size_t i = 0; i < out.length(); ++i)
        for (std::size_t c = 0; c < d; ++c) out.values(i, c) = (ds.values(i, c) - stats.mean[c]) / stats.stddev[c];
    out.norm_stats = std::move(stats);
    return out;
}

Mat destandardize(const Mat& values, const NormStats& stats) {
    if (values.cols() != stats.mean.size()) throw ShapeError("destandardize: channel count mismatch");
    Mat out = values;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t c = 0; c < out.cols(); ++c) out(i, c) = values(i, c) * stats.stddev[c] + stats.mean[c];
    return out;
}

// ---- windows ---------------------------------------------------------------

namespace {

struct OriginRange {
    std::size_t first = 0;
    std::size_t count = 0;
};

OriginRange origin_range(const SeriesDataset& ds, std::size_t lookback, std::size_t horizon, Split split) {
    if (lookback < 1 || horizon < 1) throw DataError("lookback and horizon must be >= 1");
    const auto [start, end] = ds.range(split);
    // origin n: history n-L+1..n, labels n+1..n+T, all 0-based rows
    std::size_t first = split == Split::train ? start + lookback - 1 : std::max(start, std::size_t{1}) - 1;
    first = std::max(first, lookback - 1);
    if (end < horizon + 1 || first > end - 1 - horizon) return {first, 0};
    return {first, end - horizon - first};
}

}  // namespace

std::size_t window_count(const SeriesDataset& ds, std::size_t lookback, std::size_t horizon, Split split) {
    return origin_range(ds, lookback, horizon, split).count;
}

WindowSet windows(const SeriesDataset& ds, std::size_t lookback, std::size_t horizon, Split split) {
    ds.validate();
    const OriginRange r = origin_range(ds, lookback, horizon, split);
    if (r.count == 0) {
        const auto [start, end] = ds.range(split);
        throw DataError(std::string(to_string(split)) + " split has " + std::to_string(end - start) +
                        " rows, too short for lookback " + std::to_string(lookback) + " and horizon " +
                        std::to_string(horizon));
    }
    WindowSet out;
    out.reserve(r.count);
    for (std::size_t k = 0; k < r.count; ++k) {
        const std::size_t n = r.first + k;
        out.push_back({slice_rows(ds.values, n + 1 - lookback, lookback), slice_rows(ds.values, n + 1, horizon), n});
    }
    return out;
}

WindowSplits make_window_splits(const SeriesDataset& ds, std::size_t lookback, std::size_t horizon) {
    return {windows(ds, lookback, horizon, Split::train), windows(ds, lookback, horizon, Split::val),
            windows(ds, lookback, horizon, Split::test)};
}

std::string window_set_digest(const WindowSet& set) {
    Sha256 h;
    for (const auto& w : set) {
        const std::uint64_t origin = w.origin;
        h.update(&origin, sizeof origin);
        h.update(w.history.data().data(), w.history.size() * sizeof(double));
        h.update(w.label.data().data(), w.label.size() * sizeof(double));
    }
    return h.hex_digest();
}

}  // namespace mola
