#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mola/linalg.hpp"

namespace mola {

struct SplitBounds {
    std::size_t train_end = 0;  // exclusive
    std::size_t val_end = 0;    // exclusive; test runs to the end
};

struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

enum class Split { train, val, test };

const char* to_string(Split s);

struct SeriesDataset {
    Mat values;  // N x D, rows in time order
    std::vector<std::string> channel_names;
    SplitBounds split;
    std::optional<NormStats> norm_stats;

    std::size_t length() const { return values.rows(); }
    std::size_t channels() const { return values.cols(); }
    // [first, last) row range of a split
    std::pair<std::size_t, std::size_t> range(Split s) const;
    // Throws DataError when the split or the channel names are inconsistent.
    void validate() const;
};

// Split from ratios (train, val, test); train_end = floor(N * train),
// val_end = train_end + floor(N * val).
SplitBounds split_from_ratios(std::size_t n, double train, double val, double test);
// Explicit row counts; must sum to n.
SplitBounds split_from_counts(std::size_t n, std::size_t train, std::size_t val, std::size_t test);

// ---- synthetic series ------------------------------------------------------

enum class ComponentKind { sine, trend, ar1 };

const char* to_string(ComponentKind k);
ComponentKind component_kind_from_string(const std::string& s);

struct SynthComponent {
    ComponentKind kind = ComponentKind::sine;
    double amplitude = 1.0;
    double period = 24.0;  // sine only
    double phase = 0.0;    // sine only, radians
    double ar_coeff = 0.0; // ar1 only
};

struct SynthSpec {
    std::size_t n_points = 0;
    std::size_t d_channels = 1;
    std::vector<SynthComponent> components;
    double noise_std = 0.0;
    std::uint64_t seed = 0;
    double train_ratio = 0.7;
    double val_ratio = 0.1;
    double test_ratio = 0.2;

    void validate() const;
};

// The stand-in for the case-study series: two sines (periods 24 and 60)
// plus a mild trend, noise 0.1, two channels.
SynthSpec default_case_study_spec(std::size_t n_points = 2400, std::uint64_t seed = 2024);

// Channel c shifts every sine phase by pi * c / D so channels differ.
// Trend ramps linearly from 0 to `amplitude` over the series. ar1 is a
// stationary AR(1) with innovation std `amplitude`, started from its
// stationary distribution.
SeriesDataset generate_synthetic(const SynthSpec& spec);

// ---- CSV -----------------------------------------------------------------

struct CsvSchema {
    // Either ratios or counts; counts win when set.
    double train_ratio = 0.7;
    double val_ratio = 0.1;
    double test_ratio = 0.2;
    std::optional<std::size_t> train_count;
    std::optional<std::size_t> val_count;
    std::optional<std::size_t> test_count;
};

struct CsvLoadResult {
    SeriesDataset dataset;
    std::vector<std::string> warnings;
};

// First column is a timestamp (kept only for the monotonicity check), the
// remaining columns are numeric channels. Row numbers in errors are 1-based
// data rows (the header is row 0).
CsvLoadResult load_csv(const std::filesystem::path& path, const CsvSchema& schema);
void write_csv(const std::filesystem::path& path, const SeriesDataset& ds);

// ---- normalization -------------------------------------------------------

// Per-channel z-score with train-split statistics (population std).
SeriesDataset standardize(const SeriesDataset& ds);
// Maps standardized values (any rows x D) back to the original scale.
Mat destandardize(const Mat& values, const NormStats& stats);

// ---- windows -------------------------------------------------------------

struct WindowSample {
    Mat history;  // L x D, rows origin-L+1 .. origin
    Mat label;    // T x D, rows origin+1 .. origin+T
    std::size_t origin = 0;
};

using WindowSet = std::vector<WindowSample>;

// Stride-1 windows whose labels lie inside the split. Train windows keep
// their history inside the train split; val/test histories may reach back
// across the split start. Throws DataError when no window fits.
WindowSet windows(const SeriesDataset& ds, std::size_t lookback, std::size_t horizon, Split split);
std::size_t window_count(const SeriesDataset& ds, std::size_t lookback, std::size_t horizon, Split split);

struct WindowSplits {
    WindowSet train;
    WindowSet val;
    WindowSet test;
};

WindowSplits make_window_splits(const SeriesDataset& ds, std::size_t lookback, std::size_t horizon);

// SHA-256 hex digest over (origin, history, label) of every window.
std::string window_set_digest(const WindowSet& set);

}  // namespace mola
