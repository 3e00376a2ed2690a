#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mola/adapt.hpp"
#include "mola/data.hpp"
#include "mola/linalg.hpp"
#include "mola/model.hpp"
#include "mola/train.hpp"

namespace mola {

// ---- shared-representation error bound -----------------------------------------

struct BottleneckReport {
    Mat wbar;  // T x (L+1) = [W b]
    SvdResult svd;
    std::size_t rank = 0;
    // sum over left singular directions t > rank of ||U_t^T Y||^2
    double min_error_sq = 0.0;
    // squared residual of projecting Y onto col(wbar), computed by a
    // rank-revealing orthogonal decomposition independent of the SVD above
    double ls_residual_sq = 0.0;
    // same minimization with the bias coordinate pinned to 1
    double pinned_residual_sq = 0.0;
    std::vector<double> per_direction_energy;  // one entry per null direction
};

// w: T x L, b: T x 1, y: T x D.
BottleneckReport min_attainable_error(const Mat& w, const Mat& b, const Mat& y);

struct DatasetBottleneck {
    std::size_t windows = 0;
    std::size_t rank = 0;
    std::size_t outputs = 0;   // T
    std::size_t rep_dim = 0;   // L
    double mean_min_error_sq = 0.0;
    double mean_ls_residual_sq = 0.0;
    double mean_pinned_residual_sq = 0.0;
};

// Applies the bound to a model's head for every window label and averages.
DatasetBottleneck head_bottleneck(const FoundationModel& model, const WindowSet& windows);

// ---- parameter counts ----------------------------------------------------------

struct ParamCount {
    std::uint64_t n_layers = 0;
    std::uint64_t d_model = 0;
    std::uint64_t d_ff = 0;
    std::uint64_t rank = 0;
    std::uint64_t experts = 0;
    std::uint64_t segments = 0;
    std::uint64_t n_mola = 0;
    std::uint64_t n_backbone = 0;
    double ratio = 0.0;  // n_mola / n_backbone
};

// n_mola     = N_l * 2 * ((d_m*r + r*d_ff) * P + P * K)
// n_backbone = N_l * (4*d_m^2 + 2*d_m*d_ff + 4*d_m)
ParamCount param_counts(std::uint64_t n_layers, std::uint64_t d_model, std::uint64_t d_ff, std::uint64_t rank,
                        std::uint64_t experts, std::uint64_t segments);

// ---- loss variance decomposition -------------------------------------------

struct VarianceReport {
    Mat per_step_loss_samples;  // samples x T
    double var_total = 0.0;     // Var of the per-sample mean over steps
    std::vector<double> var_terms;
    double cov_sum = 0.0;       // sum over t < s of Cov(L_t, L_s)
    double identity_gap = 0.0;  // |var_total - (sum var + 2 cov_sum) / T^2|
};

// Unbiased (n - 1) sample moments. Needs at least two samples.
VarianceReport variance_report(const Mat& per_step_losses);

struct VarianceComparison {
    double baseline_var_total = 0.0;
    double candidate_var_total = 0.0;
    double delta_cov_sum = 0.0;  // baseline.cov_sum - candidate.cov_sum
    double delta_var = 0.0;      // baseline.var_total - candidate.var_total
    bool covariance_premise_holds = false;  // delta_cov_sum >= 0
    bool variance_reduced = false;          // candidate var <= baseline var
};

VarianceComparison compare_variance(const VarianceReport& baseline, const VarianceReport& candidate);

// ---- per-step representation probe -------------------------------------------

struct ProbeOptions {
    std::size_t lookback = 16;
    std::vector<std::size_t> hidden{16, 2};
    Activation activation = Activation::relu;
    TrainConfig config = TrainConfig::baseline_defaults();
    std::size_t replicas = 2;  // seeds per requested step
};

struct ProbeRun {
    std::size_t group = 0;  // index into the requested step list
    std::size_t step = 0;   // 1-based forecast step
    std::uint64_t seed = 0;
    double val_loss = 0.0;
    Mat representations;  // (test windows * channels) x rep_dim
};

struct ProbeReport {
    std::vector<std::size_t> steps;
    std::vector<ProbeRun> runs;
    Mat disparity;                    // runs x runs
    double cross_group = 0.0;         // mean over pairs from different groups
    double within_group = 0.0;        // mean over same-group, different-seed pairs
    double ratio = 0.0;               // cross_group / within_group
};

// Centers both clouds and scales each to unit RMS point norm, rotates the
// first onto the second with the best orthogonal map, and returns the mean
// Euclidean distance between corresponding points.
double representation_disparity(const Mat& a, const Mat& b);

// Trains one single-output model per (step, replica) on label step t and
// records its encoder output for every test window. Run seeds are
// base_seed + run index.
ProbeReport per_step_probe(const SeriesDataset& ds, const std::vector<std::size_t>& steps,
                           const ProbeOptions& options, std::uint64_t base_seed);

// ---- paradigm comparison ------------------------------------------------------

// Defaults are the case-study setting: mlp2(16, 2) encoder, LoRA on the
// first encoder layer only (the second one is 2 wide and caps r at 1).
struct CompareOptions {
    std::size_t lookback = 16;
    std::size_t horizon = 32;
    std::size_t segments = 4;
    std::size_t experts = 4;
    std::size_t rank = 4;
    double home_logit = 8.0;
    std::vector<std::string> placement{"encoder.0"};  // empty -> every encoder layer
    EncoderSpec encoder{EncoderKind::mlp2, 16, {16, 2}, Activation::relu};  // lookback is overwritten
    TrainConfig baseline = with_lr(TrainConfig::baseline_defaults(), 1e-2);
    TrainConfig pretrain = with_lr(TrainConfig::pretrain_defaults(), 1e-2);
    TrainConfig adapt = with_lr(TrainConfig::baseline_defaults(), 3e-3);
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

    static TrainConfig with_lr(TrainConfig c, double lr) {
        c.learning_rate = lr;
        return c;
    }
};

struct ParadigmRun {
    std::string paradigm;  // "AR-F", "MT-F", "MoLA"
    std::uint64_t seed = 0;
    std::string train_digest;
    std::string val_digest;
    std::string test_digest;
    EvalReport test;
};

struct ParadigmRow {
    std::string paradigm;
    Metrics mean;                   // averaged over seeds
    std::vector<Metrics> per_step;  // averaged over seeds
    double mse_delta_pct = 0.0;     // relative improvement over AR-F
    double mae_delta_pct = 0.0;
};

struct ComparisonTable {
    std::vector<ParadigmRun> runs;
    std::vector<ParadigmRow> rows;  // AR-F, MT-F, MoLA
    bool identical_windows = false;
    VarianceComparison variance;    // MT-F baseline vs MoLA, first seed
};

ComparisonTable paradigm_compare(const SeriesDataset& ds, const CompareOptions& options);

// ---- serialization ---------------------------------------------------------------

nlohmann::json bottleneck_to_json(const BottleneckReport& r);
nlohmann::json dataset_bottleneck_to_json(const DatasetBottleneck& r);
nlohmann::json param_count_to_json(const ParamCount& r);
nlohmann::json variance_to_json(const VarianceReport& r);
nlohmann::json variance_comparison_to_json(const VarianceComparison& r);
nlohmann::json probe_to_json(const ProbeReport& r);
nlohmann::json comparison_to_json(const ComparisonTable& t);
// Fixed-width text table: paradigm, MSE, delta, MAE, delta.
std::string format_comparison(const ComparisonTable& t);

}  // namespace mola
