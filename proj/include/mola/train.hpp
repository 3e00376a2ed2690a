#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mola/adapt.hpp"
#include "mola/model.hpp"

namespace mola {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 10;
    std::size_t patience = 3;
    std::uint64_t seed = 0;
    AdamConfig adam;

    void validate() const;

    // Baselines and adaptation: 10 epochs, patience 3.
    static TrainConfig baseline_defaults();
    // Pre-training: 5 epochs, patience 2.
    static TrainConfig pretrain_defaults();
};

class AdamOptimizer {
public:
    struct Moments {
        Mat m;
        Mat v;
        std::size_t t = 0;  // updates applied to this entry
    };

    explicit AdamOptimizer(AdamConfig config = {}) : config_(config) {}

    // Bias-corrected Adam on trainable entries that have a gradient. Each
    // entry keeps its own step count, so entries that skip a step are
    // neither moved nor aged.
    void step(ParamStore& params, const GradStore& grads, double lr);
    std::size_t steps() const { return t_; }
    const std::map<std::string, Moments>& moments() const { return moments_; }

private:
    AdamConfig config_;
    std::size_t t_ = 0;
    std::map<std::string, Moments> moments_;
};

// Stops after `patience` consecutive epochs without a strict improvement of
// the validation loss. Ties keep the earliest epoch as best.
class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience);

    // Returns true when `val_loss` is a new best.
    bool update(double val_loss);
    bool should_stop() const { return bad_epochs_ >= patience_; }
    double best() const { return best_; }
    std::size_t best_epoch() const { return best_epoch_; }  // 1-based, 0 = none yet
    std::size_t bad_epochs() const { return bad_epochs_; }

private:
    std::size_t patience_;
    std::size_t epoch_ = 0;
    std::size_t best_epoch_ = 0;
    std::size_t bad_epochs_ = 0;
    double best_ = 0.0;
};

enum class StopReason { max_epochs, early_stopping };
const char* to_string(StopReason r);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double wall_seconds = 0.0;
};

struct EvalReport {
    std::vector<std::size_t> horizons;
    std::vector<Metrics> per_horizon;  // metrics over the first h steps
    Metrics average;                   // mean of per_horizon rows
    std::vector<Metrics> per_step;     // T entries
    Metrics overall;                   // all steps
    Mat step_losses;                   // windows x T, MSE over channels
};

struct RunRecord {
    std::string stage;
    double initial_val_loss = 0.0;
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    StopReason stop_reason = StopReason::max_epochs;
    std::optional<EvalReport> final_metrics;
};

// Generic mini-batch loop used by every stage. `loss_and_grads` and
// `val_loss` read the current contents of `params`. The best-validation
// snapshot is restored before returning. `stream` separates the shuffle
// sequences of different stages under one seed.
struct FitHooks {
    std::function<LossGrad(std::span<const WindowSample* const>)> loss_and_grads;
    std::function<double()> val_loss;
};

// `optimizer` carries Adam state in and out; a fresh one is used when null.
RunRecord fit(ParamStore& params, const FitHooks& hooks, const WindowSet& train, const TrainConfig& config,
              std::uint64_t stream, const std::string& stage, AdamOptimizer* optimizer = nullptr);

struct TrainedModel {
    FoundationModel model;
    RunRecord record;
};

// Trains an encoder + S-output head on label steps [0, S). Windows may carry
// longer labels. The returned model is frozen.
TrainedModel pretrain(const WindowSet& train, const WindowSet& val, const EncoderSpec& spec, std::size_t head_out,
                      const TrainConfig& config);

// Single model trained on an arbitrary label slice (head width = slice
// length). pretrain() and mtf_train() are the [0, S) and [0, T) cases.
TrainedModel train_on_slice(const WindowSet& train, const WindowSet& val, const EncoderSpec& spec, StepSlice target,
                            const TrainConfig& config, const std::string& stage);

// MT-F baseline: one head with T outputs trained end to end.
TrainedModel mtf_train(const WindowSet& train, const WindowSet& val, const EncoderSpec& spec, std::size_t horizon,
                       const TrainConfig& config);

struct AdaptOptions {
    bool train_logits = true;  // false: keep the initial logits fixed (MoLA-R)
    bool shared_optimizer = true;
};

// Trains segments k = 0..K-1 in order. Each segment trains all experts plus
// its own logits, restores its best-validation snapshot, then freezes its
// logits. Adam state carries across segments unless shared_optimizer is
// off, in which case every segment starts fresh.
std::vector<RunRecord> adapt_all_segments(const FoundationModel& foundation, MolaAdapter& adapter,
                                          const WindowSet& train, const WindowSet& val, const TrainConfig& config,
                                          const AdaptOptions& options = {});

// Returns a message when S > L + 1, where the one-representation error
// bound no longer vanishes.
std::optional<std::string> segment_length_warning(const FoundationModel& foundation, const SegmentPlan& plan);

Mat mola_forecast(const FoundationModel& foundation, const MolaAdapter& adapter, const Mat& history);
std::vector<Mat> mola_forecast_batch(const FoundationModel& foundation, const MolaAdapter& adapter,
                                     std::span<const WindowSample* const> batch);

// Forecast helpers for whole window sets (T x D per window).
std::vector<Mat> forecast_direct(const FoundationModel& model, const WindowSet& windows);
std::vector<Mat> forecast_ar(const FoundationModel& model, const WindowSet& windows, std::size_t horizon);
std::vector<Mat> forecast_mola(const FoundationModel& foundation, const MolaAdapter& adapter,
                               const WindowSet& windows);

// Metrics over the first `horizon` label steps of each window. `horizons`
// lists prefix lengths for the per-horizon rows (defaults to {T}).
EvalReport evaluate_forecasts(const std::vector<Mat>& predictions, const WindowSet& windows,
                              std::vector<std::size_t> horizons = {});

// ---- serialization ------------------------------------------------------------

nlohmann::json metrics_to_json(const Metrics& m);
nlohmann::json eval_to_json(const EvalReport& r);
// One JSON object per epoch (wall time included).
std::vector<nlohmann::json> epoch_lines(const RunRecord& r);
// Deterministic summary without wall-clock fields.
nlohmann::json run_summary(const RunRecord& r);
nlohmann::json train_config_to_json(const TrainConfig& c);

}  // namespace mola
