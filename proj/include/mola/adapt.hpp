#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mola/model.hpp"

namespace mola {

struct LoraExpert {
    Mat b;  // d_out x r
    Mat a;  // r x d_in
    std::size_t rank() const { return a.rows(); }
};

// K contiguous, equal-length segments of a T-step horizon.
struct SegmentPlan {
    std::size_t horizon = 0;
    std::size_t segments = 0;
    std::size_t seg_len = 0;
    std::vector<StepSlice> boundaries;  // 0-based first step, length seg_len

    friend bool operator==(const SegmentPlan&, const SegmentPlan&) = default;
};

// Throws ConfigError unless 1 <= K <= T and K divides T.
SegmentPlan make_segment_plan(std::size_t horizon, std::size_t segments);

// Softmax; invariant to adding a constant to every logit.
std::vector<double> normalize_weights(std::span<const double> logits);

// base + sum_p delta[p] * B_p A_p, accumulated in expert order.
Mat effective_weight(const Mat& base, std::span<const LoraExpert> experts, std::span<const double> delta);

// Default adapter placement: every encoder weight matrix. The head and all
// biases stay untouched.
std::vector<std::string> adapter_placement(const FoundationModel& foundation);
// Throws ConfigError for the head or for layers the foundation lacks.
void check_placement(const FoundationModel& foundation, std::span<const std::string> layers);

struct AdapterOptions {
    std::size_t experts = 4;  // P
    std::size_t rank = 1;     // r
    std::vector<std::string> layers;  // empty -> adapter_placement()
    std::uint64_t seed = 0;
    // Initial logit of expert (k mod P) in segment k; the rest start at 0.
    // With 0 every segment starts from the same uniform mixture.
    double home_logit = 8.0;
};

// P shared LoRA expert pairs per adapted layer plus one logit vector per
// (layer, segment). Parameter names:
//   <layer>.expert<p>.B, <layer>.expert<p>.A, <layer>.logits<k>
class MolaAdapter {
public:
    MolaAdapter() = default;
    // A ~ N(0, 1/r), B = 0, logits per AdapterOptions::home_logit.
    MolaAdapter(const FoundationModel& foundation, SegmentPlan plan, const AdapterOptions& options);
    MolaAdapter(SegmentPlan plan, std::size_t experts, std::size_t rank, std::vector<std::string> layers,
                ParamStore params);

    const SegmentPlan& plan() const { return plan_; }
    std::size_t experts() const { return experts_; }
    std::size_t rank() const { return rank_; }
    const std::vector<std::string>& layers() const { return layers_; }
    const ParamStore& params() const { return params_; }
    ParamStore& params() { return params_; }

    static std::string b_name(const std::string& layer, std::size_t p);
    static std::string a_name(const std::string& layer, std::size_t p);
    static std::string logits_name(const std::string& layer, std::size_t k);

    LoraExpert expert(const std::string& layer, std::size_t p) const;
    std::vector<LoraExpert> experts_of(const std::string& layer) const;
    std::vector<double> logits(const std::string& layer, std::size_t k) const;
    std::vector<double> mixing(const std::string& layer, std::size_t k) const;
    void set_logits(const std::string& layer, std::size_t k, std::span<const double> values);

    // Trainable set for segment k: all experts, plus segment k's logits
    // unless logit training is disabled. Everything else is frozen.
    void begin_segment(std::size_t k, bool train_logits = true);
    // Freezes segment k's logits.
    void end_segment(std::size_t k);
    void freeze_all() { params_.freeze_all(); }

    // Effective weights of every adapted layer for segment k.
    std::map<std::string, Mat> effective_weights(const FoundationModel& foundation, std::size_t k) const;

    void validate_against(const FoundationModel& foundation) const;

private:
    SegmentPlan plan_;
    std::size_t experts_ = 0;
    std::size_t rank_ = 0;
    std::vector<std::string> layers_;
    ParamStore params_;
};

// The foundation with segment k's effective weights swapped in. Biases and
// unadapted layers are read straight from the frozen foundation; gradients
// flow only to the adapter's trainable entries.
class AdaptedView {
public:
    AdaptedView(const FoundationModel& foundation, const MolaAdapter& adapter, std::size_t segment);

    std::size_t segment() const { return segment_; }
    const std::map<std::string, Mat>& effective() const { return effective_; }

    Mat forecast(const Mat& history) const;  // seg_len x D
    std::vector<Mat> forecast_batch(std::span<const WindowSample* const> batch) const;
    Mat encode(const Mat& history) const;

    // MSE on the segment's label rows; grads keyed by adapter parameter names.
    LossGrad loss_and_grads(std::span<const WindowSample* const> batch) const;
    double loss(std::span<const WindowSample* const> batch) const;

private:
    const FoundationModel& foundation_;
    const MolaAdapter& adapter_;
    std::size_t segment_;
    std::map<std::string, Mat> effective_;
};

// ---- checkpoints ------------------------------------------------------------

nlohmann::json plan_to_json(const SegmentPlan& plan);
SegmentPlan plan_from_json(const nlohmann::json& j);
nlohmann::json adapter_to_json(const MolaAdapter& adapter);
MolaAdapter adapter_from_json(const nlohmann::json& j);
void save_adapter(const std::filesystem::path& path, const MolaAdapter& adapter);
MolaAdapter load_adapter(const std::filesystem::path& path);

}  // namespace mola
