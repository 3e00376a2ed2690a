#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mola/data.hpp"
#include "mola/linalg.hpp"

namespace mola {

// ---- parameter storage -----------------------------------------------------

struct ParamEntry {
    std::string name;
    Mat value;
    bool trainable = true;
    friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

// Named matrices in insertion order, each with a trainable flag.
class ParamStore {
public:
    void add(std::string name, Mat value, bool trainable = true);
    bool contains(const std::string& name) const;
    const Mat& at(const std::string& name) const;
    Mat& at(const std::string& name);
    bool trainable(const std::string& name) const;
    void set_trainable(const std::string& name, bool trainable);
    void freeze_all();
    bool any_trainable() const;

    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::vector<ParamEntry>& entries() { return entries_; }
    std::size_t parameter_count() const;

    friend bool operator==(const ParamStore&, const ParamStore&) = default;

private:
    std::size_t index_of(const std::string& name) const;
    std::vector<ParamEntry> entries_;
};

// Gradients keyed by parameter name. Only trainable entries appear.
using GradStore = std::map<std::string, Mat>;

// ---- network building blocks ----------------------------------------------

enum class Activation { relu, tanh };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

// One affine map y = W x + b applied column-wise, optionally followed by the
// activation.
struct LayerView {
    const Mat* weight = nullptr;  // out x in
    const Mat* bias = nullptr;    // out x 1
    bool activated = false;
};

struct ForwardTrace {
    std::vector<Mat> inputs;     // input to each layer
    std::vector<Mat> preacts;    // W x + b for each layer
    Mat output;
};

struct LayerGrad {
    Mat weight;
    Mat bias;
};

// Columns of `x` are independent samples.
ForwardTrace forward_stack(std::span<const LayerView> layers, const Mat& x, Activation act);
// Reverse pass given dLoss/dOutput; returns one LayerGrad per layer.
std::vector<LayerGrad> backward_stack(std::span<const LayerView> layers, const ForwardTrace& trace,
                                      const Mat& d_output, Activation act);

// ---- encoder/head model ----------------------------------------------------

enum class EncoderKind { linear, mlp2 };

const char* to_string(EncoderKind k);
EncoderKind encoder_kind_from_string(const std::string& s);

struct EncoderSpec {
    EncoderKind kind = EncoderKind::linear;
    std::size_t lookback = 0;
    std::vector<std::size_t> hidden;  // mlp2: exactly two widths
    Activation activation = Activation::relu;

    void validate() const;
    // Linear: lookback. mlp2: hidden[1].
    std::size_t rep_dim() const;
    // "encoder.0", "encoder.1", ...
    std::vector<std::string> layer_names() const;
    friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

inline const std::string kHeadLayer = "head";
std::string weight_name(const std::string& layer);
std::string bias_name(const std::string& layer);

// Batch laid out for the channel-shared network: one column per
// (window, channel) pair, window-major.
struct BatchMatrices {
    Mat inputs;   // L x (B*D)
    Mat targets;  // S x (B*D), empty when no target slice was requested
    std::size_t windows = 0;
    std::size_t channels = 0;
};

struct StepSlice {
    std::size_t first = 0;  // 0-based forecast step
    std::size_t count = 0;
    friend bool operator==(const StepSlice&, const StepSlice&) = default;
};

BatchMatrices assemble_batch(std::span<const WindowSample* const> batch, std::size_t lookback,
                             std::optional<StepSlice> target);
// Inverse of the column layout: S x (B*D) -> B matrices of S x D.
std::vector<Mat> split_columns(const Mat& out, std::size_t windows, std::size_t channels);

struct LossGrad {
    double loss = 0.0;
    GradStore grads;
};

// Encoder followed by a linear head with `head_out` outputs. Each channel
// passes through the same temporal weights. The encoder's last layer has no
// activation; mlp2 activates its first layer only.
class FoundationModel {
public:
    FoundationModel() = default;
    // Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0.
    FoundationModel(EncoderSpec spec, std::size_t head_out, std::uint64_t seed);
    FoundationModel(EncoderSpec spec, std::size_t head_out, ParamStore params);

    const EncoderSpec& encoder_spec() const { return spec_; }
    std::size_t head_out() const { return head_out_; }
    std::size_t lookback() const { return spec_.lookback; }
    const ParamStore& params() const { return params_; }
    ParamStore& params() { return params_; }

    void freeze() { params_.freeze_all(); }
    bool frozen() const { return !params_.any_trainable(); }

    // Layer views in forward order; `weight_override` substitutes weights by
    // layer name (used by adapted views).
    std::vector<LayerView> layers(const std::map<std::string, Mat>* weight_override = nullptr) const;
    std::vector<std::string> layer_names() const;
    std::size_t encoder_layer_count() const { return spec_.layer_names().size(); }

    Mat encode(const Mat& history) const;  // rep_dim x D
    Mat decode(const Mat& rep) const;      // head_out x D
    Mat forecast(const Mat& history) const;  // head_out x D
    // Forecast a batch of windows at once; returns head_out x D per window.
    std::vector<Mat> forecast_batch(std::span<const WindowSample* const> batch) const;

    // Mean squared error over windows x steps x channels against label rows
    // [target.first, target.first + head_out). Gradients only for trainable
    // entries.
    LossGrad loss_and_grads(std::span<const WindowSample* const> batch, StepSlice target) const;
    double loss(std::span<const WindowSample* const> batch, StepSlice target) const;

    void validate() const;

private:
    EncoderSpec spec_;
    std::size_t head_out_ = 0;
    ParamStore params_;
};

// Mean squared error of the model on `windows` for label rows `target`.
double evaluate_loss(const FoundationModel& model, const WindowSet& windows, StepSlice target);

std::vector<const WindowSample*> pointers(const WindowSet& set);

// Recursive one-step forecasting: predict, append, drop oldest, T times.
Mat ar_f_forecast(const FoundationModel& model, const Mat& history, std::size_t horizon);
std::vector<Mat> ar_f_forecast_batch(const FoundationModel& model, std::span<const WindowSample* const> batch,
                                     std::size_t horizon);

struct Metrics {
    double mse = 0.0;
    double mae = 0.0;
};

Metrics metrics(const Mat& pred, const Mat& label);

// ---- checkpoints ------------------------------------------------------------

// {"name", "rows", "cols", "trainable", "values"} per entry, row-major.
// Doubles are printed at round-trip precision, so load(save(x)) == x.
nlohmann::json params_to_json(const ParamStore& params);
ParamStore params_from_json(const nlohmann::json& j);

nlohmann::json encoder_spec_to_json(const EncoderSpec& spec);
EncoderSpec encoder_spec_from_json(const nlohmann::json& j);

nlohmann::json foundation_to_json(const FoundationModel& model);
FoundationModel foundation_from_json(const nlohmann::json& j);
void save_foundation(const std::filesystem::path& path, const FoundationModel& model);
FoundationModel load_foundation(const std::filesystem::path& path);

// Shared file helpers for JSON artifacts.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace mola
