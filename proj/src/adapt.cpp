#include "mola/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mola/error.hpp"

namespace mola {

SegmentPlan make_segment_plan(std::size_t horizon, std::size_t segments) {
    if (segments < 1) throw ConfigError("number of segments K must be >= 1");
    if (horizon < segments) {
        throw ConfigError("horizon T=" + std::to_string(horizon) + " is shorter than K=" + std::to_string(segments));
    }
    if (horizon % segments != 0) {
        throw ConfigError("K=" + std::to_string(segments) + " does not divide the horizon T=" +
                          std::to_string(horizon));
    }
    SegmentPlan plan;
    plan.horizon = horizon;
    plan.segments = segments;
    plan.seg_len = horizon / segments;
    for (std::size_t k = 0; k < segments; ++k) plan.boundaries.push_back({k * plan.seg_len, plan.seg_len});
    return plan;
}

std::vector<double> normalize_weights(std::span<const double> logits) {
    if (logits.empty()) throw ShapeError("normalize_weights: empty logit vector");
    if (!std::all_of(logits.begin(), logits.end(), [](double v) { return std::isfinite(v); }))
        throw DataError("normalize_weights: non-finite logit");
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - top);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

Mat effective_weight(const Mat& base, std::span<const LoraExpert> experts, std::span<const double> delta) {
    if (experts.size() != delta.size()) throw ShapeError("effective_weight: one mixing weight per expert");
    Mat out = base;
    for (std::size_t p = 0; p < experts.size(); ++p) {
        const Mat update = matmul(experts[p].b, experts[p].a);
        if (!update.same_shape(base)) throw ShapeError("effective_weight: expert shape does not match the layer");
        axpy(delta[p], update, out);
    }
    return out;
}

std::vector<std::string> adapter_placement(const FoundationModel& foundation) {
    return foundation.encoder_spec().layer_names();
}

void check_placement(const FoundationModel& foundation, std::span<const std::string> layers) {
    if (layers.empty()) throw ConfigError("adapter placement is empty");
    const auto encoder = foundation.encoder_spec().layer_names();
    for (const auto& layer : layers) {
        if (layer == kHeadLayer) {
            throw ConfigError("the decoder head cannot be adapted; it stays frozen (adapt encoder layers only)");
        }
        if (std::find(encoder.begin(), encoder.end(), layer) == encoder.end()) {
            throw ConfigError("unknown layer '" + layer + "' in adapter placement");
        }
    }
    for (std::size_t i = 0; i < layers.size(); ++i)
        for (std::size_t j = i + 1; j < layers.size(); ++j)
            if (layers[i] == layers[j]) throw ConfigError("layer '" + layers[i] + "' listed twice in placement");
}

// ---- MolaAdapter ---------------------------------------------------------------

std::string MolaAdapter::b_name(const std::string& layer, std::size_t p) {
    return layer + ".expert" + std::to_string(p) + ".B";
}
std::string MolaAdapter::a_name(const std::string& layer, std::size_t p) {
    return layer + ".expert" + std::to_string(p) + ".A";
}
std::string MolaAdapter::logits_name(const std::string& layer, std::size_t k) {
    return layer + ".logits" + std::to_string(k);
}

MolaAdapter::MolaAdapter(const FoundationModel& foundation, SegmentPlan plan, const AdapterOptions& options)
    : plan_(std::move(plan)), experts_(options.experts), rank_(options.rank) {
    if (experts_ < 1) throw ConfigError("number of LoRA experts P must be >= 1");
    if (rank_ < 1) throw ConfigError("LoRA rank r must be >= 1");
    if (!std::isfinite(options.home_logit)) throw ConfigError("home_logit must be finite");
    layers_ = options.layers.empty() ? adapter_placement(foundation) : options.layers;
    check_placement(foundation, layers_);

    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(rank_)));
    for (const auto& layer : layers_) {
        const Mat& w = foundation.params().at(weight_name(layer));
        if (!(rank_ < std::min(w.rows(), w.cols()))) {
            throw ConfigError("LoRA rank " + std::to_string(rank_) + " must be below min(d_out, d_in) = " +
                              std::to_string(std::min(w.rows(), w.cols())) + " for layer '" + layer + "'");
        }
        for (std::size_t p = 0; p < experts_; ++p) {
            Mat a(rank_, w.cols());
            for (double& v : a.data()) v = gauss(rng);
            params_.add(b_name(layer, p), Mat(w.rows(), rank_));
            params_.add(a_name(layer, p), std::move(a));
        }
        for (std::size_t k = 0; k < plan_.segments; ++k) {
            Mat z(experts_, 1);
            z(k % experts_, 0) = options.home_logit;
            params_.add(logits_name(layer, k), std::move(z));
        }
    }
}

MolaAdapter::MolaAdapter(SegmentPlan plan, std::size_t experts, std::size_t rank, std::vector<std::string> layers,
                         ParamStore params)
    : plan_(std::move(plan)), experts_(experts), rank_(rank), layers_(std::move(layers)), params_(std::move(params)) {
    for (const auto& layer : layers_) {
        for (std::size_t p = 0; p < experts_; ++p) {
            if (params_.at(b_name(layer, p)).cols() != rank_ || params_.at(a_name(layer, p)).rows() != rank_)
                throw ShapeError("adapter expert rank mismatch in layer '" + layer + "'");
        }
        for (std::size_t k = 0; k < plan_.segments; ++k)
            if (params_.at(logits_name(layer, k)).rows() != experts_)
                throw ShapeError("adapter logits length mismatch in layer '" + layer + "'");
    }
    if (params_.entries().size() != layers_.size() * (2 * experts_ + plan_.segments))
        throw ShapeError("adapter checkpoint has unexpected entries");
}

LoraExpert MolaAdapter::expert(const std::string& layer, std::size_t p) const {
    return {params_.at(b_name(layer, p)), params_.at(a_name(layer, p))};
}

std::vector<LoraExpert> MolaAdapter::experts_of(const std::string& layer) const {
    std::vector<LoraExpert> out;
    out.reserve(experts_);
    for (std::size_t p = 0; p < experts_; ++p) out.push_back(expert(layer, p));
    return out;
}

std::vector<double> MolaAdapter::logits(const std::string& layer, std::size_t k) const {
    return params_.at(logits_name(layer, k)).data();
}

std::vector<double> MolaAdapter::mixing(const std::string& layer, std::size_t k) const {
    return normalize_weights(params_.at(logits_name(layer, k)).data());
}

void MolaAdapter::set_logits(const std::string& layer, std::size_t k, std::span<const double> values) {
    if (values.size() != experts_) throw ShapeError("set_logits: need one logit per expert");
    params_.at(logits_name(layer, k)) = Mat(experts_, 1, std::vector<double>(values.begin(), values.end()));
}

void MolaAdapter::begin_segment(std::size_t k, bool train_logits) {
    if (k >= plan_.segments) throw ConfigError("segment index out of range");
    params_.freeze_all();
    for (const auto& layer : layers_) {
        for (std::size_t p = 0; p < experts_; ++p) {
            params_.set_trainable(b_name(layer, p), true);
            params_.set_trainable(a_name(layer, p), true);
        }
        params_.set_trainable(logits_name(layer, k), train_logits);
    }
}

void MolaAdapter::end_segment(std::size_t k) {
    for (const auto& layer : layers_) params_.set_trainable(logits_name(layer, k), false);
}

std::map<std::string, Mat> MolaAdapter::effective_weights(const FoundationModel& foundation, std::size_t k) const {
    if (k >= plan_.segments) throw ConfigError("segment index out of range");
    std::map<std::string, Mat> out;
    for (const auto& layer : layers_) {
        const auto experts = experts_of(layer);
        const auto delta = mixing(layer, k);
        out.emplace(layer, effective_weight(foundation.params().at(weight_name(layer)), experts, delta));
    }
    return out;
}

void MolaAdapter::validate_against(const FoundationModel& foundation) const {
    check_placement(foundation, layers_);
    if (plan_.seg_len != foundation.head_out()) {
        throw ConfigError("foundation head_out=" + std::to_string(foundation.head_out()) +
                          " does not match the segment length T/K=" + std::to_string(plan_.seg_len));
    }
    for (const auto& layer : layers_) {
        const Mat& w = foundation.params().at(weight_name(layer));
        for (std::size_t p = 0; p < experts_; ++p) {
            if (params_.at(b_name(layer, p)).rows() != w.rows() || params_.at(a_name(layer, p)).cols() != w.cols())
                throw ShapeError("adapter expert shapes do not match layer '" + layer + "'");
        }
    }
}

// ---- AdaptedView ---------------------------------------------------------------

AdaptedView::AdaptedView(const FoundationModel& foundation, const MolaAdapter& adapter, std::size_t segment)
    : foundation_(foundation), adapter_(adapter), segment_(segment) {
    adapter.validate_against(foundation);
    effective_ = adapter.effective_weights(foundation, segment);
}

Mat AdaptedView::forecast(const Mat& history) const {
    if (history.rows() != foundation_.lookback()) throw ShapeError("forecast: history/lookback mismatch");
    const auto layers = foundation_.layers(&effective_);
    return forward_stack(layers, history, foundation_.encoder_spec().activation).output;
}

Mat AdaptedView::encode(const Mat& history) const {
    if (history.rows() != foundation_.lookback()) throw ShapeError("encode: history/lookback mismatch");
    auto layers = foundation_.layers(&effective_);
    std::span<const LayerView> enc(layers.data(), layers.size() - 1);
    return forward_stack(enc, history, foundation_.encoder_spec().activation).output;
}

std::vector<Mat> AdaptedView::forecast_batch(std::span<const WindowSample* const> batch) const {
    const BatchMatrices m = assemble_batch(batch, foundation_.lookback(), std::nullopt);
    const auto layers = foundation_.layers(&effective_);
    return split_columns(forward_stack(layers, m.inputs, foundation_.encoder_spec().activation).output, m.windows,
                         m.channels);
}

double AdaptedView::loss(std::span<const WindowSample* const> batch) const {
    const StepSlice target = adapter_.plan().boundaries[segment_];
    const BatchMatrices m = assemble_batch(batch, foundation_.lookback(), target);
    const auto layers = foundation_.layers(&effective_);
    const Mat out = forward_stack(layers, m.inputs, foundation_.encoder_spec().activation).output;
    return frobenius_sq(sub(out, m.targets)) / static_cast<double>(m.targets.size());
}

LossGrad AdaptedView::loss_and_grads(std::span<const WindowSample* const> batch) const {
    const StepSlice target = adapter_.plan().boundaries[segment_];
    const BatchMatrices m = assemble_batch(batch, foundation_.lookback(), target);
    const Activation act = foundation_.encoder_spec().activation;
    const auto layers = foundation_.layers(&effective_);
    const ForwardTrace trace = forward_stack(layers, m.inputs, act);
    const Mat diff = sub(trace.output, m.targets);
    const double norm = static_cast<double>(diff.size());

    LossGrad out;
    out.loss = frobenius_sq(diff) / norm;
    const auto grads = backward_stack(layers, trace, scale(diff, 2.0 / norm), act);

    const auto names = foundation_.layer_names();
    const ParamStore& params = adapter_.params();
    for (const auto& layer : adapter_.layers()) {
        const auto idx = static_cast<std::size_t>(std::find(names.begin(), names.end(), layer) - names.begin());
        const Mat& g = grads[idx].weight;  // dL/dM_eff
        const auto delta = adapter_.mixing(layer, segment_);
        std::vector<double> mix_grad(adapter_.experts(), 0.0);
        for (std::size_t p = 0; p < adapter_.experts(); ++p) {
            const Mat& b = params.at(MolaAdapter::b_name(layer, p));
            const Mat& a = params.at(MolaAdapter::a_name(layer, p));
            const std::string bn = MolaAdapter::b_name(layer, p);
            const std::string an = MolaAdapter::a_name(layer, p);
            // an expert with zero weight does not touch this segment's output
            if (delta[p] != 0.0) {
                if (params.trainable(bn)) out.grads.emplace(bn, scale(matmul_nt(g, a), delta[p]));
                if (params.trainable(an)) out.grads.emplace(an, scale(matmul_tn(b, g), delta[p]));
            }
            mix_grad[p] = dot(g, matmul(b, a));
        }
        const std::string ln = MolaAdapter::logits_name(layer, segment_);
        if (params.trainable(ln)) {
            // softmax backward: dL/dz_j = delta_j (g_j - sum_i delta_i g_i)
            double mean = 0.0;
            for (std::size_t p = 0; p < delta.size(); ++p) mean += delta[p] * mix_grad[p];
            Mat dz(adapter_.experts(), 1);
            for (std::size_t p = 0; p < delta.size(); ++p) dz(p, 0) = delta[p] * (mix_grad[p] - mean);
            out.grads.emplace(ln, std::move(dz));
        }
    }
    return out;
}

// ---- checkpoints -----------------------------------------------------------------

nlohmann::json plan_to_json(const SegmentPlan& plan) {
    return {{"horizon", plan.horizon}, {"segments", plan.segments}, {"seg_len", plan.seg_len}};
}

SegmentPlan plan_from_json(const nlohmann::json& j) {
    try {
        SegmentPlan plan = make_segment_plan(j.at("horizon").get<std::size_t>(), j.at("segments").get<std::size_t>());
        if (plan.seg_len != j.at("seg_len").get<std::size_t>()) throw DataError("segment plan is inconsistent");
        return plan;
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed segment plan: ") + ex.what());
    }
}

nlohmann::json adapter_to_json(const MolaAdapter& adapter) {
    return {{"format", "mola.adapter"},
            {"version", 1},
            {"plan", plan_to_json(adapter.plan())},
            {"experts", adapter.experts()},
            {"rank", adapter.rank()},
            {"layers", adapter.layers()},
            {"entries", params_to_json(adapter.params())}};
}

MolaAdapter adapter_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "mola.adapter") throw DataError("not an adapter checkpoint");
        if (j.at("version") != 1) throw DataError("unsupported adapter checkpoint version");
        return MolaAdapter(plan_from_json(j.at("plan")), j.at("experts").get<std::size_t>(),
                           j.at("rank").get<std::size_t>(), j.at("layers").get<std::vector<std::string>>(),
                           params_from_json(j.at("entries")));
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed adapter checkpoint: ") + ex.what());
    }
}

void save_adapter(const std::filesystem::path& path, const MolaAdapter& adapter) {
    write_json_file(path, adapter_to_json(adapter));
}

MolaAdapter load_adapter(const std::filesystem::path& path) { return adapter_from_json(read_json_file(path)); }

}  // namespace mola
