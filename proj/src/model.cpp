#include "mola/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "mola/error.hpp"

namespace mola {

// ---- ParamStore --------------------------------------------------------------

std::size_t ParamStore::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name == name) return i;
    throw ConfigError("unknown parameter '" + name + "'");
}

void ParamStore::add(std::string name, Mat value, bool trainable) {
    if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
    entries_.push_back({std::move(name), std::move(value), trainable});
}

bool ParamStore::contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const ParamEntry& e) { return e.name == name; });
}

const Mat& ParamStore::at(const std::string& name) const { return entries_[index_of(name)].value; }
Mat& ParamStore::at(const std::string& name) { return entries_[index_of(name)].value; }
bool ParamStore::trainable(const std::string& name) const { return entries_[index_of(name)].trainable; }
void ParamStore::set_trainable(const std::string& name, bool trainable) {
    entries_[index_of(name)].trainable = trainable;
}

void ParamStore::freeze_all() {
    for (auto& e : entries_) e.trainable = false;
}

bool ParamStore::any_trainable() const {
    return std::any_of(entries_.begin(), entries_.end(), [](const ParamEntry& e) { return e.trainable; });
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

// ---- activations -------------------------------------------------------------

const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + s + "' (expected relu or tanh)");
}

namespace {

double activate(double x, Activation a) { return a == Activation::relu ? (x > 0.0 ? x : 0.0) : std::tanh(x); }

double activate_grad(double pre, Activation a) {
    if (a == Activation::relu) return pre > 0.0 ? 1.0 : 0.0;
    const double t = std::tanh(pre);
    return 1.0 - t * t;
}

}  // namespace

ForwardTrace forward_stack(std::span<const LayerView> layers, const Mat& x, Activation act) {
    ForwardTrace trace;
    trace.inputs.reserve(layers.size());
    trace.preacts.reserve(layers.size());
    Mat current = x;
    for (const auto& layer : layers) {
        Mat pre = matmul(*layer.weight, current);
        for (std::size_t i = 0; i < pre.rows(); ++i) {
            const double b = (*layer.bias)(i, 0);
            for (double& v : pre.row(i)) v += b;
        }
        Mat post = pre;
        if (layer.activated)
            for (double& v : post.data()) v = activate(v, act);
        trace.inputs.push_back(std::move(current));
        trace.preacts.push_back(std::move(pre));
        current = std::move(post);
    }
    trace.output = std::move(current);
    return trace;
}

std::vector<LayerGrad> backward_stack(std::span<const LayerView> layers, const ForwardTrace& trace,
                                      const Mat& d_output, Activation act) {
    std::vector<LayerGrad> grads(layers.size());
    Mat d = d_output;
    for (std::size_t l = layers.size(); l-- > 0;) {
        if (layers[l].activated) {
            const Mat& pre = trace.preacts[l];
            for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] *= activate_grad(pre.data()[i], act);
        }
        grads[l].weight = matmul_nt(d, trace.inputs[l]);
        grads[l].bias = Mat(d.rows(), 1);
        for (std::size_t i = 0; i < d.rows(); ++i) {
            double acc = 0.0;
            for (double v : d.row(i)) acc += v;
            grads[l].bias(i, 0) = acc;
        }
        if (l > 0) d = matmul_tn(*layers[l].weight, d);
    }
    return grads;
}

// ---- EncoderSpec -------------------------------------------------------------

const char* to_string(EncoderKind k) { return k == EncoderKind::linear ? "linear" : "mlp2"; }

EncoderKind encoder_kind_from_string(const std::string& s) {
    if (s == "linear") return EncoderKind::linear;
    if (s == "mlp2") return EncoderKind::mlp2;
    throw ConfigError("unknown encoder kind '" + s + "' (expected linear or mlp2)");
}

void EncoderSpec::validate() const {
    if (lookback < 1) throw ConfigError("encoder lookback must be >= 1");
    if (kind == EncoderKind::linear && !hidden.empty())
        throw ConfigError("linear encoder takes no hidden widths");
    if (kind == EncoderKind::mlp2) {
        if (hidden.size() != 2) throw ConfigError("mlp2 encoder needs exactly two hidden widths");
        if (hidden[0] < 1 || hidden[1] < 1) throw ConfigError("mlp2 hidden widths must be >= 1");
    }
}

std::size_t EncoderSpec::rep_dim() const { return kind == EncoderKind::linear ? lookback : hidden.at(1); }

std::vector<std::string> EncoderSpec::layer_names() const {
    if (kind == EncoderKind::linear) return {"encoder.0"};
    return {"encoder.0", "encoder.1"};
}

std::string weight_name(const std::string& layer) { return layer + ".weight"; }
std::string bias_name(const std::string& layer) { return layer + ".bias"; }

// ---- batches -----------------------------------------------------------------

BatchMatrices assemble_batch(std::span<const WindowSample* const> batch, std::size_t lookback,
                             std::optional<StepSlice> target) {
    if (batch.empty()) throw ShapeError("empty batch");
    const std::size_t d = batch.front()->history.cols();
    BatchMatrices out;
    out.windows = batch.size();
    out.channels = d;
    out.inputs = Mat(lookback, batch.size() * d);
    if (target) out.targets = Mat(target->count, batch.size() * d);
    for (std::size_t w = 0; w < batch.size(); ++w) {
        const WindowSample& s = *batch[w];
        if (s.history.rows() != lookback || s.history.cols() != d) {
            throw ShapeError("window history is " + std::to_string(s.history.rows()) + "x" +
                             std::to_string(s.history.cols()) + ", expected " + std::to_string(lookback) + "x" +
                             std::to_string(d));
        }
        for (std::size_t i = 0; i < lookback; ++i)
            for (std::size_t c = 0; c < d; ++c) out.inputs(i, w * d + c) = s.history(i, c);
        if (target) {
            if (target->first + target->count > s.label.rows() || s.label.cols() != d)
                throw ShapeError("window label too short for the requested step slice");
            for (std::size_t i = 0; i < target->count; ++i)
                for (std::size_t c = 0; c < d; ++c) out.targets(i, w * d + c) = s.label(target->first + i, c);
        }
    }
    return out;
}

std::vector<Mat> split_columns(const Mat& out, std::size_t windows, std::size_t channels) {
    std::vector<Mat> result;
    result.reserve(windows);
    for (std::size_t w = 0; w < windows; ++w) {
        Mat m(out.rows(), channels);
        for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t c = 0; c < channels; ++c) m(i, c) = out(i, w * channels + c);
        result.push_back(std::move(m));
    }
    return result;
}

std::vector<const WindowSample*> pointers(const WindowSet& set) {
    std::vector<const WindowSample*> out;
    out.reserve(set.size());
    for (const auto& w : set) out.push_back(&w);
    return out;
}

// ---- FoundationModel ---------------------------------------------------------

FoundationModel::FoundationModel(EncoderSpec spec, std::size_t head_out, std::uint64_t seed)
    : spec_(std::move(spec)), head_out_(head_out) {
    spec_.validate();
    if (head_out_ < 1) throw ConfigError("head output width must be >= 1");
    std::mt19937_64 rng(seed);
    auto add_layer = [&](const std::string& name, std::size_t out, std::size_t in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Mat w(out, in);
        for (double& v : w.data()) v = dist(rng);
        params_.add(weight_name(name), std::move(w));
        params_.add(bias_name(name), Mat(out, 1));
    };
    const auto names = spec_.layer_names();
    if (spec_.kind == EncoderKind::linear) {
        add_layer(names[0], spec_.lookback, spec_.lookback);
    } else {
        add_layer(names[0], spec_.hidden[0], spec_.lookback);
        add_layer(names[1], spec_.hidden[1], spec_.hidden[0]);
    }
    add_layer(kHeadLayer, head_out_, spec_.rep_dim());
}

FoundationModel::FoundationModel(EncoderSpec spec, std::size_t head_out, ParamStore params)
    : spec_(std::move(spec)), head_out_(head_out), params_(std::move(params)) {
    validate();
}

void FoundationModel::validate() const {
    spec_.validate();
    if (head_out_ < 1) throw ConfigError("head output width must be >= 1");
    std::size_t in = spec_.lookback;
    auto check = [&](const std::string& layer, std::size_t out) {
        const Mat& w = params_.at(weight_name(layer));
        const Mat& b = params_.at(bias_name(layer));
        if (w.rows() != out || w.cols() != in || b.rows() != out || b.cols() != 1) {
            throw ShapeError("parameter shapes of layer '" + layer + "' do not match the encoder spec");
        }
        in = out;
    };
    const auto names = spec_.layer_names();
    if (spec_.kind == EncoderKind::linear) {
        check(names[0], spec_.lookback);
    } else {
        check(names[0], spec_.hidden[0]);
        check(names[1], spec_.hidden[1]);
    }
    check(kHeadLayer, head_out_);
    if (params_.entries().size() != 2 * (names.size() + 1)) throw ShapeError("unexpected extra parameters");
}

std::vector<std::string> FoundationModel::layer_names() const {
    auto names = spec_.layer_names();
    names.push_back(kHeadLayer);
    return names;
}

std::vector<LayerView> FoundationModel::layers(const std::map<std::string, Mat>* weight_override) const {
    const auto names = layer_names();
    const std::size_t n_enc = names.size() - 1;
    std::vector<LayerView> out;
    out.reserve(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
        const Mat* w = &params_.at(weight_name(names[i]));
        if (weight_override) {
            if (auto it = weight_override->find(names[i]); it != weight_override->end()) w = &it->second;
        }
        // only hidden encoder layers are activated
        const bool activated = i + 1 < n_enc;
        out.push_back({w, &params_.at(bias_name(names[i])), activated});
    }
    return out;
}

Mat FoundationModel::encode(const Mat& history) const {
    if (history.rows() != spec_.lookback)
        throw ShapeError("encode: history has " + std::to_string(history.rows()) + " rows, lookback is " +
                         std::to_string(spec_.lookback));
    auto all = layers();
    std::span<const LayerView> enc(all.data(), all.size() - 1);
    return forward_stack(enc, history, spec_.activation).output;
}

Mat FoundationModel::decode(const Mat& rep) const {
    if (rep.rows() != spec_.rep_dim()) throw ShapeError("decode: representation size mismatch");
    auto all = layers();
    std::span<const LayerView> head(&all.back(), 1);
    return forward_stack(head, rep, spec_.activation).output;
}

Mat FoundationModel::forecast(const Mat& history) const {
    if (history.rows() != spec_.lookback) throw ShapeError("forecast: history/lookback mismatch");
    const auto all = layers();
    return forward_stack(all, history, spec_.activation).output;
}

std::vector<Mat> FoundationModel::forecast_batch(std::span<const WindowSample* const> batch) const {
    const BatchMatrices m = assemble_batch(batch, spec_.lookback, std::nullopt);
    const auto all = layers();
    return split_columns(forward_stack(all, m.inputs, spec_.activation).output, m.windows, m.channels);
}

LossGrad FoundationModel::loss_and_grads(std::span<const WindowSample* const> batch, StepSlice target) const {
    if (target.count != head_out_) throw ShapeError("target slice length must equal the head width");
    const BatchMatrices m = assemble_batch(batch, spec_.lookback, target);
    const auto all = layers();
    const ForwardTrace trace = forward_stack(all, m.inputs, spec_.activation);
    Mat diff = sub(trace.output, m.targets);
    const double norm = static_cast<double>(diff.size());
    LossGrad out;
    out.loss = frobenius_sq(diff) / norm;
    if (!params_.any_trainable()) return out;
    Mat d_out = scale(diff, 2.0 / norm);
    auto grads = backward_stack(all, trace, d_out, spec_.activation);
    const auto names = layer_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        const std::string w = weight_name(names[i]);
        const std::string b = bias_name(names[i]);
        if (params_.trainable(w)) out.grads.emplace(w, std::move(grads[i].weight));
        if (params_.trainable(b)) out.grads.emplace(b, std::move(grads[i].bias));
    }
    return out;
}

double FoundationModel::loss(std::span<const WindowSample* const> batch, StepSlice target) const {
    if (target.count != head_out_) throw ShapeError("target slice length must equal the head width");
    const BatchMatrices m = assemble_batch(batch, spec_.lookback, target);
    const auto all = layers();
    return frobenius_sq(sub(forward_stack(all, m.inputs, spec_.activation).output, m.targets)) /
           static_cast<double>(m.targets.size());
}

double evaluate_loss(const FoundationModel& model, const WindowSet& windows, StepSlice target) {
    if (windows.empty()) throw DataError("evaluate_loss: no windows");
    const auto ptrs = pointers(windows);
    return model.loss(ptrs, target);
}

Mat ar_f_forecast(const FoundationModel& model, const Mat& history, std::size_t horizon) {
    const WindowSample w{history, Mat(), 0};
    const WindowSample* p = &w;
    return ar_f_forecast_batch(model, std::span<const WindowSample* const>(&p, 1), horizon).front();
}

std::vector<Mat> ar_f_forecast_batch(const FoundationModel& model, std::span<const WindowSample* const> batch,
                                     std::size_t horizon) {
    if (model.head_out() != 1) throw ConfigError("AR-F forecasting needs a one-step model (head width 1)");
    BatchMatrices m = assemble_batch(batch, model.lookback(), std::nullopt);
    const std::size_t lookback = model.lookback();
    const std::size_t cols = m.inputs.cols();
    const auto all = model.layers();
    Mat out(horizon, cols);
    Mat window = std::move(m.inputs);
    for (std::size_t t = 0; t < horizon; ++t) {
        const Mat pred = forward_stack(all, window, model.encoder_spec().activation).output;
        for (std::size_t j = 0; j < cols; ++j) out(t, j) = pred(0, j);
        for (std::size_t i = 0; i + 1 < lookback; ++i)
            for (std::size_t j = 0; j < cols; ++j) window(i, j) = window(i + 1, j);
        for (std::size_t j = 0; j < cols; ++j) window(lookback - 1, j) = pred(0, j);
    }
    return split_columns(out, m.windows, m.channels);
}

Metrics metrics(const Mat& pred, const Mat& label) {
    if (!pred.same_shape(label)) throw ShapeError("metrics: prediction/label shape mismatch");
    if (pred.empty()) throw ShapeError("metrics: empty input");
    Metrics m;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred.data()[i] - label.data()[i];
        m.mse += e * e;
        m.mae += std::abs(e);
    }
    m.mse /= static_cast<double>(pred.size());
    m.mae /= static_cast<double>(pred.size());
    return m;
}

// ---- checkpoints -------------------------------------------------------------

nlohmann::json params_to_json(const ParamStore& params) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : params.entries()) {
        entries.push_back({{"name", e.name},
                           {"rows", e.value.rows()},
                           {"cols", e.value.cols()},
                           {"trainable", e.trainable},
                           {"values", e.value.data()}});
    }
    return entries;
}

ParamStore params_from_json(const nlohmann::json& j) {
    ParamStore out;
    try {
        for (const auto& e : j) {
            out.add(e.at("name").get<std::string>(),
                    Mat(e.at("rows").get<std::size_t>(), e.at("cols").get<std::size_t>(),
                        e.at("values").get<std::vector<double>>()),
                    e.at("trainable").get<bool>());
        }
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed parameter entries: ") + ex.what());
    }
    return out;
}

nlohmann::json encoder_spec_to_json(const EncoderSpec& spec) {
    return {{"kind", to_string(spec.kind)},
            {"lookback", spec.lookback},
            {"hidden", spec.hidden},
            {"activation", to_string(spec.activation)}};
}

EncoderSpec encoder_spec_from_json(const nlohmann::json& j) {
    EncoderSpec spec;
    try {
        spec.kind = encoder_kind_from_string(j.at("kind").get<std::string>());
        spec.lookback = j.at("lookback").get<std::size_t>();
        spec.hidden = j.at("hidden").get<std::vector<std::size_t>>();
        spec.activation = activation_from_string(j.at("activation").get<std::string>());
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed encoder spec: ") + ex.what());
    }
    spec.validate();
    return spec;
}

nlohmann::json foundation_to_json(const FoundationModel& model) {
    return {{"format", "mola.foundation"},
            {"version", 1},
            {"encoder", encoder_spec_to_json(model.encoder_spec())},
            {"head_out", model.head_out()},
            {"entries", params_to_json(model.params())}};
}

FoundationModel foundation_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "mola.foundation") throw DataError("not a foundation checkpoint");
        if (j.at("version") != 1) throw DataError("unsupported foundation checkpoint version");
        return FoundationModel(encoder_spec_from_json(j.at("encoder")), j.at("head_out").get<std::size_t>(),
                               params_from_json(j.at("entries")));
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed foundation checkpoint: ") + ex.what());
    }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(path.string() + ": " + ex.what());
    }
}

void save_foundation(const std::filesystem::path& path, const FoundationModel& model) {
    write_json_file(path, foundation_to_json(model));
}

FoundationModel load_foundation(const std::filesystem::path& path) {
    return foundation_from_json(read_json_file(path));
}

}  // namespace mola
