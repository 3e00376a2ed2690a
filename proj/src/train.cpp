#include "mola/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "mola/error.hpp"

namespace mola {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0)) throw ConfigError("adam beta1 must lie in (0, 1)");
    if (!(adam.beta2 > 0.0 && adam.beta2 < 1.0)) throw ConfigError("adam beta2 must lie in (0, 1)");
    if (!(adam.eps > 0.0)) throw ConfigError("adam eps must be > 0");
}

TrainConfig TrainConfig::baseline_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::pretrain_defaults() {
    TrainConfig c;
    c.max_epochs = 5;
    c.patience = 2;
    return c;
}

// ---- Adam ------------------------------------------------------------------------

void AdamOptimizer::step(ParamStore& params, const GradStore& grads, double lr) {
    ++t_;
    for (auto& entry : params.entries()) {
        if (!entry.trainable) continue;
        const auto g_it = grads.find(entry.name);
        if (g_it == grads.end()) continue;
        const Mat& g = g_it->second;
        if (!g.same_shape(entry.value)) throw InternalError("gradient shape mismatch for '" + entry.name + "'");
        auto [it, inserted] = moments_.try_emplace(entry.name);
        if (inserted) {
            it->second.m = Mat(g.rows(), g.cols());
            it->second.v = Mat(g.rows(), g.cols());
        }
        const double t = static_cast<double>(++it->second.t);
        const double bc1 = 1.0 - std::pow(config_.beta1, t);
        const double bc2 = 1.0 - std::pow(config_.beta2, t);
        auto& m = it->second.m.data();
        auto& v = it->second.v.data();
        auto& w = entry.value.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g.data()[i];
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            w[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        }
    }
}

// ---- early stopping ----------------------------------------------------------------

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
    if (patience_ < 1) throw ConfigError("patience must be >= 1");
}

bool EarlyStopping::update(double val_loss) {
    ++epoch_;
    if (best_epoch_ == 0 || val_loss < best_) {
        best_ = val_loss;
        best_epoch_ = epoch_;
        bad_epochs_ = 0;
        return true;
    }
    ++bad_epochs_;
    return false;
}

const char* to_string(StopReason r) { return r == StopReason::max_epochs ? "max_epochs" : "early_stopping"; }

// ---- generic loop ------------------------------------------------------------------

RunRecord fit(ParamStore& params, const FitHooks& hooks, const WindowSet& train, const TrainConfig& config,
              std::uint64_t stream, const std::string& stage, AdamOptimizer* optimizer) {
    config.validate();
    if (train.empty()) throw DataError(stage + ": no training windows");
    const auto ptrs = pointers(train);
    std::vector<std::size_t> order(ptrs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    std::mt19937_64 rng(seq);

    AdamOptimizer local(config.adam);
    AdamOptimizer& adam = optimizer ? *optimizer : local;
    EarlyStopping stopper(config.patience);
    RunRecord record;
    record.stage = stage;
    record.initial_val_loss = hooks.val_loss();
    ParamStore best = params;

    std::vector<const WindowSample*> batch;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
            const std::size_t last = std::min(order.size(), first + config.batch_size);
            batch.clear();
            for (std::size_t i = first; i < last; ++i) batch.push_back(ptrs[order[i]]);
            const LossGrad lg = hooks.loss_and_grads(batch);
            if (!std::isfinite(lg.loss)) {
                throw DataError(stage + ": training loss became non-finite at epoch " + std::to_string(epoch) +
                                " (try a smaller learning rate)");
            }
            adam.step(params, lg.grads, config.learning_rate);
            total += lg.loss * static_cast<double>(last - first);
        }
        const double val = hooks.val_loss();
        if (stopper.update(val)) best = params;
        const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        record.epochs.push_back({epoch, total / static_cast<double>(order.size()), val, elapsed});
        if (stopper.should_stop()) {
            record.stop_reason = StopReason::early_stopping;
            break;
        }
    }
    for (std::size_t i = 0; i < params.entries().size(); ++i) params.entries()[i].value = best.entries()[i].value;
    record.best_epoch = stopper.best_epoch();
    record.best_val_loss = stopper.best();
    return record;
}

// ---- stages --------------------------------------------------------------------------

TrainedModel train_on_slice(const WindowSet& train, const WindowSet& val, const EncoderSpec& spec, StepSlice target,
                            const TrainConfig& config, const std::string& stage) {
    if (train.empty()) throw DataError(stage + ": no training windows");
    if (val.empty()) throw DataError(stage + ": no validation windows");
    TrainedModel out{FoundationModel(spec, target.count, config.seed), {}};
    FoundationModel& model = out.model;
    const auto val_ptrs = pointers(val);
    FitHooks hooks{
        [&](std::span<const WindowSample* const> batch) { return model.loss_and_grads(batch, target); },
        [&] { return model.loss(val_ptrs, target); },
    };
    out.record = fit(model.params(), hooks, train, config, 0, stage);
    model.freeze();
    return out;
}

TrainedModel pretrain(const WindowSet& train, const WindowSet& val, const EncoderSpec& spec, std::size_t head_out,
                      const TrainConfig& config) {
    return train_on_slice(train, val, spec, {0, head_out}, config, "pretrain");
}

TrainedModel mtf_train(const WindowSet& train, const WindowSet& val, const EncoderSpec& spec, std::size_t horizon,
                       const TrainConfig& config) {
    return train_on_slice(train, val, spec, {0, horizon}, config, "mtf");
}

std::vector<RunRecord> adapt_all_segments(const FoundationModel& foundation, MolaAdapter& adapter,
                                          const WindowSet& train, const WindowSet& val, const TrainConfig& config,
                                          const AdaptOptions& options) {
    if (!foundation.frozen()) throw ConfigError("adaptation needs a frozen foundation model");
    adapter.validate_against(foundation);
    if (val.empty()) throw DataError("adapt: no validation windows");
    const auto val_ptrs = pointers(val);
    std::vector<RunRecord> records;
    AdamOptimizer shared(config.adam);
    for (std::size_t k = 0; k < adapter.plan().segments; ++k) {
        adapter.begin_segment(k, options.train_logits);
        FitHooks hooks{
            [&](std::span<const WindowSample* const> batch) {
                return AdaptedView(foundation, adapter, k).loss_and_grads(batch);
            },
            [&] { return AdaptedView(foundation, adapter, k).loss(val_ptrs); },
        };
        records.push_back(fit(adapter.params(), hooks, train, config, 1 + k, "adapt.segment" + std::to_string(k),
                              options.shared_optimizer ? &shared : nullptr));
        adapter.end_segment(k);
    }
    adapter.freeze_all();
    return records;
}

std::optional<std::string> segment_length_warning(const FoundationModel& foundation, const SegmentPlan& plan) {
    if (plan.seg_len > foundation.encoder_spec().rep_dim() + 1) {
        return "segment length S=" + std::to_string(plan.seg_len) + " exceeds representation size + 1 (" +
               std::to_string(foundation.encoder_spec().rep_dim() + 1) +
               "); a shared representation cannot reach zero error for every step";
    }
    return std::nullopt;
}

std::vector<Mat> mola_forecast_batch(const FoundationModel& foundation, const MolaAdapter& adapter,
                                     std::span<const WindowSample* const> batch) {
    const SegmentPlan& plan = adapter.plan();
    std::vector<Mat> out;
    for (std::size_t k = 0; k < plan.segments; ++k) {
        const auto seg = AdaptedView(foundation, adapter, k).forecast_batch(batch);
        if (out.empty()) out.assign(seg.size(), Mat(plan.horizon, seg.front().cols()));
        const StepSlice b = plan.boundaries[k];
        for (std::size_t w = 0; w < seg.size(); ++w)
            for (std::size_t i = 0; i < b.count; ++i)
                for (std::size_t c = 0; c < seg[w].cols(); ++c) out[w](b.first + i, c) = seg[w](i, c);
    }
    return out;
}

Mat mola_forecast(const FoundationModel& foundation, const MolaAdapter& adapter, const Mat& history) {
    const WindowSample w{history, Mat(), 0};
    const WindowSample* p = &w;
    return mola_forecast_batch(foundation, adapter, std::span<const WindowSample* const>(&p, 1)).front();
}

namespace {

constexpr std::size_t kEvalChunk = 512;

template <typename Fn>
std::vector<Mat> chunked(const WindowSet& windows, Fn&& fn) {
    const auto ptrs = pointers(windows);
    std::vector<Mat> out;
    out.reserve(ptrs.size());
    for (std::size_t first = 0; first < ptrs.size(); first += kEvalChunk) {
        const std::size_t n = std::min(kEvalChunk, ptrs.size() - first);
        auto part = fn(std::span<const WindowSample* const>(ptrs.data() + first, n));
        for (auto& m : part) out.push_back(std::move(m));
    }
    return out;
}

}  // namespace

std::vector<Mat> forecast_direct(const FoundationModel& model, const WindowSet& windows) {
    return chunked(windows, [&](auto batch) { return model.forecast_batch(batch); });
}

std::vector<Mat> forecast_ar(const FoundationModel& model, const WindowSet& windows, std::size_t horizon) {
    return chunked(windows, [&](auto batch) { return ar_f_forecast_batch(model, batch, horizon); });
}

std::vector<Mat> forecast_mola(const FoundationModel& foundation, const MolaAdapter& adapter,
                               const WindowSet& windows) {
    return chunked(windows, [&](auto batch) { return mola_forecast_batch(foundation, adapter, batch); });
}

EvalReport evaluate_forecasts(const std::vector<Mat>& predictions, const WindowSet& windows,
                              std::vector<std::size_t> horizons) {
    if (predictions.size() != windows.size()) throw ShapeError("evaluate: one prediction per window required");
    if (windows.empty()) throw DataError("evaluate: no windows");
    const std::size_t steps = predictions.front().rows();
    const std::size_t d = predictions.front().cols();
    if (horizons.empty()) horizons = {steps};
    for (std::size_t h : horizons)
        if (h < 1 || h > steps) throw ConfigError("evaluation horizon " + std::to_string(h) + " out of range");

    EvalReport r;
    r.horizons = horizons;
    r.step_losses = Mat(windows.size(), steps);
    std::vector<double> se(steps, 0.0), ae(steps, 0.0);
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const Mat& pred = predictions[w];
        const Mat& label = windows[w].label;
        if (pred.rows() != steps || pred.cols() != d || label.rows() < steps || label.cols() != d)
            throw ShapeError("evaluate: prediction/label shape mismatch");
        for (std::size_t t = 0; t < steps; ++t) {
            double row_se = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double e = pred(t, c) - label(t, c);
                row_se += e * e;
                ae[t] += std::abs(e);
            }
            se[t] += row_se;
            r.step_losses(w, t) = row_se / static_cast<double>(d);
        }
    }
    const double per_step_n = static_cast<double>(windows.size() * d);
    for (std::size_t t = 0; t < steps; ++t) r.per_step.push_back({se[t] / per_step_n, ae[t] / per_step_n});
    auto prefix = [&](std::size_t h) {
        Metrics m;
        for (std::size_t t = 0; t < h; ++t) {
            m.mse += r.per_step[t].mse;
            m.mae += r.per_step[t].mae;
        }
        m.mse /= static_cast<double>(h);
        m.mae /= static_cast<double>(h);
        return m;
    };
    for (std::size_t h : horizons) r.per_horizon.push_back(prefix(h));
    for (const auto& m : r.per_horizon) {
        r.average.mse += m.mse;
        r.average.mae += m.mae;
    }
    r.average.mse /= static_cast<double>(r.per_horizon.size());
    r.average.mae /= static_cast<double>(r.per_horizon.size());
    r.overall = prefix(steps);
    return r;
}

// ---- serialization ------------------------------------------------------------------

nlohmann::json metrics_to_json(const Metrics& m) { return {{"mse", m.mse}, {"mae", m.mae}}; }

nlohmann::json eval_to_json(const EvalReport& r) {
    nlohmann::json per_horizon = nlohmann::json::array();
    for (std::size_t i = 0; i < r.horizons.size(); ++i) {
        auto row = metrics_to_json(r.per_horizon[i]);
        row["horizon"] = r.horizons[i];
        per_horizon.push_back(row);
    }
    nlohmann::json per_step = nlohmann::json::array();
    for (std::size_t t = 0; t < r.per_step.size(); ++t) {
        auto row = metrics_to_json(r.per_step[t]);
        row["step"] = t + 1;
        per_step.push_back(row);
    }
    return {{"overall", metrics_to_json(r.overall)},
            {"average", metrics_to_json(r.average)},
            {"per_horizon", per_horizon},
            {"per_step", per_step}};
}

std::vector<nlohmann::json> epoch_lines(const RunRecord& r) {
    std::vector<nlohmann::json> out;
    for (const auto& e : r.epochs) {
        out.push_back({{"stage", r.stage},
                       {"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"val_loss", e.val_loss},
                       {"wall_seconds", e.wall_seconds}});
    }
    return out;
}

nlohmann::json run_summary(const RunRecord& r) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : r.epochs)
        epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
    nlohmann::json j{{"stage", r.stage},
                     {"initial_val_loss", r.initial_val_loss},
                     {"epochs", epochs},
                     {"best_epoch", r.best_epoch},
                     {"best_val_loss", r.best_val_loss},
                     {"stop_reason", to_string(r.stop_reason)}};
    if (r.final_metrics) j["final_metrics"] = eval_to_json(*r.final_metrics);
    return j;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
            {"patience", c.patience},           {"seed", c.seed},             {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},            {"eps", c.adam.eps}};
}

}  // namespace mola
