#include "mola/analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "mola/error.hpp"

namespace mola {

// ---- shared-representation error bound -----------------------------------------

namespace {

Eigen::MatrixXd to_eigen(const Mat& m) {
    Eigen::MatrixXd out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
    return out;
}

// Residual of the orthogonal projection of y onto col(a), via a complete
// orthogonal decomposition.
double projection_residual_sq(const Mat& a, const Mat& y) {
    const Eigen::MatrixXd ea = to_eigen(a);
    const Eigen::MatrixXd ey = to_eigen(y);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
    cod.setThreshold(1e-12 * static_cast<double>(std::max(a.rows(), a.cols())));
    cod.compute(ea);
    const Eigen::MatrixXd x = cod.solve(ey);
    return (ey - ea * x).squaredNorm();
}

}  // namespace

BottleneckReport min_attainable_error(const Mat& w, const Mat& b, const Mat& y) {
    if (b.cols() != 1 || b.rows() != w.rows()) throw ShapeError("bottleneck: bias must be T x 1");
    if (y.rows() != w.rows()) throw ShapeError("bottleneck: labels must have T rows");
    if (!w.all_finite() || !b.all_finite() || !y.all_finite()) throw DataError("bottleneck: non-finite input");

    BottleneckReport r;
    r.wbar = append_column(w, b);
    r.svd = svd(r.wbar);
    r.rank = r.svd.rank;
    const std::size_t t_rows = r.wbar.rows();
    for (std::size_t t = r.rank; t < t_rows; ++t) {
        double energy = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) {
            double proj = 0.0;
            for (std::size_t i = 0; i < t_rows; ++i) proj += r.svd.u(i, t) * y(i, c);
            energy += proj * proj;
        }
        r.per_direction_energy.push_back(energy);
        r.min_error_sq += energy;
    }
    r.ls_residual_sq = projection_residual_sq(r.wbar, y);

    Mat shifted = y;
    for (std::size_t i = 0; i < shifted.rows(); ++i)
        for (double& v : shifted.row(i)) v -= b(i, 0);
    r.pinned_residual_sq = frobenius_sq(sub(shifted, matmul(w, least_squares(w, shifted))));
    return r;
}

DatasetBottleneck head_bottleneck(const FoundationModel& model, const WindowSet& windows) {
    if (windows.empty()) throw DataError("bottleneck: no windows");
    const Mat& w = model.params().at(weight_name(kHeadLayer));
    const Mat& b = model.params().at(bias_name(kHeadLayer));
    const std::size_t t_rows = w.rows();
    const std::size_t d = windows.front().label.cols();
    // Frobenius errors add over columns, so all labels are stacked side by side.
    Mat y(t_rows, windows.size() * d);
    for (std::size_t k = 0; k < windows.size(); ++k) {
        if (windows[k].label.rows() < t_rows) throw ShapeError("bottleneck: labels shorter than the head");
        for (std::size_t i = 0; i < t_rows; ++i)
            for (std::size_t c = 0; c < d; ++c) y(i, k * d + c) = windows[k].label(i, c);
    }
    const BottleneckReport r = min_attainable_error(w, b, y);
    const double n = static_cast<double>(windows.size());
    return {windows.size(),      r.rank,
            t_rows,              w.cols(),
            r.min_error_sq / n,  r.ls_residual_sq / n,
            r.pinned_residual_sq / n};
}

// ---- parameter counts ----------------------------------------------------------

ParamCount param_counts(std::uint64_t n_layers, std::uint64_t d_model, std::uint64_t d_ff, std::uint64_t rank,
                        std::uint64_t experts, std::uint64_t segments) {
    ParamCount c{n_layers, d_model, d_ff, rank, experts, segments, 0, 0, 0.0};
    c.n_mola = n_layers * 2 * ((d_model * rank + rank * d_ff) * experts + experts * segments);
    c.n_backbone = n_layers * (4 * d_model * d_model + 2 * d_model * d_ff + 4 * d_model);
    if (c.n_backbone == 0) throw ConfigError("param_counts: backbone has no parameters");
    c.ratio = static_cast<double>(c.n_mola) / static_cast<double>(c.n_backbone);
    return c;
}

// ---- variance decomposition ----------------------------------------------------

VarianceReport variance_report(const Mat& losses) {
    const std::size_t n = losses.rows();
    const std::size_t steps = losses.cols();
    if (n < 2 || steps < 1) throw DataError("variance_report: need at least 2 samples and 1 step");
    VarianceReport r;
    r.per_step_loss_samples = losses;

    std::vector<double> mean(steps, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < steps; ++t) mean[t] += losses(i, t);
    for (double& m : mean) m /= static_cast<double>(n);

    const double denom = static_cast<double>(n - 1);
    Mat centered(n, steps);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < steps; ++t) centered(i, t) = losses(i, t) - mean[t];
    const Mat cov = scale(matmul_tn(centered, centered), 1.0 / denom);

    r.var_terms.resize(steps);
    for (std::size_t t = 0; t < steps; ++t) r.var_terms[t] = cov(t, t);
    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t s = t + 1; s < steps; ++s) r.cov_sum += cov(t, s);

    double total_mean = 0.0;
    std::vector<double> row_mean(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < steps; ++t) row_mean[i] += losses(i, t);
        row_mean[i] /= static_cast<double>(steps);
        total_mean += row_mean[i];
    }
    total_mean /= static_cast<double>(n);
    for (double v : row_mean) r.var_total += (v - total_mean) * (v - total_mean);
    r.var_total /= denom;

    double var_sum = 0.0;
    for (double v : r.var_terms) var_sum += v;
    const double t2 = static_cast<double>(steps) * static_cast<double>(steps);
    r.identity_gap = std::abs(r.var_total - (var_sum + 2.0 * r.cov_sum) / t2);
    return r;
}

VarianceComparison compare_variance(const VarianceReport& baseline, const VarianceReport& candidate) {
    VarianceComparison c;
    c.baseline_var_total = baseline.var_total;
    c.candidate_var_total = candidate.var_total;
    c.delta_cov_sum = baseline.cov_sum - candidate.cov_sum;
    c.delta_var = baseline.var_total - candidate.var_total;
    c.covariance_premise_holds = c.delta_cov_sum >= 0.0;
    c.variance_reduced = candidate.var_total <= baseline.var_total;
    return c;
}

// ---- probe ------------------------------------------------------------------------

namespace {

// Centers the cloud and rescales it to unit RMS point norm. A full
// covariance whitening would blow up directions the head never reads.
Mat whiten(const Mat& z) {
    const std::size_t n = z.rows();
    Mat centered = z;
    for (std::size_t c = 0; c < z.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += z(i, c);
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) centered(i, c) -= mean;
    }
    const double rms = frobenius(centered) / std::sqrt(static_cast<double>(n));
    if (!(rms > 0.0)) throw DataError("disparity: representation cloud collapsed to a point");
    return scale(centered, 1.0 / rms);
}

}  // namespace

double representation_disparity(const Mat& a, const Mat& b) {
    if (!a.same_shape(b)) throw ShapeError("disparity: clouds must have the same shape");
    if (a.rows() < 2) throw DataError("disparity: need at least two points");
    const Mat wa = whiten(a);
    const Mat wb = whiten(b);
    // orthogonal Procrustes: Q = U V^T from svd(wa^T wb)
    const SvdResult s = svd(matmul_tn(wa, wb));
    const Mat q = matmul(s.u, s.vt);
    const Mat aligned = matmul(wa, q);
    double total = 0.0;
    for (std::size_t i = 0; i < aligned.rows(); ++i) {
        double sq = 0.0;
        for (std::size_t c = 0; c < aligned.cols(); ++c) {
            const double e = aligned(i, c) - wb(i, c);
            sq += e * e;
        }
        total += std::sqrt(sq);
    }
    return total / static_cast<double>(aligned.rows());
}

ProbeReport per_step_probe(const SeriesDataset& ds, const std::vector<std::size_t>& steps,
                           const ProbeOptions& options, std::uint64_t base_seed) {
    if (steps.empty()) throw ConfigError("probe: no steps requested");
    if (options.replicas < 1) throw ConfigError("probe: replicas must be >= 1");
    const std::size_t max_step = *std::max_element(steps.begin(), steps.end());
    if (*std::min_element(steps.begin(), steps.end()) < 1) throw ConfigError("probe: steps are 1-based");

    EncoderSpec spec{EncoderKind::mlp2, options.lookback, options.hidden, options.activation};
    spec.validate();
    const WindowSplits splits = make_window_splits(ds, options.lookback, max_step);

    ProbeReport report;
    report.steps = steps;
    std::uint64_t run_index = 0;
    for (std::size_t g = 0; g < steps.size(); ++g) {
        for (std::size_t rep = 0; rep < options.replicas; ++rep, ++run_index) {
            TrainConfig cfg = options.config;
            cfg.seed = base_seed + run_index;
            const StepSlice target{steps[g] - 1, 1};
            TrainedModel tm = train_on_slice(splits.train, splits.val, spec, target, cfg,
                                             "probe.step" + std::to_string(steps[g]));
            ProbeRun run;
            run.group = g;
            run.step = steps[g];
            run.seed = cfg.seed;
            run.val_loss = tm.record.best_val_loss;
            const std::size_t d = ds.channels();
            run.representations = Mat(splits.test.size() * d, spec.rep_dim());
            for (std::size_t w = 0; w < splits.test.size(); ++w) {
                const Mat rep = tm.model.encode(splits.test[w].history);  // rep_dim x D
                for (std::size_t c = 0; c < d; ++c)
                    for (std::size_t j = 0; j < rep.rows(); ++j) run.representations(w * d + c, j) = rep(j, c);
            }
            report.runs.push_back(std::move(run));
        }
    }

    const std::size_t n_runs = report.runs.size();
    report.disparity = Mat(n_runs, n_runs);
    double cross = 0.0, within = 0.0;
    std::size_t n_cross = 0, n_within = 0;
    for (std::size_t i = 0; i < n_runs; ++i) {
        for (std::size_t j = i + 1; j < n_runs; ++j) {
            const double dij = representation_disparity(report.runs[i].representations, report.runs[j].representations);
            report.disparity(i, j) = report.disparity(j, i) = dij;
            if (report.runs[i].group == report.runs[j].group) {
                within += dij;
                ++n_within;
            } else {
                cross += dij;
                ++n_cross;
            }
        }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    report.cross_group = n_cross ? cross / static_cast<double>(n_cross) : nan;
    report.within_group = n_within ? within / static_cast<double>(n_within) : nan;
    report.ratio = report.cross_group / report.within_group;
    return report;
}

// ---- paradigm comparison ------------------------------------------------------

ComparisonTable paradigm_compare(const SeriesDataset& ds, const CompareOptions& options) {
    if (options.seeds.empty()) throw ConfigError("compare: at least one seed is required");
    const SegmentPlan plan = make_segment_plan(options.horizon, options.segments);
    EncoderSpec spec = options.encoder;
    spec.lookback = options.lookback;
    spec.validate();

    const WindowSplits splits = make_window_splits(ds, options.lookback, options.horizon);
    const std::string train_digest = window_set_digest(splits.train);
    const std::string val_digest = window_set_digest(splits.val);
    const std::string test_digest = window_set_digest(splits.test);

    ComparisonTable table;
    std::optional<VarianceReport> first_mtf, first_mola;
    for (std::uint64_t seed : options.seeds) {
        auto record = [&](const std::string& name, const std::vector<Mat>& preds) {
            ParadigmRun run{name, seed, train_digest, val_digest, test_digest,
                            evaluate_forecasts(preds, splits.test)};
            table.runs.push_back(std::move(run));
            return table.runs.back().test.step_losses;
        };

        TrainConfig base = options.baseline;
        base.seed = seed;
        const TrainedModel arf = train_on_slice(splits.train, splits.val, spec, {0, 1}, base, "arf");
        record("AR-F", forecast_ar(arf.model, splits.test, options.horizon));

        const TrainedModel mtf = mtf_train(splits.train, splits.val, spec, options.horizon, base);
        const Mat mtf_losses = record("MT-F", forecast_direct(mtf.model, splits.test));

        TrainConfig pre = options.pretrain;
        pre.seed = seed;
        TrainConfig ada = options.adapt;
        ada.seed = seed;
        const TrainedModel foundation = pretrain(splits.train, splits.val, spec, plan.seg_len, pre);
        MolaAdapter adapter(foundation.model, plan, {options.experts, options.rank, options.placement, seed, options.home_logit});
        adapt_all_segments(foundation.model, adapter, splits.train, splits.val, ada);
        const Mat mola_losses = record("MoLA", forecast_mola(foundation.model, adapter, splits.test));

        if (!first_mtf) {
            first_mtf = variance_report(mtf_losses);
            first_mola = variance_report(mola_losses);
        }
    }
    table.variance = compare_variance(*first_mtf, *first_mola);

    table.identical_windows = std::all_of(table.runs.begin(), table.runs.end(), [&](const ParadigmRun& r) {
        return r.train_digest == train_digest && r.val_digest == val_digest && r.test_digest == test_digest;
    });

    for (const char* name : {"AR-F", "MT-F", "MoLA"}) {
        ParadigmRow row;
        row.paradigm = name;
        row.per_step.assign(options.horizon, Metrics{});
        std::size_t count = 0;
        for (const auto& run : table.runs) {
            if (run.paradigm != name) continue;
            ++count;
            row.mean.mse += run.test.overall.mse;
            row.mean.mae += run.test.overall.mae;
            for (std::size_t t = 0; t < options.horizon; ++t) {
                row.per_step[t].mse += run.test.per_step[t].mse;
                row.per_step[t].mae += run.test.per_step[t].mae;
            }
        }
        const double n = static_cast<double>(count);
        row.mean.mse /= n;
        row.mean.mae /= n;
        for (auto& m : row.per_step) {
            m.mse /= n;
            m.mae /= n;
        }
        table.rows.push_back(std::move(row));
    }
    const Metrics arf_mean = table.rows.front().mean;
    for (auto& row : table.rows) {
        row.mse_delta_pct = 100.0 * (arf_mean.mse - row.mean.mse) / arf_mean.mse;
        row.mae_delta_pct = 100.0 * (arf_mean.mae - row.mean.mae) / arf_mean.mae;
    }
    return table;
}

// ---- serialization ---------------------------------------------------------------

nlohmann::json bottleneck_to_json(const BottleneckReport& r) {
    return {{"rows", r.wbar.rows()},
            {"cols", r.wbar.cols()},
            {"rank", r.rank},
            {"singular_values", r.svd.sigma},
            {"min_error_sq", r.min_error_sq},
            {"ls_residual_sq", r.ls_residual_sq},
            {"pinned_residual_sq", r.pinned_residual_sq},
            {"per_direction_energy", r.per_direction_energy}};
}

nlohmann::json dataset_bottleneck_to_json(const DatasetBottleneck& r) {
    return {{"windows", r.windows},
            {"rank", r.rank},
            {"outputs", r.outputs},
            {"rep_dim", r.rep_dim},
            {"mean_min_error_sq", r.mean_min_error_sq},
            {"mean_ls_residual_sq", r.mean_ls_residual_sq},
            {"mean_pinned_residual_sq", r.mean_pinned_residual_sq}};
}

nlohmann::json param_count_to_json(const ParamCount& r) {
    return {{"n_layers", r.n_layers}, {"d_model", r.d_model}, {"d_ff", r.d_ff},
            {"rank", r.rank},         {"experts", r.experts}, {"segments", r.segments},
            {"n_mola", r.n_mola},     {"n_backbone", r.n_backbone}, {"ratio", r.ratio}};
}

nlohmann::json variance_to_json(const VarianceReport& r) {
    return {{"samples", r.per_step_loss_samples.rows()},
            {"steps", r.per_step_loss_samples.cols()},
            {"var_total", r.var_total},
            {"var_terms", r.var_terms},
            {"cov_sum", r.cov_sum},
            {"identity_gap", r.identity_gap}};
}

nlohmann::json variance_comparison_to_json(const VarianceComparison& r) {
    return {{"baseline_var_total", r.baseline_var_total},
            {"candidate_var_total", r.candidate_var_total},
            {"delta_cov_sum", r.delta_cov_sum},
            {"delta_cov_sign", r.delta_cov_sum > 0 ? 1 : (r.delta_cov_sum < 0 ? -1 : 0)},
            {"delta_var", r.delta_var},
            {"covariance_premise_holds", r.covariance_premise_holds},
            {"variance_reduced", r.variance_reduced}};
}

nlohmann::json probe_to_json(const ProbeReport& r) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& run : r.runs) {
        runs.push_back({{"group", run.group},
                        {"step", run.step},
                        {"seed", run.seed},
                        {"val_loss", run.val_loss},
                        {"points", run.representations.rows()},
                        {"rep_dim", run.representations.cols()}});
    }
    auto finite_or_null = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
    return {{"steps", r.steps},
            {"runs", runs},
            {"disparity", r.disparity.data()},
            {"cross_group", finite_or_null(r.cross_group)},
            {"within_group", finite_or_null(r.within_group)},
            {"ratio", finite_or_null(r.ratio)}};
}

nlohmann::json comparison_to_json(const ComparisonTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : t.rows) {
        nlohmann::json per_step = nlohmann::json::array();
        for (const auto& m : row.per_step) per_step.push_back(metrics_to_json(m));
        rows.push_back({{"paradigm", row.paradigm},
                        {"mse", row.mean.mse},
                        {"mae", row.mean.mae},
                        {"mse_delta_pct", row.mse_delta_pct},
                        {"mae_delta_pct", row.mae_delta_pct},
                        {"per_step", per_step}});
    }
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& run : t.runs) {
        runs.push_back({{"paradigm", run.paradigm},
                        {"seed", run.seed},
                        {"mse", run.test.overall.mse},
                        {"mae", run.test.overall.mae},
                        {"train_digest", run.train_digest},
                        {"val_digest", run.val_digest},
                        {"test_digest", run.test_digest}});
    }
    return {{"rows", rows},
            {"runs", runs},
            {"identical_windows", t.identical_windows},
            {"variance", variance_comparison_to_json(t.variance)}};
}

std::string format_comparison(const ComparisonTable& t) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-8s %10s %10s %10s %10s\n", "paradigm", "MSE", "dMSE", "MAE", "dMAE");
    out << line;
    for (const auto& row : t.rows) {
        if (row.paradigm == "AR-F") {
            std::snprintf(line, sizeof line, "%-8s %10.4f %10s %10.4f %10s\n", row.paradigm.c_str(), row.mean.mse,
                          "-", row.mean.mae, "-");
        } else {
            std::snprintf(line, sizeof line, "%-8s %10.4f %9.2f%% %10.4f %9.2f%%\n", row.paradigm.c_str(),
                          row.mean.mse, row.mse_delta_pct, row.mean.mae, row.mae_delta_pct);
        }
        out << line;
    }
    return out.str();
}

}  // namespace mola
