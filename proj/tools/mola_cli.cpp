#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mola/adapt.hpp"
#include "mola/analysis.hpp"
#include "mola/config.hpp"
#include "mola/data.hpp"
#include "mola/error.hpp"
#include "mola/model.hpp"
#include "mola/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config;
    std::string run_dir;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;
    bool no_overwrite = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config, "run config file (INI)");
    cmd->add_option("--run-dir", a.run_dir, "output directory (overrides output.run_dir and MOLA_RUN_ROOT)");
    cmd->add_option("--seed", a.seed, "overrides train.seed");
    cmd->add_option("--set", a.sets, "section.key=value override, repeatable")->take_all();
    cmd->add_flag("--no-overwrite", a.no_overwrite, "fail instead of overwriting existing outputs");
}

class Run {
public:
    explicit Run(const CommonArgs& a) : no_overwrite_(a.no_overwrite) {
        std::vector<std::string> sets = a.sets;
        if (a.seed) sets.push_back("train.seed=" + std::to_string(*a.seed));
        cfg_ = a.config.empty() ? mola::default_run_config(sets) : mola::load_run_config(a.config, sets);
        hash_ = cfg_.hash();
        if (!a.run_dir.empty()) {
            dir_ = a.run_dir;
        } else if (cfg_.output.run_dir) {
            dir_ = *cfg_.output.run_dir;
        } else {
            const std::string stem = a.config.empty() ? "default" : fs::path(a.config).stem().string();
            const char* root = std::getenv("MOLA_RUN_ROOT");
            dir_ = fs::path(root && *root ? root : "runs") / stem;
        }
    }

    const mola::RunConfig& cfg() const { return cfg_; }
    const fs::path& dir() const { return dir_; }

    json stamp(json j) const {
        j["tool_version"] = MOLA_VERSION;
        j["config_hash"] = hash_;
        return j;
    }

    fs::path prepare(const fs::path& rel) {
        const fs::path path = dir_ / rel;
        if (fs::exists(path)) {
            if (no_overwrite_)
                throw mola::ConfigError(path.string() + " already exists (remove it or drop --no-overwrite)");
            std::cerr << "warning: overwriting " << path.string() << "\n";
        }
        fs::create_directories(path.parent_path());
        written_.push_back(rel.generic_string());
        return path;
    }

    void write_json(const fs::path& rel, const json& j) { mola::write_json_file(prepare(rel), stamp(j)); }

    void write_text(const fs::path& rel, const std::string& text) {
        std::ofstream out(prepare(rel), std::ios::binary);
        out << text;
        if (!out) throw mola::DataError("cannot write " + (dir_ / rel).string());
    }

    // "# mola <version> config=<hash>" followed by the CSV body
    void write_csv_report(const fs::path& rel, const std::string& body) {
        write_text(rel, "# mola " + std::string(MOLA_VERSION) + " config=" + hash_ + "\n" + body);
    }

    void write_record(const mola::RunRecord& r) {
        std::string lines = stamp(json::object()).dump() + "\n";
        for (const auto& e : mola::epoch_lines(r)) lines += e.dump() + "\n";
        write_text(fs::path("records") / (r.stage + ".jsonl"), lines);
        write_json(fs::path("records") / (r.stage + ".summary.json"), mola::run_summary(r));
    }

    // manifest.json keeps one entry per command that wrote into this directory
    void finish(const std::string& command) {
        const fs::path path = dir_ / "manifest.json";
        json m = json::object();
        if (fs::exists(path)) {
            try {
                m = mola::read_json_file(path);
            } catch (const mola::Error&) {
                std::cerr << "warning: replacing unreadable manifest " << path.string() << "\n";
                m = json::object();
            }
        }
        m["tool"] = "mola";
        m["tool_version"] = MOLA_VERSION;
        m["config_hash"] = hash_;
        m["config"] = cfg_.to_json();
        m["commands"][command] = {{"config_hash", hash_}, {"outputs", written_}};
        fs::create_directories(dir_);
        mola::write_json_file(path, m);
    }

    mola::SeriesDataset data() const {
        auto loaded = mola::load_dataset(cfg_.dataset);
        for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
        return std::move(loaded.dataset);
    }

    mola::WindowSplits windows(const mola::SeriesDataset& ds) const {
        return mola::make_window_splits(ds, cfg_.dataset.lookback, cfg_.dataset.horizon);
    }

private:
    mola::RunConfig cfg_;
    std::string hash_;
    fs::path dir_;
    bool no_overwrite_;
    std::vector<std::string> written_;
};

const mola::WindowSet& pick_split(const mola::WindowSplits& s, const std::string& name) {
    if (name == "train") return s.train;
    if (name == "val") return s.val;
    if (name == "test") return s.test;
    throw mola::ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

fs::path checkpoint_path(const Run& run, const std::string& given, const char* name) {
    return given.empty() ? run.dir() / "checkpoints" / name : fs::path(given);
}

mola::FoundationModel load_model(const fs::path& path, const char* hint) {
    if (!fs::exists(path)) throw mola::ConfigError("no checkpoint at " + path.string() + "; run `mola " + hint + "` first");
    return mola::load_foundation(path);
}

void require_mola(const Run& run, const char* command) {
    if (run.cfg().paradigm.kind != mola::ParadigmKind::mola)
        throw mola::ConfigError(std::string(command) + " needs paradigm.kind = mola");
}

std::vector<std::size_t> parse_steps(const std::string& text, const char* what) {
    std::vector<std::size_t> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(item, &used);
            if (used != item.size() || v < 1) throw std::invalid_argument(item);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw mola::ConfigError(std::string(what) + ": '" + item + "' is not a positive integer");
        }
    }
    if (out.empty()) throw mola::ConfigError(std::string(what) + " is empty");
    return out;
}

std::string metrics_csv(const mola::EvalReport& r) {
    std::ostringstream out;
    out << "step,mse,mae\n";
    char line[96];
    for (std::size_t t = 0; t < r.per_step.size(); ++t) {
        std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", t + 1, r.per_step[t].mse, r.per_step[t].mae);
        out << line;
    }
    return out.str();
}

std::string horizons_csv(const mola::EvalReport& r) {
    std::ostringstream out;
    out << "horizon,mse,mae\n";
    char line[96];
    for (std::size_t i = 0; i < r.horizons.size(); ++i) {
        std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", r.horizons[i], r.per_horizon[i].mse,
                      r.per_horizon[i].mae);
        out << line;
    }
    std::snprintf(line, sizeof line, "average,%.17g,%.17g\n", r.average.mse, r.average.mae);
    out << line;
    return out.str();
}

// ---- commands -------------------------------------------------------------------

struct SynthArgs {
    std::string from_manifest;
};

void cmd_synth(const CommonArgs& common, const SynthArgs& args) {
    Run run(common);
    mola::SynthSpec spec;
    if (!args.from_manifest.empty()) {
        spec = mola::synth_spec_from_json(mola::read_json_file(args.from_manifest).at("synth"));
    } else {
        if (!run.cfg().dataset.synth) throw mola::ConfigError("synth needs dataset.source = synth");
        spec = *run.cfg().dataset.synth;
    }
    const mola::SeriesDataset ds = mola::generate_synthetic(spec);
    const fs::path csv = run.prepare("data/synth.csv");
    mola::write_csv(csv, ds);
    run.write_json("data/synth.manifest.json",
                   {{"synth", mola::synth_spec_to_json(spec)}, {"seed", spec.seed}, {"rows", ds.length()},
                    {"csv", "synth.csv"}});
    run.finish("synth");
    std::cout << "wrote " << csv.string() << " (" << ds.length() << " rows, " << ds.channels() << " channels)\n";
}

void cmd_pretrain(const CommonArgs& common) {
    Run run(common);
    require_mola(run, "pretrain");
    const auto& cfg = run.cfg();
    const auto plan = mola::make_segment_plan(cfg.dataset.horizon, cfg.paradigm.segments);
    const auto ds = run.data();
    const auto splits = run.windows(ds);
    mola::TrainedModel tm = mola::pretrain(splits.train, splits.val, cfg.model, plan.seg_len, cfg.pretrain);
    if (auto w = mola::segment_length_warning(tm.model, plan)) std::cerr << "warning: " << *w << "\n";
    tm.record.final_metrics =
        mola::evaluate_forecasts(mola::forecast_direct(tm.model, splits.test), splits.test);
    run.write_json("checkpoints/foundation.json", mola::foundation_to_json(tm.model));
    run.write_record(tm.record);
    run.finish("pretrain");
    std::printf("pretrain: S=%zu best epoch %zu val %.6f (%s)\n", plan.seg_len, tm.record.best_epoch,
                tm.record.best_val_loss, mola::to_string(tm.record.stop_reason));
}

struct AdaptArgs {
    std::string foundation;
};

void cmd_adapt(const CommonArgs& common, const AdaptArgs& args) {
    Run run(common);
    require_mola(run, "adapt");
    const auto& cfg = run.cfg();
    const auto plan = mola::make_segment_plan(cfg.dataset.horizon, cfg.paradigm.segments);
    const fs::path fpath = checkpoint_path(run, args.foundation, "foundation.json");
    mola::FoundationModel foundation = load_model(fpath, "pretrain");
    if (foundation.head_out() != plan.seg_len) {
        throw mola::ConfigError("foundation head_out S=" + std::to_string(foundation.head_out()) +
                                " does not match T/K = " + std::to_string(plan.horizon) + "/" +
                                std::to_string(plan.segments) + " = " + std::to_string(plan.seg_len));
    }
    if (foundation.lookback() != cfg.dataset.lookback) {
        throw mola::ConfigError("foundation lookback " + std::to_string(foundation.lookback()) +
                                " does not match dataset.lookback " + std::to_string(cfg.dataset.lookback));
    }
    foundation.freeze();
    const auto ds = run.data();
    const auto splits = run.windows(ds);
    mola::MolaAdapter adapter(foundation, plan,
                              {cfg.paradigm.experts, cfg.paradigm.rank, cfg.paradigm.placement, cfg.adapt.seed,
                               cfg.paradigm.home_logit});
    auto records = mola::adapt_all_segments(foundation, adapter, splits.train, splits.val, cfg.adapt);
    run.write_json("checkpoints/adapter.json", mola::adapter_to_json(adapter));
    for (const auto& r : records) run.write_record(r);
    run.finish("adapt");
    for (const auto& r : records)
        std::printf("%s: best epoch %zu val %.6f (%s)\n", r.stage.c_str(), r.best_epoch, r.best_val_loss,
                    mola::to_string(r.stop_reason));
}

void cmd_train_baseline(const CommonArgs& common) {
    Run run(common);
    const auto& cfg = run.cfg();
    if (cfg.paradigm.kind == mola::ParadigmKind::mola)
        throw mola::ConfigError("train-baseline needs paradigm.kind = arf or mtf (use pretrain + adapt for mola)");
    const auto ds = run.data();
    const auto splits = run.windows(ds);
    const bool arf = cfg.paradigm.kind == mola::ParadigmKind::arf;
    mola::TrainedModel tm = arf ? mola::train_on_slice(splits.train, splits.val, cfg.model, {0, 1}, cfg.train, "arf")
                                : mola::mtf_train(splits.train, splits.val, cfg.model, cfg.dataset.horizon, cfg.train);
    tm.record.final_metrics = mola::evaluate_forecasts(
        arf ? mola::forecast_ar(tm.model, splits.test, cfg.dataset.horizon) : mola::forecast_direct(tm.model, splits.test),
        splits.test);
    run.write_json("checkpoints/baseline.json", mola::foundation_to_json(tm.model));
    run.write_record(tm.record);
    run.finish("train-baseline");
    std::printf("%s: best epoch %zu val %.6f, test mse %.6f mae %.6f\n", tm.record.stage.c_str(),
                tm.record.best_epoch, tm.record.best_val_loss, tm.record.final_metrics->overall.mse,
                tm.record.final_metrics->overall.mae);
}

struct EvalArgs {
    std::string split = "test";
    std::string horizons;
    std::string foundation;
    std::string adapter;
    std::string baseline;
};

std::vector<mola::Mat> predict(const Run& run, const EvalArgs& args, const mola::WindowSet& set) {
    const auto& cfg = run.cfg();
    if (cfg.paradigm.kind == mola::ParadigmKind::mola) {
        mola::FoundationModel f = load_model(checkpoint_path(run, args.foundation, "foundation.json"), "pretrain");
        const fs::path apath = checkpoint_path(run, args.adapter, "adapter.json");
        if (!fs::exists(apath)) throw mola::ConfigError("no adapter at " + apath.string() + "; run `mola adapt` first");
        const mola::MolaAdapter adapter = mola::load_adapter(apath);
        f.freeze();
        adapter.validate_against(f);
        if (adapter.plan().horizon != cfg.dataset.horizon)
            throw mola::ConfigError("adapter horizon " + std::to_string(adapter.plan().horizon) +
                                    " does not match dataset.horizon " + std::to_string(cfg.dataset.horizon));
        return mola::forecast_mola(f, adapter, set);
    }
    const mola::FoundationModel m = load_model(checkpoint_path(run, args.baseline, "baseline.json"), "train-baseline");
    if (cfg.paradigm.kind == mola::ParadigmKind::arf) return mola::forecast_ar(m, set, cfg.dataset.horizon);
    if (m.head_out() != cfg.dataset.horizon)
        throw mola::ConfigError("baseline head_out " + std::to_string(m.head_out()) + " does not match dataset.horizon " +
                                std::to_string(cfg.dataset.horizon));
    return mola::forecast_direct(m, set);
}

void cmd_eval(const CommonArgs& common, const EvalArgs& args) {
    Run run(common);
    const auto& cfg = run.cfg();
    const auto ds = run.data();
    const auto splits = run.windows(ds);
    const auto& set = pick_split(splits, args.split);
    std::vector<std::size_t> horizons;
    if (!args.horizons.empty()) horizons = parse_steps(args.horizons, "--horizons");
    const auto preds = predict(run, args, set);
    const mola::EvalReport report = mola::evaluate_forecasts(preds, set, horizons);

    json j{{"paradigm", mola::to_string(cfg.paradigm.kind)},
           {"split", args.split},
           {"windows", set.size()},
           {"standardized", mola::eval_to_json(report)},
           {"config", cfg.to_json()}};
    if (cfg.output.destandardize) {
        if (!ds.norm_stats) throw mola::ConfigError("output.destandardize needs dataset.standardize = true");
        std::vector<mola::Mat> raw_preds;
        mola::WindowSet raw = set;
        for (std::size_t w = 0; w < set.size(); ++w) {
            raw_preds.push_back(mola::destandardize(preds[w], *ds.norm_stats));
            raw[w].label = mola::destandardize(set[w].label, *ds.norm_stats);
        }
        j["original_scale"] = mola::eval_to_json(mola::evaluate_forecasts(raw_preds, raw, horizons));
    }
    run.write_json("reports/eval.json", j);
    run.write_csv_report("reports/eval_per_step.csv", metrics_csv(report));
    run.write_csv_report("reports/eval_horizons.csv", horizons_csv(report));
    run.finish("eval");
    std::printf("%s on %s (%zu windows)\n", mola::to_string(cfg.paradigm.kind), args.split.c_str(), set.size());
    for (std::size_t i = 0; i < report.horizons.size(); ++i)
        std::printf("  T=%-4zu mse %.6f mae %.6f\n", report.horizons[i], report.per_horizon[i].mse,
                    report.per_horizon[i].mae);
    std::printf("  avg    mse %.6f mae %.6f\n", report.average.mse, report.average.mae);
}

struct AnalyzeArgs {
    std::string kind;
    std::string checkpoint;
    std::string losses;
    std::string steps = "1,16,32";
    std::size_t replicas = 2;
    std::optional<std::uint64_t> base_seed;
    std::size_t seeds = 5;
    std::uint64_t n_layers = 1, d_model = 512, d_ff = 1024, rank = 8, experts = 4, segments = 6;
};

mola::Mat read_loss_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw mola::DataError("cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> vals;
        std::stringstream fields(line);
        std::string f;
        bool numeric = true;
        while (std::getline(fields, f, ',')) {
            try {
                std::size_t used = 0;
                vals.push_back(std::stod(f, &used));
                if (used != f.size() && f.find_first_not_of(" \t\r", used) != std::string::npos) numeric = false;
            } catch (const std::exception&) {
                numeric = false;
            }
        }
        if (!numeric) {
            if (rows.empty()) continue;  // header
            throw mola::DataError(path.string() + ": line " + std::to_string(row) + " is not numeric");
        }
        if (!rows.empty() && vals.size() != rows.front().size())
            throw mola::DataError(path.string() + ": line " + std::to_string(row) + " has a different column count");
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw mola::DataError(path.string() + ": no loss samples");
    mola::Mat m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t t = 0; t < rows[i].size(); ++t) m(i, t) = rows[i][t];
    return m;
}

mola::CompareOptions compare_options(const mola::RunConfig& cfg, std::size_t n_seeds) {
    mola::CompareOptions o;
    o.lookback = cfg.dataset.lookback;
    o.horizon = cfg.dataset.horizon;
    o.segments = cfg.paradigm.segments;
    o.experts = cfg.paradigm.experts;
    o.rank = cfg.paradigm.rank;
    o.home_logit = cfg.paradigm.home_logit;
    o.placement = cfg.paradigm.placement;
    o.encoder = cfg.model;
    o.baseline = cfg.train;
    o.pretrain = cfg.pretrain;
    o.adapt = cfg.adapt;
    if (n_seeds < 1) throw mola::ConfigError("--seeds must be >= 1");
    o.seeds.clear();
    for (std::size_t i = 0; i < n_seeds; ++i) o.seeds.push_back(cfg.train.seed + i);
    return o;
}

void run_compare(Run& run, std::size_t n_seeds, const std::string& command) {
    const auto& cfg = run.cfg();
    const auto ds = run.data();
    const mola::ComparisonTable t = mola::paradigm_compare(ds, compare_options(cfg, n_seeds));
    json j = mola::comparison_to_json(t);
    j["config"] = cfg.to_json();
    run.write_json("reports/compare.json", j);
    std::ostringstream csv;
    csv << "paradigm,mse,mae,mse_delta_pct,mae_delta_pct\n";
    for (const auto& row : t.rows)
        csv << row.paradigm << "," << json(row.mean.mse).dump() << "," << json(row.mean.mae).dump() << ","
            << json(row.mse_delta_pct).dump() << "," << json(row.mae_delta_pct).dump() << "\n";
    run.write_csv_report("reports/compare.csv", csv.str());
    std::ostringstream steps;
    steps << "step";
    for (const auto& row : t.rows) steps << "," << row.paradigm << "_mse";
    steps << "\n";
    for (std::size_t s = 0; s < cfg.dataset.horizon; ++s) {
        steps << s + 1;
        for (const auto& row : t.rows) steps << "," << json(row.per_step[s].mse).dump();
        steps << "\n";
    }
    run.write_csv_report("reports/compare_per_step.csv", steps.str());
    run.finish(command);
    std::cout << mola::format_comparison(t);
    std::printf("identical windows: %s\n", t.identical_windows ? "yes" : "no");
    std::printf("delta cov (MT-F - MoLA): %+.6g, variance %s\n", t.variance.delta_cov_sum,
                t.variance.variance_reduced ? "reduced" : "not reduced");
}

void cmd_analyze(const CommonArgs& common, const AnalyzeArgs& args) {
    Run run(common);
    const auto& cfg = run.cfg();
    if (args.kind == "params") {
        const auto c = mola::param_counts(args.n_layers, args.d_model, args.d_ff, args.rank, args.experts, args.segments);
        json j = mola::param_count_to_json(c);
        j["config"] = cfg.to_json();
        run.write_json("reports/params.json", j);
        run.finish("analyze params");
        std::printf("n_mola %llu\nn_backbone %llu\nratio %.3f\n", static_cast<unsigned long long>(c.n_mola),
                    static_cast<unsigned long long>(c.n_backbone), c.ratio);
    } else if (args.kind == "bottleneck") {
        const auto ds = run.data();
        const auto splits = run.windows(ds);
        const mola::FoundationModel m =
            load_model(checkpoint_path(run, args.checkpoint, "baseline.json"), "train-baseline");
        const auto r = mola::head_bottleneck(m, splits.test);
        json j = mola::dataset_bottleneck_to_json(r);
        j["config"] = cfg.to_json();
        run.write_json("reports/bottleneck.json", j);
        run.finish("analyze bottleneck");
        std::printf("rank %zu of %zu outputs, mean min_error_sq %.6g (oracle %.6g) over %zu windows\n", r.rank,
                    r.outputs, r.mean_min_error_sq, r.mean_ls_residual_sq, r.windows);
    } else if (args.kind == "variance") {
        json j;
        if (!args.losses.empty()) {
            const auto r = mola::variance_report(read_loss_csv(args.losses));
            j = {{"report", mola::variance_to_json(r)}};
            std::printf("var_total %.6g cov_sum %.6g identity_gap %.3g\n", r.var_total, r.cov_sum, r.identity_gap);
        } else {
            const auto ds = run.data();
            const auto splits = run.windows(ds);
            const mola::FoundationModel base =
                load_model(checkpoint_path(run, args.checkpoint, "baseline.json"), "train-baseline");
            if (base.head_out() != cfg.dataset.horizon)
                throw mola::ConfigError("variance needs an MT-F baseline with head_out = dataset.horizon");
            const auto base_eval =
                mola::evaluate_forecasts(mola::forecast_direct(base, splits.test), splits.test);
            mola::FoundationModel f = load_model(run.dir() / "checkpoints" / "foundation.json", "pretrain");
            f.freeze();
            const fs::path apath = run.dir() / "checkpoints" / "adapter.json";
            if (!fs::exists(apath)) throw mola::ConfigError("no adapter at " + apath.string());
            const auto adapter = mola::load_adapter(apath);
            const auto mola_eval = mola::evaluate_forecasts(mola::forecast_mola(f, adapter, splits.test), splits.test);
            const auto rb = mola::variance_report(base_eval.step_losses);
            const auto rm = mola::variance_report(mola_eval.step_losses);
            const auto cmp = mola::compare_variance(rb, rm);
            j = {{"baseline", mola::variance_to_json(rb)},
                 {"mola", mola::variance_to_json(rm)},
                 {"comparison", mola::variance_comparison_to_json(cmp)}};
            std::printf("var_total MT-F %.6g MoLA %.6g, delta cov %+.6g\n", rb.var_total, rm.var_total,
                        cmp.delta_cov_sum);
        }
        j["config"] = cfg.to_json();
        run.write_json("reports/variance.json", j);
        run.finish("analyze variance");
    } else if (args.kind == "probe") {
        if (cfg.model.kind != mola::EncoderKind::mlp2) throw mola::ConfigError("probe needs model.encoder = mlp2");
        mola::ProbeOptions o;
        o.lookback = cfg.dataset.lookback;
        o.hidden = cfg.model.hidden;
        o.activation = cfg.model.activation;
        o.config = cfg.train;
        o.replicas = args.replicas;
        const auto steps = parse_steps(args.steps, "--steps");
        const auto ds = run.data();
        const auto r = mola::per_step_probe(ds, steps, o, args.base_seed.value_or(cfg.train.seed));
        json j = mola::probe_to_json(r);
        j["config"] = cfg.to_json();
        run.write_json("reports/probe.json", j);
        std::ostringstream pts;
        pts << "run,step,seed,point";
        for (std::size_t c = 0; c < r.runs.front().representations.cols(); ++c) pts << ",z" << c;
        pts << "\n";
        for (std::size_t i = 0; i < r.runs.size(); ++i) {
            const auto& reps = r.runs[i].representations;
            for (std::size_t p = 0; p < reps.rows(); ++p) {
                pts << i << "," << r.runs[i].step << "," << r.runs[i].seed << "," << p;
                for (std::size_t c = 0; c < reps.cols(); ++c) pts << "," << json(reps(p, c)).dump();
                pts << "\n";
            }
        }
        run.write_csv_report("reports/probe_points.csv", pts.str());
        run.finish("analyze probe");
        std::printf("cross-step %.4f, same-step %.4f, ratio %.3f\n", r.cross_group, r.within_group, r.ratio);
    } else if (args.kind == "compare") {
        run_compare(run, args.seeds, "analyze compare");
    } else {
        throw mola::ConfigError("unknown analysis '" + args.kind + "'");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixture-of-LoRA forecasting: training, adaptation and analysis"};
    app.set_version_flag("--version", std::string("mola ") + MOLA_VERSION);
    app.require_subcommand(1);

    CommonArgs common;
    SynthArgs synth_args;
    AdaptArgs adapt_args;
    EvalArgs eval_args;
    AnalyzeArgs analyze_args;
    std::size_t compare_seeds = 5;

    auto* synth = app.add_subcommand("synth", "write the configured synthetic series as CSV");
    add_common(synth, common);
    synth->add_option("--from-manifest", synth_args.from_manifest, "regenerate from a synth manifest");

    auto* pretrain = app.add_subcommand("pretrain", "train the S = T/K step foundation model");
    add_common(pretrain, common);

    auto* adapt = app.add_subcommand("adapt", "train the mixture-of-LoRA adapter segment by segment");
    add_common(adapt, common);
    adapt->add_option("--foundation", adapt_args.foundation, "foundation checkpoint (default: run dir)");

    auto* baseline = app.add_subcommand("train-baseline", "train the AR-F or MT-F baseline");
    add_common(baseline, common);

    auto* eval = app.add_subcommand("eval", "evaluate the trained paradigm");
    add_common(eval, common);
    eval->add_option("--split", eval_args.split, "train, val or test")->capture_default_str();
    eval->add_option("--horizons", eval_args.horizons, "comma-separated prefix horizons (default: T)");
    eval->add_option("--foundation", eval_args.foundation, "foundation checkpoint");
    eval->add_option("--adapter", eval_args.adapter, "adapter checkpoint");
    eval->add_option("--baseline", eval_args.baseline, "baseline checkpoint");

    auto* analyze = app.add_subcommand("analyze", "bottleneck | params | variance | probe | compare");
    add_common(analyze, common);
    analyze->add_option("kind", analyze_args.kind, "analysis kind")
        ->required()
        ->check(CLI::IsMember({"bottleneck", "params", "variance", "probe", "compare"}));
    analyze->add_option("--checkpoint", analyze_args.checkpoint, "MT-F checkpoint (bottleneck, variance)");
    analyze->add_option("--losses", analyze_args.losses, "CSV of per-step loss samples (variance)");
    analyze->add_option("--steps", analyze_args.steps, "probe steps")->capture_default_str();
    analyze->add_option("--replicas", analyze_args.replicas, "probe seeds per step")->capture_default_str();
    analyze->add_option("--base-seed", analyze_args.base_seed, "probe base seed (default: train.seed)");
    analyze->add_option("--seeds", analyze_args.seeds, "comparison seeds")->capture_default_str();
    analyze->add_option("--layers", analyze_args.n_layers, "params: N_l")->capture_default_str();
    analyze->add_option("--d-model", analyze_args.d_model, "params: d_m")->capture_default_str();
    analyze->add_option("--d-ff", analyze_args.d_ff, "params: d_ff")->capture_default_str();
    analyze->add_option("--rank", analyze_args.rank, "params: r")->capture_default_str();
    analyze->add_option("--experts", analyze_args.experts, "params: P")->capture_default_str();
    analyze->add_option("--segments", analyze_args.segments, "params: K")->capture_default_str();

    auto* compare = app.add_subcommand("compare", "AR-F vs MT-F vs MoLA on identical windows");
    add_common(compare, common);
    compare->add_option("--seeds", compare_seeds, "number of seeds, starting at train.seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) cmd_synth(common, synth_args);
        else if (pretrain->parsed()) cmd_pretrain(common);
        else if (adapt->parsed()) cmd_adapt(common, adapt_args);
        else if (baseline->parsed()) cmd_train_baseline(common);
        else if (eval->parsed()) cmd_eval(common, eval_args);
        else if (analyze->parsed()) cmd_analyze(common, analyze_args);
        else if (compare->parsed()) {
            Run run(common);
            run_compare(run, compare_seeds, "compare");
        }
    } catch (const mola::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed JSON input: " << e.what() << "\n";
        return 1;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
