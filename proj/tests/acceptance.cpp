// Acceptance checks, one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <string>

#include "helpers.hpp"
#include "mola/analysis.hpp"
#include "mola/error.hpp"

using namespace mola;
using testing::naive_matmul;
using testing::random_mat;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail, double seconds) {
    std::printf("criterion %2d: %s  %s (%.2f s)\n", id, ok ? "PASS" : "FAIL", detail.c_str(), seconds);
    std::fflush(stdout);
    if (!ok) ++failures;
}

template <class F>
double timed(F&& f) {
    const auto start = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

struct CaseStudy {
    SeriesDataset ds;
    WindowSplits w;
    CompareOptions opt;
    CaseStudy() {
        ds = standardize(generate_synthetic(default_case_study_spec()));
        w = make_window_splits(ds, opt.lookback, opt.horizon);
    }
    EncoderSpec spec() const {
        EncoderSpec s = opt.encoder;
        s.lookback = opt.lookback;
        return s;
    }
};

// ---- 1: shared-representation bound ----------------------------------------

void criterion_bound() {
    std::size_t positive = 0, zero = 0;
    double worst_rel = 0.0, worst_zero = 0.0;
    const double secs = timed([&] {
        std::mt19937_64 rng(2024);
        std::uniform_int_distribution<std::size_t> t_dist(2, 40), l_dist(1, 24), d_dist(1, 6), kind(0, 2);
        while (positive < 220 || zero < 60) {
            std::size_t T = t_dist(rng), L = l_dist(rng);
            const std::size_t D = d_dist(rng);
            Mat w, b = random_mat(T, 1, rng);
            switch (kind(rng)) {
                case 0: w = random_mat(T, L, rng); break;
                case 1: {  // low-rank weights
                    const std::size_t r = 1 + rng() % std::min(T, L);
                    w = matmul(random_mat(T, r, rng), random_mat(r, L, rng));
                    break;
                }
                default: {  // duplicated output rows
                    w = random_mat(T, L, rng);
                    for (std::size_t i = T / 2; i < T; ++i) {
                        for (std::size_t c = 0; c < L; ++c) w(i, c) = w(i - T / 2, c);
                        b(i, 0) = b(i - T / 2, 0);
                    }
                }
            }
            const Mat y = random_mat(T, D, rng);
            const BottleneckReport r = min_attainable_error(w, b, y);
            const double oracle = testing::projection_residual_sq(append_column(w, b), y);
            if (r.rank == T) {
                worst_zero = std::max(worst_zero, r.min_error_sq);
                ++zero;
            } else {
                worst_rel = std::max(worst_rel, std::abs(r.min_error_sq - oracle) / oracle);
                ++positive;
            }
        }
        // the full-rank T <= L + 1 family on its own
        for (std::size_t L = 1; L <= 12; ++L)
            for (std::size_t T = 1; T <= L + 1; ++T) {
                const BottleneckReport r =
                    min_attainable_error(random_mat(T, L, rng), random_mat(T, 1, rng), random_mat(T, 3, rng));
                worst_zero = std::max(worst_zero, r.min_error_sq);
                ++zero;
            }
    });
    const bool ok = positive >= 200 && worst_rel <= 1e-8 && worst_zero <= 1e-10 && secs < 5.0;
    report(1, ok,
           "bottleneck bound vs Gram-Schmidt projection: " + std::to_string(positive) + " instances, max rel err " +
               fmt("%.2e", worst_rel) + "; " + std::to_string(zero) + " full-rank instances, max " +
               fmt("%.2e", worst_zero),
           secs);
}

// ---- 2: gradients -------------------------------------------------------------

void criterion_gradients() {
    double worst_lin = 0.0, worst_mlp = 0.0;
    const double secs = timed([&] {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            std::mt19937_64 rng(1000 + seed);
            const std::size_t L = 6 + seed % 5, S = 1 + seed % 4, D = 1 + seed % 3;
            const WindowSet ws = testing::random_windows(6, L, S, D, rng);
            const auto ptrs = pointers(ws);
            for (int kind = 0; kind < 2; ++kind) {
                EncoderSpec spec{kind ? EncoderKind::mlp2 : EncoderKind::linear, L, {}, Activation::relu};
                if (kind) spec.hidden = {5, 3};
                FoundationModel m(spec, S, seed);
                const LossGrad lg = m.loss_and_grads(ptrs, {0, S});
                const double err = testing::fd_relative_error(m.params(), lg.grads,
                                                              [&] { return m.loss(ptrs, {0, S}); });
                (kind ? worst_mlp : worst_lin) = std::max(kind ? worst_mlp : worst_lin, err);
            }
        }
    });
    const bool ok = worst_lin < 1e-5 && worst_mlp < 1e-5 && secs < 30.0;
    report(2, ok,
           "central differences h=1e-5, 10 draws per encoder: linear " + fmt("%.2e", worst_lin) + ", mlp2 " +
               fmt("%.2e", worst_mlp),
           secs);
}

// ---- 3, 4: zero init and frozen backbone ----------------------------------------

MolaAdapter case_adapter(const CaseStudy& cs, const FoundationModel& f) {
    AdapterOptions ao;
    ao.experts = cs.opt.experts;
    ao.rank = cs.opt.rank;
    ao.layers = cs.opt.placement;
    ao.home_logit = cs.opt.home_logit;
    return MolaAdapter(f, make_segment_plan(cs.opt.horizon, cs.opt.segments), ao);
}

void criterion_zero_init(const CaseStudy& cs, const FoundationModel& f) {
    bool same = true;
    std::size_t checked = 0;
    const double secs = timed([&] {
        const MolaAdapter ad = case_adapter(cs, f);
        const auto mola = forecast_mola(f, ad, cs.w.test);
        const auto base = forecast_direct(f, cs.w.test);
        const std::size_t S = f.head_out();
        for (std::size_t i = 0; i < mola.size(); ++i)
            for (std::size_t k = 0; k < cs.opt.segments; ++k)
                for (std::size_t t = 0; t < S; ++t)
                    for (std::size_t c = 0; c < base[i].cols(); ++c) {
                        same = same && mola[i](k * S + t, c) == base[i](t, c);
                        ++checked;
                    }
    });
    report(3, same, "B=0 adapter reproduces the foundation bit for bit on " + std::to_string(checked) + " test values",
           secs);
}

void criterion_frozen(const CaseStudy& cs, const FoundationModel& f) {
    bool same = false;
    const double secs = timed([&] {
        const std::string before = foundation_to_json(f).dump();
        MolaAdapter ad = case_adapter(cs, f);
        adapt_all_segments(f, ad, cs.w.train, cs.w.val, cs.opt.adapt);
        same = foundation_to_json(f).dump() == before;
    });
    report(4, same, "foundation checkpoint bytes unchanged by a full adaptation run", secs);
}

// ---- 5: MoLA-R against an independent per-segment LoRA ------------------------------
// Everything below uses its own loops, Adam, shuffling and early stopping.

Mat mm_tn(const Mat& a, const Mat& b) {
    Mat out(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.cols(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

Mat mm_nt(const Mat& a, const Mat& b) {
    Mat out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
            out(i, j) = s;
        }
    return out;
}

Mat add_bias(Mat m, const Mat& b) {
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) += b(i, 0);
    return m;
}

struct RefNet {
    Mat w0, b0, w1, b1, wh, bh;
};

struct RefPass {
    Mat x, pre0, h1, z, out;
};

RefPass ref_forward(const RefNet& n, const Mat& b, const Mat& a, const Mat& x) {
    Mat w = n.w0;
    const Mat ba = naive_matmul(b, a);
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] += ba.data()[i];
    RefPass p;
    p.x = x;
    p.pre0 = add_bias(naive_matmul(w, x), n.b0);
    p.h1 = p.pre0;
    for (double& v : p.h1.data()) v = v > 0.0 ? v : 0.0;
    p.z = add_bias(naive_matmul(n.w1, p.h1), n.b1);
    p.out = add_bias(naive_matmul(n.wh, p.z), n.bh);
    return p;
}

// columns are (window, channel), window-major; rows are lookback or label steps
Mat ref_inputs(const std::vector<const WindowSample*>& ws, std::size_t L) {
    const std::size_t D = ws.front()->history.cols();
    Mat x(L, ws.size() * D);
    for (std::size_t w = 0; w < ws.size(); ++w)
        for (std::size_t c = 0; c < D; ++c)
            for (std::size_t i = 0; i < L; ++i) x(i, w * D + c) = ws[w]->history(i, c);
    return x;
}

Mat ref_targets(const std::vector<const WindowSample*>& ws, std::size_t first, std::size_t S) {
    const std::size_t D = ws.front()->label.cols();
    Mat y(S, ws.size() * D);
    for (std::size_t w = 0; w < ws.size(); ++w)
        for (std::size_t c = 0; c < D; ++c)
            for (std::size_t i = 0; i < S; ++i) y(i, w * D + c) = ws[w]->label(first + i, c);
    return y;
}

double ref_loss(const RefNet& n, const Mat& b, const Mat& a, const Mat& x, const Mat& y) {
    const Mat out = ref_forward(n, b, a, x).out;
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double e = out.data()[i] - y.data()[i];
        s += e * e;
    }
    return s / static_cast<double>(out.size());
}

struct RefAdam {
    double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Mat m, v;
    std::size_t t = 0;
    void step(Mat& w, const Mat& g, double lr) {
        if (m.empty()) {
            m = Mat(g.rows(), g.cols());
            v = Mat(g.rows(), g.cols());
        }
        ++t;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g.data()[i];
            m.data()[i] = b1 * m.data()[i] + (1.0 - b1) * gi;
            v.data()[i] = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            const double mh = m.data()[i] / bc1;
            const double vh = v.data()[i] / bc2;
            w.data()[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
};

// Trains one LoRA pair on segment k and returns it.
std::pair<Mat, Mat> ref_train_segment(const RefNet& n, Mat a, const WindowSet& train, const WindowSet& val,
                                      StepSlice seg, const TrainConfig& cfg, std::uint64_t stream) {
    Mat b(n.w0.rows(), a.rows());
    const std::size_t L = n.w0.cols();
    std::vector<const WindowSample*> vptr;
    for (const auto& w : val) vptr.push_back(&w);
    const Mat vx = ref_inputs(vptr, L), vy = ref_targets(vptr, seg.first, seg.count);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    std::mt19937_64 rng(seq);
    RefAdam adam_b, adam_a;
    Mat best_b = b, best_a = a;
    double best = 0.0;
    bool have_best = false;
    std::size_t bad = 0;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
            const std::size_t last = std::min(order.size(), first + cfg.batch_size);
            std::vector<const WindowSample*> batch;
            for (std::size_t i = first; i < last; ++i) batch.push_back(&train[order[i]]);
            const Mat x = ref_inputs(batch, L), y = ref_targets(batch, seg.first, seg.count);
            const RefPass p = ref_forward(n, b, a, x);
            Mat d = p.out;
            const double scale = 2.0 / static_cast<double>(d.size());
            for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] = (p.out.data()[i] - y.data()[i]) * scale;
            Mat dz = mm_tn(n.wh, d);
            Mat dh = mm_tn(n.w1, dz);
            for (std::size_t i = 0; i < dh.size(); ++i) dh.data()[i] *= p.pre0.data()[i] > 0.0 ? 1.0 : 0.0;
            const Mat g = mm_nt(dh, x);  // gradient w.r.t. the effective first-layer weight
            const Mat gb = mm_nt(g, a), ga = mm_tn(b, g);
            adam_b.step(b, gb, cfg.learning_rate);
            adam_a.step(a, ga, cfg.learning_rate);
        }
        const double v = ref_loss(n, b, a, vx, vy);
        if (!have_best || v < best) {
            have_best = true;
            best = v;
            best_b = b;
            best_a = a;
            bad = 0;
        } else if (++bad >= cfg.patience) {
            break;
        }
    }
    return {best_b, best_a};
}

void criterion_mola_r(const CaseStudy& cs, const FoundationModel& f) {
    double worst = 0.0;
    const double secs = timed([&] {
        const std::size_t K = cs.opt.segments;
        AdapterOptions ao;
        ao.experts = K;
        ao.rank = cs.opt.rank;
        ao.layers = {"encoder.0"};
        ao.seed = 17;
        MolaAdapter ad(f, make_segment_plan(cs.opt.horizon, K), ao);
        for (std::size_t k = 0; k < K; ++k) {
            std::vector<double> hot(K, -1e6);
            hot[k] = 0.0;
            ad.set_logits("encoder.0", k, hot);
        }
        std::vector<Mat> a_init;
        for (std::size_t k = 0; k < K; ++k) a_init.push_back(ad.expert("encoder.0", k).a);
        AdaptOptions opts;
        opts.train_logits = false;
        adapt_all_segments(f, ad, cs.w.train, cs.w.val, cs.opt.adapt, opts);
        const auto lib = forecast_mola(f, ad, cs.w.test);

        const ParamStore& p = f.params();
        const RefNet net{p.at("encoder.0.weight"), p.at("encoder.0.bias"), p.at("encoder.1.weight"),
                         p.at("encoder.1.bias"),   p.at("head.weight"),    p.at("head.bias")};
        const SegmentPlan plan = ad.plan();
        std::vector<const WindowSample*> tptr;
        for (const auto& w : cs.w.test) tptr.push_back(&w);
        const Mat tx = ref_inputs(tptr, f.lookback());
        const std::size_t D = cs.ds.channels();
        for (std::size_t k = 0; k < K; ++k) {
            const auto [b, a] =
                ref_train_segment(net, a_init[k], cs.w.train, cs.w.val, plan.boundaries[k], cs.opt.adapt, 1 + k);
            const Mat out = ref_forward(net, b, a, tx).out;
            for (std::size_t w = 0; w < tptr.size(); ++w)
                for (std::size_t c = 0; c < D; ++c)
                    for (std::size_t t = 0; t < plan.seg_len; ++t)
                        worst = std::max(worst, std::abs(out(t, w * D + c) - lib[w](k * plan.seg_len + t, c)));
        }
    });
    report(5, worst <= 1e-12, "MoLA-R vs separate per-segment LoRA models, max |diff| " + fmt("%.2e", worst), secs);
}

// ---- 6: parameter ratio ------------------------------------------------------------

void criterion_params() {
    ParamCount c;
    std::uint64_t lora = 0, backbone = 0;
    const double secs = timed([&] {
        c = param_counts(1, 512, 1024, 8, 4, 6);
        const std::uint64_t dm = 512, dff = 1024, r = 8, P = 4, K = 6;
        // attention: four dm x dm maps with biases; feed-forward: two matrices
        backbone = 4 * (dm * dm + dm) + dm * dff + dff * dm;
        // both feed-forward matrices carry P LoRA pairs and K logit vectors
        for (auto [out, in] : {std::pair{dff, dm}, std::pair{dm, dff}}) lora += P * (out * r + r * in) + K * P;
    });
    const double ratio = static_cast<double>(lora) / static_cast<double>(backbone);
    const bool ok = c.n_mola == lora && c.n_backbone == backbone && std::abs(c.ratio - 0.047) <= 0.001 &&
                    std::abs(ratio - 0.047) <= 0.001;
    report(6, ok,
           "N_MoLA/N_backbone = " + std::to_string(c.n_mola) + "/" + std::to_string(c.n_backbone) + " = " +
               fmt("%.5f", c.ratio),
           secs);
}

// ---- 7, 9: comparison and variance ---------------------------------------------------

struct Deferred {
    int id = 0;
    bool ok = false;
    std::string detail;
    double seconds = 0.0;
};

// reports 7 right away; 9 is returned so the lines stay in order
Deferred criterion_comparison(const CaseStudy& cs) {
    ComparisonTable t;
    const double secs = timed([&] { t = paradigm_compare(cs.ds, cs.opt); });
    const double arf = t.rows[0].mean.mse, mtf = t.rows[1].mean.mse, mola = t.rows[2].mean.mse;
    const auto& arf_steps = t.rows[0].per_step;
    const bool order = mola <= mtf && mtf <= arf;
    const bool growth = arf_steps.back().mse > arf_steps.front().mse;
    const bool ok = order && growth && t.identical_windows && secs < 300.0;
    std::string detail = "test MSE over " + std::to_string(cs.opt.seeds.size()) + " seeds: AR-F " +
                         fmt("%.4f", arf) + ", MT-F " + fmt("%.4f", mtf) + ", MoLA " + fmt("%.4f", mola) +
                         "; AR-F step 1 " + fmt("%.4f", arf_steps.front().mse) + " -> step " +
                         std::to_string(arf_steps.size()) + " " + fmt("%.4f", arf_steps.back().mse);

    // the variance identity on the same runs (first seed, MT-F vs MoLA)
    double gap = 0.0;
    VarianceComparison vc;
    const double vsecs = timed([&] {
        const auto first = cs.opt.seeds.front();
        const Mat* base = nullptr;
        const Mat* cand = nullptr;
        for (const auto& run : t.runs) {
            if (run.seed != first) continue;
            if (run.paradigm == "MT-F") base = &run.test.step_losses;
            if (run.paradigm == "MoLA") cand = &run.test.step_losses;
        }
        const VarianceReport vb = variance_report(*base), vm = variance_report(*cand);
        gap = std::max(vb.identity_gap / std::max(vb.var_total, 1e-300), vm.identity_gap / std::max(vm.var_total, 1e-300));
        vc = compare_variance(vb, vm);
    });
    report(7, gap <= 1e-10,
           "Var(mean) = (sum Var + 2 sum Cov)/T^2, max relative gap " + fmt("%.2e", gap) + "; delta Cov = " +
               fmt("%+.4f", vc.delta_cov_sum) + (vc.covariance_premise_holds ? " (>= 0" : " (< 0") +
               "), delta Var = " + fmt("%+.5f", vc.delta_var),
           vsecs);
    return {9, ok, detail, secs};
}

// ---- 8: per-step probe --------------------------------------------------------------

void criterion_probe() {
    double cross = 0.0, within = 0.0;
    std::string per_seed;
    const double secs = timed([&] {
        const SeriesDataset ds = standardize(generate_synthetic(default_case_study_spec()));
        for (std::uint64_t base = 0; base < 5000; base += 1000) {
            const ProbeReport r = per_step_probe(ds, {1, 16, 32}, ProbeOptions{}, base);
            cross += r.cross_group;
            within += r.within_group;
            per_seed += (per_seed.empty() ? "" : " ") + fmt("%.2f", r.ratio);
        }
    });
    const double ratio = cross / within;
    report(8, ratio >= 2.0 && secs < 120.0,
           "cross-step / same-step disparity " + fmt("%.2f", ratio) + " over base seeds 0..4000 (per seed: " +
               per_seed + ")",
           secs);
}

// ---- 10: early stopping, loader split, reproducibility ----------------------------------

void criterion_infra(const CaseStudy& cs) {
    bool stop_ok = true, split_ok = false, repro_ok = false;
    const double secs = timed([&] {
        // traces: (val losses, patience, expected stop epoch, expected best epoch)
        struct Trace {
            std::vector<double> v;
            std::size_t patience, stop, best;
        };
        const Trace traces[] = {{{1.0, 0.9, 0.95, 0.96, 0.5}, 2, 4, 2},
                                {{1.0, 1.0, 1.0, 1.0}, 2, 3, 1},
                                {{3, 2, 1, 0.5, 0.4}, 1, 0, 5},
                                {{5, 6, 4, 4.5, 4.6, 4.7, 1}, 3, 6, 3}};
        for (const auto& tr : traces) {
            EarlyStopping es(tr.patience);
            std::size_t stopped = 0;
            for (std::size_t e = 0; e < tr.v.size() && !stopped; ++e) {
                es.update(tr.v[e]);
                if (es.should_stop()) stopped = e + 1;
            }
            stop_ok = stop_ok && stopped == tr.stop && es.best_epoch() == tr.best;
        }

        const auto path = std::filesystem::temp_directory_path() / "mola_acceptance_hourly.csv";
        {
            std::ofstream out(path);
            out << "date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n";
            for (std::size_t r = 0; r < 14307; ++r) {
                out << r;
                for (int c = 0; c < 7; ++c) out << "," << std::sin(0.01 * r + c);
                out << "\n";
            }
        }
        CsvSchema schema;
        schema.train_count = 8545;
        schema.val_count = 2881;
        schema.test_count = 2881;
        const SeriesDataset d = load_csv(path, schema).dataset;
        split_ok = d.range(Split::train).second - d.range(Split::train).first == 8545 &&
                   d.range(Split::val).second - d.range(Split::val).first == 2881 &&
                   d.range(Split::test).second - d.range(Split::test).first == 2881;
        std::filesystem::remove(path);

        TrainConfig c = cs.opt.pretrain;
        const auto a = pretrain(cs.w.train, cs.w.val, cs.spec(), 8, c);
        const auto b = pretrain(cs.w.train, cs.w.val, cs.spec(), 8, c);
        repro_ok = run_summary(a.record).dump() == run_summary(b.record).dump() &&
                   foundation_to_json(a.model).dump() == foundation_to_json(b.model).dump();
    });
    report(10, stop_ok && split_ok && repro_ok,
           std::string("early-stopping traces ") + (stop_ok ? "ok" : "WRONG") + ", 8545/2881/2881 split " +
               (split_ok ? "ok" : "WRONG") + ", repeated run summaries " + (repro_ok ? "identical" : "DIFFER"),
           secs);
}

}  // namespace

int main() {
    try {
        criterion_bound();
        criterion_gradients();
        const CaseStudy cs;
        FoundationModel foundation;
        const double pre = timed([&] {
            foundation = pretrain(cs.w.train, cs.w.val, cs.spec(), cs.opt.horizon / cs.opt.segments, cs.opt.pretrain)
                             .model;
        });
        std::printf("(case-study foundation pretrained in %.2f s)\n", pre);
        criterion_zero_init(cs, foundation);
        criterion_frozen(cs, foundation);
        criterion_mola_r(cs, foundation);
        criterion_params();
        const Deferred ordering = criterion_comparison(cs);
        criterion_probe();
        report(ordering.id, ordering.ok, ordering.detail, ordering.seconds);
        criterion_infra(cs);
    } catch (const std::exception& ex) {
        std::printf("acceptance aborted: %s\n", ex.what());
        return 100;
    }
    std::printf("%d criteria failed\n", failures);
    return failures;
}
