// Acceptance suite: one pass/fail line per criterion, nonzero exit on failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>

#include "memfuse/runner.hpp"

namespace {

using namespace memfuse;

struct CheckFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

FeatureBundle testutil_bundle(const std::string& id, const fusion::StreamConfig& scfg, double visual_signal);

#define ACCEPT_CHECK(cond, msg)                                           \
    do {                                                                  \
        if (!(cond)) throw CheckFailure(std::string("check failed: ") + (msg)); \
    } while (0)

SyntheticSpec corpus_340(uint64_t seed, double signal_weight = 0.4) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.n_channels = 12;
    spec.channel_sizes.assign(12, 28);
    spec.channel_sizes[0] = 32;  // 340 records
    spec.signal_weight = signal_weight;
    spec.noise_std = 0.02;
    spec.d_vis = 8;
    spec.n_vis_tokens = 2;
    return spec;
}

std::map<std::string, GroupKey> channel_groups(const Dataset& ds) {
    std::map<std::string, GroupKey> groups;
    for (const auto& r : ds.records) groups[r.id] = r.channel;
    return groups;
}

std::map<std::string, Eigen::VectorXd> embed_all_titles(const Dataset& ds, int dim) {
    MockEmbeddingProvider emb(dim);
    std::map<std::string, Eigen::VectorXd> out;
    for (const auto& r : ds.records) {
        const auto v = emb.embed(r.title);
        out[r.id] = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    return out;
}

// 1. leakage audit over a 340-record, 12-channel corpus, both targets
void criterion_leakage_audit() {
    const auto ds = generate_synthetic(corpus_340(4021));
    const auto groups = channel_groups(ds);
    for (Target t : {Target::brand, Target::score}) {
        const auto splits = nested_split(ds, groups, t, 5, 5, 5, 13);
        ACCEPT_CHECK(splits.outer.size() == 5, "expected 5 outer folds");
        for (const auto& fold : splits.outer)
            ACCEPT_CHECK(fold.inner.size() == 5, "expected 5 inner splits per fold");
        const auto violations = audit_leakage(splits, groups);
        ACCEPT_CHECK(violations.empty(),
                     std::to_string(violations.size()) + " violations for target " + target_name(t));
    }
}

// 2. rebalancing fidelity: 23% channel -> exactly 3 subchannels; k-medoids
//    cost monotone; ARI 1.0 on well-separated clusters
void criterion_rebalancing() {
    SyntheticSpec spec = corpus_340(4022);
    spec.channel_sizes.assign(12, 28);
    spec.channel_sizes[0] = 31;  // 339 total
    spec.dominant_channel_share = 0.23;
    const auto ds = generate_synthetic(spec);
    size_t big = 0;
    for (const auto& r : ds.records) big += r.channel == "ch00" ? 1 : 0;
    ACCEPT_CHECK(big == 78, "dominant channel should hold 78 of 339 records, got " + std::to_string(big));

    const auto groups = rebalance_channels(ds, embed_all_titles(ds, 48), 0.10, 13);
    std::set<GroupKey> subchannels;
    for (const auto& r : ds.records)
        if (r.channel == "ch00") subchannels.insert(groups.at(r.id));
    ACCEPT_CHECK(subchannels.size() == 3,
                 "expected exactly 3 subchannels, got " + std::to_string(subchannels.size()));

    // cost monotonicity on the dominant channel's clustering inputs
    std::vector<Eigen::VectorXd> pts;
    {
        const auto embeddings = embed_all_titles(ds, 48);
        for (const auto& r : ds.records)
            if (r.channel == "ch00") pts.push_back(embeddings.at(r.id));
    }
    const auto clustering = kmedoids(pts, 3);
    for (size_t i = 1; i < clustering.cost_history.size(); ++i)
        ACCEPT_CHECK(clustering.cost_history[i] <= clustering.cost_history[i - 1] + 1e-12,
                     "k-medoids cost increased");

    // ARI 1.0 on constructed well-separated clusters
    Rng rng(55);
    std::vector<Eigen::VectorXd> clumps;
    std::vector<int> truth;
    for (int c = 0; c < 3; ++c) {
        Eigen::VectorXd center = Eigen::VectorXd::Zero(10);
        center(c) = 1.0;
        for (int i = 0; i < 12; ++i) {
            Eigen::VectorXd p = center;
            for (int d = 0; d < 10; ++d) p(d) += 0.03 * rng.normal();
            clumps.push_back(p);
            truth.push_back(c);
        }
    }
    const auto res = kmedoids(clumps, 3);
    // permutation-invariant comparison: every cluster maps to one truth label
    std::map<int, std::set<int>> truth_of_cluster;
    for (size_t i = 0; i < truth.size(); ++i)
        truth_of_cluster[res.assignment[i]].insert(truth[static_cast<size_t>(i)]);
    ACCEPT_CHECK(truth_of_cluster.size() == 3, "expected 3 clusters");
    for (const auto& [cluster, labels] : truth_of_cluster)
        ACCEPT_CHECK(labels.size() == 1, "cluster mixes ground-truth clumps (ARI < 1)");
}

// 3. finite-difference gradient check on the reduced configuration
void criterion_gradient_check() {
    fusion::BackboneConfig bcfg;
    bcfg.n_layers = 1;
    bcfg.d_model = 8;
    bcfg.n_heads = 2;
    bcfg.d_ff = 16;
    bcfg.max_seq = 48;
    bcfg.seed = 4023;
    fusion::StreamConfig scfg;
    scfg.d_text = 6;
    scfg.d_vis = 4;
    scfg.n_vis_tokens = 2;
    fusion::LoraConfig lora;
    lora.enabled = true;
    lora.rank = 2;
    lora.alpha = 2;
    lora.dropout = 0.0;
    fusion::HeadConfig head;
    head.pooling = fusion::Pooling::attention;
    fusion::FusionModel model(bcfg, scfg, head, lora);
    fusion::randomize_for_gradcheck(model, 11);

    std::vector<FeatureBundle> bundles;
    for (int i = 0; i < 3; ++i)
        bundles.push_back(testutil_bundle("gc" + std::to_string(i), scfg, 0.3 * i - 0.3));
    std::vector<fusion::SampleRef> batch;
    double t = 0.25;
    for (const auto& b : bundles) {
        batch.push_back(fusion::SampleRef{&b, "grad check " + b.id, t});
        t += 0.25;
    }

    fusion::GradCheckOptions opts;
    opts.include_base_layer = 0;
    const auto report = fusion::check_gradients(model, batch, fusion::TrainMode::lora, opts);
    ACCEPT_CHECK(report.pass, "max relative error " + std::to_string(report.max_rel_err));
    ACCEPT_CHECK(report.max_rel_err <= 1e-4, "tolerance 1e-4 exceeded");

    bool covered_proj = false, covered_lora = false, covered_pool = false, covered_head = false,
         covered_base = false;
    for (const auto& e : report.entries) {
        covered_proj |= e.name.rfind("proj.", 0) == 0;
        covered_lora |= e.name.find(".lora_") != std::string::npos;
        covered_pool |= e.name == "pool.query";
        covered_head |= e.name.rfind("head.", 0) == 0;
        covered_base |= e.name.rfind("layer0.", 0) == 0 && e.name.find(".lora_") == std::string::npos;
    }
    ACCEPT_CHECK(covered_proj && covered_lora && covered_pool && covered_head && covered_base,
                 "gradient check must cover projectors, LoRA A/B, pooling, head, one backbone layer");
}

// 4. LoRA identities: zero-init equivalence, merge agreement, scale at r = alpha
void criterion_lora_identities() {
    fusion::BackboneConfig bcfg;
    bcfg.n_layers = 2;
    bcfg.d_model = 16;
    bcfg.n_heads = 2;
    bcfg.d_ff = 32;
    bcfg.max_seq = 64;
    bcfg.seed = 4024;
    fusion::StreamConfig scfg;
    scfg.d_text = 8;
    scfg.d_vis = 4;
    scfg.n_vis_tokens = 2;
    fusion::LoraConfig lora;
    lora.enabled = true;
    lora.rank = 4;
    lora.alpha = 4;
    lora.dropout = 0.0;

    fusion::FusionModel frozen(bcfg, scfg, fusion::HeadConfig{}, fusion::LoraConfig{});
    fusion::FusionModel adapted(bcfg, scfg, fusion::HeadConfig{}, lora);
    for (int i = 0; i < 5; ++i) {
        const auto b = testutil_bundle("l" + std::to_string(i), scfg, 0.1 * i);
        const std::string prompt = "lora identity " + std::to_string(i);
        const double pf = frozen.predict_one(b, prompt);
        const double pa = adapted.predict_one(b, prompt);
        ACCEPT_CHECK(pf == pa, "zero-init adapter output differs from frozen output");
    }

    Rng rng(91);
    for (auto& [name, tsr] : adapted.params().entries)
        if (name.find(".lora_") != std::string::npos)
            for (Eigen::Index r = 0; r < tsr->val.rows(); ++r)
                for (Eigen::Index c = 0; c < tsr->val.cols(); ++c) tsr->val(r, c) = 0.05 * rng.normal();
    auto merged = adapted.merged();
    for (int i = 0; i < 5; ++i) {
        const auto b = testutil_bundle("m" + std::to_string(i), scfg, -0.1 * i);
        const std::string prompt = "merge identity " + std::to_string(i);
        ACCEPT_CHECK(std::abs(merged.predict_one(b, prompt) - adapted.predict_one(b, prompt)) <= 1e-6,
                     "merged model deviates by more than 1e-6");
    }

    fusion::LoraConfig paper;
    paper.rank = 32;
    paper.alpha = 32;
    ACCEPT_CHECK(paper.scaling() == 1.0, "scale must be exactly 1.0 when r = alpha");
}

// 5. metrics oracle agreement
void criterion_metrics_oracle() {
    auto oracle_ranks = [](const std::vector<double>& v) {
        std::vector<double> ranks(v.size());
        for (size_t i = 0; i < v.size(); ++i) {
            size_t smaller = 0, equal = 0;
            for (size_t j = 0; j < v.size(); ++j) {
                if (v[j] < v[i]) ++smaller;
                if (v[j] == v[i]) ++equal;
            }
            ranks[i] = static_cast<double>(smaller) + (static_cast<double>(equal) + 1.0) / 2.0;
        }
        return ranks;
    };
    auto oracle_spearman = [&](const std::vector<double>& a, const std::vector<double>& b) {
        const auto ra = oracle_ranks(a), rb = oracle_ranks(b);
        double ma = 0, mb = 0;
        for (size_t i = 0; i < ra.size(); ++i) {
            ma += ra[i];
            mb += rb[i];
        }
        ma /= static_cast<double>(ra.size());
        mb /= static_cast<double>(ra.size());
        double cov = 0, va = 0, vb = 0;
        for (size_t i = 0; i < ra.size(); ++i) {
            cov += (ra[i] - ma) * (rb[i] - mb);
            va += (ra[i] - ma) * (ra[i] - ma);
            vb += (rb[i] - mb) * (rb[i] - mb);
        }
        if (va <= 0 || vb <= 0) return 0.0;
        return cov / std::sqrt(va * vb);
    };

    Rng rng(4025);
    for (int trial = 0; trial < 1000; ++trial) {
        const size_t n = 2 + rng.index(49);
        std::vector<double> a(n), b(n);
        for (size_t i = 0; i < n; ++i) {
            a[i] = static_cast<double>(rng.index(10)) / 10.0;
            b[i] = static_cast<double>(rng.index(10)) / 10.0;
        }
        ACCEPT_CHECK(std::abs(spearman(a, b) - oracle_spearman(a, b)) <= 1e-12,
                     "spearman disagrees with the brute-force oracle");
    }

    const std::vector<double> a{1, 2, 2, 3}, b{1, 2, 3, 4};
    ACCEPT_CHECK(std::abs(spearman(a, b) - 0.9487) <= 1e-4, "worked ties example failed");

    std::vector<double> x(40), y(40);
    for (size_t i = 0; i < 40; ++i) {
        x[i] = rng.uniform(-2, 2);
        y[i] = rng.uniform(-2, 2);
    }
    const double base = spearman(x, y);
    std::vector<double> ex(40), cx(40), ax(40);
    for (size_t i = 0; i < 40; ++i) {
        ex[i] = std::exp(x[i]);
        cx[i] = x[i] * x[i] * x[i];
        ax[i] = 2.5 * x[i] + 1.0;
    }
    ACCEPT_CHECK(spearman(ex, y) == base, "exp transform changed SRCC");
    ACCEPT_CHECK(spearman(cx, y) == base, "cube transform changed SRCC");
    ACCEPT_CHECK(spearman(ax, y) == base, "affine transform changed SRCC");
}

// 6. PCA contracts
void criterion_pca() {
    Rng rng(4026);
    Eigen::MatrixXd X(60, 12);
    for (Eigen::Index i = 0; i < 60; ++i)
        for (Eigen::Index j = 0; j < 12; ++j) X(i, j) = rng.normal();
    const auto m = fit_pca(X, 12);
    const Eigen::MatrixXd gram = m.components * m.components.transpose();
    ACCEPT_CHECK((gram - Eigen::MatrixXd::Identity(12, 12)).cwiseAbs().maxCoeff() <= 1e-8,
                 "components not orthonormal within 1e-8");
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const Eigen::VectorXd x = X.row(i).transpose();
        ACCEPT_CHECK((m.inverse_transform(m.transform(x)) - x).cwiseAbs().maxCoeff() <= 1e-8,
                     "full-rank reconstruction above 1e-8");
    }
    for (Eigen::Index i = 1; i < m.explained_variance.size(); ++i)
        ACCEPT_CHECK(m.explained_variance(i) <= m.explained_variance(i - 1) + 1e-12,
                     "explained variance not non-increasing");

    Eigen::VectorXd direction(12);
    for (Eigen::Index i = 0; i < 12; ++i) direction(i) = rng.normal();
    direction.normalize();
    Eigen::MatrixXd R(50, 12);
    for (Eigen::Index i = 0; i < 50; ++i) R.row(i) = (rng.uniform(-2, 2) * direction).transpose();
    const auto rank1 = fit_pca(R, 2);
    ACCEPT_CHECK(rank1.explained_variance_ratio()(0) >= 0.999, "rank-1 data not captured by first component");
}

// 7. HGBT sanity plus the noise-floor overfitting diagnostic
void criterion_hgbt() {
    Rng rng(4027);
    Eigen::MatrixXd X_train(500, 5), X_test(200, 5);
    std::vector<double> y_train(500), y_test(200);
    for (Eigen::Index i = 0; i < 500; ++i) {
        for (Eigen::Index j = 0; j < 5; ++j) X_train(i, j) = rng.uniform(-1, 1);
        y_train[static_cast<size_t>(i)] = X_train(i, 1);
    }
    for (Eigen::Index i = 0; i < 200; ++i) {
        for (Eigen::Index j = 0; j < 5; ++j) X_test(i, j) = rng.uniform(-1, 1);
        y_test[static_cast<size_t>(i)] = X_test(i, 1);
    }
    const auto model = hgbt_fit(X_train, y_train, HgbtParams{});
    ACCEPT_CHECK(spearman(model.predict(X_test), y_test) >= 0.95, "held-out SRCC below 0.95 on y = x1");
    for (size_t i = 1; i < model.train_rmse_history.size(); ++i)
        ACCEPT_CHECK(model.train_rmse_history[i] <= model.train_rmse_history[i - 1] + 1e-12,
                     "training RMSE increased with tree count");

    // pure-noise targets with grouped nested CV on 340 records
    ExperimentConfig cfg;
    cfg.label = "noise-floor";
    cfg.model = ModelKind::hgbt;
    cfg.target = Target::brand;
    cfg.synth = corpus_340(4127, /*signal_weight=*/0.0);
    cfg.synth->noise_std = 0.08;
    cfg.embed_dim = 24;
    cfg.pca_components = 8;
    cfg.tune_hgbt = false;
    cfg.hgbt_params.n_trees = 150;
    const auto result = run_experiment(cfg);
    ACCEPT_CHECK(std::abs(result.report.cv_srcc) <= 0.25,
                 "noise-floor mean outer SRCC " + std::to_string(result.report.cv_srcc) +
                     " outside [-0.25, 0.25]");
}

// 8. end-to-end planted signal through the full fusion pipeline, twice
void criterion_end_to_end_fusion() {
    ExperimentConfig cfg;
    cfg.label = "e2e-planted";
    cfg.model = ModelKind::fusion;
    cfg.target = Target::brand;
    cfg.prompt_kind = fusion::PromptKind::rationale;

    SyntheticSpec spec;
    spec.seed = 4028;
    spec.n_channels = 8;
    spec.channel_sizes = {35, 17, 17, 17, 17, 17, 15, 15};  // 150 records
    spec.signal_weight = 0.4;
    spec.noise_std = 0.02;
    spec.d_vis = 8;
    spec.n_vis_tokens = 2;
    cfg.synth = spec;

    cfg.embed_dim = 32;
    cfg.seed = 13;

    cfg.backbone.n_layers = 2;
    cfg.backbone.d_model = 32;
    cfg.backbone.n_heads = 4;
    cfg.backbone.d_ff = 64;
    cfg.backbone.max_seq = 128;

    cfg.head.pooling = fusion::Pooling::mean;
    cfg.head.lambda = 0.5;

    cfg.lora.enabled = true;
    cfg.lora.rank = 4;
    cfg.lora.alpha = 4;
    cfg.lora.dropout = 0.15;

    cfg.train.mode = fusion::TrainMode::lora;
    cfg.train.lr = 2e-3;
    cfg.train.batch_size = 16;
    cfg.train.max_epochs = 20;
    cfg.train.early_stopping_rounds = 5;

    const auto first = run_experiment(cfg);
    ACCEPT_CHECK(first.report.cv_srcc >= 0.5,
                 "mean outer-test SRCC " + std::to_string(first.report.cv_srcc) + " below 0.5");
    const auto second = run_experiment(cfg);
    ACCEPT_CHECK(report_to_json(first.report).dump() == report_to_json(second.report).dump(),
                 "two runs with the same seeds disagree");
}

// 9. fold-aware prompting audit over all 25 inner splits
void criterion_fold_aware_prompting() {
    const auto ds = generate_synthetic(corpus_340(4029));
    const auto groups = channel_groups(ds);
    const auto splits = nested_split(ds, groups, Target::brand, 5, 5, 5, 13);

    MockEmbeddingProvider emb(32);
    std::map<std::string, TextStreams> streams;
    for (const auto& r : ds.records) {
        TextStreams s;
        auto take = [&](const std::string& text) {
            const auto v = emb.embed(text);
            return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())).eval();
        };
        s.subtitles = take(r.subtitles);
        s.title = take(r.title);
        s.description = take(r.description);
        streams[r.id] = s;
    }

    size_t checked = 0;
    for (const auto& fold : splits.outer) {
        for (const auto& inner : fold.inner) {
            std::map<std::string, double> scores;
            for (const auto& id : inner.train_ids) scores[id] = ds.by_id(id).brand_memorability;
            const std::set<std::string> train_set(inner.train_ids.begin(), inner.train_ids.end());
            for (const auto& valid_id : inner.valid_ids) {
                const auto picks = select_fewshot_examples(valid_id, inner.train_ids, streams, scores, 3);
                for (const auto& p : picks) {
                    ACCEPT_CHECK(train_set.count(p.id),
                                 "exemplar " + p.id + " for " + valid_id + " is outside the training split");
                    ++checked;
                }
            }
        }
    }
    ACCEPT_CHECK(checked > 0, "no exemplars were audited");
}

// 10. composite loss contracts
void criterion_composite_loss() {
    const std::vector<double> y{0.15, 0.45, 0.75};
    Eigen::MatrixXd ym(3, 1);
    for (int i = 0; i < 3; ++i) ym(i, 0) = y[static_cast<size_t>(i)];
    const auto perfect = fusion::composite_loss(fusion::constant(ym), y, 0.5);
    ACCEPT_CHECK(std::abs(perfect.loss->val(0, 0)) <= 1e-12, "L(y, y) must be 0");
    ACCEPT_CHECK(!perfect.degenerate, "perfect prediction flagged degenerate");

    Eigen::MatrixXd pm(2, 1);
    pm(0, 0) = 0.2;
    pm(1, 0) = 0.8;
    const auto analytic = fusion::composite_loss(fusion::constant(pm), {0.8, 0.2}, 0.5);
    ACCEPT_CHECK(std::abs(analytic.loss->val(0, 0) - 1.3) <= 1e-12,
                 "two-point case: expected exactly 1.3, got " + std::to_string(analytic.loss->val(0, 0)));

    Eigen::MatrixXd cm = Eigen::MatrixXd::Constant(3, 1, 0.4);
    const auto degenerate = fusion::composite_loss(fusion::constant(cm), y, 0.5);
    ACCEPT_CHECK(degenerate.degenerate, "constant predictions must be flagged");
    const double mae = (0.25 + 0.05 + 0.35) / 3.0;
    ACCEPT_CHECK(std::abs(degenerate.loss->val(0, 0) - (0.5 * mae + 0.5)) <= 1e-12,
                 "degenerate rule must pin the correlation term to 1");
}

struct Criterion {
    int number;
    const char* name;
    double budget_seconds;
    std::function<void()> fn;
};

}  // namespace

// deterministic bundles for the model-level criteria
namespace {
FeatureBundle testutil_bundle(const std::string& id, const fusion::StreamConfig& scfg, double visual_signal) {
    Rng rng(splitmix64(fnv1a64(id) ^ 0xacce97ull));
    auto unit = [&](Eigen::Index d) {
        Eigen::VectorXd v(d);
        for (Eigen::Index i = 0; i < d; ++i) v(i) = rng.normal();
        return (v / v.norm()).eval();
    };
    FeatureBundle b;
    b.id = id;
    b.e5_subtitles = unit(scfg.d_text);
    b.e5_title = unit(scfg.d_text);
    b.e5_description = unit(scfg.d_text);
    b.e5_summary = unit(scfg.d_text);
    b.e5_rationale = unit(scfg.d_text);
    b.visual_block.resize(scfg.n_vis_tokens, scfg.d_vis);
    for (int r = 0; r < scfg.n_vis_tokens; ++r) {
        b.visual_block(r, 0) = visual_signal;
        for (int c = 1; c < scfg.d_vis; ++c) b.visual_block(r, c) = 0.2 * rng.normal();
    }
    b.numeric = Eigen::VectorXd::Zero(2);
    b.summary_text = "summary " + id;
    b.rationale_text = "rationale " + id;
    return b;
}
}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "leakage audit (340 records, 12 channels, both targets)", 5.0, criterion_leakage_audit},
        {2, "rebalancing fidelity (23% channel -> 3 subchannels, ARI, cost)", 5.0, criterion_rebalancing},
        {3, "gradient check (reduced config, <= 1e-4 relative)", 60.0, criterion_gradient_check},
        {4, "LoRA identities (zero-init, merge <= 1e-6, scale 1.0)", 10.0, criterion_lora_identities},
        {5, "metrics oracle (1000 vectors <= 1e-12, ties, invariance)", 10.0, criterion_metrics_oracle},
        {6, "PCA (orthonormality, reconstruction, variance order)", 5.0, criterion_pca},
        {7, "HGBT sanity and noise-floor overfitting diagnostic", 120.0, criterion_hgbt},
        {8, "end-to-end planted signal (fusion, LoRA, mean pooling)", 600.0, criterion_end_to_end_fusion},
        {9, "fold-aware prompting audit (25 inner splits)", 5.0, criterion_fold_aware_prompting},
        {10, "composite loss (zero, analytic 1.3, degenerate rule)", 1.0, criterion_composite_loss},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        std::string error;
        try {
            c.fn();
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (error.empty() && elapsed > c.budget_seconds) {
            error = "runtime " + std::to_string(elapsed) + "s exceeds budget of " +
                    std::to_string(c.budget_seconds) + "s";
        }
        if (error.empty()) {
            std::printf("[PASS] criterion %2d: %s (%.2fs)\n", c.number, c.name, elapsed);
        } else {
            std::printf("[FAIL] criterion %2d: %s (%.2fs) -- %s\n", c.number, c.name, elapsed, error.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    if (failures > 0) std::printf("%d of %zu criteria failed\n", failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
