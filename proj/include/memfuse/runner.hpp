#pragma once

#include <filesystem>
#include <optional>

#include "memfuse/config.hpp"
#include "memfuse/features.hpp"
#include "memfuse/fusion/train.hpp"
#include "memfuse/hgbt.hpp"
#include "memfuse/metrics.hpp"
#include "memfuse/pca.hpp"
#include "memfuse/splits.hpp"

namespace memfuse {

// --- leakage audit ----------------------------------------------------------------

struct Violation {
    std::string kind;   // coverage | outer_group_leak | inner_partition | inner_group_leak
    int outer = -1;
    int inner = -1;
    std::string group;  // offending group or id
    std::string detail;
};

namespace detail {

inline std::set<GroupKey> group_set(const std::vector<std::string>& ids,
                                    const std::map<std::string, GroupKey>& groups,
                                    std::vector<Violation>& out, const char* side, int outer, int inner) {
    std::set<GroupKey> s;
    for (const auto& id : ids) {
        const auto it = groups.find(id);
        if (it == groups.end()) {
            out.push_back(Violation{"coverage", outer, inner, id, std::string(side) + " id has no group"});
            continue;
        }
        s.insert(it->second);
    }
    return s;
}

}  // namespace detail

// Empty result iff outer test sets partition the ids and no group sits on both
// sides of any train/test or train/valid boundary.
inline std::vector<Violation> audit_leakage(const NestedSplits& splits,
                                            const std::map<std::string, GroupKey>& groups) {
    std::vector<Violation> violations;

    std::map<std::string, int> seen;
    for (size_t f = 0; f < splits.outer.size(); ++f)
        for (const auto& id : splits.outer[f].test_ids) {
            if (++seen[id] > 1)
                violations.push_back(
                    Violation{"coverage", static_cast<int>(f), -1, id, "id appears in multiple outer test sets"});
            if (!groups.count(id))
                violations.push_back(Violation{"coverage", static_cast<int>(f), -1, id, "unknown id in test set"});
        }
    for (const auto& [id, g] : groups)
        if (!seen.count(id))
            violations.push_back(Violation{"coverage", -1, -1, id, "id missing from every outer test set"});

    for (size_t f = 0; f < splits.outer.size(); ++f) {
        const auto& fold = splits.outer[f];
        // outer training pool = everything not in this fold's test set
        const std::set<std::string> test_ids(fold.test_ids.begin(), fold.test_ids.end());
        std::vector<std::string> pool_ids;
        for (const auto& [id, g] : groups)
            if (!test_ids.count(id)) pool_ids.push_back(id);

        auto test_groups = detail::group_set(fold.test_ids, groups, violations, "test", static_cast<int>(f), -1);
        auto pool_groups = detail::group_set(pool_ids, groups, violations, "train", static_cast<int>(f), -1);
        for (const auto& g : test_groups)
            if (pool_groups.count(g))
                violations.push_back(Violation{"outer_group_leak", static_cast<int>(f), -1, g,
                                               "group on both sides of the outer boundary"});

        const std::set<std::string> pool_set(pool_ids.begin(), pool_ids.end());
        for (size_t i = 0; i < fold.inner.size(); ++i) {
            const auto& is = fold.inner[i];
            std::set<std::string> train_set(is.train_ids.begin(), is.train_ids.end());
            std::set<std::string> valid_set(is.valid_ids.begin(), is.valid_ids.end());
            for (const auto& id : is.train_ids)
                if (valid_set.count(id))
                    violations.push_back(Violation{"inner_partition", static_cast<int>(f), static_cast<int>(i), id,
                                                   "id on both sides of an inner split"});
            std::set<std::string> union_set = train_set;
            union_set.insert(valid_set.begin(), valid_set.end());
            if (union_set != pool_set)
                violations.push_back(Violation{"inner_partition", static_cast<int>(f), static_cast<int>(i), "",
                                               "inner split does not partition the outer training pool"});
            auto tg = detail::group_set(is.train_ids, groups, violations, "train", static_cast<int>(f),
                                        static_cast<int>(i));
            auto vg = detail::group_set(is.valid_ids, groups, violations, "valid", static_cast<int>(f),
                                        static_cast<int>(i));
            for (const auto& g : tg)
                if (vg.count(g))
                    violations.push_back(Violation{"inner_group_leak", static_cast<int>(f), static_cast<int>(i), g,
                                                   "group on both sides of an inner boundary"});
        }
    }
    return violations;
}

// --- experiment configuration ------------------------------------------------------

enum class ModelKind { hgbt, fusion };

inline ModelKind model_kind_from_name(const std::string& s) {
    if (s == "hgbt") return ModelKind::hgbt;
    if (s == "fusion") return ModelKind::fusion;
    raise(errc::invalid_spec, "unknown model '" + s + "'");
}

struct FeatureFlags {
    bool subtitles = true;
    bool title = true;
    bool description = true;
    bool summary_emb = true;    // HGBT-only stream
    bool rationale_emb = true;  // HGBT-only stream
    bool visual = true;
    bool numeric = true;  // HGBT-only stream
};

struct ExperimentConfig {
    std::string label = "experiment";
    Target target = Target::brand;
    ModelKind model = ModelKind::fusion;
    FeatureFlags flags;
    fusion::PromptKind prompt_kind = fusion::PromptKind::rationale;

    std::string data_path;                  // JSONL input; empty -> synthetic
    std::optional<SyntheticSpec> synth;
    std::string cache_dir;                  // empty -> no provider cache

    uint64_t seed = 13;
    double max_fraction = 0.10;
    int n_outer = 5;
    int n_inner = 5;
    int n_bins = 5;
    int inner_index = 0;  // inner split used for early stopping and feature statistics
    int embed_dim = 64;
    BundleConfig bundle;

    // hgbt
    int pca_components = 16;
    TunerConfig tuner;
    bool tune_hgbt = true;
    HgbtParams hgbt_params;

    // fusion
    fusion::BackboneConfig backbone;
    fusion::HeadConfig head;
    fusion::LoraConfig lora;
    fusion::TrainConfig train;
    bool fusion_summary_emb = false;    // also inject the generated texts as
    bool fusion_rationale_emb = false;  // embedded virtual tokens
};

struct FoldScore {
    double srcc = 0.0;
    double rmse_value = 0.0;
    size_t n_test = 0;
    bool constant_predictions = false;
};

struct MetricReport {
    std::string label;
    std::string target;
    std::string model;
    std::string feature_set;  // enabled streams, comma separated
    std::string prompt;       // fusion only
    std::string pooling;      // fusion only
    std::vector<FoldScore> folds;
    double cv_srcc = 0.0;
    double cv_rmse = 0.0;
    bool correlation_flagged = false;  // some fold had constant predictions

    void finalize() {
        cv_srcc = 0.0;
        cv_rmse = 0.0;
        correlation_flagged = false;
        for (const auto& f : folds) {
            cv_srcc += f.srcc;
            cv_rmse += f.rmse_value;
            correlation_flagged |= f.constant_predictions;
        }
        if (!folds.empty()) {
            cv_srcc /= static_cast<double>(folds.size());
            cv_rmse /= static_cast<double>(folds.size());
        }
    }
};

inline nlohmann::ordered_json report_to_json(const MetricReport& r) {
    nlohmann::ordered_json j;
    j["label"] = r.label;
    j["target"] = r.target;
    j["model"] = r.model;
    if (!r.feature_set.empty()) j["feature_set"] = r.feature_set;
    if (!r.prompt.empty()) j["prompt"] = r.prompt;
    if (!r.pooling.empty()) j["pooling"] = r.pooling;
    j["cv_srcc"] = r.cv_srcc;
    j["cv_rmse"] = r.cv_rmse;
    j["correlation_flagged"] = r.correlation_flagged;
    j["test_srcc"] = "n/a (no held-out set)";
    nlohmann::ordered_json folds = nlohmann::ordered_json::array();
    for (const auto& f : r.folds) {
        nlohmann::ordered_json jf;
        jf["srcc"] = f.srcc;
        jf["rmse"] = f.rmse_value;
        jf["n_test"] = f.n_test;
        folds.push_back(std::move(jf));
    }
    j["outer_folds"] = std::move(folds);
    return j;
}

inline std::string reports_to_markdown(const std::vector<MetricReport>& reports) {
    std::string md;
    md += "| Target | Model | Config. | CV SRCC | CV RMSE | Test SRCC |\n";
    md += "|---|---|---|---|---|---|\n";
    char buf[64];
    for (const auto& r : reports) {
        md += "| " + r.target + " | " + r.model + " | " + r.label + " | ";
        std::snprintf(buf, sizeof(buf), "%.4f", r.cv_srcc);
        md += std::string(buf) + " | ";
        std::snprintf(buf, sizeof(buf), "%.4f", r.cv_rmse);
        md += std::string(buf) + " | n/a (no held-out set) |\n";
    }
    return md;
}

// --- HGBT feature space ---------------------------------------------------------------
//
// Per-stream PCA reductions fitted on the inner-training rows, concatenated
// with the z-scored numeric vector.

namespace detail {

inline Eigen::VectorXd stream_vector(const FeatureBundle& b, const std::string& stream) {
    if (stream == "subtitles") return b.e5_subtitles;
    if (stream == "title") return b.e5_title;
    if (stream == "description") return b.e5_description;
    if (stream == "summary_emb") return b.e5_summary;
    if (stream == "rationale_emb") return b.e5_rationale;
    if (stream == "visual") {
        Eigen::VectorXd flat(b.visual_block.size());
        Eigen::Index at = 0;
        for (Eigen::Index r = 0; r < b.visual_block.rows(); ++r)
            for (Eigen::Index c = 0; c < b.visual_block.cols(); ++c) flat(at++) = b.visual_block(r, c);
        return flat;
    }
    raise(errc::invalid_spec, "unknown stream '" + stream + "'");
}

}  // namespace detail

struct HgbtFeatureSpace {
    std::vector<std::string> streams;
    std::map<std::string, PcaModel> pca;
    std::vector<std::string> skipped;  // zero-variance streams carry no signal
    bool use_numeric = true;
};

inline HgbtFeatureSpace fit_feature_space(const std::map<std::string, FeatureBundle>& bundles,
                                          const std::vector<std::string>& train_ids, const FeatureFlags& flags,
                                          int pca_components) {
    HgbtFeatureSpace space;
    space.use_numeric = flags.numeric;
    std::vector<std::string> wanted;
    if (flags.subtitles) wanted.push_back("subtitles");
    if (flags.title) wanted.push_back("title");
    if (flags.description) wanted.push_back("description");
    if (flags.summary_emb) wanted.push_back("summary_emb");
    if (flags.rationale_emb) wanted.push_back("rationale_emb");
    if (flags.visual) wanted.push_back("visual");

    for (const auto& stream : wanted) {
        const Eigen::Index d = detail::stream_vector(bundles.at(train_ids.front()), stream).size();
        if (d == 0) {  // e.g. visual requested on a corpus without visual blocks
            space.skipped.push_back(stream);
            continue;
        }
        Eigen::MatrixXd X(static_cast<Eigen::Index>(train_ids.size()), d);
        for (size_t i = 0; i < train_ids.size(); ++i)
            X.row(static_cast<Eigen::Index>(i)) = detail::stream_vector(bundles.at(train_ids[i]), stream).transpose();
        // constant across the training fold (e.g. a mock rationale skeleton):
        // no information, and PCA on it is numerically meaningless
        const Eigen::MatrixXd centered = X.rowwise() - X.colwise().mean();
        if (centered.squaredNorm() / static_cast<double>(X.rows() - 1) < 1e-18) {
            space.skipped.push_back(stream);
            continue;
        }
        const int n_comp = std::max(
            1, std::min<int>(pca_components,
                             std::min<int>(static_cast<int>(train_ids.size()) - 1, static_cast<int>(d))));
        space.pca[stream] = fit_pca(X, n_comp);
        space.streams.push_back(stream);
    }
    if (space.streams.empty() && !space.use_numeric)
        raise(errc::degenerate_data, "every requested feature stream is constant on the training fold");
    return space;
}

inline Eigen::VectorXd hgbt_feature_row(const HgbtFeatureSpace& space, const FeatureBundle& b) {
    std::vector<Eigen::VectorXd> parts;
    Eigen::Index total = 0;
    for (const auto& stream : space.streams) {
        parts.push_back(space.pca.at(stream).transform(detail::stream_vector(b, stream)));
        total += parts.back().size();
    }
    if (space.use_numeric) {
        parts.push_back(b.numeric);
        total += b.numeric.size();
    }
    Eigen::VectorXd row(total);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        row.segment(at, p.size()) = p;
        at += p.size();
    }
    return row;
}

inline Eigen::MatrixXd hgbt_feature_matrix(const HgbtFeatureSpace& space,
                                           const std::map<std::string, FeatureBundle>& bundles,
                                           const std::vector<std::string>& ids) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(ids.size()),
                      hgbt_feature_row(space, bundles.at(ids.front())).size());
    for (size_t i = 0; i < ids.size(); ++i)
        X.row(static_cast<Eigen::Index>(i)) = hgbt_feature_row(space, bundles.at(ids[i])).transpose();
    return X;
}

// --- experiment orchestration ------------------------------------------------------------

struct ExperimentResult {
    MetricReport report;
    SplitsFile splits;
    std::vector<fusion::TrainHistory> fold_histories;  // fusion only
};

namespace detail {

inline std::vector<double> targets_for(const Dataset& ds, const std::vector<std::string>& ids, Target t) {
    std::vector<double> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(ds.by_id(id).target(t));
    return out;
}

}  // namespace detail

inline Dataset experiment_dataset(const ExperimentConfig& cfg) {
    if (!cfg.data_path.empty()) return load_dataset(cfg.data_path);
    if (cfg.synth) return generate_synthetic(*cfg.synth);
    raise(errc::invalid_spec, "experiment needs a data path or a synthetic spec");
}

inline std::map<std::string, Eigen::VectorXd> title_embeddings(const Dataset& ds,
                                                               const EmbeddingProvider& embed) {
    std::map<std::string, Eigen::VectorXd> out;
    for (const auto& r : ds.records) out[r.id] = detail::to_eigen(embed.embed(r.title));
    return out;
}

inline SplitsFile build_splits(const Dataset& ds, const EmbeddingProvider& embed, Target target,
                               double max_fraction, int n_outer, int n_inner, int n_bins, uint64_t seed) {
    SplitsFile sf;
    sf.groups = rebalance_channels(ds, title_embeddings(ds, embed), max_fraction, seed);
    sf.splits = nested_split(ds, sf.groups, target, n_outer, n_inner, n_bins, seed);
    return sf;
}

// Runs the configured model over every outer fold: leakage audit first (fatal
// on violations), per-fold bundle assembly with inner-train statistics, then
// training and outer-test scoring.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    const Dataset ds = experiment_dataset(cfg);

    MockEmbeddingProvider embed_raw(cfg.embed_dim);
    MockGenerationProvider gen_raw;
    std::optional<CacheStore> cache;
    std::optional<CachedEmbeddingProvider> embed_cached;
    std::optional<CachedGenerationProvider> gen_cached;
    if (!cfg.cache_dir.empty()) {
        cache.emplace(cfg.cache_dir);
        embed_cached.emplace(embed_raw, *cache);
        gen_cached.emplace(gen_raw, *cache);
    }
    const EmbeddingProvider& embed = cfg.cache_dir.empty()
                                         ? static_cast<const EmbeddingProvider&>(embed_raw)
                                         : static_cast<const EmbeddingProvider&>(*embed_cached);
    const GenerationProvider& gen = cfg.cache_dir.empty()
                                        ? static_cast<const GenerationProvider&>(gen_raw)
                                        : static_cast<const GenerationProvider&>(*gen_cached);

    ExperimentResult result;
    result.splits = build_splits(ds, embed, cfg.target, cfg.max_fraction, cfg.n_outer, cfg.n_inner, cfg.n_bins,
                                 cfg.seed);

    const auto violations = audit_leakage(result.splits.splits, result.splits.groups);
    if (!violations.empty())
        raise(errc::leakage_detected, std::to_string(violations.size()) + " violations, first: " +
                                          violations.front().kind + " " + violations.front().group);

    MetricReport& report = result.report;
    report.label = cfg.label;
    report.target = target_name(cfg.target);
    report.model = cfg.model == ModelKind::hgbt ? "HGBT" : "Fusion";
    {
        std::vector<std::string> on;
        if (cfg.flags.subtitles) on.push_back("subtitles");
        if (cfg.flags.title) on.push_back("title");
        if (cfg.flags.description) on.push_back("description");
        if (cfg.model == ModelKind::hgbt && cfg.flags.summary_emb) on.push_back("summary_emb");
        if (cfg.model == ModelKind::hgbt && cfg.flags.rationale_emb) on.push_back("rationale_emb");
        if (cfg.flags.visual) on.push_back("visual");
        if (cfg.model == ModelKind::hgbt && cfg.flags.numeric) on.push_back("numeric");
        for (size_t i = 0; i < on.size(); ++i) report.feature_set += (i ? "," : "") + on[i];
    }
    if (cfg.model == ModelKind::fusion) {
        if (cfg.fusion_summary_emb) report.feature_set += ",summary_emb";
        if (cfg.fusion_rationale_emb) report.feature_set += ",rationale_emb";
        report.prompt = cfg.prompt_kind == fusion::PromptKind::rationale ? "rationale" : "summary";
        report.pooling = cfg.head.pooling == fusion::Pooling::mean ? "mean" : "attention";
    }

    for (size_t o = 0; o < result.splits.splits.outer.size(); ++o) {
        const auto& fold = result.splits.splits.outer[o];
        const auto& inner = fold.inner.at(static_cast<size_t>(cfg.inner_index));
        const auto bundles = assemble_bundles(ds, inner.train_ids, embed, gen, cfg.target, cfg.bundle);

        const auto y_test = detail::targets_for(ds, fold.test_ids, cfg.target);
        std::vector<double> pred;

        if (cfg.model == ModelKind::hgbt) {
            const auto space = fit_feature_space(bundles, inner.train_ids, cfg.flags, cfg.pca_components);
            const auto X_train = hgbt_feature_matrix(space, bundles, inner.train_ids);
            const auto X_valid = hgbt_feature_matrix(space, bundles, inner.valid_ids);
            const auto X_test = hgbt_feature_matrix(space, bundles, fold.test_ids);
            const auto y_train = detail::targets_for(ds, inner.train_ids, cfg.target);
            const auto y_valid = detail::targets_for(ds, inner.valid_ids, cfg.target);

            HgbtParams params = cfg.hgbt_params;
            if (cfg.tune_hgbt) {
                std::vector<InnerFoldData> tuning_folds;
                for (const auto& is : fold.inner) {
                    const auto fold_bundles = assemble_bundles(ds, is.train_ids, embed, gen, cfg.target, cfg.bundle);
                    const auto fold_space =
                        fit_feature_space(fold_bundles, is.train_ids, cfg.flags, cfg.pca_components);
                    tuning_folds.push_back(
                        InnerFoldData{hgbt_feature_matrix(fold_space, fold_bundles, is.train_ids),
                                      detail::targets_for(ds, is.train_ids, cfg.target),
                                      hgbt_feature_matrix(fold_space, fold_bundles, is.valid_ids),
                                      detail::targets_for(ds, is.valid_ids, cfg.target)});
                }
                TunerConfig tuner = cfg.tuner;
                tuner.seed = splitmix64(cfg.seed ^ (0x700eull + o));
                params = tune(tuning_folds, tuner).best;
            }
            const auto model = hgbt_fit(X_train, y_train, params, &X_valid, &y_valid);
            pred = model.predict(X_test);
        } else {
            fusion::StreamConfig scfg;
            scfg.use_subtitles = cfg.flags.subtitles;
            scfg.use_title = cfg.flags.title;
            scfg.use_description = cfg.flags.description;
            scfg.use_summary_emb = cfg.fusion_summary_emb;
            scfg.use_rationale_emb = cfg.fusion_rationale_emb;
            scfg.use_visual = cfg.flags.visual && ds.schema.d_vis > 0 && ds.schema.n_vis_tokens > 0;
            scfg.d_text = cfg.embed_dim;
            scfg.d_vis = static_cast<int>(ds.schema.d_vis);
            scfg.n_vis_tokens = static_cast<int>(ds.schema.n_vis_tokens);

            fusion::BackboneConfig bcfg = cfg.backbone;
            bcfg.seed = splitmix64(cfg.seed ^ (0xf01d5ull + o));
            fusion::FusionModel model(bcfg, scfg, cfg.head, cfg.lora);

            fusion::TrainConfig tcfg = cfg.train;
            tcfg.seed = splitmix64(cfg.seed ^ (0x7a15ull + o));
            result.fold_histories.push_back(fusion::train_on_split(
                model, ds, bundles, inner.train_ids, inner.valid_ids, cfg.target, cfg.prompt_kind, tcfg));

            const auto samples = fusion::make_samples(ds, bundles, fold.test_ids, cfg.target, cfg.prompt_kind);
            pred = fusion::predict_samples(model, samples);
        }

        FoldScore score;
        score.n_test = fold.test_ids.size();
        score.srcc = spearman(pred, y_test);
        score.rmse_value = rmse(pred, y_test);
        double lo = pred.empty() ? 0.0 : *std::min_element(pred.begin(), pred.end());
        double hi = pred.empty() ? 0.0 : *std::max_element(pred.begin(), pred.end());
        score.constant_predictions = (hi - lo) < 1e-12;
        report.folds.push_back(score);
    }

    report.finalize();
    return result;
}

}  // namespace memfuse
