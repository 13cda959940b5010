// memfuse: synthetic corpora, leakage-safe nested splits, feature bundles, and
// the two model families (HGBT baseline, fusion regressor) behind one CLI.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "memfuse/runner.hpp"

namespace fs = std::filesystem;
using namespace memfuse;

namespace {

std::string bundle_file(const std::string& dir, size_t outer, size_t inner) {
    return (fs::path(dir) / ("outer" + std::to_string(outer) + "_inner" + std::to_string(inner) + ".jsonl"))
        .string();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) raise(errc::io_error, "cannot write '" + path + "'");
    out << text;
}

fusion::BackboneConfig backbone_from_flat(const FlatConfig& cfg, uint64_t seed) {
    fusion::BackboneConfig b;
    b.n_layers = static_cast<int>(cfg.get_int("n_layers", b.n_layers));
    b.d_model = static_cast<int>(cfg.get_int("d_model", b.d_model));
    b.n_heads = static_cast<int>(cfg.get_int("n_heads", b.n_heads));
    b.d_ff = static_cast<int>(cfg.get_int("d_ff", b.d_ff));
    b.max_seq = static_cast<int>(cfg.get_int("max_seq", b.max_seq));
    b.causal = cfg.get_bool("causal", b.causal);
    b.seed = cfg.get_u64("seed", seed);
    return b;
}

fusion::HeadConfig head_from_flat(const FlatConfig& cfg) {
    fusion::HeadConfig h;
    h.pooling = fusion::pooling_from_name(cfg.get_string("pooling", "mean"));
    h.mlp_hidden = static_cast<int>(cfg.get_int("mlp_hidden", 0));
    h.lambda = cfg.get_double("lambda", 0.5);
    return h;
}

fusion::LoraConfig lora_from_flat(const FlatConfig& cfg, bool enabled) {
    fusion::LoraConfig l;
    l.enabled = enabled;
    l.rank = static_cast<int>(cfg.get_int("rank", 32));
    l.alpha = cfg.get_double("alpha", 32.0);
    l.dropout = cfg.get_double("dropout", 0.15);
    return l;
}

fusion::TrainConfig train_from_flat(const FlatConfig& cfg, fusion::TrainMode mode, uint64_t seed) {
    fusion::TrainConfig t;
    t.mode = mode;
    t.lr = cfg.get_double("lr", t.lr);
    t.batch_size = static_cast<int>(cfg.get_int("batch_size", t.batch_size));
    t.max_epochs = static_cast<int>(cfg.get_int("max_epochs", t.max_epochs));
    t.early_stopping_rounds = static_cast<int>(cfg.get_int("early_stopping_rounds", t.early_stopping_rounds));
    t.clip_norm = cfg.get_double("clip_norm", t.clip_norm);
    t.seed = cfg.get_u64("train_seed", seed);
    return t;
}

FeatureFlags flags_from_flat(const FlatConfig& cfg) {
    FeatureFlags f;
    f.subtitles = cfg.get_bool("use_subtitles", f.subtitles);
    f.title = cfg.get_bool("use_title", f.title);
    f.description = cfg.get_bool("use_description", f.description);
    f.summary_emb = cfg.get_bool("use_summary_emb", f.summary_emb);
    f.rationale_emb = cfg.get_bool("use_rationale_emb", f.rationale_emb);
    f.visual = cfg.get_bool("use_visual", f.visual);
    f.numeric = cfg.get_bool("use_numeric", f.numeric);
    return f;
}

SyntheticSpec synth_from_flat(const FlatConfig& cfg) {
    SyntheticSpec spec;
    spec.seed = cfg.get_u64("synth_seed", 7);
    spec.n_channels = static_cast<int>(cfg.get_int("synth_channels", 12));
    const int per_channel = static_cast<int>(cfg.get_int("synth_channel_size", 28));
    spec.channel_sizes.assign(static_cast<size_t>(spec.n_channels), per_channel);
    spec.dominant_channel_share = cfg.get_double("synth_dominant_share", 0.0);
    spec.signal_weight = cfg.get_double("synth_signal_weight", 0.4);
    spec.noise_std = cfg.get_double("synth_noise_std", 0.02);
    spec.d_vis = cfg.get_int("synth_d_vis", 16);
    spec.n_vis_tokens = cfg.get_int("synth_n_vis_tokens", 4);
    return spec;
}

ExperimentConfig experiment_from_flat(const FlatConfig& cfg) {
    ExperimentConfig e;
    e.label = cfg.get_string("label", "experiment");
    e.target = target_from_name(cfg.get_string("target", "brand"));
    e.model = model_kind_from_name(cfg.get_string("model", "fusion"));
    e.flags = flags_from_flat(cfg);
    e.prompt_kind = fusion::prompt_kind_from_name(cfg.get_string("prompt", "rationale"));
    e.data_path = cfg.get_string("data", "");
    if (e.data_path.empty()) e.synth = synth_from_flat(cfg);
    e.cache_dir = cfg.get_string("cache_dir", "");
    e.seed = cfg.get_u64("seed", 13);
    e.max_fraction = cfg.get_double("max_fraction", 0.10);
    e.n_outer = static_cast<int>(cfg.get_int("n_outer", 5));
    e.n_inner = static_cast<int>(cfg.get_int("n_inner", 5));
    e.n_bins = static_cast<int>(cfg.get_int("n_bins", 5));
    e.inner_index = static_cast<int>(cfg.get_int("inner_index", 0));
    e.embed_dim = static_cast<int>(cfg.get_int("embed_dim", 64));
    e.bundle.fewshot_k = static_cast<int>(cfg.get_int("fewshot_k", 3));
    e.pca_components = static_cast<int>(cfg.get_int("pca_components", 16));
    e.tune_hgbt = cfg.get_bool("tune", true);
    e.tuner.n_trials = static_cast<int>(cfg.get_int("trials", 20));
    e.backbone = backbone_from_flat(cfg, e.seed);
    e.head = head_from_flat(cfg);
    e.fusion_summary_emb = cfg.get_bool("fusion_use_summary_emb", false);
    e.fusion_rationale_emb = cfg.get_bool("fusion_use_rationale_emb", false);
    const auto mode = fusion::train_mode_from_name(cfg.get_string("mode", "lora"));
    e.lora = lora_from_flat(cfg, mode == fusion::TrainMode::lora);
    e.train = train_from_flat(cfg, mode, e.seed);
    return e;
}

// providers with optional disk cache; keeps the raw mocks alive alongside
struct ProviderSet {
    MockEmbeddingProvider embed_raw;
    MockGenerationProvider gen_raw;
    std::optional<CacheStore> cache;
    std::optional<CachedEmbeddingProvider> embed_cached;
    std::optional<CachedGenerationProvider> gen_cached;

    ProviderSet(int dim, const std::string& cache_dir) : embed_raw(dim) {
        if (!cache_dir.empty()) {
            cache.emplace(cache_dir);
            embed_cached.emplace(embed_raw, *cache);
            gen_cached.emplace(gen_raw, *cache);
        }
    }
    const EmbeddingProvider& embed() const {
        return embed_cached ? static_cast<const EmbeddingProvider&>(*embed_cached)
                            : static_cast<const EmbeddingProvider&>(embed_raw);
    }
    const GenerationProvider& gen() const {
        return gen_cached ? static_cast<const GenerationProvider&>(*gen_cached)
                          : static_cast<const GenerationProvider&>(gen_raw);
    }
};

std::vector<double> targets_of(const Dataset& ds, const std::vector<std::string>& ids, Target t) {
    std::vector<double> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(ds.by_id(id).target(t));
    return out;
}

int cmd_synth(const std::string& spec_path, const std::string& out_path) {
    SyntheticSpec spec;
    if (!spec_path.empty()) {
        std::ifstream in(spec_path);
        if (!in) raise(errc::io_error, "cannot open '" + spec_path + "'");
        nlohmann::json j;
        in >> j;
        spec = synthetic_spec_from_json(j);
    } else {
        spec.n_channels = 12;
        spec.channel_sizes.assign(12, 28);
        spec.channel_sizes[0] = 31;
        spec.dominant_channel_share = 0.23;
    }
    const auto ds = generate_synthetic(spec);
    write_dataset(ds, out_path);
    std::cout << "wrote " << ds.size() << " records to " << out_path << "\n";
    return 0;
}

int cmd_stats(const std::string& data_path, int bins) {
    const auto ds = load_dataset(data_path);
    const auto summary = summarize_dataset(ds, bins);
    std::cout << "records: " << ds.size() << "\nchannels:\n";
    for (const auto& [ch, n] : summary.channel_counts) std::cout << "  " << ch << ": " << n << "\n";
    auto print_edges = [](const char* name, const std::vector<double>& edges) {
        std::cout << name << " quantile edges:";
        for (double e : edges) std::cout << " " << e;
        std::cout << "\n";
    };
    print_edges("brand_memorability", summary.brand_edges);
    print_edges("memorability_score", summary.score_edges);
    return 0;
}

int cmd_split(const std::string& data_path, const std::string& target_name_str, uint64_t seed,
              const std::string& out_path, double max_fraction, int embed_dim, int n_outer, int n_inner,
              int n_bins, const std::string& cache_dir) {
    const auto ds = load_dataset(data_path);
    const auto target = target_from_name(target_name_str);
    ProviderSet providers(embed_dim, cache_dir);
    const auto sf = build_splits(ds, providers.embed(), target, max_fraction, n_outer, n_inner, n_bins, seed);
    const auto violations = audit_leakage(sf.splits, sf.groups);
    if (!violations.empty()) {
        std::cerr << "leakage detected: " << violations.size() << " violations\n";
        return 2;
    }
    write_splits(sf, out_path);
    std::cout << "wrote " << out_path << " (" << sf.splits.outer.size() << " outer folds, 0 violations)\n";
    return 0;
}

int cmd_features(const std::string& data_path, const std::string& splits_path, int outer, int inner,
                 const std::string& out_dir, int embed_dim, int fewshot_k, const std::string& cache_dir) {
    const auto ds = load_dataset(data_path);
    const auto sf = load_splits(splits_path);
    const auto& fold = sf.splits.outer.at(static_cast<size_t>(outer));
    const auto& split = fold.inner.at(static_cast<size_t>(inner));
    ProviderSet providers(embed_dim, cache_dir);
    BundleConfig bcfg;
    bcfg.fewshot_k = fewshot_k;
    const auto bundles =
        assemble_bundles(ds, split.train_ids, providers.embed(), providers.gen(), sf.splits.target, bcfg);
    fs::create_directories(out_dir);
    const auto path = bundle_file(out_dir, static_cast<size_t>(outer), static_cast<size_t>(inner));
    write_bundles(bundles, path);
    std::cout << "wrote " << bundles.size() << " bundles to " << path << "\n";
    return 0;
}

int cmd_train_hgbt(const std::string& data_path, const std::string& bundles_dir, const std::string& splits_path,
                   const std::string& target_name_str, int trials, uint64_t seed, const std::string& report_path,
                   int pca_components, bool tune_params) {
    const auto ds = load_dataset(data_path);
    const auto sf = load_splits(splits_path);
    const auto target = target_from_name(target_name_str);
    const FeatureFlags flags;

    MetricReport report;
    report.label = "hgbt (bundles from " + bundles_dir + ")";
    report.target = target_name_str;
    report.model = "HGBT";

    for (size_t o = 0; o < sf.splits.outer.size(); ++o) {
        const auto& fold = sf.splits.outer[o];
        std::vector<InnerFoldData> tuning_folds;
        std::map<std::string, FeatureBundle> eval_bundles;
        HgbtFeatureSpace eval_space;
        const InnerSplit* eval_split = nullptr;

        for (size_t i = 0; i < fold.inner.size(); ++i) {
            const auto path = bundle_file(bundles_dir, o, i);
            if (!fs::exists(path)) continue;
            auto bundles = load_bundles(path);
            const auto& split = fold.inner[i];
            auto space = fit_feature_space(bundles, split.train_ids, flags, pca_components);
            tuning_folds.push_back(InnerFoldData{hgbt_feature_matrix(space, bundles, split.train_ids),
                                                 targets_of(ds, split.train_ids, target),
                                                 hgbt_feature_matrix(space, bundles, split.valid_ids),
                                                 targets_of(ds, split.valid_ids, target)});
            if (!eval_split) {
                eval_split = &split;
                eval_bundles = std::move(bundles);
                eval_space = std::move(space);
            }
        }
        if (!eval_split)
            raise(errc::io_error, "no bundle files for outer fold " + std::to_string(o) + " under " + bundles_dir);

        HgbtParams params;
        if (tune_params) {
            TunerConfig tuner;
            tuner.n_trials = trials;
            tuner.seed = splitmix64(seed ^ (0x700eull + o));
            params = tune(tuning_folds, tuner).best;
        }
        const auto X_train = hgbt_feature_matrix(eval_space, eval_bundles, eval_split->train_ids);
        const auto X_valid = hgbt_feature_matrix(eval_space, eval_bundles, eval_split->valid_ids);
        const auto X_test = hgbt_feature_matrix(eval_space, eval_bundles, fold.test_ids);
        const auto y_train = targets_of(ds, eval_split->train_ids, target);
        const auto y_valid = targets_of(ds, eval_split->valid_ids, target);
        const auto y_test = targets_of(ds, fold.test_ids, target);

        const auto model = hgbt_fit(X_train, y_train, params, &X_valid, &y_valid);
        const auto pred = model.predict(X_test);
        report.folds.push_back(FoldScore{spearman(pred, y_test), rmse(pred, y_test), fold.test_ids.size(),
                                         false});
        std::cout << "outer fold " << o << ": SRCC " << report.folds.back().srcc << ", RMSE "
                  << report.folds.back().rmse_value << "\n";
    }
    report.finalize();
    write_text(report_path, report_to_json(report).dump(2) + "\n");
    std::cout << "CV SRCC " << report.cv_srcc << ", CV RMSE " << report.cv_rmse << " -> " << report_path << "\n";
    return 0;
}

int cmd_train_fusion(const std::string& data_path, const std::string& bundles_dir, const std::string& splits_path,
                     const std::string& target_name_str, const std::string& prompt, const std::string& mode,
                     const std::string& config_path, const std::string& report_path, uint64_t seed,
                     const std::string& checkpoint_dir) {
    const auto ds = load_dataset(data_path);
    const auto sf = load_splits(splits_path);
    const auto target = target_from_name(target_name_str);
    const auto prompt_kind = fusion::prompt_kind_from_name(prompt);
    const auto train_mode = fusion::train_mode_from_name(mode);
    const FlatConfig fcfg = config_path.empty() ? FlatConfig::parse_string("") : FlatConfig::parse_file(config_path);

    MetricReport report;
    report.label = "fusion (" + mode + ", prompt " + prompt + ")";
    report.target = target_name_str;
    report.model = "Fusion";

    for (size_t o = 0; o < sf.splits.outer.size(); ++o) {
        const auto& fold = sf.splits.outer[o];
        const int inner_index = static_cast<int>(fcfg.get_int("inner_index", 0));
        const auto& split = fold.inner.at(static_cast<size_t>(inner_index));
        const auto path = bundle_file(bundles_dir, o, static_cast<size_t>(inner_index));
        const auto bundles = load_bundles(path);

        fusion::StreamConfig scfg;
        scfg.d_text = static_cast<int>(bundles.begin()->second.e5_title.size());
        scfg.d_vis = static_cast<int>(ds.schema.d_vis);
        scfg.n_vis_tokens = static_cast<int>(ds.schema.n_vis_tokens);
        scfg.use_visual = ds.schema.d_vis > 0 && ds.schema.n_vis_tokens > 0;
        scfg.use_summary_emb = fcfg.get_bool("use_summary_emb", false);
        scfg.use_rationale_emb = fcfg.get_bool("use_rationale_emb", false);

        auto bcfg = backbone_from_flat(fcfg, splitmix64(seed ^ (0xf01d5ull + o)));
        auto head = head_from_flat(fcfg);
        auto lora = lora_from_flat(fcfg, train_mode == fusion::TrainMode::lora);
        auto tcfg = train_from_flat(fcfg, train_mode, splitmix64(seed ^ (0x7a15ull + o)));

        fusion::FusionModel model(bcfg, scfg, head, lora);
        const auto history = fusion::train_on_split(model, ds, bundles, split.train_ids, split.valid_ids, target,
                                                    prompt_kind, tcfg);

        const auto samples = fusion::make_samples(ds, bundles, fold.test_ids, target, prompt_kind);
        const auto pred = fusion::predict_samples(model, samples);
        const auto y_test = targets_of(ds, fold.test_ids, target);
        report.folds.push_back(FoldScore{spearman(pred, y_test), rmse(pred, y_test), fold.test_ids.size(),
                                         false});
        std::cout << "outer fold " << o << ": SRCC " << report.folds.back().srcc << " (best epoch "
                  << history.best_epoch << ", valid SRCC " << history.best_valid_srcc << ")\n";

        if (!checkpoint_dir.empty()) {
            fs::create_directories(checkpoint_dir);
            fusion::save_checkpoint(model.params(),
                                    (fs::path(checkpoint_dir) / ("outer" + std::to_string(o) + ".bin")).string());
        }
    }
    report.finalize();
    write_text(report_path, report_to_json(report).dump(2) + "\n");
    std::cout << "CV SRCC " << report.cv_srcc << ", CV RMSE " << report.cv_rmse << " -> " << report_path << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& config_paths, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::vector<MetricReport> rows;
    try {
        nlohmann::ordered_json all = nlohmann::ordered_json::array();
        for (size_t i = 0; i < config_paths.size(); ++i) {
            const auto cfg = experiment_from_flat(FlatConfig::parse_file(config_paths[i]));
            const auto result = run_experiment(cfg);
            rows.push_back(result.report);
            all.push_back(report_to_json(result.report));
            write_splits(result.splits,
                         (fs::path(out_dir) / ("splits_" + std::to_string(i) + ".json")).string());
        }
        write_text((fs::path(out_dir) / "report.json").string(), all.dump(2) + "\n");
        write_text((fs::path(out_dir) / "report.md").string(), reports_to_markdown(rows));
        std::cout << reports_to_markdown(rows);
        return 0;
    } catch (const Error& e) {
        if (e.code() == errc::leakage_detected) {
            std::cerr << e.what() << "\n";
            return 2;
        }
        throw;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"memfuse: multimodal commercial-memorability modeling at desk scale"};
    app.require_subcommand(1);

    // synth
    std::string spec_path, out_path;
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    synth->add_option("--spec", spec_path, "SyntheticSpec JSON file (defaults mimic the 23% imbalance)");
    synth->add_option("--out", out_path, "output JSONL path")->required();

    // stats
    std::string data_path;
    int bins = 5;
    auto* stats = app.add_subcommand("stats", "per-channel counts and target quantile edges");
    stats->add_option("--data", data_path, "dataset JSONL")->required();
    stats->add_option("--bins", bins, "quantile bins");

    // split
    std::string split_target = "brand", splits_out = "splits.json", cache_dir;
    uint64_t seed = 13;
    double max_fraction = 0.10;
    int embed_dim = 64, n_outer = 5, n_inner = 5;
    auto* split = app.add_subcommand("split", "rebalance channels and build nested grouped splits");
    split->add_option("--data", data_path, "dataset JSONL")->required();
    split->add_option("--target", split_target, "brand|score");
    split->add_option("--seed", seed, "seed recorded in the splits file");
    split->add_option("--out", splits_out, "output splits.json");
    split->add_option("--max-fraction", max_fraction, "channel share threshold for subchannel splitting");
    split->add_option("--embed-dim", embed_dim, "title embedding dimension");
    split->add_option("--outer", n_outer, "outer folds");
    split->add_option("--inner", n_inner, "inner splits per fold");
    split->add_option("--bins", bins, "stratification quantile bins");
    split->add_option("--cache", cache_dir, "provider cache directory");

    // features
    std::string splits_path, features_out = "bundles";
    int outer_idx = 0, inner_idx = 0, fewshot_k = 3;
    auto* features = app.add_subcommand("features", "assemble feature bundles for one split context");
    features->add_option("--data", data_path, "dataset JSONL")->required();
    features->add_option("--splits", splits_path, "splits.json")->required();
    features->add_option("--outer", outer_idx, "outer fold index")->required();
    features->add_option("--inner", inner_idx, "inner split index")->required();
    features->add_option("--out", features_out, "output directory");
    features->add_option("--embed-dim", embed_dim, "embedding dimension");
    features->add_option("--fewshot-k", fewshot_k, "few-shot exemplars per rationale prompt (2 or 3)");
    features->add_option("--cache", cache_dir, "provider cache directory");

    // train-hgbt
    std::string bundles_dir = "bundles", report_path = "report.json", hgbt_target = "brand";
    int trials = 50, pca_components = 16;
    bool no_tune = false;
    auto* hgbt = app.add_subcommand("train-hgbt", "tune and evaluate the boosted-tree baseline");
    hgbt->add_option("--data", data_path, "dataset JSONL")->required();
    hgbt->add_option("--bundles", bundles_dir, "bundle directory (outerO_innerI.jsonl files)");
    hgbt->add_option("--splits", splits_path, "splits.json")->required();
    hgbt->add_option("--target", hgbt_target, "brand|score");
    hgbt->add_option("--trials", trials, "random-search trials");
    hgbt->add_option("--seed", seed, "tuner seed");
    hgbt->add_option("--report", report_path, "output report JSON");
    hgbt->add_option("--pca", pca_components, "PCA components per stream");
    hgbt->add_flag("--no-tune", no_tune, "skip tuning, use default parameters");

    // train-fusion
    std::string fusion_target = "brand", prompt = "rationale", mode = "lora", config_path, checkpoint_dir;
    auto* fusion_cmd = app.add_subcommand("train-fusion", "train and evaluate the fusion regressor");
    fusion_cmd->add_option("--data", data_path, "dataset JSONL")->required();
    fusion_cmd->add_option("--bundles", bundles_dir, "bundle directory");
    fusion_cmd->add_option("--splits", splits_path, "splits.json")->required();
    fusion_cmd->add_option("--target", fusion_target, "brand|score");
    fusion_cmd->add_option("--prompt", prompt, "rationale|summary");
    fusion_cmd->add_option("--mode", mode, "frozen|lora");
    fusion_cmd->add_option("--config", config_path, "flat key=value model config");
    fusion_cmd->add_option("--report", report_path, "output report JSON");
    fusion_cmd->add_option("--seed", seed, "training seed");
    fusion_cmd->add_option("--checkpoints", checkpoint_dir, "directory for per-fold checkpoints");

    // report
    std::string report_out = "report";
    std::vector<std::string> report_configs;
    auto* report = app.add_subcommand("report", "run experiments from config files, one table row each");
    report->add_option("--config", report_configs, "experiment config(s), flat key=value")->required();
    report->add_option("--out", report_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) return cmd_synth(spec_path, out_path);
        if (*stats) return cmd_stats(data_path, bins);
        if (*split)
            return cmd_split(data_path, split_target, seed, splits_out, max_fraction, embed_dim, n_outer,
                             n_inner, bins, cache_dir);
        if (*features)
            return cmd_features(data_path, splits_path, outer_idx, inner_idx, features_out, embed_dim,
                                fewshot_k, cache_dir);
        if (*hgbt)
            return cmd_train_hgbt(data_path, bundles_dir, splits_path, hgbt_target, trials, seed, report_path,
                                  pca_components, !no_tune);
        if (*fusion_cmd)
            return cmd_train_fusion(data_path, bundles_dir, splits_path, fusion_target, prompt, mode,
                                    config_path, report_path, seed, checkpoint_dir);
        if (*report) return cmd_report(report_configs, report_out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
