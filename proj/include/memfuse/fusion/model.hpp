#pragma once

#include <fstream>
#include <optional>

#include "memfuse/features.hpp"
#include "memfuse/fusion/backbone.hpp"

namespace memfuse::fusion {

enum class Pooling { mean, attention };
enum class PromptKind { rationale, summary };
enum class TrainMode { frozen, lora };

inline Pooling pooling_from_name(const std::string& s) {
    if (s == "mean") return Pooling::mean;
    if (s == "attention") return Pooling::attention;
    raise(errc::invalid_spec, "unknown pooling '" + s + "'");
}

inline PromptKind prompt_kind_from_name(const std::string& s) {
    if (s == "rationale") return PromptKind::rationale;
    if (s == "summary") return PromptKind::summary;
    raise(errc::invalid_spec, "unknown prompt kind '" + s + "'");
}

inline TrainMode train_mode_from_name(const std::string& s) {
    if (s == "frozen") return TrainMode::frozen;
    if (s == "lora") return TrainMode::lora;
    raise(errc::invalid_spec, "unknown mode '" + s + "'");
}

struct HeadConfig {
    Pooling pooling = Pooling::mean;
    int mlp_hidden = 0;  // 0 means d_model
    double lambda = 0.5;

    void validate() const {
        if (lambda < 0.0 || lambda > 1.0) raise(errc::invalid_params, "lambda must lie in [0,1]");
    }
};

struct StreamConfig {
    bool use_subtitles = true;
    bool use_title = true;
    bool use_description = true;
    bool use_summary_emb = false;    // generated text usually rides in the prompt instead
    bool use_rationale_emb = false;
    bool use_visual = true;
    int d_text = 64;
    int d_vis = 16;
    int n_vis_tokens = 4;

    int virtual_tokens() const {
        return (use_subtitles ? 1 : 0) + (use_title ? 1 : 0) + (use_description ? 1 : 0) +
               (use_summary_emb ? 1 : 0) + (use_rationale_emb ? 1 : 0) + (use_visual ? n_vis_tokens : 0);
    }
};

// Prompt text fed to the backbone: the title plus the generated rationale or
// summary for the record.
inline std::string make_prompt_text(const VideoRecord& record, const FeatureBundle& bundle, PromptKind kind) {
    return record.title + "\n" + (kind == PromptKind::rationale ? bundle.rationale_text : bundle.summary_text);
}

// --- composite training loss ------------------------------------------------------

struct CompositeLoss {
    Tensor loss;
    double mae = 0.0;
    double correlation = 0.0;
    bool degenerate = false;  // variance floor hit; correlation term pinned to 1
};

// lambda * MAE + (1 - lambda) * (1 - batch Pearson). A batch with (near)
// constant predictions or targets gets correlation term 1 with no gradient
// through the correlation path.
inline CompositeLoss composite_loss(const Tensor& pred, const std::vector<double>& target, double lambda) {
    const Eigen::Index n = pred->val.rows();
    if (n < 2) raise(errc::batch_too_small, "composite loss needs a batch of >= 2");
    if (static_cast<size_t>(n) != target.size()) raise(errc::length_mismatch, "pred and target lengths differ");

    Eigen::MatrixXd t(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) t(i, 0) = target[static_cast<size_t>(i)];
    const Tensor t_const = constant(t);

    CompositeLoss out;
    Tensor mae = mean_all(abs_elem(sub(pred, t_const)));
    out.mae = mae->val(0, 0);

    const double tm = t.col(0).mean();
    const double vt = (t.col(0).array() - tm).square().sum();
    const double pm_v = pred->val.col(0).mean();
    const double vp_v = (pred->val.col(0).array() - pm_v).square().sum();

    if (vp_v < 1e-12 || vt < 1e-12) {
        out.degenerate = true;
        out.correlation = 0.0;
        Eigen::MatrixXd one(1, 1);
        one(0, 0) = 1.0;
        out.loss = add(scale(mae, lambda), scale(constant(one), 1.0 - lambda));
        return out;
    }

    Tensor pc = broadcast_sub(pred, mean_all(pred));
    Eigen::MatrixXd tc = (t.col(0).array() - tm).matrix();
    Tensor cov = sum_all(hadamard(pc, constant(tc)));
    Tensor vp = sum_all(hadamard(pc, pc));
    Tensor rho = s_div(cov, s_sqrt(scale(vp, vt)));
    out.correlation = rho->val(0, 0);

    Eigen::MatrixXd one(1, 1);
    one(0, 0) = 1.0;
    Tensor corr_term = sub(constant(one), rho);
    out.loss = add(scale(mae, lambda), scale(corr_term, 1.0 - lambda));
    return out;
}

// --- the fusion regressor ------------------------------------------------------------

// External feature streams enter as projected virtual tokens ahead of the
// byte-tokenized prompt: [BOS] subtitles title description visual-rows prompt
// [EOS]. The backbone output is pooled and mapped through a GELU MLP head with
// a sigmoid output.
class FusionModel {
  public:
    FusionModel(BackboneConfig bcfg, StreamConfig scfg, HeadConfig hcfg, LoraConfig lora)
        : scfg_(scfg), hcfg_(hcfg), backbone_(std::nullopt), dropout_rng_(0) {
        hcfg_.validate();
        backbone_.emplace(bcfg, lora, store_);
        dropout_rng_ = Rng(splitmix64(bcfg.seed ^ 0xd20b0a7ull));

        Rng init(splitmix64(bcfg.seed ^ 0x9a07ec70ull));
        const int d = bcfg.d_model;
        if (scfg_.use_subtitles) add_projector("proj.subtitles", scfg_.d_text, d, init);
        if (scfg_.use_title) add_projector("proj.title", scfg_.d_text, d, init);
        if (scfg_.use_description) add_projector("proj.description", scfg_.d_text, d, init);
        if (scfg_.use_summary_emb) add_projector("proj.summary", scfg_.d_text, d, init);
        if (scfg_.use_rationale_emb) add_projector("proj.rationale", scfg_.d_text, d, init);
        if (scfg_.use_visual) add_projector("proj.visual", scfg_.d_vis, d, init);
        const int hidden = hcfg_.mlp_hidden > 0 ? hcfg_.mlp_hidden : d;
        head_w1_ = store_.add("head.fc1.weight", detail::normal_init(init, hidden, d));
        head_b1_ = store_.add("head.fc1.bias", Eigen::MatrixXd::Zero(1, hidden));
        head_w2_ = store_.add("head.fc2.weight", detail::normal_init(init, 1, hidden));
        head_b2_ = store_.add("head.fc2.bias", Eigen::MatrixXd::Zero(1, 1));
        // drawn last so models differing only in pooling share every other draw
        if (hcfg_.pooling == Pooling::attention)
            pool_query_ = store_.add("pool.query", detail::normal_init(init, d, 1));
    }

    const BackboneConfig& backbone_config() const { return backbone_->config(); }
    const LoraConfig& lora_config() const { return backbone_->lora_config(); }
    const StreamConfig& stream_config() const { return scfg_; }
    const HeadConfig& head_config() const { return hcfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    // Strict variant: prompt_ids must fit the budget, no silent truncation.
    Tensor forward_tokens(const FeatureBundle& bundle, const std::vector<int>& prompt_ids, bool training) {
        const int budget = prompt_budget();
        if (static_cast<int>(prompt_ids.size()) > budget)
            raise(errc::sequence_too_long, "fused sequence would have " +
                                               std::to_string(fixed_tokens() + prompt_ids.size()) +
                                               " tokens, max_seq is " +
                                               std::to_string(backbone_->config().max_seq));
        return run(bundle, prompt_ids, training);
    }

    // Prompt text is byte-tokenized and truncated to the remaining budget.
    Tensor forward_one(const FeatureBundle& bundle, const std::string& prompt_text, bool training) {
        auto ids = byte_token_ids(prompt_text);
        const int budget = prompt_budget();
        if (static_cast<int>(ids.size()) > budget) ids.resize(static_cast<size_t>(budget));
        return run(bundle, ids, training);
    }

    Tensor forward_batch(const std::vector<const FeatureBundle*>& bundles,
                         const std::vector<std::string>& prompts, bool training) {
        std::vector<Tensor> preds;
        preds.reserve(bundles.size());
        for (size_t i = 0; i < bundles.size(); ++i)
            preds.push_back(forward_one(*bundles[i], prompts[i], training));
        return concat_rows(preds);
    }

    double predict_one(const FeatureBundle& bundle, const std::string& prompt_text) {
        return forward_one(bundle, prompt_text, false)->val(0, 0);
    }

    std::vector<std::string> trainable_names(TrainMode mode) const {
        std::vector<std::string> names;
        for (const auto& [name, t] : store_.entries) {
            const bool head_side = name.rfind("proj.", 0) == 0 || name.rfind("head.", 0) == 0 ||
                                   name == "pool.query";
            const bool adapter = name.size() > 7 && (name.rfind(".lora_a") == name.size() - 7 ||
                                                     name.rfind(".lora_b") == name.size() - 7);
            if (head_side || (mode == TrainMode::lora && adapter)) names.push_back(name);
        }
        return names;
    }

    // Folds every adapter into its base weight; the returned model has no
    // adapters and computes the same function (dropout disabled).
    FusionModel merged() const {
        if (!lora_config().enabled) raise(errc::not_lora_model, "merge requires a LoRA-adapted model");
        LoraConfig no_lora;
        FusionModel out(backbone_->config(), scfg_, hcfg_, no_lora);
        const std::string weight_suffix = ".weight";
        for (auto& [name, t] : out.store_.entries) {
            std::string adapter_prefix;
            if (name.size() > weight_suffix.size() &&
                name.compare(name.size() - weight_suffix.size(), weight_suffix.size(), weight_suffix) == 0)
                adapter_prefix = name.substr(0, name.size() - weight_suffix.size());
            if (!adapter_prefix.empty() && store_.has(adapter_prefix + ".lora_a")) {
                const double s = lora_config().scaling();
                t->val = store_.at(name)->val + s * (store_.at(adapter_prefix + ".lora_b")->val *
                                                     store_.at(adapter_prefix + ".lora_a")->val);
            } else {
                t->val = store_.at(name)->val;
            }
        }
        return out;
    }

    int fixed_tokens() const { return 2 + scfg_.virtual_tokens(); }  // BOS + virtual + EOS

    int prompt_budget() const {
        const int b = backbone_->config().max_seq - fixed_tokens();
        if (b < 0)
            raise(errc::sequence_too_long, "virtual tokens alone exceed max_seq");
        return b;
    }

    Rng& dropout_rng() { return dropout_rng_; }

  private:
    void add_projector(const std::string& name, int d_in, int d_out, Rng& init) {
        projector_w_[name] = store_.add(name + ".weight", detail::normal_init(init, d_out, d_in));
        projector_b_[name] = store_.add(name + ".bias", Eigen::MatrixXd::Zero(1, d_out));
    }

    Tensor project(const std::string& name, const Eigen::MatrixXd& rows) const {
        const auto& W = projector_w_.at(name);
        const auto& b = projector_b_.at(name);
        if (rows.cols() != W->val.cols())
            raise(errc::stream_mismatch, name + " expects dimension " + std::to_string(W->val.cols()) +
                                             ", bundle provides " + std::to_string(rows.cols()));
        return add_rowvec(matmul(constant(rows), transpose(W)), b);
    }

    Tensor run(const FeatureBundle& bundle, const std::vector<int>& prompt_ids, bool training) {
        std::vector<Tensor> rows;
        rows.push_back(gather_rows(backbone_->embedding_table(), {kBosToken}));
        if (scfg_.use_subtitles) rows.push_back(project("proj.subtitles", bundle.e5_subtitles.transpose()));
        if (scfg_.use_title) rows.push_back(project("proj.title", bundle.e5_title.transpose()));
        if (scfg_.use_description) rows.push_back(project("proj.description", bundle.e5_description.transpose()));
        if (scfg_.use_summary_emb) rows.push_back(project("proj.summary", bundle.e5_summary.transpose()));
        if (scfg_.use_rationale_emb) rows.push_back(project("proj.rationale", bundle.e5_rationale.transpose()));
        if (scfg_.use_visual) {
            if (bundle.visual_block.rows() != scfg_.n_vis_tokens)
                raise(errc::stream_mismatch, "visual block has " + std::to_string(bundle.visual_block.rows()) +
                                                 " rows, expected " + std::to_string(scfg_.n_vis_tokens));
            rows.push_back(project("proj.visual", bundle.visual_block));
        }
        if (!prompt_ids.empty()) rows.push_back(gather_rows(backbone_->embedding_table(), prompt_ids));
        rows.push_back(gather_rows(backbone_->embedding_table(), {kEosToken}));

        Tensor x = concat_rows(rows);
        const int seq = static_cast<int>(x->val.rows());
        std::vector<int> positions(static_cast<size_t>(seq));
        std::iota(positions.begin(), positions.end(), 0);

        Tensor h = backbone_->forward(x, positions, dropout_rng_, training);
        Tensor pooled;
        if (hcfg_.pooling == Pooling::mean) {
            pooled = mean_rows(h);
        } else {
            const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(backbone_->config().d_model));
            Tensor logits = scale(matmul(h, pool_query_), inv_sqrt);   // seq x 1
            Tensor weights = softmax_rows(transpose(logits));          // 1 x seq
            pooled = matmul(weights, h);                               // 1 x d
        }
        Tensor hidden = gelu(add_rowvec(matmul(pooled, transpose(head_w1_)), head_b1_));
        return sigmoid(add_rowvec(matmul(hidden, transpose(head_w2_)), head_b2_));
    }

    StreamConfig scfg_;
    HeadConfig hcfg_;
    ParamStore store_;
    std::optional<Backbone> backbone_;
    std::map<std::string, Tensor> projector_w_;
    std::map<std::string, Tensor> projector_b_;
    Tensor pool_query_;
    Tensor head_w1_, head_b1_, head_w2_, head_b2_;
    Rng dropout_rng_;
};

// --- checkpoints -----------------------------------------------------------------
//
// Single binary file of named tensors: magic, count, then per tensor the name,
// shape, and row-major little-endian 64-bit floats.

inline constexpr char kCheckpointMagic[8] = {'M', 'F', 'C', 'K', 'P', 'T', '0', '1'};

namespace detail {

inline void put_u32_le(std::ostream& out, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

inline uint32_t get_u32_le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

inline void put_f64_le(std::ostream& out, double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
    out.write(b, 8);
}

inline double get_f64_le(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const ParamStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(errc::io_error, "cannot write '" + path + "'");
    out.write(kCheckpointMagic, 8);
    detail::put_u32_le(out, static_cast<uint32_t>(store.entries.size()));
    for (const auto& [name, t] : store.entries) {
        detail::put_u32_le(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32_le(out, static_cast<uint32_t>(t->val.rows()));
        detail::put_u32_le(out, static_cast<uint32_t>(t->val.cols()));
        for (Eigen::Index r = 0; r < t->val.rows(); ++r)
            for (Eigen::Index c = 0; c < t->val.cols(); ++c) detail::put_f64_le(out, t->val(r, c));
    }
    if (!out.good()) raise(errc::io_error, "write failed for '" + path + "'");
}

inline void load_checkpoint(ParamStore& store, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(errc::io_error, "cannot open '" + path + "'");
    char magic[8];
    in.read(magic, 8);
    if (!in.good() || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        raise(errc::io_error, "'" + path + "' is not a checkpoint file");
    const uint32_t count = detail::get_u32_le(in);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t len = detail::get_u32_le(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        const uint32_t rows = detail::get_u32_le(in);
        const uint32_t cols = detail::get_u32_le(in);
        Eigen::MatrixXd m(rows, cols);
        for (uint32_t r = 0; r < rows; ++r)
            for (uint32_t c = 0; c < cols; ++c) m(r, c) = detail::get_f64_le(in);
        if (!in.good()) raise(errc::io_error, "truncated checkpoint '" + path + "'");
        if (!store.has(name)) raise(errc::io_error, "checkpoint tensor '" + name + "' not in model");
        const auto& t = store.at(name);
        if (t->val.rows() != m.rows() || t->val.cols() != m.cols())
            raise(errc::dimension_mismatch, "checkpoint tensor '" + name + "' has wrong shape");
        t->val = std::move(m);
    }
}

}  // namespace memfuse::fusion
