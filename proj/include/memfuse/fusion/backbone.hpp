#pragma once

#include <map>
#include <string>
#include <vector>

#include "memfuse/fusion/tensor.hpp"

namespace memfuse::fusion {

// --- byte-level tokenizer ----------------------------------------------------

inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kEosToken = 2;
inline constexpr int kByteOffset = 3;
inline constexpr int kVocabSize = 259;  // 3 specials + 256 bytes

inline std::vector<int> byte_token_ids(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(kByteOffset + static_cast<int>(c));
    return ids;
}

// [BOS] + UTF-8 bytes + [EOS], truncated to max_seq keeping BOS and EOS.
inline std::vector<int> tokenize(std::string_view text, int max_seq) {
    if (max_seq < 2) raise(errc::invalid_params, "max_seq must be >= 2");
    std::vector<int> ids;
    ids.push_back(kBosToken);
    for (unsigned char c : text) {
        if (static_cast<int>(ids.size()) == max_seq - 1) break;
        ids.push_back(kByteOffset + static_cast<int>(c));
    }
    ids.push_back(kEosToken);
    return ids;
}

// --- configuration -------------------------------------------------------------

struct BackboneConfig {
    int n_layers = 2;
    int d_model = 64;
    int n_heads = 4;
    int d_ff = 128;
    int max_seq = 256;
    double rms_norm_eps = 1e-6;
    bool causal = true;
    uint64_t seed = 0;

    int head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (d_model % n_heads != 0) raise(errc::invalid_params, "d_model must be divisible by n_heads");
        if (head_dim() % 2 != 0) raise(errc::invalid_params, "head_dim must be even for rotary encoding");
        if (max_seq < 8) raise(errc::invalid_params, "max_seq must be >= 8");
        if (n_layers < 1 || d_model < 2 || d_ff < 1) raise(errc::invalid_params, "degenerate backbone shape");
    }
};

struct LoraConfig {
    bool enabled = false;
    int rank = 32;
    double alpha = 32.0;
    double dropout = 0.15;

    double scaling() const { return alpha / static_cast<double>(rank); }
};

// --- named parameter store --------------------------------------------------------

struct ParamStore {
    std::vector<std::pair<std::string, Tensor>> entries;  // insertion order
    std::map<std::string, size_t> index;

    Tensor add(const std::string& name, Eigen::MatrixXd init) {
        if (index.count(name)) raise(errc::invalid_params, "duplicate parameter '" + name + "'");
        auto t = make_param(std::move(init));
        index[name] = entries.size();
        entries.emplace_back(name, t);
        return t;
    }

    bool has(const std::string& name) const { return index.count(name) > 0; }

    const Tensor& at(const std::string& name) const {
        const auto it = index.find(name);
        if (it == index.end()) raise(errc::invalid_params, "unknown parameter '" + name + "'");
        return entries[it->second].second;
    }
};

inline std::map<std::string, Eigen::MatrixXd> snapshot_params(const ParamStore& store) {
    std::map<std::string, Eigen::MatrixXd> snap;
    for (const auto& [name, t] : store.entries) snap[name] = t->val;
    return snap;
}

inline void restore_params(ParamStore& store, const std::map<std::string, Eigen::MatrixXd>& snap) {
    for (auto& [name, t] : store.entries) t->val = snap.at(name);
}

namespace detail {

inline Eigen::MatrixXd normal_init(Rng& rng, Eigen::Index rows, Eigen::Index cols, double std_dev = 0.02) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = std_dev * rng.normal();
    return m;
}

}  // namespace detail

// --- linear layer with optional low-rank adapter ------------------------------------
//
// Effective weight is W + (alpha/r) * B * A with A ~ N(0, 0.02^2) and B = 0 at
// initialization, so a freshly adapted model computes exactly the base model.
struct LoraLinear {
    Tensor weight;  // d_out x d_in
    Tensor lora_a;  // r x d_in (null when the adapter is absent)
    Tensor lora_b;  // d_out x r
    double scaling = 0.0;
    double dropout_p = 0.0;

    bool has_adapter() const { return static_cast<bool>(lora_a); }

    // x is (seq x d_in); returns (seq x d_out)
    Tensor forward(const Tensor& x, Rng& dropout_rng, bool training) const {
        Tensor y = matmul(x, transpose(weight));
        if (has_adapter()) {
            Tensor xd = dropout(x, dropout_p, dropout_rng, training);
            y = add(y, scale(matmul(matmul(xd, transpose(lora_a)), transpose(lora_b)), scaling));
        }
        return y;
    }

    Eigen::MatrixXd merged_weight() const {
        if (!has_adapter()) return weight->val;
        return weight->val + scaling * (lora_b->val * lora_a->val);
    }
};

// --- Gemma-style transformer encoder --------------------------------------------------
//
// Pre-RMSNorm blocks: multi-head attention with q/k/v/o projections and rotary
// position encoding on q/k, then a SiLU-gated feed-forward (gate/up/down), both
// with residual connections, and a final RMSNorm. LoRA targets every q/k/v/o/
// gate/up/down projection.
class Backbone {
  public:
    Backbone(const BackboneConfig& cfg, const LoraConfig& lora, ParamStore& store)
        : cfg_(cfg), lora_(lora) {
        cfg_.validate();
        Rng init(splitmix64(cfg_.seed ^ 0xbacb0e5ull));

        embed_table_ = store.add("embed.table", detail::normal_init(init, kVocabSize, cfg_.d_model));
        layers_.resize(static_cast<size_t>(cfg_.n_layers));
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            auto& layer = layers_[static_cast<size_t>(l)];
            layer.attn_norm = store.add(p + "attn.norm", Eigen::MatrixXd::Ones(1, cfg_.d_model));
            layer.q.weight = store.add(p + "attn.q.weight", detail::normal_init(init, cfg_.d_model, cfg_.d_model));
            layer.k.weight = store.add(p + "attn.k.weight", detail::normal_init(init, cfg_.d_model, cfg_.d_model));
            layer.v.weight = store.add(p + "attn.v.weight", detail::normal_init(init, cfg_.d_model, cfg_.d_model));
            layer.o.weight = store.add(p + "attn.o.weight", detail::normal_init(init, cfg_.d_model, cfg_.d_model));
            layer.ffn_norm = store.add(p + "ffn.norm", Eigen::MatrixXd::Ones(1, cfg_.d_model));
            layer.gate.weight = store.add(p + "ffn.gate.weight", detail::normal_init(init, cfg_.d_ff, cfg_.d_model));
            layer.up.weight = store.add(p + "ffn.up.weight", detail::normal_init(init, cfg_.d_ff, cfg_.d_model));
            layer.down.weight = store.add(p + "ffn.down.weight", detail::normal_init(init, cfg_.d_model, cfg_.d_ff));
        }
        final_norm_ = store.add("final.norm", Eigen::MatrixXd::Ones(1, cfg_.d_model));

        // adapter init draws come after all base draws, so base weights match
        // a non-LoRA model built from the same seed
        if (lora_.enabled) {
            if (lora_.rank < 1) raise(errc::invalid_params, "LoRA rank must be >= 1");
            Rng lora_init = init.fork(0x10a5eedull);
            for (int l = 0; l < cfg_.n_layers; ++l) {
                const std::string p = "layer" + std::to_string(l) + ".";
                auto& layer = layers_[static_cast<size_t>(l)];
                attach_adapter(store, p + "attn.q", layer.q, lora_init);
                attach_adapter(store, p + "attn.k", layer.k, lora_init);
                attach_adapter(store, p + "attn.v", layer.v, lora_init);
                attach_adapter(store, p + "attn.o", layer.o, lora_init);
                attach_adapter(store, p + "ffn.gate", layer.gate, lora_init);
                attach_adapter(store, p + "ffn.up", layer.up, lora_init);
                attach_adapter(store, p + "ffn.down", layer.down, lora_init);
            }
        }
    }

    const BackboneConfig& config() const { return cfg_; }
    const LoraConfig& lora_config() const { return lora_; }
    const Tensor& embedding_table() const { return embed_table_; }

    // x: (seq x d_model) fused input rows; positions index the rotary encoding
    Tensor forward(Tensor x, const std::vector<int>& positions, Rng& dropout_rng, bool training) const {
        const Eigen::Index seq = x->val.rows();
        Tensor mask;
        if (cfg_.causal) {
            Eigen::MatrixXd m = Eigen::MatrixXd::Zero(seq, seq);
            for (Eigen::Index i = 0; i < seq; ++i)
                for (Eigen::Index j = i + 1; j < seq; ++j) m(i, j) = -1e30;
            mask = constant(std::move(m));
        }
        for (const auto& layer : layers_) {
            Tensor h = rmsnorm_rows(x, layer.attn_norm, cfg_.rms_norm_eps);
            x = add(x, attention(h, layer, positions, mask, dropout_rng, training));
            Tensor h2 = rmsnorm_rows(x, layer.ffn_norm, cfg_.rms_norm_eps);
            Tensor gated = hadamard(silu(layer.gate.forward(h2, dropout_rng, training)),
                                    layer.up.forward(h2, dropout_rng, training));
            x = add(x, layer.down.forward(gated, dropout_rng, training));
        }
        return rmsnorm_rows(x, final_norm_, cfg_.rms_norm_eps);
    }

  private:
    struct Layer {
        Tensor attn_norm;
        LoraLinear q, k, v, o;
        Tensor ffn_norm;
        LoraLinear gate, up, down;
    };

    void attach_adapter(ParamStore& store, const std::string& prefix, LoraLinear& lin, Rng& init) {
        lin.lora_a = store.add(prefix + ".lora_a",
                               detail::normal_init(init, lora_.rank, lin.weight->val.cols()));
        lin.lora_b = store.add(prefix + ".lora_b",
                               Eigen::MatrixXd::Zero(lin.weight->val.rows(), lora_.rank));
        lin.scaling = lora_.scaling();
        lin.dropout_p = lora_.dropout;
    }

    Tensor attention(const Tensor& h, const Layer& layer, const std::vector<int>& positions, const Tensor& mask,
                     Rng& dropout_rng, bool training) const {
        const int dh = cfg_.head_dim();
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        Tensor q = layer.q.forward(h, dropout_rng, training);
        Tensor k = layer.k.forward(h, dropout_rng, training);
        Tensor v = layer.v.forward(h, dropout_rng, training);
        std::vector<Tensor> heads;
        heads.reserve(static_cast<size_t>(cfg_.n_heads));
        for (int head = 0; head < cfg_.n_heads; ++head) {
            Tensor qh = rope_rows(slice_cols(q, head * dh, dh), positions);
            Tensor kh = rope_rows(slice_cols(k, head * dh, dh), positions);
            Tensor vh = slice_cols(v, head * dh, dh);
            Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
            if (mask) scores = add(scores, mask);
            heads.push_back(matmul(softmax_rows(scores), vh));
        }
        return layer.o.forward(concat_cols(heads), dropout_rng, training);
    }

    BackboneConfig cfg_;
    LoraConfig lora_;
    Tensor embed_table_;
    std::vector<Layer> layers_;
    Tensor final_norm_;
};

}  // namespace memfuse::fusion
