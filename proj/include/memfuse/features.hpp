#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "memfuse/corpus.hpp"
#include "memfuse/providers.hpp"

namespace memfuse {

struct FeatureBundle {
    std::string id;
    Eigen::VectorXd e5_subtitles;
    Eigen::VectorXd e5_title;
    Eigen::VectorXd e5_description;
    Eigen::VectorXd e5_summary;
    Eigen::VectorXd e5_rationale;
    Eigen::MatrixXd visual_block;
    Eigen::VectorXd numeric;  // z-scored with inner-train statistics
    std::string summary_text;
    std::string rationale_text;
};

struct FewShotExemplar {
    std::string id;
    double score = 0.0;
    double similarity = 0.0;
};

namespace detail {

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Eigen::VectorXd l2_normalized_or_e0(Eigen::VectorXd v) {
    const double norm = v.norm();
    if (norm > 1e-12) return v / norm;
    v.setZero();
    v(0) = 1.0;
    return v;
}

}  // namespace detail

// --- subtitle chunking ------------------------------------------------------

// Overlapping whitespace-token windows, each embedded separately, mean pooled,
// L2 normalized. A text that fits in one window is embedded verbatim, so the
// result is bit-equal to embed_text(text) in that case.
inline Eigen::VectorXd chunk_and_pool_subtitles(const std::string& text, const EmbeddingProvider& embed,
                                                int chunk_tokens = 400, int overlap_tokens = 64) {
    if (chunk_tokens < 1 || overlap_tokens < 0 || overlap_tokens >= chunk_tokens)
        raise(errc::invalid_params, "need 0 <= overlap_tokens < chunk_tokens");
    const auto tokens = split_whitespace(text);
    if (tokens.size() <= static_cast<size_t>(chunk_tokens)) return detail::to_eigen(embed.embed(text));

    const size_t step = static_cast<size_t>(chunk_tokens - overlap_tokens);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(embed.dimension());
    size_t n_chunks = 0;
    for (size_t start = 0; start < tokens.size(); start += step) {
        const size_t end = std::min(tokens.size(), start + static_cast<size_t>(chunk_tokens));
        acc += detail::to_eigen(embed.embed(join_tokens(tokens, start, end)));
        ++n_chunks;
        if (end == tokens.size()) break;
    }
    return detail::l2_normalized_or_e0(acc / static_cast<double>(n_chunks));
}

// --- subtitle summaries ------------------------------------------------------

inline std::string summary_prompt(const std::string& subtitles, int max_tokens) {
    return "Summarize the following subtitles in at most " + std::to_string(max_tokens) + " tokens.\n---\n" +
           subtitles + "\n---";
}

inline constexpr const char* kNoSubtitlesFallback = "no subtitles available";

inline std::string summarize_subtitles(const std::string& subtitles, const GenerationProvider& gen,
                                       int max_tokens = 1024) {
    if (count_whitespace_tokens(subtitles) == 0) return kNoSubtitlesFallback;
    return gen.generate(summary_prompt(subtitles, max_tokens), max_tokens, 0.0);
}

// --- fold-aware few-shot selection ---------------------------------------------

struct TextStreams {
    Eigen::VectorXd subtitles;
    Eigen::VectorXd title;
    Eigen::VectorXd description;

    Eigen::VectorXd pooled() const {
        return detail::l2_normalized_or_e0((subtitles + title + description) / 3.0);
    }
};

// k nearest inner-train neighbors of the query in the pooled (subtitles, title,
// description) embedding space; descending cosine similarity, ties by id.
inline std::vector<FewShotExemplar> select_fewshot_examples(
    const std::string& query_id, const std::vector<std::string>& inner_train_ids,
    const std::map<std::string, TextStreams>& streams, const std::map<std::string, double>& target_scores,
    int k) {
    if (k < 1) raise(errc::invalid_params, "k must be >= 1");
    const auto qit = streams.find(query_id);
    if (qit == streams.end()) raise(errc::missing_embedding, "no text streams for query '" + query_id + "'");
    const Eigen::VectorXd q = qit->second.pooled();

    std::vector<FewShotExemplar> scored;
    for (const auto& id : inner_train_ids) {
        if (id == query_id) continue;
        const auto sit = streams.find(id);
        if (sit == streams.end()) raise(errc::missing_embedding, "no text streams for candidate '" + id + "'");
        const auto tit = target_scores.find(id);
        if (tit == target_scores.end()) raise(errc::missing_embedding, "no target score for candidate '" + id + "'");
        scored.push_back(FewShotExemplar{id, tit->second, q.dot(sit->second.pooled())});
    }
    if (scored.size() < static_cast<size_t>(k))
        raise(errc::not_enough_candidates,
              std::to_string(scored.size()) + " candidates for k = " + std::to_string(k));
    std::stable_sort(scored.begin(), scored.end(), [](const FewShotExemplar& a, const FewShotExemplar& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.id < b.id;
    });
    scored.resize(static_cast<size_t>(k));
    return scored;
}

// --- rationale prompt -----------------------------------------------------------

inline constexpr const char* kRationaleAspects =
    "brand integration, clarity of brand messaging, semantic richness, novelty";

inline std::string build_rationale_prompt(const VideoRecord& record,
                                          const std::vector<FewShotExemplar>& exemplars, Target target) {
    const std::string quality =
        target == Target::brand ? "how well the brand is remembered (brand memorability)"
                                : "how memorable the video is overall (memorability score)";
    std::string p = "You are an expert system that evaluates commercial videos. Assess " + quality +
                    " based on the subtitles only.\n";
    p += std::string("Aspects: ") + kRationaleAspects + ".\n";
    p += "Scores of similar videos for guidance:\n";
    for (const auto& ex : exemplars) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3f", ex.score);
        p += std::string("Example: ") + buf + "\n";
    }
    p += "Subtitles:\n---\n" + record.subtitles + "\n---\n";
    p += "Write a short qualitative rationale for each aspect.";
    return p;
}

// --- numeric z-scoring ------------------------------------------------------------

struct ZScoreStats {
    std::vector<double> mean;
    std::vector<double> std;
};

inline ZScoreStats fit_zscore(const Dataset& ds, const std::set<std::string>& train_ids) {
    const auto& keys = ds.schema.metadata_keys;
    ZScoreStats st;
    st.mean.assign(keys.size(), 0.0);
    st.std.assign(keys.size(), 0.0);
    size_t n = 0;
    for (const auto& r : ds.records) {
        if (!train_ids.count(r.id)) continue;
        ++n;
        for (size_t k = 0; k < keys.size(); ++k) st.mean[k] += r.numeric_metadata.at(keys[k]);
    }
    if (n == 0) raise(errc::empty_dataset, "z-score statistics need at least one training record");
    for (auto& m : st.mean) m /= static_cast<double>(n);
    for (const auto& r : ds.records) {
        if (!train_ids.count(r.id)) continue;
        for (size_t k = 0; k < keys.size(); ++k) {
            const double d = r.numeric_metadata.at(keys[k]) - st.mean[k];
            st.std[k] += d * d;
        }
    }
    for (auto& s : st.std) s = std::sqrt(s / static_cast<double>(n));
    return st;
}

inline Eigen::VectorXd apply_zscore(const VideoRecord& r, const std::vector<std::string>& keys,
                                    const ZScoreStats& st) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(keys.size()));
    for (size_t k = 0; k < keys.size(); ++k) {
        const double sd = st.std[k];
        // zero-variance dimensions pass through as 0
        out(static_cast<Eigen::Index>(k)) = sd > 1e-12 ? (r.numeric_metadata.at(keys[k]) - st.mean[k]) / sd : 0.0;
    }
    return out;
}

// --- bundle assembly -----------------------------------------------------------------

struct BundleConfig {
    int chunk_tokens = 400;
    int overlap_tokens = 64;
    int fewshot_k = 3;  // the paper-style alternative is 2
    int summary_max_tokens = 1024;
    int rationale_max_tokens = 256;
};

// Builds one FeatureBundle per dataset record for a fixed (outer, inner) split
// context: exemplars and z-score statistics come from inner_train_ids only.
inline std::map<std::string, FeatureBundle> assemble_bundles(const Dataset& ds,
                                                             const std::vector<std::string>& inner_train_ids,
                                                             const EmbeddingProvider& embed,
                                                             const GenerationProvider& gen, Target target,
                                                             const BundleConfig& cfg = {}) {
    std::map<std::string, FeatureBundle> bundles;
    std::map<std::string, TextStreams> streams;

    for (const auto& r : ds.records) {
        FeatureBundle b;
        b.id = r.id;
        b.e5_title = detail::to_eigen(embed.embed(r.title));
        b.e5_description = detail::to_eigen(embed.embed(r.description));
        b.e5_subtitles = chunk_and_pool_subtitles(r.subtitles, embed, cfg.chunk_tokens, cfg.overlap_tokens);
        b.summary_text = summarize_subtitles(r.subtitles, gen, cfg.summary_max_tokens);
        b.e5_summary = detail::to_eigen(embed.embed(b.summary_text));
        b.visual_block = r.visual_block;
        streams[r.id] = TextStreams{b.e5_subtitles, b.e5_title, b.e5_description};
        bundles[r.id] = std::move(b);
    }

    std::map<std::string, double> train_scores;
    for (const auto& id : inner_train_ids) train_scores[id] = ds.by_id(id).target(target);

    const std::set<std::string> train_set(inner_train_ids.begin(), inner_train_ids.end());
    const auto zstats = fit_zscore(ds, train_set);

    for (const auto& r : ds.records) {
        auto& b = bundles[r.id];
        const auto exemplars = select_fewshot_examples(r.id, inner_train_ids, streams, train_scores, cfg.fewshot_k);
        const auto prompt = build_rationale_prompt(r, exemplars, target);
        b.rationale_text = gen.generate(prompt, cfg.rationale_max_tokens, 0.0);
        b.e5_rationale = detail::to_eigen(embed.embed(b.rationale_text));
        b.numeric = apply_zscore(r, ds.schema.metadata_keys, zstats);
    }
    return bundles;
}

// --- bundle serialization (one JSONL record per video) ----------------------------------

namespace detail {

inline nlohmann::ordered_json vec_to_json(const Eigen::VectorXd& v) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Eigen::VectorXd vec_from_json(const nlohmann::json& a) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = a.at(static_cast<size_t>(i)).get<double>();
    return v;
}

}  // namespace detail

inline void write_bundles(const std::map<std::string, FeatureBundle>& bundles, const std::string& path) {
    std::ofstream out(path);
    if (!out) raise(errc::io_error, "cannot write '" + path + "'");
    for (const auto& [id, b] : bundles) {
        nlohmann::ordered_json j;
        j["id"] = b.id;
        j["e5_subtitles"] = detail::vec_to_json(b.e5_subtitles);
        j["e5_title"] = detail::vec_to_json(b.e5_title);
        j["e5_description"] = detail::vec_to_json(b.e5_description);
        j["e5_summary"] = detail::vec_to_json(b.e5_summary);
        j["e5_rationale"] = detail::vec_to_json(b.e5_rationale);
        nlohmann::ordered_json vb = nlohmann::ordered_json::array();
        for (Eigen::Index r = 0; r < b.visual_block.rows(); ++r)
            vb.push_back(detail::vec_to_json(b.visual_block.row(r)));
        j["visual_block"] = std::move(vb);
        j["numeric"] = detail::vec_to_json(b.numeric);
        j["summary_text"] = b.summary_text;
        j["rationale_text"] = b.rationale_text;
        out << j.dump() << '\n';
    }
}

inline std::map<std::string, FeatureBundle> load_bundles(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(errc::io_error, "cannot open '" + path + "'");
    std::map<std::string, FeatureBundle> bundles;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            FeatureBundle b;
            b.id = j.at("id").get<std::string>();
            b.e5_subtitles = detail::vec_from_json(j.at("e5_subtitles"));
            b.e5_title = detail::vec_from_json(j.at("e5_title"));
            b.e5_description = detail::vec_from_json(j.at("e5_description"));
            b.e5_summary = detail::vec_from_json(j.at("e5_summary"));
            b.e5_rationale = detail::vec_from_json(j.at("e5_rationale"));
            const auto& vb = j.at("visual_block");
            if (!vb.empty()) {
                b.visual_block.resize(static_cast<Eigen::Index>(vb.size()),
                                      static_cast<Eigen::Index>(vb.at(0).size()));
                for (Eigen::Index r = 0; r < b.visual_block.rows(); ++r)
                    b.visual_block.row(r) = detail::vec_from_json(vb.at(static_cast<size_t>(r))).transpose();
            }
            b.numeric = detail::vec_from_json(j.at("numeric"));
            b.summary_text = j.at("summary_text").get<std::string>();
            b.rationale_text = j.at("rationale_text").get<std::string>();
            bundles[b.id] = std::move(b);
        } catch (const nlohmann::json::exception& e) {
            raise(errc::malformed_line, "line " + std::to_string(line_no) + " of '" + path + "': " + e.what());
        }
    }
    return bundles;
}

}  // namespace memfuse
