#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "memfuse/common.hpp"

namespace memfuse {

enum class Target { brand, score };

inline const char* target_name(Target t) { return t == Target::brand ? "brand" : "score"; }

inline Target target_from_name(const std::string& s) {
    if (s == "brand") return Target::brand;
    if (s == "score") return Target::score;
    raise(errc::invalid_spec, "unknown target '" + s + "' (expected brand|score)");
}

struct VideoRecord {
    std::string id;
    std::string channel;
    std::string title;
    std::string description;
    std::string subtitles;  // empty string when the video has none
    std::map<std::string, double> numeric_metadata;
    Eigen::MatrixXd visual_block;  // n_vis_tokens x d_vis; 0x0 when absent
    double brand_memorability = 0.0;
    double memorability_score = 0.0;

    double target(Target t) const { return t == Target::brand ? brand_memorability : memorability_score; }
    bool has_visual() const { return visual_block.size() > 0; }
};

struct DatasetSchema {
    Eigen::Index d_vis = 0;
    Eigen::Index n_vis_tokens = 0;
    std::vector<std::string> metadata_keys;
};

struct Dataset {
    std::vector<VideoRecord> records;
    DatasetSchema schema;

    size_t size() const { return records.size(); }

    const VideoRecord& by_id(const std::string& id) const {
        for (const auto& r : records)
            if (r.id == id) return r;
        raise(errc::invalid_spec, "no record with id '" + id + "'");
    }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(records.size());
        for (const auto& r : records) out.push_back(r.id);
        return out;
    }

    std::vector<double> targets(Target t) const {
        std::vector<double> out;
        out.reserve(records.size());
        for (const auto& r : records) out.push_back(r.target(t));
        return out;
    }
};

// --- validation -------------------------------------------------------------

namespace detail {

inline void check_record_targets(const VideoRecord& r) {
    if (!(r.brand_memorability >= 0.0 && r.brand_memorability <= 1.0))
        raise(errc::target_out_of_range,
              "record '" + r.id + "' brand_memorability = " + std::to_string(r.brand_memorability));
    if (!(r.memorability_score >= 0.0 && r.memorability_score <= 1.0))
        raise(errc::target_out_of_range,
              "record '" + r.id + "' memorability_score = " + std::to_string(r.memorability_score));
}

}  // namespace detail

// Validates invariants and derives the schema from the records.
inline Dataset validate_dataset(std::vector<VideoRecord> records) {
    Dataset ds;
    std::set<std::string> seen;
    bool schema_set = false;
    for (const auto& r : records) {
        if (!seen.insert(r.id).second) raise(errc::duplicate_id, "id '" + r.id + "' appears more than once");
        detail::check_record_targets(r);

        std::vector<std::string> keys;
        keys.reserve(r.numeric_metadata.size());
        for (const auto& [k, v] : r.numeric_metadata) keys.push_back(k);

        if (!schema_set) {
            ds.schema.metadata_keys = keys;
            if (r.has_visual()) {
                ds.schema.n_vis_tokens = r.visual_block.rows();
                ds.schema.d_vis = r.visual_block.cols();
            }
            schema_set = true;
        } else {
            if (keys != ds.schema.metadata_keys)
                raise(errc::inconsistent_schema, "record '" + r.id + "' has different metadata keys");
            if (r.has_visual()) {
                if (ds.schema.d_vis == 0) {
                    ds.schema.n_vis_tokens = r.visual_block.rows();
                    ds.schema.d_vis = r.visual_block.cols();
                } else if (r.visual_block.rows() != ds.schema.n_vis_tokens ||
                           r.visual_block.cols() != ds.schema.d_vis) {
                    raise(errc::inconsistent_schema, "record '" + r.id + "' visual_block shape differs");
                }
            }
        }
    }
    ds.records = std::move(records);
    return ds;
}

// --- JSONL serialization ------------------------------------------------------

inline nlohmann::ordered_json record_to_json(const VideoRecord& r) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["channel"] = r.channel;
    j["title"] = r.title;
    j["description"] = r.description;
    j["subtitles"] = r.subtitles;
    nlohmann::ordered_json meta;
    for (const auto& [k, v] : r.numeric_metadata) meta[k] = v;
    j["numeric_metadata"] = std::move(meta);
    nlohmann::ordered_json vb = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < r.visual_block.rows(); ++i) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (Eigen::Index c = 0; c < r.visual_block.cols(); ++c) row.push_back(r.visual_block(i, c));
        vb.push_back(std::move(row));
    }
    j["visual_block"] = std::move(vb);
    j["brand_memorability"] = r.brand_memorability;
    j["memorability_score"] = r.memorability_score;
    return j;
}

inline VideoRecord record_from_json(const nlohmann::json& j) {
    VideoRecord r;
    r.id = j.at("id").get<std::string>();
    r.channel = j.at("channel").get<std::string>();
    r.title = j.at("title").get<std::string>();
    r.description = j.at("description").get<std::string>();
    r.subtitles = j.at("subtitles").get<std::string>();
    for (const auto& [k, v] : j.at("numeric_metadata").items()) r.numeric_metadata[k] = v.get<double>();
    const auto& vb = j.at("visual_block");
    if (!vb.empty()) {
        const Eigen::Index rows = static_cast<Eigen::Index>(vb.size());
        const Eigen::Index cols = static_cast<Eigen::Index>(vb.at(0).size());
        r.visual_block.resize(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            const auto& row = vb.at(static_cast<size_t>(i));
            if (static_cast<Eigen::Index>(row.size()) != cols)
                throw nlohmann::json::other_error::create(501, "ragged visual_block", nullptr);
            for (Eigen::Index c = 0; c < cols; ++c) r.visual_block(i, c) = row.at(static_cast<size_t>(c)).get<double>();
        }
    }
    r.brand_memorability = j.at("brand_memorability").get<double>();
    r.memorability_score = j.at("memorability_score").get<double>();
    return r;
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(errc::io_error, "cannot open '" + path + "'");
    std::vector<VideoRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            records.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            raise(errc::malformed_line, "line " + std::to_string(line_no) + " of '" + path + "': " + e.what());
        }
    }
    return validate_dataset(std::move(records));
}

inline void write_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) raise(errc::io_error, "cannot write '" + path + "'");
    for (const auto& r : ds.records) out << record_to_json(r).dump() << '\n';
}

// --- quantiles ----------------------------------------------------------------

// Inclusive (type-7) empirical quantile with linear interpolation between order
// statistics; deterministic under ties.
inline double inclusive_quantile(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) raise(errc::empty_dataset, "quantile of empty sample");
    if (sorted.size() == 1) return sorted[0];
    const double h = p * static_cast<double>(sorted.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(h));
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// Interior bin edges at quantiles i/n_bins, i = 1..n_bins-1.
inline std::vector<double> quantile_edges(std::vector<double> values, int n_bins) {
    if (n_bins < 2) raise(errc::invalid_spec, "n_bins must be >= 2");
    std::sort(values.begin(), values.end());
    std::vector<double> edges;
    edges.reserve(static_cast<size_t>(n_bins - 1));
    for (int i = 1; i < n_bins; ++i)
        edges.push_back(inclusive_quantile(values, static_cast<double>(i) / static_cast<double>(n_bins)));
    return edges;
}

// Bin index = number of edges strictly below the value.
inline int bin_of(double value, const std::vector<double>& edges) {
    int b = 0;
    for (double e : edges)
        if (e < value) ++b;
    return b;
}

// --- dataset summary ------------------------------------------------------------

struct DatasetSummary {
    std::map<std::string, size_t> channel_counts;
    std::vector<double> brand_edges;
    std::vector<double> score_edges;
    int n_bins = 0;
};

inline DatasetSummary summarize_dataset(const Dataset& ds, int n_bins) {
    if (ds.records.empty()) raise(errc::empty_dataset, "summarize_dataset on empty dataset");
    if (n_bins < 2) raise(errc::invalid_spec, "n_bins must be >= 2");
    DatasetSummary s;
    s.n_bins = n_bins;
    for (const auto& r : ds.records) ++s.channel_counts[r.channel];
    s.brand_edges = quantile_edges(ds.targets(Target::brand), n_bins);
    s.score_edges = quantile_edges(ds.targets(Target::score), n_bins);
    return s;
}

// --- synthetic corpus -------------------------------------------------------------

struct SyntheticSpec {
    uint64_t seed = 0;
    int n_channels = 8;
    std::vector<int> channel_sizes;           // one entry per channel
    Eigen::Index d_vis = 16;
    Eigen::Index n_vis_tokens = 4;
    Eigen::Index d_text_hint = 32;            // suggested embedder dimension downstream
    double signal_weight = 0.4;
    double noise_std = 0.02;
    double dominant_channel_share = 0.0;      // >0 re-plans sizes so channel 0 holds this share
    double empty_subtitle_rate = 0.05;

    void validate() const {
        if (n_channels < 2) raise(errc::invalid_spec, "n_channels must be >= 2");
        if (static_cast<int>(channel_sizes.size()) != n_channels)
            raise(errc::invalid_spec, "channel_sizes must have one entry per channel");
        long total = 0;
        for (int s : channel_sizes) {
            if (s < 0) raise(errc::invalid_spec, "channel sizes must be non-negative");
            total += s;
        }
        if (total < 10) raise(errc::invalid_spec, "sum of channel_sizes must be >= 10");
        if (signal_weight < 0) raise(errc::invalid_spec, "signal_weight must be >= 0");
        if (noise_std < 0) raise(errc::invalid_spec, "noise_std must be >= 0");
        if (dominant_channel_share < 0 || dominant_channel_share >= 1)
            raise(errc::invalid_spec, "dominant_channel_share must lie in [0,1)");
        if (d_vis < 1 || n_vis_tokens < 1) raise(errc::invalid_spec, "visual dimensions must be positive");
    }
};

namespace detail {

inline const std::vector<std::string>& word_pool() {
    static const std::vector<std::string> pool = {
        "quarterly", "earnings",  "growth",   "dividend", "outlook",  "market",  "savings", "invest",
        "capital",   "portfolio", "strategy", "advisor",  "retire",   "credit",  "lending", "deposit",
        "futures",   "insight",   "summit",   "webinar",  "briefing", "update",  "review",  "forecast",
        "banking",   "wealth",    "trading",  "economy",  "policy",   "digital", "global",  "client",
        "annual",    "report",    "series",   "episode",  "special",  "launch",  "results", "analysis"};
    return pool;
}

// Effective per-channel sizes: when a dominant share is requested, channel 0 is
// re-planned to hold round(share * total) records and the remainder is spread
// over the other channels by largest remainder, keeping the total fixed.
inline std::vector<int> plan_channel_sizes(const SyntheticSpec& spec) {
    if (spec.dominant_channel_share <= 0.0) return spec.channel_sizes;
    long total = 0;
    for (int s : spec.channel_sizes) total += s;
    const int n0 = static_cast<int>(std::llround(spec.dominant_channel_share * static_cast<double>(total)));
    long rest_total = total - n0;
    long rest_given = 0;
    for (size_t i = 1; i < spec.channel_sizes.size(); ++i) rest_given += spec.channel_sizes[i];

    std::vector<int> sizes(spec.channel_sizes.size(), 0);
    sizes[0] = n0;
    if (rest_given <= 0) {
        // no plan for the tail: spread evenly
        const size_t k = sizes.size() - 1;
        for (size_t i = 1; i < sizes.size(); ++i) sizes[i] = static_cast<int>(rest_total / k);
        for (size_t i = 1; i <= rest_total % k; ++i) sizes[i] += 1;
        return sizes;
    }
    std::vector<double> exact(sizes.size(), 0.0);
    long assigned = 0;
    for (size_t i = 1; i < sizes.size(); ++i) {
        exact[i] = static_cast<double>(spec.channel_sizes[i]) / static_cast<double>(rest_given) *
                   static_cast<double>(rest_total);
        sizes[i] = static_cast<int>(std::floor(exact[i]));
        assigned += sizes[i];
    }
    // largest remainder, ties by lowest channel index
    std::vector<size_t> order;
    for (size_t i = 1; i < sizes.size(); ++i) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return exact[a] - std::floor(exact[a]) > exact[b] - std::floor(exact[b]);
    });
    for (size_t j = 0; j < order.size() && assigned < rest_total; ++j, ++assigned) sizes[order[j]] += 1;
    return sizes;
}

inline std::string make_sentence(Rng& rng, const std::vector<std::string>& topical, size_t n_words) {
    std::string out;
    const auto& pool = word_pool();
    for (size_t w = 0; w < n_words; ++w) {
        if (!out.empty()) out.push_back(' ');
        if (!topical.empty() && rng.uniform() < 0.35)
            out += topical[rng.index(topical.size())];
        else
            out += pool[rng.index(pool.size())];
    }
    return out;
}

}  // namespace detail

// Marker word whose repetition count in the title encodes the latent signal.
inline constexpr const char* kSignalMarkerWord = "hallmark";

struct SyntheticCorpus {
    Dataset dataset;
    std::vector<double> latents;  // one latent scalar per record, dataset order
};

inline SyntheticCorpus generate_synthetic_with_latents(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(splitmix64(spec.seed ^ 0x5eedc0dell));

    const std::vector<int> sizes = detail::plan_channel_sizes(spec);
    const auto& pool = detail::word_pool();

    std::vector<VideoRecord> records;
    std::vector<double> latents;
    int next_id = 0;
    for (int c = 0; c < spec.n_channels; ++c) {
        char chan_name[16];
        std::snprintf(chan_name, sizeof(chan_name), "ch%02d", c);
        // channel-specific topic words give titles within a channel lexical overlap
        std::vector<std::string> topical;
        for (int t = 0; t < 3; ++t) topical.push_back(pool[rng.index(pool.size())]);

        for (int k = 0; k < sizes[static_cast<size_t>(c)]; ++k) {
            VideoRecord r;
            char idbuf[16];
            std::snprintf(idbuf, sizeof(idbuf), "v%04d", next_id++);
            r.id = idbuf;
            r.channel = chan_name;

            const double s = rng.uniform(-1.0, 1.0);
            latents.push_back(s);

            // title: topic flavor + marker word repeated proportionally to s
            const int marker_reps = static_cast<int>(std::llround((s + 1.0) * 3.0));  // 0..6
            r.title = topical[rng.index(topical.size())] + " " + detail::make_sentence(rng, topical, 3);
            for (int m = 0; m < marker_reps; ++m) r.title += std::string(" ") + kSignalMarkerWord;

            r.description = detail::make_sentence(rng, topical, 8);

            if (rng.uniform() < spec.empty_subtitle_rate) {
                r.subtitles.clear();
            } else {
                const size_t n_sentences = 3 + rng.index(5);
                std::string subs;
                for (size_t ssent = 0; ssent < n_sentences; ++ssent) {
                    if (!subs.empty()) subs += ". ";
                    subs += detail::make_sentence(rng, topical, 8 + rng.index(8));
                }
                r.subtitles = subs + ".";
            }

            r.numeric_metadata["comments"] = std::floor(std::exp(rng.normal() * 1.2 + 3.0));
            r.numeric_metadata["duration_s"] = std::floor(rng.uniform(15.0, 300.0));
            r.numeric_metadata["likes"] = std::floor(std::exp(rng.normal() * 1.5 + 5.0));
            r.numeric_metadata["views"] = std::floor(std::exp(rng.normal() * 1.5 + 8.0));

            // visual block: coordinate 0 carries the latent exactly, rest is noise
            r.visual_block.resize(spec.n_vis_tokens, spec.d_vis);
            for (Eigen::Index row = 0; row < spec.n_vis_tokens; ++row) {
                r.visual_block(row, 0) = s;
                for (Eigen::Index col = 1; col < spec.d_vis; ++col)
                    r.visual_block(row, col) = 0.3 * rng.normal();
            }

            r.brand_memorability = clamp01(0.5 + spec.signal_weight * s + spec.noise_std * rng.normal());
            r.memorability_score = clamp01(0.5 + spec.signal_weight * s + spec.noise_std * rng.normal());
            records.push_back(std::move(r));
        }
    }

    SyntheticCorpus out;
    out.dataset = validate_dataset(std::move(records));
    out.latents = std::move(latents);
    return out;
}

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
    return generate_synthetic_with_latents(spec).dataset;
}

// SyntheticSpec JSON (used by the synth CLI subcommand)
inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    s.seed = j.value("seed", s.seed);
    s.n_channels = j.value("n_channels", s.n_channels);
    if (j.contains("channel_sizes")) s.channel_sizes = j.at("channel_sizes").get<std::vector<int>>();
    s.d_vis = j.value("d_vis", s.d_vis);
    s.n_vis_tokens = j.value("n_vis_tokens", s.n_vis_tokens);
    s.d_text_hint = j.value("d_text_hint", s.d_text_hint);
    s.signal_weight = j.value("signal_weight", s.signal_weight);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.dominant_channel_share = j.value("dominant_channel_share", s.dominant_channel_share);
    s.empty_subtitle_rate = j.value("empty_subtitle_rate", s.empty_subtitle_rate);
    return s;
}

}  // namespace memfuse
