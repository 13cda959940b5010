#pragma once

#include "memfuse/fusion/model.hpp"

namespace memfuse::testutil {

// deterministic bundle with unit-norm text vectors and a small visual block
inline FeatureBundle make_bundle(const std::string& id, int d_text, int d_vis, int n_vis, uint64_t seed,
                                 double visual_signal = 0.0) {
    Rng rng(splitmix64(seed ^ fnv1a64(id)));
    auto unit = [&](Eigen::Index d) {
        Eigen::VectorXd v(d);
        for (Eigen::Index i = 0; i < d; ++i) v(i) = rng.normal();
        return (v / v.norm()).eval();
    };
    FeatureBundle b;
    b.id = id;
    b.e5_subtitles = unit(d_text);
    b.e5_title = unit(d_text);
    b.e5_description = unit(d_text);
    b.e5_summary = unit(d_text);
    b.e5_rationale = unit(d_text);
    b.visual_block.resize(n_vis, d_vis);
    for (int r = 0; r < n_vis; ++r) {
        b.visual_block(r, 0) = visual_signal;
        for (int c = 1; c < d_vis; ++c) b.visual_block(r, c) = 0.2 * rng.normal();
    }
    b.numeric = Eigen::VectorXd::Zero(3);
    b.summary_text = "summary text for " + id;
    b.rationale_text = "rationale text for " + id;
    return b;
}

inline fusion::BackboneConfig tiny_backbone(uint64_t seed, int d_model = 16, int n_layers = 1) {
    fusion::BackboneConfig cfg;
    cfg.n_layers = n_layers;
    cfg.d_model = d_model;
    cfg.n_heads = 2;
    cfg.d_ff = 2 * d_model;
    cfg.max_seq = 64;
    cfg.seed = seed;
    return cfg;
}

inline fusion::StreamConfig tiny_streams(int d_text = 12, int d_vis = 6, int n_vis = 2) {
    fusion::StreamConfig scfg;
    scfg.d_text = d_text;
    scfg.d_vis = d_vis;
    scfg.n_vis_tokens = n_vis;
    return scfg;
}

}  // namespace memfuse::testutil
