#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "memfuse/corpus.hpp"

namespace memfuse {

using GroupKey = std::string;

struct InnerSplit {
    std::vector<std::string> train_ids;
    std::vector<std::string> valid_ids;
};

struct OuterFold {
    std::vector<std::string> test_ids;
    std::vector<InnerSplit> inner;
};

struct NestedSplits {
    std::vector<OuterFold> outer;
    uint64_t seed = 0;
    int n_bins = 5;
    Target target = Target::brand;
};

// --- k-medoids (PAM: greedy BUILD + best-improvement SWAP) ---------------------

struct KMedoidsResult {
    std::vector<int> medoids;             // ascending point indices
    std::vector<int> assignment;          // per point, index into medoids
    std::vector<double> cost_history;     // cost after BUILD, then after each SWAP pass
    double final_cost = 0.0;
};

namespace detail {

inline Eigen::MatrixXd cosine_distance_matrix(const std::vector<Eigen::VectorXd>& points) {
    const int n = static_cast<int>(points.size());
    std::vector<Eigen::VectorXd> unit(points.size());
    for (int i = 0; i < n; ++i) {
        const double norm = points[static_cast<size_t>(i)].norm();
        if (!(norm > 1e-12))
            raise(errc::zero_vector, "point " + std::to_string(i) + " has zero norm; cosine undefined");
        unit[static_cast<size_t>(i)] = points[static_cast<size_t>(i)] / norm;
    }
    Eigen::MatrixXd d(n, n);
    for (int i = 0; i < n; ++i) {
        d(i, i) = 0.0;
        for (int j = i + 1; j < n; ++j) {
            const double dist = 1.0 - unit[static_cast<size_t>(i)].dot(unit[static_cast<size_t>(j)]);
            d(i, j) = dist;
            d(j, i) = dist;
        }
    }
    return d;
}

}  // namespace detail

// Deterministic: BUILD picks the seed medoid minimizing total distance and then
// greedily the point with the largest cost reduction; SWAP applies the best
// improving (medoid, candidate) exchange until fixpoint or max_iter passes.
// All ties break toward the lowest index.
inline KMedoidsResult kmedoids(const std::vector<Eigen::VectorXd>& points, int k, uint64_t /*seed*/ = 0,
                               int max_iter = 100) {
    const int n = static_cast<int>(points.size());
    if (n == 0 || k < 1 || k > n)
        raise(errc::k_too_large, "k = " + std::to_string(k) + " with " + std::to_string(n) + " points");
    const Eigen::MatrixXd d = detail::cosine_distance_matrix(points);

    std::vector<bool> is_medoid(static_cast<size_t>(n), false);
    std::vector<int> medoids;
    medoids.reserve(static_cast<size_t>(k));

    // BUILD
    {
        int best = 0;
        double best_cost = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            const double c = d.row(i).sum();
            if (c < best_cost - 1e-15) {
                best_cost = c;
                best = i;
            }
        }
        medoids.push_back(best);
        is_medoid[static_cast<size_t>(best)] = true;
    }
    std::vector<double> nearest(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) nearest[static_cast<size_t>(j)] = d(j, medoids[0]);
    while (static_cast<int>(medoids.size()) < k) {
        int best = -1;
        double best_gain = -1.0;
        for (int c = 0; c < n; ++c) {
            if (is_medoid[static_cast<size_t>(c)]) continue;
            double gain = 0.0;
            for (int j = 0; j < n; ++j) gain += std::max(0.0, nearest[static_cast<size_t>(j)] - d(j, c));
            if (gain > best_gain + 1e-15) {
                best_gain = gain;
                best = c;
            }
        }
        medoids.push_back(best);
        is_medoid[static_cast<size_t>(best)] = true;
        for (int j = 0; j < n; ++j)
            nearest[static_cast<size_t>(j)] = std::min(nearest[static_cast<size_t>(j)], d(j, best));
    }

    auto total_cost = [&]() {
        double c = 0.0;
        for (int j = 0; j < n; ++j) {
            double dj = std::numeric_limits<double>::infinity();
            for (int m : medoids) dj = std::min(dj, d(j, m));
            c += dj;
        }
        return c;
    };

    KMedoidsResult res;
    res.cost_history.push_back(total_cost());

    // SWAP passes
    for (int pass = 0; pass < max_iter; ++pass) {
        // nearest and second-nearest medoid distances per point
        std::vector<double> d1(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
        std::vector<double> d2(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
        std::vector<int> n1(static_cast<size_t>(n), -1);
        for (int j = 0; j < n; ++j) {
            for (size_t mi = 0; mi < medoids.size(); ++mi) {
                const double dist = d(j, medoids[mi]);
                if (dist < d1[static_cast<size_t>(j)]) {
                    d2[static_cast<size_t>(j)] = d1[static_cast<size_t>(j)];
                    d1[static_cast<size_t>(j)] = dist;
                    n1[static_cast<size_t>(j)] = static_cast<int>(mi);
                } else if (dist < d2[static_cast<size_t>(j)]) {
                    d2[static_cast<size_t>(j)] = dist;
                }
            }
        }

        double best_delta = -1e-12;
        int best_mi = -1, best_h = -1;
        for (size_t mi = 0; mi < medoids.size(); ++mi) {
            for (int h = 0; h < n; ++h) {
                if (is_medoid[static_cast<size_t>(h)]) continue;
                double delta = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double dh = d(j, h);
                    if (n1[static_cast<size_t>(j)] == static_cast<int>(mi))
                        delta += std::min(d2[static_cast<size_t>(j)], dh) - d1[static_cast<size_t>(j)];
                    else if (dh < d1[static_cast<size_t>(j)])
                        delta += dh - d1[static_cast<size_t>(j)];
                }
                if (delta < best_delta - 1e-15) {
                    best_delta = delta;
                    best_mi = static_cast<int>(mi);
                    best_h = h;
                }
            }
        }
        if (best_mi < 0) break;
        is_medoid[static_cast<size_t>(medoids[static_cast<size_t>(best_mi)])] = false;
        medoids[static_cast<size_t>(best_mi)] = best_h;
        is_medoid[static_cast<size_t>(best_h)] = true;
        res.cost_history.push_back(total_cost());
    }

    std::sort(medoids.begin(), medoids.end());
    res.medoids = medoids;
    res.assignment.resize(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
        int best = 0;
        double best_d = d(j, medoids[0]);
        for (size_t mi = 1; mi < medoids.size(); ++mi) {
            const double dist = d(j, medoids[mi]);
            if (dist < best_d) {
                best_d = dist;
                best = static_cast<int>(mi);
            }
        }
        res.assignment[static_cast<size_t>(j)] = best;
    }
    res.final_cost = res.cost_history.back();
    return res;
}

// --- channel rebalancing ---------------------------------------------------------

// Every channel holding more than max_fraction of the dataset is split into
// ceil(count / (max_fraction * |ds|)) subchannels by k-medoids over its title
// embeddings; all other channels keep their label.
inline std::map<std::string, GroupKey> rebalance_channels(
    const Dataset& ds, const std::map<std::string, Eigen::VectorXd>& title_embeddings, double max_fraction,
    uint64_t seed = 0) {
    if (!(max_fraction > 0.0 && max_fraction < 1.0))
        raise(errc::invalid_spec, "max_fraction must lie in (0,1)");
    for (const auto& r : ds.records)
        if (!title_embeddings.count(r.id))
            raise(errc::missing_embedding, "no title embedding for record '" + r.id + "'");

    // channels in first-appearance order
    std::vector<std::string> channel_order;
    std::map<std::string, std::vector<size_t>> members;
    for (size_t i = 0; i < ds.records.size(); ++i) {
        const auto& ch = ds.records[i].channel;
        if (!members.count(ch)) channel_order.push_back(ch);
        members[ch].push_back(i);
    }

    const double threshold = max_fraction * static_cast<double>(ds.size());
    std::map<std::string, GroupKey> groups;
    for (const auto& ch : channel_order) {
        const auto& idx = members[ch];
        if (static_cast<double>(idx.size()) <= threshold) {
            for (size_t i : idx) groups[ds.records[i].id] = ch;
            continue;
        }
        const int k = static_cast<int>(std::ceil(static_cast<double>(idx.size()) / threshold));
        std::vector<Eigen::VectorXd> pts;
        pts.reserve(idx.size());
        for (size_t i : idx) pts.push_back(title_embeddings.at(ds.records[i].id));
        const auto clustering = kmedoids(pts, k, seed);
        for (size_t p = 0; p < idx.size(); ++p)
            groups[ds.records[idx[p]].id] =
                ch + "#" + std::to_string(clustering.assignment[p]);
    }
    return groups;
}

// --- nested grouped & stratified CV ------------------------------------------------

namespace detail {

struct GroupInfo {
    GroupKey label;
    std::vector<size_t> records;  // dataset indices
};

// Greedy balanced assignment: groups in decreasing size (ties by label), each
// placed on the fold minimizing size imbalance plus chi-square deviation of the
// fold's target-bin histogram from the proportional share.
inline std::vector<int> greedy_assign(const std::vector<GroupInfo>& groups, int n_folds,
                                      const std::vector<int>& record_bins, int n_bins) {
    size_t total_records = 0;
    std::vector<double> total_hist(static_cast<size_t>(n_bins), 0.0);
    for (const auto& g : groups) {
        total_records += g.records.size();
        for (size_t r : g.records) total_hist[static_cast<size_t>(record_bins[r])] += 1.0;
    }
    const double fold_target = static_cast<double>(total_records) / n_folds;

    std::vector<size_t> order(groups.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (groups[a].records.size() != groups[b].records.size())
            return groups[a].records.size() > groups[b].records.size();
        return groups[a].label < groups[b].label;
    });

    std::vector<double> fold_size(static_cast<size_t>(n_folds), 0.0);
    std::vector<std::vector<double>> fold_hist(static_cast<size_t>(n_folds),
                                               std::vector<double>(static_cast<size_t>(n_bins), 0.0));
    std::vector<int> fold_of(groups.size(), -1);

    for (size_t gi : order) {
        std::vector<double> g_hist(static_cast<size_t>(n_bins), 0.0);
        for (size_t r : groups[gi].records) g_hist[static_cast<size_t>(record_bins[r])] += 1.0;
        const double g_size = static_cast<double>(groups[gi].records.size());

        // score = change in the global objective
        //   sum_f (n_f - N/K)^2 / (N/K) + sum_f sum_b (h_fb - t_b/K)^2 / max(t_b/K, 1)
        // when the group joins fold f; only fold f's terms move
        int best_fold = 0;
        double best_score = std::numeric_limits<double>::infinity();
        for (int f = 0; f < n_folds; ++f) {
            const double before = fold_size[static_cast<size_t>(f)] - fold_target;
            const double after = before + g_size;
            double score = (after * after - before * before) / std::max(fold_target, 1.0);
            for (int b = 0; b < n_bins; ++b) {
                const double expect = total_hist[static_cast<size_t>(b)] / n_folds;
                const double h_before = fold_hist[static_cast<size_t>(f)][static_cast<size_t>(b)] - expect;
                const double h_after = h_before + g_hist[static_cast<size_t>(b)];
                score += (h_after * h_after - h_before * h_before) / std::max(expect, 1.0);
            }
            if (score < best_score - 1e-12) {
                best_score = score;
                best_fold = f;
            }
        }
        fold_of[gi] = best_fold;
        fold_size[static_cast<size_t>(best_fold)] += g_size;
        for (int b = 0; b < n_bins; ++b)
            fold_hist[static_cast<size_t>(best_fold)][static_cast<size_t>(b)] += g_hist[static_cast<size_t>(b)];
    }
    return fold_of;
}

inline std::vector<GroupInfo> collect_groups(const Dataset& ds, const std::map<std::string, GroupKey>& groups,
                                             const std::vector<size_t>& record_subset) {
    std::map<GroupKey, std::vector<size_t>> by_label;
    for (size_t i : record_subset) {
        const auto it = groups.find(ds.records[i].id);
        if (it == groups.end())
            raise(errc::invalid_spec, "record '" + ds.records[i].id + "' has no group assignment");
        by_label[it->second].push_back(i);
    }
    std::vector<GroupInfo> out;
    out.reserve(by_label.size());
    for (auto& [label, recs] : by_label) out.push_back(GroupInfo{label, std::move(recs)});
    return out;
}

inline std::vector<std::string> sorted_ids(const Dataset& ds, const std::vector<size_t>& idx) {
    std::vector<std::string> ids;
    ids.reserve(idx.size());
    for (size_t i : idx) ids.push_back(ds.records[i].id);
    std::sort(ids.begin(), ids.end());
    return ids;
}

}  // namespace detail

inline NestedSplits nested_split(const Dataset& ds, const std::map<std::string, GroupKey>& groups, Target target,
                                 int n_outer = 5, int n_inner = 5, int n_bins = 5, uint64_t seed = 0) {
    if (ds.records.empty()) raise(errc::empty_dataset, "nested_split on empty dataset");

    std::vector<size_t> all(ds.size());
    std::iota(all.begin(), all.end(), size_t{0});
    auto outer_groups = detail::collect_groups(ds, groups, all);
    if (static_cast<int>(outer_groups.size()) < n_outer)
        raise(errc::too_few_groups, std::to_string(outer_groups.size()) + " distinct groups, need >= " +
                                        std::to_string(n_outer));

    // record bins from full-dataset target quantiles
    const auto edges = quantile_edges(ds.targets(target), n_bins);
    std::vector<int> record_bins(ds.size());
    for (size_t i = 0; i < ds.size(); ++i) record_bins[i] = bin_of(ds.records[i].target(target), edges);

    const auto outer_fold_of = detail::greedy_assign(outer_groups, n_outer, record_bins, n_bins);

    NestedSplits out;
    out.seed = seed;
    out.n_bins = n_bins;
    out.target = target;
    out.outer.resize(static_cast<size_t>(n_outer));

    for (int f = 0; f < n_outer; ++f) {
        std::vector<size_t> test_idx, pool_idx;
        for (size_t gi = 0; gi < outer_groups.size(); ++gi) {
            auto& dst = (outer_fold_of[gi] == f) ? test_idx : pool_idx;
            for (size_t r : outer_groups[gi].records) dst.push_back(r);
        }
        auto& fold = out.outer[static_cast<size_t>(f)];
        fold.test_ids = detail::sorted_ids(ds, test_idx);

        auto pool_groups = detail::collect_groups(ds, groups, pool_idx);
        if (static_cast<int>(pool_groups.size()) < n_inner)
            raise(errc::too_few_groups, "outer fold " + std::to_string(f) + " training pool has " +
                                            std::to_string(pool_groups.size()) + " groups, need >= " +
                                            std::to_string(n_inner));
        const auto inner_fold_of = detail::greedy_assign(pool_groups, n_inner, record_bins, n_bins);
        fold.inner.resize(static_cast<size_t>(n_inner));
        for (int i = 0; i < n_inner; ++i) {
            std::vector<size_t> train_idx, valid_idx;
            for (size_t gi = 0; gi < pool_groups.size(); ++gi) {
                auto& dst = (inner_fold_of[gi] == i) ? valid_idx : train_idx;
                for (size_t r : pool_groups[gi].records) dst.push_back(r);
            }
            fold.inner[static_cast<size_t>(i)].train_ids = detail::sorted_ids(ds, train_idx);
            fold.inner[static_cast<size_t>(i)].valid_ids = detail::sorted_ids(ds, valid_idx);
        }
    }
    return out;
}

// --- serialization -----------------------------------------------------------------

// splits.json bundles the fold structure with the group map it was built from,
// so downstream stages can audit leakage without recomputing the rebalance.
struct SplitsFile {
    NestedSplits splits;
    std::map<std::string, GroupKey> groups;
};

inline nlohmann::ordered_json splits_to_json(const SplitsFile& sf) {
    nlohmann::ordered_json j;
    j["seed"] = sf.splits.seed;
    j["n_bins"] = sf.splits.n_bins;
    j["target"] = target_name(sf.splits.target);
    nlohmann::ordered_json groups;
    for (const auto& [id, g] : sf.groups) groups[id] = g;
    j["groups"] = std::move(groups);
    nlohmann::ordered_json outer = nlohmann::ordered_json::array();
    for (const auto& fold : sf.splits.outer) {
        nlohmann::ordered_json jf;
        jf["test_ids"] = fold.test_ids;
        nlohmann::ordered_json inner = nlohmann::ordered_json::array();
        for (const auto& is : fold.inner) {
            nlohmann::ordered_json ji;
            ji["train_ids"] = is.train_ids;
            ji["valid_ids"] = is.valid_ids;
            inner.push_back(std::move(ji));
        }
        jf["inner"] = std::move(inner);
        outer.push_back(std::move(jf));
    }
    j["outer"] = std::move(outer);
    return j;
}

inline SplitsFile splits_from_json(const nlohmann::json& j) {
    SplitsFile sf;
    sf.splits.seed = j.at("seed").get<uint64_t>();
    sf.splits.n_bins = j.at("n_bins").get<int>();
    sf.splits.target = target_from_name(j.at("target").get<std::string>());
    for (const auto& [id, g] : j.at("groups").items()) sf.groups[id] = g.get<std::string>();
    for (const auto& jf : j.at("outer")) {
        OuterFold fold;
        fold.test_ids = jf.at("test_ids").get<std::vector<std::string>>();
        for (const auto& ji : jf.at("inner")) {
            InnerSplit is;
            is.train_ids = ji.at("train_ids").get<std::vector<std::string>>();
            is.valid_ids = ji.at("valid_ids").get<std::vector<std::string>>();
            fold.inner.push_back(std::move(is));
        }
        sf.splits.outer.push_back(std::move(fold));
    }
    return sf;
}

inline void write_splits(const SplitsFile& sf, const std::string& path) {
    std::ofstream out(path);
    if (!out) raise(errc::io_error, "cannot write '" + path + "'");
    out << splits_to_json(sf).dump(2) << '\n';
}

inline SplitsFile load_splits(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(errc::io_error, "cannot open '" + path + "'");
    nlohmann::json j;
    in >> j;
    return splits_from_json(j);
}

}  // namespace memfuse
