#include "memfuse/splits.hpp"

#include <gtest/gtest.h>

#include "memfuse/providers.hpp"

namespace {

using namespace memfuse;

// adjusted Rand index between two labelings
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    const int ka = *std::max_element(a.begin(), a.end()) + 1;
    const int kb = *std::max_element(b.begin(), b.end()) + 1;
    std::vector<std::vector<long>> table(static_cast<size_t>(ka), std::vector<long>(static_cast<size_t>(kb), 0));
    for (size_t i = 0; i < a.size(); ++i) ++table[static_cast<size_t>(a[i])][static_cast<size_t>(b[i])];
    auto comb2 = [](long n) { return n * (n - 1) / 2.0; };
    double sum_ij = 0, sum_a = 0, sum_b = 0;
    for (int i = 0; i < ka; ++i) {
        long row = 0;
        for (int j = 0; j < kb; ++j) {
            sum_ij += comb2(table[static_cast<size_t>(i)][static_cast<size_t>(j)]);
            row += table[static_cast<size_t>(i)][static_cast<size_t>(j)];
        }
        sum_a += comb2(row);
    }
    for (int j = 0; j < kb; ++j) {
        long col = 0;
        for (int i = 0; i < ka; ++i) col += table[static_cast<size_t>(i)][static_cast<size_t>(j)];
        sum_b += comb2(col);
    }
    const double total = comb2(static_cast<long>(a.size()));
    const double expected = sum_a * sum_b / total;
    const double max_index = 0.5 * (sum_a + sum_b);
    return (sum_ij - expected) / (max_index - expected);
}

std::vector<Eigen::VectorXd> two_clumps(int per_clump, uint64_t seed) {
    Rng rng(seed);
    std::vector<Eigen::VectorXd> pts;
    for (int c = 0; c < 2; ++c) {
        Eigen::VectorXd center = Eigen::VectorXd::Zero(8);
        center(c) = 1.0;  // orthogonal directions, far apart in cosine distance
        for (int i = 0; i < per_clump; ++i) {
            Eigen::VectorXd p = center;
            for (int d = 0; d < 8; ++d) p(d) += 0.05 * rng.normal();
            pts.push_back(p);
        }
    }
    return pts;
}

TEST(KMedoids, RecoversWellSeparatedClumps) {
    const auto pts = two_clumps(10, 42);
    const auto res = kmedoids(pts, 2);
    std::vector<int> truth(20, 0);
    for (int i = 10; i < 20; ++i) truth[static_cast<size_t>(i)] = 1;
    EXPECT_DOUBLE_EQ(adjusted_rand_index(truth, res.assignment), 1.0);
}

TEST(KMedoids, EveryPointItsOwnMedoidWhenKEqualsN) {
    const auto pts = two_clumps(3, 1);
    const auto res = kmedoids(pts, static_cast<int>(pts.size()));
    EXPECT_NEAR(res.final_cost, 0.0, 1e-12);
    for (size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(res.medoids[i], static_cast<int>(i));
}

TEST(KMedoids, CostHistoryIsNonIncreasing) {
    Rng rng(9);
    std::vector<Eigen::VectorXd> pts;
    for (int i = 0; i < 60; ++i) {
        Eigen::VectorXd p(6);
        for (int d = 0; d < 6; ++d) p(d) = rng.normal();
        pts.push_back(p);
    }
    const auto res = kmedoids(pts, 4);
    for (size_t i = 1; i < res.cost_history.size(); ++i)
        EXPECT_LE(res.cost_history[i], res.cost_history[i - 1] + 1e-12);
}

TEST(KMedoids, Deterministic) {
    const auto pts = two_clumps(8, 5);
    const auto a = kmedoids(pts, 3);
    const auto b = kmedoids(pts, 3);
    EXPECT_EQ(a.medoids, b.medoids);
    EXPECT_EQ(a.assignment, b.assignment);
}

TEST(KMedoids, ErrorsOnBadInput) {
    const auto pts = two_clumps(3, 2);
    try {
        kmedoids(pts, 10);
        FAIL() << "expected KTooLarge";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), errc::k_too_large);
    }
    auto with_zero = pts;
    with_zero.push_back(Eigen::VectorXd::Zero(8));
    try {
        kmedoids(with_zero, 2);
        FAIL() << "expected ZeroVector";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), errc::zero_vector);
    }
}

// --- rebalancing -------------------------------------------------------------

SyntheticSpec imbalanced_spec(uint64_t seed = 13) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.n_channels = 12;
    spec.channel_sizes.assign(12, 28);
    spec.channel_sizes[0] = 31;  // total 339
    spec.dominant_channel_share = 0.23;
    return spec;
}

std::map<std::string, Eigen::VectorXd> embed_titles(const Dataset& ds, int dim = 48) {
    MockEmbeddingProvider emb(dim);
    std::map<std::string, Eigen::VectorXd> out;
    for (const auto& r : ds.records) {
        const auto v = emb.embed(r.title);
        out[r.id] = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    return out;
}

TEST(Rebalance, IdentityWhenNoChannelExceedsThreshold) {
    SyntheticSpec spec;
    spec.seed = 2;
    spec.n_channels = 10;
    spec.channel_sizes.assign(10, 10);
    const auto ds = generate_synthetic(spec);
    const auto groups = rebalance_channels(ds, embed_titles(ds), 0.2);
    for (const auto& r : ds.records) EXPECT_EQ(groups.at(r.id), r.channel);
}

TEST(Rebalance, DominantChannelSplitsIntoExactlyThreeSubchannels) {
    const auto ds = generate_synthetic(imbalanced_spec());
    const auto groups = rebalance_channels(ds, embed_titles(ds), 0.10);
    std::set<GroupKey> ch0_groups;
    for (const auto& r : ds.records)
        if (r.channel == "ch00") ch0_groups.insert(groups.at(r.id));
    EXPECT_EQ(ch0_groups.size(), 3u);  // ceil(78 / 33.9) = 3
    for (const auto& g : ch0_groups) EXPECT_EQ(g.rfind("ch00#", 0), 0u);
}

TEST(Rebalance, NoGroupExceedsTwiceTheThreshold) {
    const auto ds = generate_synthetic(imbalanced_spec(77));
    const double max_fraction = 0.10;
    const auto groups = rebalance_channels(ds, embed_titles(ds), max_fraction);
    std::map<GroupKey, size_t> counts;
    for (const auto& [id, g] : groups) ++counts[g];
    for (const auto& [g, c] : counts)
        EXPECT_LE(static_cast<double>(c), 2.0 * max_fraction * static_cast<double>(ds.size())) << g;
}

TEST(Rebalance, MissingEmbeddingRaises) {
    const auto ds = generate_synthetic(imbalanced_spec());
    auto embeddings = embed_titles(ds);
    embeddings.erase(ds.records[0].id);
    try {
        rebalance_channels(ds, embeddings, 0.10);
        FAIL() << "expected MissingEmbedding";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), errc::missing_embedding);
    }
}

// --- nested splits -----------------------------------------------------------

Dataset symmetric_dataset(int n_groups, int per_group, bool spread_targets) {
    std::vector<VideoRecord> records;
    int id = 0;
    for (int g = 0; g < n_groups; ++g) {
        for (int i = 0; i < per_group; ++i) {
            VideoRecord r;
            r.id = "v" + std::to_string(id++);
            r.channel = "g" + std::to_string(g);
            const double t = spread_targets ? (0.1 + 0.2 * static_cast<double>(i % 5)) : 0.5;
            r.brand_memorability = t;
            r.memorability_score = t;
            records.push_back(r);
        }
    }
    return validate_dataset(std::move(records));
}

std::map<std::string, GroupKey> channel_groups(const Dataset& ds) {
    std::map<std::string, GroupKey> groups;
    for (const auto& r : ds.records) groups[r.id] = r.channel;
    return groups;
}

TEST(NestedSplit, SymmetricGroupsSpreadEvenly) {
    // 25 equal-size groups, all records in one quantile bin
    const auto ds = symmetric_dataset(25, 4, false);
    const auto groups = channel_groups(ds);
    const auto splits = nested_split(ds, groups, Target::brand);
    for (const auto& fold : splits.outer) {
        std::set<GroupKey> fold_groups;
        for (const auto& id : fold.test_ids) fold_groups.insert(groups.at(id));
        EXPECT_EQ(fold_groups.size(), 5u);
        EXPECT_EQ(fold.test_ids.size(), 20u);
    }
}

TEST(NestedSplit, OuterTestsPartitionTheDataset) {
    const auto ds = generate_synthetic(imbalanced_spec(31));
    const auto groups = channel_groups(ds);
    const auto splits = nested_split(ds, groups, Target::brand);
    std::set<std::string> seen;
    size_t total = 0;
    for (const auto& fold : splits.outer) {
        total += fold.test_ids.size();
        seen.insert(fold.test_ids.begin(), fold.test_ids.end());
    }
    EXPECT_EQ(total, ds.size());
    EXPECT_EQ(seen.size(), ds.size());
}

TEST(NestedSplit, NoGroupCrossesAnyBoundary) {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        const auto ds = generate_synthetic(imbalanced_spec(seed));
        const auto groups = channel_groups(ds);
        for (Target t : {Target::brand, Target::score}) {
            const auto splits = nested_split(ds, groups, t);
            for (const auto& fold : splits.outer) {
                std::set<GroupKey> test_groups;
                for (const auto& id : fold.test_ids) test_groups.insert(groups.at(id));
                for (const auto& inner : fold.inner) {
                    std::set<GroupKey> train_groups, valid_groups;
                    for (const auto& id : inner.train_ids) train_groups.insert(groups.at(id));
                    for (const auto& id : inner.valid_ids) valid_groups.insert(groups.at(id));
                    for (const auto& g : train_groups) {
                        EXPECT_FALSE(test_groups.count(g));
                        EXPECT_FALSE(valid_groups.count(g));
                    }
                    for (const auto& g : valid_groups) EXPECT_FALSE(test_groups.count(g));
                }
            }
        }
    }
}

TEST(NestedSplit, Deterministic) {
    const auto ds = generate_synthetic(imbalanced_spec(8));
    const auto groups = channel_groups(ds);
    const auto a = splits_to_json(SplitsFile{nested_split(ds, groups, Target::brand), groups}).dump();
    const auto b = splits_to_json(SplitsFile{nested_split(ds, groups, Target::brand), groups}).dump();
    EXPECT_EQ(a, b);
}

TEST(NestedSplit, TooFewGroupsRaises) {
    const auto ds = symmetric_dataset(3, 10, true);
    try {
        nested_split(ds, channel_groups(ds), Target::brand);
        FAIL() << "expected TooFewGroups";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), errc::too_few_groups);
    }
}

TEST(NestedSplit, StratificationQualityOnBalancedData) {
    // 25 groups whose members cover the 5 target levels uniformly
    const auto ds = symmetric_dataset(25, 5, true);
    const auto groups = channel_groups(ds);
    const auto splits = nested_split(ds, groups, Target::brand);

    const auto edges = quantile_edges(ds.targets(Target::brand), 5);
    std::vector<double> total_bins(5, 0.0);
    for (const auto& r : ds.records) total_bins[static_cast<size_t>(bin_of(r.brand_memorability, edges))] += 1;

    for (const auto& fold : splits.outer) {
        std::vector<double> fold_bins(5, 0.0);
        for (const auto& id : fold.test_ids)
            fold_bins[static_cast<size_t>(bin_of(ds.by_id(id).brand_memorability, edges))] += 1;
        for (size_t b = 0; b < 5; ++b) {
            const double share = total_bins[b] / 5.0;
            EXPECT_LE(std::abs(fold_bins[b] - share), std::max(2.0, 0.1 * share));
        }
    }
}

TEST(NestedSplit, JsonRoundTrip) {
    const auto ds = generate_synthetic(imbalanced_spec(70));
    const auto groups = channel_groups(ds);
    SplitsFile sf{nested_split(ds, groups, Target::score, 5, 5, 5, 99), groups};
    const auto j = splits_to_json(sf);
    const auto back = splits_from_json(j);
    EXPECT_EQ(splits_to_json(back).dump(), j.dump());
    EXPECT_EQ(back.splits.seed, 99u);
    EXPECT_EQ(back.splits.target, Target::score);
}

}  // namespace
