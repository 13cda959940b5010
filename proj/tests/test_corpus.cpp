#include "memfuse/corpus.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "memfuse/metrics.hpp"

namespace {

using namespace memfuse;
namespace fs = std::filesystem;

class TempDir {
  public:
    TempDir() {
        path_ = fs::temp_directory_path() / ("memfuse_test_" + std::to_string(::getpid()) + "_" +
                                             std::to_string(counter_++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    fs::path operator/(const std::string& name) const { return path_ / name; }

  private:
    static inline int counter_ = 0;
    fs::path path_;
};

std::string minimal_record(const std::string& id, double brand = 0.5, double score = 0.5,
                           const std::string& meta = R"({"views": 10.0})") {
    return R"({"id": ")" + id + R"(", "channel": "chA", "title": "t", "description": "d",)" +
           R"( "subtitles": "s", "numeric_metadata": )" + meta +
           R"(, "visual_block": [[0.1, 0.2]], "brand_memorability": )" + std::to_string(brand) +
           R"(, "memorability_score": )" + std::to_string(score) + "}";
}

SyntheticSpec small_spec(uint64_t seed = 7) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.n_channels = 5;
    spec.channel_sizes = {10, 10, 10, 10, 10};
    return spec;
}

bool records_equal(const VideoRecord& a, const VideoRecord& b) {
    return a.id == b.id && a.channel == b.channel && a.title == b.title && a.description == b.description &&
           a.subtitles == b.subtitles && a.numeric_metadata == b.numeric_metadata &&
           a.visual_block.rows() == b.visual_block.rows() && a.visual_block.cols() == b.visual_block.cols() &&
           a.visual_block == b.visual_block && a.brand_memorability == b.brand_memorability &&
           a.memorability_score == b.memorability_score;
}

TEST(Corpus, LoadPreservesOrder) {
    TempDir dir;
    const auto path = (dir / "data.jsonl").string();
    {
        std::ofstream out(path);
        out << minimal_record("v1") << "\n" << minimal_record("v2") << "\n";
    }
    const auto ds = load_dataset(path);
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.records[0].id, "v1");
    EXPECT_EQ(ds.records[1].id, "v2");
}

TEST(Corpus, DuplicateIdRejected) {
    TempDir dir;
    const auto path = (dir / "data.jsonl").string();
    {
        std::ofstream out(path);
        out << minimal_record("v1") << "\n" << minimal_record("v1") << "\n";
    }
    try {
        load_dataset(path);
        FAIL() << "expected DuplicateId";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), errc::duplicate_id);
    }
}

TEST(Corpus, TargetOutOfRangeRejected) {
    TempDir dir;
    const auto path = (dir / "data.jsonl").string();
    {
        std::ofstream out(path);
        out << minimal_record("v1", 1.2) << "\n";
    }
    try {
        load_dataset(path);
        FAIL() << "expected TargetOutOfRange";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), errc::target_out_of_range);
    }
}

TEST(Corpus, MalformedLineReportsLineNumber) {
    TempDir dir;
    const auto path = (dir / "data.jsonl").string();
    {
        std::ofstream out(path);
        out << minimal_record("v1") << "\n" << "{not json\n";
    }
    try {
        load_dataset(path);
        FAIL() << "expected MalformedLine";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), errc::malformed_line);
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}

TEST(Corpus, InconsistentSchemaRejected) {
    TempDir dir;
    const auto path = (dir / "meta.jsonl").string();
    {
        std::ofstream out(path);
        out << minimal_record("v1") << "\n"
            << minimal_record("v2", 0.5, 0.5, R"({"likes": 1.0})") << "\n";
    }
    try {
        load_dataset(path);
        FAIL() << "expected InconsistentSchema";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), errc::inconsistent_schema);
    }

    const auto path2 = (dir / "vis.jsonl").string();
    {
        std::ofstream out(path2);
        out << minimal_record("v1") << "\n";
        auto wide = minimal_record("v2");
        const auto pos = wide.find("[[0.1, 0.2]]");
        wide.replace(pos, std::string("[[0.1, 0.2]]").size(), "[[0.1, 0.2, 0.3]]");
        out << wide << "\n";
    }
    EXPECT_THROW(load_dataset(path2), Error);
}

TEST(Corpus, WriteLoadRoundTrip) {
    TempDir dir;
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        auto spec = small_spec(seed);
        spec.empty_subtitle_rate = 0.2;  // exercise the empty-subtitles representation
        const auto ds = generate_synthetic(spec);
        const auto path = (dir / ("round_" + std::to_string(seed) + ".jsonl")).string();
        write_dataset(ds, path);
        const auto loaded = load_dataset(path);
        ASSERT_EQ(loaded.size(), ds.size());
        for (size_t i = 0; i < ds.size(); ++i)
            EXPECT_TRUE(records_equal(ds.records[i], loaded.records[i])) << "record " << i;
        EXPECT_EQ(loaded.schema.metadata_keys, ds.schema.metadata_keys);
        EXPECT_EQ(loaded.schema.d_vis, ds.schema.d_vis);
    }
}

TEST(Corpus, SyntheticGenerationIsDeterministic) {
    const auto a = generate_synthetic(small_spec());
    const auto b = generate_synthetic(small_spec());
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(records_equal(a.records[i], b.records[i]));
}

TEST(Corpus, SyntheticChannelCounts) {
    const auto ds = generate_synthetic(small_spec());
    EXPECT_EQ(ds.size(), 50u);
    std::set<std::string> channels;
    for (const auto& r : ds.records) channels.insert(r.channel);
    EXPECT_EQ(channels.size(), 5u);
}

TEST(Corpus, DominantShareReplansChannelZero) {
    SyntheticSpec spec;
    spec.seed = 3;
    spec.n_channels = 12;
    spec.channel_sizes.assign(12, 28);  // 336 planned
    spec.channel_sizes[0] = 31;         // total 339
    spec.dominant_channel_share = 0.23;
    const auto ds = generate_synthetic(spec);
    EXPECT_EQ(ds.size(), 339u);
    size_t ch0 = 0;
    for (const auto& r : ds.records) ch0 += r.channel == "ch00" ? 1 : 0;
    EXPECT_EQ(ch0, 78u);  // round(0.23 * 339)
}

TEST(Corpus, PlantedSignalIsRecoverable) {
    auto spec = small_spec(21);
    spec.signal_weight = 0.4;
    spec.noise_std = 0.02;
    const auto corpus = generate_synthetic_with_latents(spec);
    EXPECT_GE(spearman(corpus.latents, corpus.dataset.targets(Target::brand)), 0.8);
    EXPECT_GE(spearman(corpus.latents, corpus.dataset.targets(Target::score)), 0.8);
}

TEST(Corpus, GeneratedRecordsPassTheLoaderValidator) {
    const auto ds = generate_synthetic(small_spec(9));
    EXPECT_NO_THROW(validate_dataset(ds.records));
}

TEST(Corpus, SummaryChannelCounts) {
    std::vector<VideoRecord> records;
    for (int i = 0; i < 10; ++i) {
        VideoRecord r;
        r.id = "v" + std::to_string(i);
        r.channel = i < 3 ? "A" : "B";
        r.brand_memorability = 0.1 * i;
        r.memorability_score = 0.1 * i;
        records.push_back(r);
    }
    const auto summary = summarize_dataset(validate_dataset(records), 5);
    EXPECT_EQ(summary.channel_counts.at("A"), 3u);
    EXPECT_EQ(summary.channel_counts.at("B"), 7u);
}

TEST(Corpus, QuantileEdgesMatchSortOracle) {
    // targets 0.0, 0.1, ..., 0.9 with 5 bins
    std::vector<VideoRecord> records;
    for (int i = 0; i < 10; ++i) {
        VideoRecord r;
        r.id = "v" + std::to_string(i);
        r.channel = "A";
        r.brand_memorability = 0.1 * i;
        r.memorability_score = 0.1 * i;
        records.push_back(r);
    }
    const auto summary = summarize_dataset(validate_dataset(records), 5);
    ASSERT_EQ(summary.brand_edges.size(), 4u);
    EXPECT_NEAR(summary.brand_edges[0], 0.18, 1e-12);
    EXPECT_NEAR(summary.brand_edges[1], 0.36, 1e-12);
    EXPECT_NEAR(summary.brand_edges[2], 0.54, 1e-12);
    EXPECT_NEAR(summary.brand_edges[3], 0.72, 1e-12);
}

TEST(Corpus, EmptyDatasetSummaryRaises) {
    Dataset empty;
    try {
        summarize_dataset(empty, 5);
        FAIL() << "expected EmptyDataset";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), errc::empty_dataset);
    }
}

TEST(Corpus, InvalidSpecRejected) {
    SyntheticSpec spec = small_spec();
    spec.n_channels = 1;
    spec.channel_sizes = {50};
    EXPECT_THROW(generate_synthetic(spec), Error);

    spec = small_spec();
    spec.channel_sizes = {1, 1, 1, 1, 1};
    EXPECT_THROW(generate_synthetic(spec), Error);

    spec = small_spec();
    spec.dominant_channel_share = 1.0;
    EXPECT_THROW(generate_synthetic(spec), Error);
}

TEST(Corpus, BinOfCountsStrictlySmallerEdges) {
    const std::vector<double> edges{0.2, 0.4, 0.6, 0.8};
    EXPECT_EQ(bin_of(0.1, edges), 0);
    EXPECT_EQ(bin_of(0.2, edges), 0);  // ties stay in the lower bin
    EXPECT_EQ(bin_of(0.5, edges), 2);
    EXPECT_EQ(bin_of(0.9, edges), 4);
}

}  // namespace
