#include <gtest/gtest.h>

#include "test_support.hpp"
#include "zsoc/embedding_store.hpp"

#include <cstring>
#include <random>

using namespace zsoc;
using zsoc::testing::make_set;
using zsoc::testing::temp_dir;

namespace {

Errc decode_error(const std::string& bytes) {
    try {
        decode_embedding_set(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected decode to fail";
    return Errc::io_failure;
}

} // namespace

TEST(EmbeddingStore, SingleRowRoundTrip) {
    auto dir = temp_dir("store_single");
    auto set = make_set(EmbeddingKind::image, 2, {{1.0f, 0.0f}}, {"cat"});
    set.ids = {"img0"};
    write_embedding_set(set, dir / "one.emb1");
    const auto back = read_embedding_set(dir / "one.emb1");
    EXPECT_EQ(back.dim, 2u);
    EXPECT_EQ(back.count(), 1u);
    EXPECT_EQ(back.ids[0], "img0");
    EXPECT_EQ(back, set);
}

TEST(EmbeddingStore, HeaderLayoutIsLittleEndian) {
    auto set = make_set(EmbeddingKind::text, 3, {{1.0f, 2.0f, 3.0f}}, {"x"});
    set.pre_normalized = true;
    const auto bytes = encode_embedding_set(set);
    ASSERT_GE(bytes.size(), 24u);
    EXPECT_EQ(bytes.substr(0, 4), "EMB1");
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);
    EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0);
    EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 1); // flags bit0
    EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 3); // dim
    EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 1); // count
    const std::uint32_t meta_len = static_cast<unsigned char>(bytes[20]) | static_cast<unsigned char>(bytes[21]) << 8;
    EXPECT_EQ(bytes.size(), 24u + meta_len + 3 * 4);
    // 1.0f = 0x3F800000 little-endian
    const auto payload = bytes.substr(24 + meta_len, 4);
    EXPECT_EQ(payload, std::string("\x00\x00\x80\x3F", 4));
}

TEST(EmbeddingStore, EmptySetRoundTrips) {
    auto dir = temp_dir("store_empty");
    EmbeddingSet set;
    set.dim = 4;
    write_embedding_set(set, dir / "empty.emb1");
    const auto back = read_embedding_set(dir / "empty.emb1");
    EXPECT_EQ(back.count(), 0u);
    EXPECT_EQ(back, set);
}

TEST(EmbeddingStore, RandomSetsRoundTripByteIdentical) {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 1000; ++i) {
        const auto set = zsoc::testing::random_set(rng);
        const auto bytes = encode_embedding_set(set);
        const auto back = decode_embedding_set(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
        ASSERT_EQ(std::memcmp(back.vectors.data(), set.vectors.data(), set.vectors.size() * 4), 0);
        ASSERT_EQ(back, set);
        ASSERT_EQ(encode_embedding_set(back), bytes);
    }
}

TEST(EmbeddingStore, TruncatedPayloadRejected) {
    auto set = make_set(EmbeddingKind::image, 2, {{1, 0}, {0, 1}, {1, 1}}, {"a", "b", "c"});
    auto bytes = encode_embedding_set(set);
    bytes.resize(bytes.size() - 8); // drop the third row
    EXPECT_EQ(decode_error(bytes), Errc::truncated_payload);
}

TEST(EmbeddingStore, BadMagicAndVersion) {
    auto set = make_set(EmbeddingKind::image, 1, {{1}}, {"a"});
    auto bytes = encode_embedding_set(set);
    auto bad = bytes;
    bad[3] = '2';
    EXPECT_EQ(decode_error(bad), Errc::bad_magic);
    bad = bytes;
    bad[4] = 2;
    EXPECT_EQ(decode_error(bad), Errc::version_unsupported);
    EXPECT_EQ(decode_error("EM"), Errc::bad_magic);
}

TEST(EmbeddingStore, HeaderCountDisagreesWithMetadata) {
    auto set = make_set(EmbeddingKind::image, 1, {{1}, {2}}, {"a", "b"});
    auto bytes = encode_embedding_set(set);
    bytes[12] = 3;
    EXPECT_EQ(decode_error(bytes), Errc::metadata_mismatch);
}

TEST(EmbeddingStore, DuplicateIdRejected) {
    auto set = make_set(EmbeddingKind::image, 1, {{1}, {2}}, {"a", "b"});
    set.ids = {"same", "same"};
    EXPECT_THROW(encode_embedding_set(set), Error);
    // Hand-build the file to exercise the reader path.
    set.ids = {"same", "sam2"};
    auto bytes = encode_embedding_set(set);
    const auto pos = bytes.find("sam2");
    bytes.replace(pos, 4, "same");
    EXPECT_EQ(decode_error(bytes), Errc::duplicate_id);
}

TEST(EmbeddingStore, NonFiniteRejected) {
    auto set = make_set(EmbeddingKind::image, 1, {{1}}, {"a"});
    auto bytes = encode_embedding_set(set);
    bytes.replace(bytes.size() - 4, 4, std::string("\x00\x00\xC0\x7F", 4)); // NaN
    EXPECT_EQ(decode_error(bytes), Errc::invalid_data);
}

TEST(EmbeddingStore, TaxonomyLeafMustEqualLabel) {
    auto set = make_set(EmbeddingKind::image, 1, {{1}}, {"a1"});
    set.taxonomy_paths = std::vector<TaxonomyPath>{{"root", "A", "a2"}};
    EXPECT_THROW(validate(set), Error);
    set.taxonomy_paths = std::vector<TaxonomyPath>{{"root", "A", "a1"}};
    EXPECT_NO_THROW(validate(set));
}

TEST(EmbeddingStore, ReadsExtractorWrittenFile) {
    const auto set = read_embedding_set(std::filesystem::path(ZSOC_TEST_DATA) / "extractor_text_2labels.emb1");
    EXPECT_EQ(set.kind, EmbeddingKind::text);
    EXPECT_EQ(set.count(), 2u);
    EXPECT_EQ(set.dim, 4u);
    EXPECT_EQ(set.labels, (std::vector<std::string>{"cat", "dog"}));
    EXPECT_EQ(set.model_tag, "ViT-B/32");
    EXPECT_FLOAT_EQ(set.row(0)[1], -1.5f);
    EXPECT_FLOAT_EQ(set.row(1)[3], 2.0f);
}

TEST(Select, LabelPredicatePreservesOrder) {
    auto set = make_set(EmbeddingKind::image, 1, {{1}, {2}, {3}}, {"cat", "dog", "cat"});
    EXPECT_EQ(select(set, LabelEquals{"cat"}), (std::vector<std::size_t>{0, 2}));
    EXPECT_TRUE(select(set, LabelEquals{"cow"}).empty());
}

TEST(Select, PathPrefix) {
    auto set = make_set(EmbeddingKind::image, 1, {{1}, {2}}, {"a1", "b1"});
    set.taxonomy_paths = std::vector<TaxonomyPath>{{"root", "A", "a1"}, {"root", "B", "b1"}};
    EXPECT_EQ(select(set, PathPrefix{{"root", "A"}}), (std::vector<std::size_t>{0}));
    EXPECT_EQ(select(set, PathPrefix{{"root"}}), (std::vector<std::size_t>{0, 1}));
}

TEST(Select, LabelAndLeafPrefixAgreeAndPrefixesNest) {
    std::mt19937_64 rng(3);
    const auto tax = Taxonomy::from_json(zsoc::testing::toy_taxonomy_json());
    const auto set = zsoc::testing::images_for_taxonomy(tax, 3, 2, rng);
    for (auto leaf : tax.leaves()) {
        const auto path = tax.path_of(leaf);
        EXPECT_EQ(select(set, LabelEquals{path.back()}), select(set, PathPrefix{path}));
        const auto parent = select(set, PathPrefix{{path.begin(), path.end() - 1}});
        for (auto i : select(set, PathPrefix{path}))
            EXPECT_NE(std::find(parent.begin(), parent.end(), i), parent.end());
    }
    const auto a = select(set, PathPrefix{{"root", "A"}});
    const auto b = select(set, PathPrefix{{"root", "B"}});
    for (auto i : a) EXPECT_EQ(std::find(b.begin(), b.end(), i), b.end());
}

TEST(Taxonomy, ParsesAndNavigates) {
    const auto tax = Taxonomy::from_json(zsoc::testing::toy_taxonomy_json());
    EXPECT_EQ(tax.size(), 7u);
    ASSERT_EQ(tax.leaves().size(), 4u);
    const auto a1 = *tax.find({"root", "A", "a1"});
    EXPECT_EQ(tax.path_of(*tax.ancestor(a1, 1)), (TaxonomyPath{"root", "A"}));
    EXPECT_FALSE(tax.ancestor(a1, 3).has_value());
    EXPECT_FALSE(tax.find({"root", "a1"}).has_value());
    EXPECT_EQ(Taxonomy::from_json(tax.to_json()).to_json(), tax.to_json());
}

TEST(Taxonomy, SameNameAllowedUnderDifferentParents) {
    const auto doc = nlohmann::json::parse(
        R"({"name":"Life","children":[{"name":"Plants","children":[{"name":"Common"}]},
                                     {"name":"Animals","children":[{"name":"Common"}]}]})");
    const auto tax = Taxonomy::from_json(doc);
    EXPECT_NE(*tax.find({"Life", "Plants", "Common"}), *tax.find({"Life", "Animals", "Common"}));
}

TEST(Taxonomy, DuplicateSiblingRejected) {
    const auto doc = nlohmann::json::parse(R"({"name":"r","children":[{"name":"x"},{"name":"x"}]})");
    try {
        Taxonomy::from_json(doc);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::invariant_violation);
    }
}

TEST(Taxonomy, CheckPathsFlagsUnknownLeaf) {
    const auto tax = Taxonomy::from_json(zsoc::testing::toy_taxonomy_json());
    auto set = make_set(EmbeddingKind::image, 1, {{1}}, {"c1"});
    set.taxonomy_paths = std::vector<TaxonomyPath>{{"root", "C", "c1"}};
    EXPECT_THROW(tax.check_paths(set), Error);
}

TEST(PrototypeTable, FirstSetWinsAndMissingThrows) {
    const auto a = zsoc::testing::make_text_set(2, {{1, 0}}, {"x"});
    const auto b = zsoc::testing::make_text_set(2, {{0, 1}, {1, 1}}, {"x", "y"});
    PrototypeTable t(a);
    t.add(b);
    EXPECT_EQ(t.at("x")[0], 1.0f);
    EXPECT_EQ(t.at("y")[1], 1.0f);
    try {
        t.at("z");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::missing_prototype);
    }
}
