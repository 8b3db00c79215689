#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "dcp/error.hpp"
#include "dcp/feature_io.hpp"
#include "dcp/encoders.hpp"
#include "dcp/selection.hpp"
#include "dcp/vocabulary.hpp"

using namespace dcp;

namespace {

TextEmbeddings vocab16() { return encode_text(default_vocabulary(16), 32); }

void expect_unit_rows(const Tensor& t, double tol) {
    for (std::size_t r = 0; r < t.rows(); ++r) EXPECT_NEAR(l2_norm(t.data().subspan(r * t.cols(), t.cols())), 1.0, tol);
}

std::string temp_path(const std::string& leaf) { return (std::filesystem::temp_directory_path() / leaf).string(); }

}  // namespace

TEST(ClassSignature, DeterministicAndDistinct) {
    const auto a = class_signature("cat"), b = class_signature("cat");
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_EQ(a.color, b.color);
    std::set<std::uint64_t> seeds;
    for (const auto& n : default_vocabulary(64)) {
        const auto s = class_signature(n);
        EXPECT_TRUE(seeds.insert(s.seed).second) << n;
        for (double c : s.color) {
            EXPECT_GE(c, 0.0);
            EXPECT_LE(c, 1.0);
        }
    }
    EXPECT_NE(class_signature("cat").seed, class_signature("dog").seed);
    EXPECT_THROW(class_signature(""), DomainError);
}

TEST(EncodeText, UnitRowsAndDeterminism) {
    const auto a = vocab16(), b = vocab16();
    EXPECT_EQ(a.e_t, b.e_t);
    expect_unit_rows(a.e_t, 1e-9);
    EXPECT_EQ(a.names.size(), 16u);
}

TEST(EncodeText, SingleTemplateIsTheTemplateVector) {
    const auto one = encode_text({"cat"}, 16, 1, 3);
    expect_unit_rows(one.e_t, 1e-12);
    const auto eight = encode_text({"cat"}, 16, 8, 3);
    // Averaging templates only perturbs the class direction.
    EXPECT_GT(dot(one.e_t.data(), eight.e_t.data()), 0.8);
}

TEST(EncodeText, DuplicateNamesRejected) { EXPECT_THROW(encode_text({"cat", "dog", "cat"}, 8), DomainError); }

TEST(EncodeText, SeenMask) {
    auto t = vocab16();
    set_seen(t, {"cat", "dog"});
    EXPECT_TRUE(t.seen[*t.find("cat")]);
    EXPECT_FALSE(t.seen[*t.find("car")]);
    EXPECT_THROW(set_seen(t, {"unicorn"}), DomainError);
}

TEST(GenerateScene, SingleRegionIsConstant) {
    const auto t = vocab16();
    const auto s = generate_scene(t, 1, 9);
    for (auto g : s.gt) EXPECT_EQ(g, s.gt[0]);
}

TEST(GenerateScene, ZeroNoisePaintsExactColors) {
    const auto t = vocab16();
    const auto s = generate_scene(t, 3, 4, {}, 0.0);
    for (std::size_t y = 0; y < s.height; ++y)
        for (std::size_t x = 0; x < s.width; ++x) {
            const auto color = class_signature(t.names[static_cast<std::size_t>(s.gt[y * s.width + x])]).color;
            for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(s.image.at(c, y, x), color[c]);
        }
}

TEST(GenerateScene, RegionCountMatchesDistinctLabels) {
    const auto t = vocab16();
    for (std::size_t n = 1; n <= 6; ++n) {
        const auto s = generate_scene(t, n, 100 + n);
        EXPECT_EQ(std::set<std::int32_t>(s.gt.begin(), s.gt.end()).size(), n);
        for (double v : s.image.data()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
    EXPECT_THROW(generate_scene(t, 0, 1), DomainError);
    EXPECT_THROW(generate_scene(t, 17, 1), DomainError);
}

TEST(EncodeImage, InvariantsHold) {
    const auto t = vocab16();
    const ImageEncoder enc({}, t.names);
    const auto v = enc.encode(generate_scene(t, 3, 2));
    EXPECT_EQ(v.f_patch.dims(), (Shape{64, 32}));
    expect_unit_rows(v.f_patch, 1e-9);
    expect_unit_rows(v.f_cls, 1e-9);
    for (std::size_t i = 0; i < 64; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 64; ++j) s += v.a_clip.at(i, j);
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
    ASSERT_EQ(v.f_v.size(), 2u);
    EXPECT_EQ(v.f_v[0].dims(), (Shape{8, 8, 8}));
    EXPECT_EQ(v.f_v[1].dims(), (Shape{8, 16, 16}));
}

TEST(EncodeImage, Deterministic) {
    const auto t = vocab16();
    const ImageEncoder enc({}, t.names);
    const auto scene = generate_scene(t, 2, 11);
    const auto a = enc.encode(scene), b = enc.encode(scene);
    EXPECT_EQ(a.f_patch, b.f_patch);
    EXPECT_EQ(a.f_cls, b.f_cls);
    EXPECT_EQ(a.a_clip, b.a_clip);
    EXPECT_EQ(a.f_v, b.f_v);
}

TEST(EncodeImage, RejectsIndivisibleExtent) {
    const auto t = vocab16();
    const ImageEncoder enc({}, t.names);
    EXPECT_THROW(enc.encode(uniform_scene(t, 0, {30, 32, 2})), ShapeError);
}

TEST(EncodeImage, AttentionMapIsNotUniform) {
    const auto t = vocab16();
    const ImageEncoder enc({}, t.names);
    const auto v = enc.encode(generate_scene(t, 2, 5));
    double lo = 1.0, hi = 0.0;
    for (double x : v.a_clip.data()) lo = std::min(lo, x), hi = std::max(hi, x);
    EXPECT_GT(hi - lo, 1e-3);
}

TEST(AlignmentProtocol, PaintedClassWinsImageScoring) {
    const auto t = vocab16();
    const ImageEncoder enc({}, t.names);
    for (std::size_t c = 0; c < 16; ++c) {
        const auto scores = compute_scores(enc.encode(uniform_scene(t, c)), t, 100.0);
        std::size_t best = 0;
        for (std::size_t j = 1; j < 16; ++j)
            if (scores.s_img[j] > scores.s_img[best]) best = j;
        EXPECT_EQ(best, c) << t.names[c];
    }
}

TEST(AlignmentProtocol, HundredNoisyScenesAndMargin) {
    const auto t = vocab16();
    const ImageEncoder enc({}, t.names);
    int hits = 0;
    double margin = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto scene = generate_scene(t, 1, s);
        const auto v = enc.encode(scene);
        const auto scores = compute_scores(v, t, 100.0);
        const auto gt = static_cast<std::size_t>(scene.gt[0]);
        std::size_t best = 0;
        for (std::size_t j = 1; j < 16; ++j)
            if (scores.s_img[j] > scores.s_img[best]) best = j;
        hits += best == gt;
        double m = 0.0;
        for (std::size_t i = 0; i < v.num_patches(); ++i) {
            double other = -2.0;
            for (std::size_t j = 0; j < 16; ++j)
                if (j != gt) other = std::max(other, scores.s_patch.at(j, i));
            m += scores.s_patch.at(gt, i) - other;
        }
        margin += m / static_cast<double>(v.num_patches());
    }
    EXPECT_GE(hits, 95);
    EXPECT_GE(margin / 100.0, 0.1);
}

TEST(FeatureFile, ChecksumMatchesReferenceVectors) {
    const std::string abc = "abc";
    EXPECT_EQ(xxhash64({}), 0xef46db3751d8e999ULL);
    EXPECT_EQ(xxhash64({reinterpret_cast<const std::uint8_t*>(abc.data()), 3}), 0x44bc2cf5ad770999ULL);
    std::vector<std::uint8_t> ramp(100);
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<std::uint8_t>(i);
    EXPECT_EQ(xxhash64(std::span(ramp).first(40)), 0xf5da40f1b11741e9ULL);
    EXPECT_EQ(xxhash64(ramp), 0x6ac1e58032166597ULL);
}

TEST(FeatureFile, RoundTripsBitExactly) {
    auto t = vocab16();
    set_seen(t, {"cat", "bus"});
    const ImageEncoder enc({}, t.names);
    const auto v = enc.encode(generate_scene(t, 2, 3));

    const auto vpath = temp_path("dcp_visual.dcpf"), tpath = temp_path("dcp_text.dcpf");
    save_features(v, vpath);
    save_features(t, tpath);
    const auto v2 = std::get<VisualFeatures>(load_features(vpath));
    const auto t2 = std::get<TextEmbeddings>(load_features(tpath));
    EXPECT_EQ(v2.f_patch, v.f_patch);
    EXPECT_EQ(v2.f_cls, v.f_cls);
    EXPECT_EQ(v2.a_clip, v.a_clip);
    EXPECT_EQ(v2.f_v, v.f_v);
    EXPECT_EQ(v2.grid_h, v.grid_h);
    EXPECT_EQ(t2.e_t, t.e_t);
    EXPECT_EQ(t2.names, t.names);
    EXPECT_EQ(t2.seen, t.seen);
    EXPECT_EQ(serialize_visual(v2), read_file(vpath));
    std::remove(vpath.c_str());
    std::remove(tpath.c_str());
}

TEST(FeatureFile, WrongMagicReportsOffsetZero) {
    auto bytes = serialize_text(vocab16());
    bytes[1] = 'X';
    try {
        deserialize_features(bytes);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
}

TEST(FeatureFile, TruncationNamesExpectedAndActual) {
    auto bytes = serialize_text(vocab16());
    const std::size_t header = 4 + 4 + 1 + 4 + 8;  // magic, version, kind, rank, dims
    bytes.resize(header + 100);
    try {
        deserialize_features(bytes);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), header);
        const std::string msg = e.what();
        EXPECT_NE(msg.find("expected " + std::to_string(16 * 32 * 8 + 8)), std::string::npos) << msg;
        EXPECT_NE(msg.find("got 100"), std::string::npos) << msg;
    }
}

TEST(FeatureFile, VersionAndChecksumErrors) {
    auto bytes = serialize_text(vocab16());
    auto bad_version = bytes;
    bad_version[4] = 7;
    try {
        deserialize_features(bad_version);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 4u);
    }
    auto flipped = bytes;
    flipped[40] ^= 0x01;
    EXPECT_THROW(deserialize_features(flipped), FormatError);
}
