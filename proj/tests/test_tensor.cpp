// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "conflux/checkpoint.hpp"
#include "conflux/errors.hpp"
#include "conflux/tensor.hpp"
#include "oracles.hpp"

using namespace conflux;

namespace {

std::string le64(std::uint64_t v) {
    std::string s(8, '\0');
    for (int i = 0; i < 8; ++i) s[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    return s;
}

std::string f32_bytes(std::initializer_list<float> values) {
    std::string s;
    for (float f : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
    return s;
}

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "conflux_tensor_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Checkpoint random_checkpoint(std::mt19937& gen) {
    Checkpoint c;
    std::uniform_int_distribution<int> count(1, 5), extent(0, 6), rank(0, 3);
    const int n = count(gen);
    for (int i = 0; i < n; ++i) {
        Shape shape;
        for (int r = rank(gen); r > 0; --r) shape.push_back(static_cast<std::uint64_t>(extent(gen)));
        const auto values = oracle::random_vector(gen, element_count(shape), -100.0f, 100.0f);
        Dtype dtype = (i % 2 == 0) ? Dtype::F32 : Dtype::F16;
        std::vector<float> data = values;
        if (dtype == Dtype::F16) {
            for (auto& v : data) v = half_to_float(float_to_half(v));
        }
        c.add("t" + std::to_string(i) + ".w", Tensor(shape, data, dtype));
    }
    c.metadata()["origin"] = "random";
    return c;
}

} // namespace

TEST(Tensor, ShapeMustMatchData) {
    EXPECT_THROW(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), ValidationError);
    EXPECT_NO_THROW(Tensor({0, 3}, {}));
    EXPECT_EQ(Tensor::zeros({2, 3}).size(), 6u);
}

TEST(Tensor, HalfConversionRoundsToNearestEven) {
    EXPECT_EQ(float_to_half(1.0f), 0x3c00);
    EXPECT_EQ(float_to_half(-2.0f), 0xc000);
    EXPECT_EQ(float_to_half(65504.0f), 0x7bff);
    // 1 + 2^-11 sits halfway between 1 and 1 + 2^-10: ties to even (1.0).
    EXPECT_EQ(float_to_half(1.0f + std::ldexp(1.0f, -11)), 0x3c00);
    EXPECT_EQ(float_to_half(1.0f + 3 * std::ldexp(1.0f, -11)), 0x3c02);
    EXPECT_EQ(half_to_float(0x0001), std::ldexp(1.0f, -24));
    for (std::uint32_t h = 0; h < 0x7c00; ++h) {
        ASSERT_EQ(float_to_half(half_to_float(static_cast<std::uint16_t>(h))), h) << h;
    }
}

TEST(Lincomb, HalfOfA) {
    const auto out = lincomb(Tensor::vector({2, 4}), Tensor::vector({0, 0}), 0.5f, 0.5f);
    EXPECT_EQ(out, Tensor::vector({1, 2}));
}

TEST(Lincomb, IdentityCoefficients) {
    const auto a = Tensor::vector({1.5f, -2.25f, 3.0f});
    EXPECT_EQ(lincomb(a, Tensor::vector({9, 9, 9}), 1.0f, 0.0f), a);
}

TEST(Lincomb, MatchesScalarLoop) {
    const auto a = Tensor::vector({1, 2, 3});
    const auto b = Tensor::vector({4, 5, 6});
    const auto out = lincomb(a, b, 0.3f, 0.7f);
    const float expect[] = {3.1f, 4.1f, 5.1f};
    for (std::size_t i = 0; i < 3; ++i) {
        const float loop = 0.3f * a[i] + 0.7f * b[i];
        EXPECT_EQ(out[i], loop);
        EXPECT_NEAR(out[i], expect[i], 1e-6);
    }
}

TEST(Lincomb, SwappedArgumentsAreBitIdentical) {
    std::mt19937 gen(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto a = Tensor::vector(oracle::random_vector(gen, 64));
        const auto b = Tensor::vector(oracle::random_vector(gen, 64));
        const auto coef = oracle::random_vector(gen, 2);
        EXPECT_EQ(lincomb(a, b, coef[0], coef[1]), lincomb(b, a, coef[1], coef[0]));
    }
}

TEST(Lincomb, ShapeMismatchThrows) {
    EXPECT_THROW(lincomb(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3}), 1, 1), ValidationError);
}

TEST(InnerProducts, OrthogonalUnitVectors) {
    const auto r = inner_products(Tensor::vector({1, 0}), Tensor::vector({0, 1}));
    EXPECT_EQ(r.dot, 0.0);
    EXPECT_EQ(r.norm_a, 1.0);
    EXPECT_EQ(r.norm_b, 1.0);
}

TEST(InnerProducts, ThreeFourFive) {
    const auto r = inner_products(Tensor::vector({3, 4}), Tensor::vector({3, 4}));
    EXPECT_EQ(r.dot, 25.0);
    EXPECT_EQ(r.norm_a, 5.0);
    EXPECT_EQ(r.norm_b, 5.0);
}

TEST(InnerProducts, MatchesScalarLoopOracle) {
    std::mt19937 gen(5);
    for (std::size_t n : {64u, 1000u, 100000u}) {
        const auto av = oracle::random_vector(gen, n), bv = oracle::random_vector(gen, n);
        long double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < n; ++i) {
            dot += static_cast<long double>(av[i]) * bv[i];
            na += static_cast<long double>(av[i]) * av[i];
            nb += static_cast<long double>(bv[i]) * bv[i];
        }
        const auto r = inner_products(Tensor::vector(av), Tensor::vector(bv));
        EXPECT_NEAR(r.dot, static_cast<double>(dot), 1e-6 * std::sqrt(static_cast<double>(na * nb)));
        EXPECT_NEAR(r.norm_a, std::sqrt(static_cast<double>(na)), 1e-6 * std::sqrt(static_cast<double>(na)));
        EXPECT_NEAR(r.norm_b, std::sqrt(static_cast<double>(nb)), 1e-6 * std::sqrt(static_cast<double>(nb)));
    }
}

TEST(InnerProducts, ShapeMismatchThrows) {
    EXPECT_THROW(inner_products(Tensor::vector({1}), Tensor::vector({1, 2})), ValidationError);
}

TEST(Checkpoint, ParsesHandBuiltFile) {
    const std::string header = R"({"w":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})";
    const std::string bytes = le64(header.size()) + header + f32_bytes({1.0f, 2.0f});
    const auto c = parse_checkpoint(bytes);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c.entries()[0].first, "w");
    EXPECT_EQ(c.at("w"), Tensor::vector({1.0f, 2.0f}));
}

TEST(Checkpoint, WriterProducesPaddedHandBuiltBytes) {
    Checkpoint c;
    c.add("w", Tensor::vector({1.0f, 2.0f}));
    std::string header = R"({"w":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})";
    while (header.size() % 8 != 0) header.push_back(' ');
    EXPECT_EQ(serialize_checkpoint(c), le64(header.size()) + header + f32_bytes({1.0f, 2.0f}));
}

TEST(Checkpoint, EmptyMap) {
    const std::string header = "{}";
    const auto c = parse_checkpoint(le64(header.size()) + header);
    EXPECT_TRUE(c.empty());
    EXPECT_TRUE(parse_checkpoint(serialize_checkpoint(Checkpoint{})).empty());
}

TEST(Checkpoint, TruncatedPayloadNamesTensor) {
    const std::string header = R"({"w":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})";
    const std::string bytes = le64(header.size()) + header + f32_bytes({1.0f});
    try {
        parse_checkpoint(bytes);
        FAIL() << "expected a FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("truncated payload"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos) << e.what();
    }
}

TEST(Checkpoint, RejectsMalformedHeaders) {
    auto file = [](const std::string& header, const std::string& payload) {
        return le64(header.size()) + header + payload;
    };
    const std::string eight = f32_bytes({1, 2});
    EXPECT_THROW(parse_checkpoint("abc"), FormatError);
    EXPECT_THROW(parse_checkpoint(le64(100) + "{}"), FormatError);
    EXPECT_THROW(parse_checkpoint(file("{not json", "")), FormatError);
    EXPECT_THROW(parse_checkpoint(file(R"({"w":{"dtype":"I8","shape":[2],"data_offsets":[0,2]}})", "ab")), FormatError);
    EXPECT_THROW(parse_checkpoint(file(R"({"w":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}})", eight)), FormatError);
    EXPECT_THROW(parse_checkpoint(file(R"({"w":{"dtype":"F32","shape":[-2],"data_offsets":[0,8]}})", eight)), FormatError);
    EXPECT_THROW(parse_checkpoint(file(R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
                                       R"("v":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})",
                                       eight)),
                 FormatError);
    EXPECT_THROW(parse_checkpoint(file(R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[4,12]}})", eight)),
                 FormatError);
}

TEST(Checkpoint, OverlapErrorNamesTensor) {
    const std::string header = R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},)"
                               R"("b":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})";
    try {
        parse_checkpoint(le64(header.size()) + header + f32_bytes({1, 2}));
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos) << e.what();
    }
}

TEST(Checkpoint, AcceptsF16AndMetadata) {
    const std::string header =
        R"({"__metadata__":{"k":"v"},"h":{"dtype":"F16","shape":[2],"data_offsets":[0,4]}})";
    const std::string payload("\x00\x3c\x00\xc0", 4); // 1.0, -2.0
    const auto c = parse_checkpoint(le64(header.size()) + header + payload);
    EXPECT_EQ(c.at("h").dtype(), Dtype::F16);
    EXPECT_EQ(c.at("h")[0], 1.0f);
    EXPECT_EQ(c.at("h")[1], -2.0f);
    EXPECT_EQ(c.metadata().at("k"), "v");
    EXPECT_EQ(serialize_checkpoint(parse_checkpoint(serialize_checkpoint(c))), serialize_checkpoint(c));
}

TEST(Checkpoint, RandomRoundTripIsExact) {
    std::mt19937 gen(3);
    for (int trial = 0; trial < 100; ++trial) {
        const auto c = random_checkpoint(gen);
        const auto bytes = serialize_checkpoint(c);
        const auto back = parse_checkpoint(bytes);
        ASSERT_EQ(back, c);
        ASSERT_EQ(serialize_checkpoint(back), bytes);
    }
}

TEST(Checkpoint, FileRoundTripAndRepeatableWrites) {
    std::mt19937 gen(4);
    const auto c = random_checkpoint(gen);
    const auto p1 = temp_file("a.safetensors"), p2 = temp_file("b.safetensors");
    write_checkpoint(c, p1);
    write_checkpoint(c, p2);
    EXPECT_EQ(read_checkpoint(p1), c);
    EXPECT_EQ(slurp(p1), slurp(p2));
}

TEST(Checkpoint, PreservesInsertionOrder) {
    Checkpoint c;
    c.add("zeta", Tensor::vector({1}));
    c.add("alpha", Tensor::vector({2}));
    const auto back = parse_checkpoint(serialize_checkpoint(c));
    EXPECT_EQ(back.entries()[0].first, "zeta");
    EXPECT_EQ(back.entries()[1].first, "alpha");
}

TEST(Checkpoint, DuplicateNamesRejectedBeforeWrite) {
    Checkpoint c;
    c.add("w", Tensor::vector({1}));
    EXPECT_THROW(c.add("w", Tensor::vector({2})), ValidationError);
    c.add_unchecked("w", Tensor::vector({2}));
    const auto p = temp_file("dup.safetensors");
    std::filesystem::remove(p);
    EXPECT_THROW(write_checkpoint(c, p), ValidationError);
    EXPECT_FALSE(std::filesystem::exists(p));
    EXPECT_THROW(c.add("", Tensor::vector({1})), ValidationError);
}

TEST(Checkpoint, MissingFileIsIoError) {
    EXPECT_THROW(read_checkpoint(temp_file("does-not-exist.safetensors")), IoError);
}

TEST(Alignment, IdenticalCheckpointsAreAligned) {
    Checkpoint a;
    a.add("w", Tensor::vector({1, 2}));
    EXPECT_TRUE(validate_aligned(a, a).aligned());
}

TEST(Alignment, MissingInB) {
    Checkpoint a, b;
    a.add("head.w", Tensor::vector({1}));
    a.add("body.w", Tensor::vector({1}));
    b.add("body.w", Tensor::vector({1}));
    const auto r = validate_aligned(a, b);
    EXPECT_EQ(r.missing_in_b, std::vector<std::string>{"head.w"});
    EXPECT_TRUE(r.missing_in_a.empty());
    EXPECT_THROW(require_aligned(a, b, "test"), ValidationError);
}

TEST(Alignment, ShapeConflict) {
    Checkpoint a, b;
    a.add("w", Tensor::vector({1, 2}));
    b.add("w", Tensor::vector({1, 2, 3}));
    const auto r = validate_aligned(a, b);
    ASSERT_EQ(r.shape_conflicts.size(), 1u);
    EXPECT_EQ(r.shape_conflicts[0].name, "w");
    EXPECT_EQ(r.shape_conflicts[0].shape_a, Shape{2});
    EXPECT_EQ(r.shape_conflicts[0].shape_b, Shape{3});
}
