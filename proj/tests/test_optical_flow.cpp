#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "avr/optical_flow.hpp"
#include "support/synthetic.hpp"

using namespace avr;
using avr::testing::Texture;

namespace {

RgbImage solid(int w, int h, float r, float g, float b) {
    return {Plane<float>(w, h, r), Plane<float>(w, h, g), Plane<float>(w, h, b)};
}

GrayImage ramp(int w, int h) {
    GrayImage img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img(x, y) = static_cast<float>(x) / (w - 1);
    return img;
}

FlowField constant_flow(int w, int h, float u, float v) {
    FlowField f(w, h);
    std::fill(f.u.begin(), f.u.end(), u);
    std::fill(f.v.begin(), f.v.end(), v);
    return f;
}

double mean_abs_diff(const GrayImage& a, const GrayImage& b, int margin) {
    double s = 0;
    int n = 0;
    for (int y = margin; y < a.height - margin; ++y)
        for (int x = margin; x < a.width - margin; ++x) {
            s += std::abs(a(x, y) - b(x, y));
            ++n;
        }
    return s / n;
}

}  // namespace

TEST(ToGray, Examples) {
    EXPECT_EQ(to_gray(solid(4, 3, 0, 0, 0)).data, std::vector<float>(12, 0.f));
    for (float v : to_gray(solid(4, 3, 1, 1, 1)).data) EXPECT_NEAR(v, 1.0f, 1e-6f);
    for (float v : to_gray(solid(4, 3, 1, 0, 0)).data) EXPECT_FLOAT_EQ(v, 0.299f);
}

TEST(ToGray, ShapeMismatch) {
    RgbImage bad{Plane<float>(4, 3), Plane<float>(4, 3), Plane<float>(3, 4)};
    EXPECT_THROW(to_gray(bad), Error);
}

TEST(WarpBilinear, ZeroFlowIsIdentity) {
    const auto img = Texture(1).render(20, 16);
    EXPECT_EQ(warp_bilinear(img, FlowField(20, 16)), img);
}

TEST(WarpBilinear, IntegerShiftMatchesDirectIndexing) {
    const auto img = ramp(10, 4);
    const auto out = warp_bilinear(img, constant_flow(10, 4, 1, 0));
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 10; ++x) EXPECT_FLOAT_EQ(out(x, y), img(std::min(x + 1, 9), y));
}

TEST(WarpBilinear, HalfPixelIsMidpoint) {
    GrayImage img(2, 1);
    img(0, 0) = 0.f;
    img(1, 0) = 1.f;
    EXPECT_FLOAT_EQ(warp_bilinear(img, constant_flow(2, 1, 0.5f, 0))(0, 0), 0.5f);
}

TEST(WarpBilinear, ShapeMismatch) { EXPECT_THROW(warp_bilinear(ramp(4, 4), FlowField(4, 5)), Error); }

TEST(TvL1, IdenticalFramesGiveNearZeroFlow) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto img = Texture(seed).render(64, 64);
        EXPECT_LT(avr::testing::mean_magnitude(tvl1_flow(img, img)), 0.05);
    }
}

TEST(TvL1, RecoversSyntheticShiftBothDirections) {
    const Texture tex(42);
    const auto a = tex.render(64, 64), b = tex.render(64, 64, 3, 0);
    EXPECT_LT(avr::testing::mean_endpoint_error(tvl1_flow(a, b), 3, 0, 5), 0.3);
    EXPECT_LT(avr::testing::mean_endpoint_error(tvl1_flow(b, a), -3, 0, 5), 0.3);
}

TEST(TvL1, RecoversFractionalDiagonalShift) {
    const Texture tex(9);
    const auto a = tex.render(80, 64), b = tex.render(80, 64, 1.5, -2.25);
    EXPECT_LT(avr::testing::mean_endpoint_error(tvl1_flow(a, b), 1.5, -2.25, 5), 0.3);
}

TEST(TvL1, EnergyNonIncreasingAcrossFinestWarps) {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        const Texture tex(seed);
        const auto a = tex.render(64, 64), b = tex.render(64, 64, 3, 1);
        const auto r = tvl1_flow_detailed(a, b, {});
        ASSERT_EQ(r.finest_energies.size(), 5u);
        for (std::size_t i = 1; i < r.finest_energies.size(); ++i)
            EXPECT_LE(r.finest_energies[i], r.finest_energies[i - 1] + 1e-6) << "seed " << seed;
        EXPECT_NEAR(r.finest_energies.back(), tvl1_energy(a, b, r.flow, 0.15), 1e-3 * r.finest_energies.back());
    }
}

TEST(TvL1, RecoveredFlowReducesWarpResidualFivefold) {
    const Texture tex(5);
    const auto a = tex.render(64, 64), b = tex.render(64, 64, 3, 0);
    const auto flow = tvl1_flow(a, b);
    const double before = mean_abs_diff(a, b, 0);
    const double after = mean_abs_diff(a, warp_bilinear(b, flow), 0);
    EXPECT_LT(after * 5, before);
}

TEST(TvL1, DeterministicBitIdentical) {
    const Texture tex(77);
    const auto a = tex.render(48, 40), b = tex.render(48, 40, -1.25, 0.5);
    EXPECT_EQ(tvl1_flow(a, b), tvl1_flow(a, b));
}

TEST(TvL1, ConstantFramesAreLowConfidenceZeroFlow) {
    const GrayImage a(32, 32, 0.4f), b(32, 32, 0.7f);
    const auto r = tvl1_flow_detailed(a, b, {});
    EXPECT_TRUE(r.low_confidence);
    EXPECT_EQ(r.flow, FlowField(32, 32));
}

TEST(TvL1, ReducesScalesForSmallImages) {
    const auto img = Texture(3).render(64, 64);
    EXPECT_EQ(tvl1_flow_detailed(img, img, {}).scales_used, 3);  // 64, 32, 16
    const auto tiny = Texture(3).render(20, 24);
    EXPECT_EQ(tvl1_flow_detailed(tiny, tiny, {}).scales_used, 1);
}

TEST(TvL1, ShapeMismatchAndBadParams) {
    EXPECT_THROW(tvl1_flow(GrayImage(16, 16), GrayImage(16, 17)), Error);
    TvL1Params p;
    p.tau = 0.3;
    EXPECT_THROW(p.validate(), Error);
    p = {};
    p.zoom = 1.0;
    EXPECT_THROW(p.validate(), Error);
}

TEST(NormalizeFlow, Examples) {
    auto ch = normalize_flow(FlowField(5, 4), 20);
    for (double v : ch.horizontal.data) EXPECT_EQ(v, 0.5);
    for (double v : ch.vertical.data) EXPECT_EQ(v, 0.5);
    ch = normalize_flow(constant_flow(5, 4, 20, 0), 20);
    for (double v : ch.horizontal.data) EXPECT_EQ(v, 1.0);
    ch = normalize_flow(constant_flow(5, 4, -40, 0), 20);
    for (double v : ch.horizontal.data) EXPECT_EQ(v, 0.0);
}

TEST(NormalizeFlow, NonFiniteNamesPixel) {
    auto f = FlowField(4, 3);
    f.v[2 * 4 + 1] = std::numeric_limits<float>::quiet_NaN();
    try {
        normalize_flow(f, 20);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numeric);
        EXPECT_NE(std::string(e.what()).find("(1, 2)"), std::string::npos);
    }
    EXPECT_THROW(normalize_flow(f, 0), Error);
}

TEST(NormalizeFlow, PropertyInvertibleAndIdempotentUnderClamp) {
    Rng rng(8);
    FlowField f(16, 16);
    for (int trial = 0; trial < 50; ++trial) {
        const double max_disp = rng.uniform(0.5, 30);
        for (std::size_t i = 0; i < f.size(); ++i) {
            f.u[i] = static_cast<float>(rng.uniform(-max_disp, max_disp));
            f.v[i] = static_cast<float>(rng.uniform(-max_disp, max_disp));
        }
        const auto ch = normalize_flow(f, max_disp);
        const auto back = denormalize_flow(ch, max_disp);
        for (std::size_t i = 0; i < f.size(); ++i) {
            EXPECT_LT(std::abs(back.u[i] - f.u[i]), 1e-6 * std::max(1.0, max_disp));
            EXPECT_LT(std::abs(back.v[i] - f.v[i]), 1e-6 * std::max(1.0, max_disp));
        }
        // Re-clamping an already clamped field changes nothing.
        auto wild = f;
        for (auto& x : wild.u) x *= 3;
        const auto once = normalize_flow(wild, max_disp);
        const auto twice = normalize_flow(denormalize_flow(once, max_disp), max_disp);
        for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(once.horizontal.data[i], twice.horizontal.data[i], 1e-6);
    }
}

TEST(FlowFile, LayoutIsBitExact) {
    FlowField f(2, 1);
    f.u = {1.0f, -2.5f};
    f.v = {0.0f, 3.0f};
    const auto bytes = encode_flow_file(f);
    ASSERT_EQ(bytes.size(), 4u + 8 + 16);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PFLW");
    EXPECT_EQ(bytes[4], 2);
    EXPECT_EQ(bytes[8], 1);
    // 1.0f = 0x3F800000 little-endian
    EXPECT_EQ(bytes[12], 0x00);
    EXPECT_EQ(bytes[15], 0x3F);
    EXPECT_EQ(decode_flow_file(bytes), f);
}

TEST(FlowFile, RoundTripAndTruncation) {
    const Texture tex(4);
    const auto flow = tvl1_flow(tex.render(32, 32), tex.render(32, 32, 1, 1));
    const auto bytes = encode_flow_file(flow);
    EXPECT_EQ(decode_flow_file(bytes), flow);
    EXPECT_EQ(encode_flow_file(decode_flow_file(bytes)), bytes);
    auto cut = bytes;
    cut.pop_back();
    EXPECT_THROW(decode_flow_file(cut), Error);
    cut = bytes;
    cut[0] = 'X';
    EXPECT_THROW(decode_flow_file(cut), Error);
}
