#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "dcp/decoder.hpp"
#include "dcp/error.hpp"
#include "dcp/gradsuite.hpp"
#include "dcp/kernels.hpp"
#include "dcp/rng.hpp"

using namespace dcp;

namespace {

struct DecoderInputs {
    SEDParams params;
    VisualFeatures vis;
    Tensor f_cv, raw;
};

DecoderInputs make_inputs(std::uint64_t seed, std::size_t grid, std::size_t dim_c, std::size_t n_s, std::size_t cs,
                          std::size_t window = 4) {
    Rng rng(seed);
    DecoderInputs in;
    const std::size_t N = grid * grid, cv = 4;
    in.params = SEDParams::init({dim_c, n_s, window, 2, cv, N}, rng);
    in.vis.grid_h = in.vis.grid_w = grid;
    in.vis.a_clip = softmax(rng.normal_tensor({N, N}), 1, 1.0);
    for (std::size_t l = 0; l <= n_s; ++l) in.vis.f_v.push_back(rng.normal_tensor({cv, grid << l, grid << l}));
    in.f_cv = rng.normal_tensor({cs, grid, grid, dim_c});
    in.raw = rng.uniform_tensor({cs, grid, grid}, -1.0, 1.0);
    return in;
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
    const std::size_t w = t.size() / t.dim(0);
    Tensor out(t.dims());
    for (std::size_t r = 0; r < perm.size(); ++r)
        for (std::size_t k = 0; k < w; ++k) out[r * w + k] = t[perm[r] * w + k];
    return out;
}

}  // namespace

TEST(SedConfig, RejectsBadChannelBudget) {
    EXPECT_THROW((SEDConfig{12, 3, 4, 1, 4, 16}.validate()), ConfigError);
    EXPECT_THROW((SEDConfig{8, 0, 4, 1, 4, 16}.validate()), ConfigError);
    EXPECT_THROW((SEDConfig{8, 2, 4, 4, 4, 16}.validate()), ConfigError);  // level 2 has 2 channels
    EXPECT_NO_THROW((SEDConfig{16, 2, 4, 2, 4, 16}.validate()));
}

TEST(WindowLayout, PlainWindowsAreContiguousBlocks) {
    const auto L = window_layout(8, 8, 4, false);
    EXPECT_EQ(L.mask.size(), 0u);
    EXPECT_EQ(L.order[0], 0u);
    EXPECT_EQ(L.order[4], 8u);    // second row of the first window
    EXPECT_EQ(L.order[16], 4u);   // first slot of the second window
    auto sorted = L.order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(64);
    std::iota(iota.begin(), iota.end(), 0);
    EXPECT_EQ(sorted, iota);
}

TEST(WindowLayout, ShiftedWindowsAreMasked) {
    const auto L = window_layout(8, 8, 4, true);
    EXPECT_EQ(L.shift_h, 2u);
    EXPECT_EQ(L.order[0], 2u * 8 + 2);
    ASSERT_EQ(L.mask.dims(), (Shape{4, 16, 16}));
    // Interior window has no wrapped tokens; the last window mixes four regions.
    for (std::size_t i = 0; i < 256; ++i) EXPECT_EQ(L.mask[i], 0.0);
    std::size_t blocked = 0;
    for (std::size_t i = 0; i < 256; ++i) blocked += L.mask[3 * 256 + i] != 0.0;
    EXPECT_EQ(blocked, 256u - 4 * 16);
    for (std::size_t g = 0; g < 4; ++g)
        for (std::size_t a = 0; a < 16; ++a)
            for (std::size_t b = 0; b < 16; ++b) EXPECT_EQ(L.mask[(g * 16 + a) * 16 + b], L.mask[(g * 16 + b) * 16 + a]);
}

TEST(WindowLayout, WholeAxisWindowDisablesShift) {
    const auto L = window_layout(4, 4, 8, true);
    EXPECT_EQ(L.win_h, 4u);
    EXPECT_EQ(L.shift_h, 0u);
    EXPECT_EQ(L.mask.size(), 0u);
    EXPECT_THROW(window_layout(6, 8, 4, false), ShapeError);
}

TEST(SpatialEnhance, FullWindowEqualsGlobalAttention) {
    auto in = make_inputs(1, 4, 8, 1, 2);
    DecoderContext ctx{&in.vis.f_v, &in.vis.a_clip, 4, 4, {true, false, false}};
    ag::Tape t(false);
    const auto out = spatial_enhance(t, t.constant(in.f_cv), 0, false, ctx, in.params).value();

    auto& e = in.params.enhance[0];
    const std::size_t d = 8;
    Tensor wq_top({d, d}), wk_top({d, d});
    for (std::size_t i = 0; i < d * d; ++i) wq_top[i] = e.w_q.value[i], wk_top[i] = e.w_k.value[i];
    for (std::size_t c = 0; c < 2; ++c) {
        Tensor feat({16, d});
        for (std::size_t i = 0; i < 16 * d; ++i) feat[i] = in.f_cv[c * 16 * d + i];
        const Tensor z = scaled_dot_product_attention(matmul(feat, wq_top), matmul(feat, wk_top), matmul(feat, e.w_v.value), 2);
        Tensor x = z;
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += feat[i];
        x = layer_norm(x, 1, e.ln1.gain.value, e.ln1.bias.value);
        Tensor h = matmul(x, e.mlp.w1.value);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = gelu(h[i] + e.mlp.b1.value[i % (4 * d)]);
        Tensor y = matmul(h, e.mlp.w2.value);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += e.mlp.b2.value[i % d] + x[i];
        y = layer_norm(y, 1, e.ln2.gain.value, e.ln2.bias.value);
        for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(out[c * 16 * d + i], y[i], 1e-12);
    }
}

TEST(SpatialEnhance, RejectsIndivisibleExtent) {
    auto in = make_inputs(2, 4, 8, 1, 1, 3);
    DecoderContext ctx{&in.vis.f_v, &in.vis.a_clip, 4, 4, {}};
    ag::Tape t(false);
    EXPECT_THROW(spatial_enhance(t, t.constant(in.f_cv), 0, false, ctx, in.params), ShapeError);
}

TEST(Decode, ShapeLaw) {
    struct Case {
        std::size_t grid, dim_c, n_s;
    };
    for (const Case c : {Case{4, 16, 1}, Case{2, 16, 1}, Case{8, 16, 1}, Case{4, 16, 2}, Case{16, 16, 2}}) {
        const std::size_t cs = 3, N = c.grid * c.grid;
        auto in = make_inputs(3, c.grid, c.dim_c, c.n_s, cs);
        const auto out = decode(in.f_cv, in.raw, in.vis, in.params);
        EXPECT_EQ(out.dims(), (Shape{cs, (std::size_t{1} << (2 * c.n_s)) * N, c.dim_c >> c.n_s})) << c.grid << " " << c.n_s;
    }
}

TEST(Decode, Deterministic) {
    auto in = make_inputs(4, 4, 8, 1, 3);
    EXPECT_EQ(decode(in.f_cv, in.raw, in.vis, in.params), decode(in.f_cv, in.raw, in.vis, in.params));
}

TEST(Decode, ClassAxisEquivariance) {
    auto in = make_inputs(5, 4, 8, 2, 3);
    const auto out = decode(in.f_cv, in.raw, in.vis, in.params);
    const std::vector<std::size_t> perm{2, 0, 1};
    EXPECT_EQ(decode(permute_rows(in.f_cv, perm), permute_rows(in.raw, perm), in.vis, in.params), permute_rows(out, perm));
}

TEST(Decode, ZeroFusionKernelsIsolateShallowInputs) {
    auto in = make_inputs(6, 4, 8, 1, 2);
    for (auto& e : in.params.enhance) e.fv_kernel.value.fill(0.0), e.aclip_kernel.value.fill(0.0);
    for (auto& u : in.params.upsample) u.fv_kernel.value.fill(0.0);
    const auto base = decode(in.f_cv, in.raw, in.vis, in.params);
    auto other = in.vis;
    Rng rng(7);
    for (auto& f : other.f_v) f = rng.normal_tensor(f.dims());
    other.a_clip = softmax(rng.normal_tensor({16, 16}), 1, 3.0);
    EXPECT_EQ(decode(in.f_cv, in.raw, other, in.params), base);
    // The flag path must agree with the zero-kernel path.
    EXPECT_EQ(decode(in.f_cv, in.raw, in.vis, in.params, {true, false, false}), base);
}

TEST(Decode, FusionFlagsChangeOutputWithLiveKernels) {
    auto in = make_inputs(8, 4, 8, 1, 2);
    const auto on = decode(in.f_cv, in.raw, in.vis, in.params);
    EXPECT_NE(decode(in.f_cv, in.raw, in.vis, in.params, {true, false, true}), on);
    EXPECT_NE(decode(in.f_cv, in.raw, in.vis, in.params, {true, true, false}), on);
}

TEST(UpsampleFuse, DoublesExtentAndKeepsConstantsInterior) {
    auto in = make_inputs(9, 4, 8, 1, 1);
    auto& u = in.params.upsample[0];
    for (std::size_t i = 0; i < u.transconv.value.size(); i += 4)
        for (std::size_t k = 1; k < 4; ++k) u.transconv.value[i + k] = u.transconv.value[i];
    DecoderContext ctx{&in.vis.f_v, &in.vis.a_clip, 4, 4, {true, false, true}};
    ag::Tape t(false);
    const auto fh = ag::transposed_conv2d(t.constant(Tensor({1, 8, 4, 4}, 0.7)), t.param(u.transconv)).value();
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(fh[c * 64 + i], fh[c * 64]);

    const auto out = upsample_fuse(t, t.constant(Tensor({1, 4, 4, 8}, 0.7)), t.constant(Tensor({1, 4, 4}, 0.3)), 0, ctx, in.params).value();
    ASSERT_EQ(out.dims(), (Shape{1, 8, 8, 4}));
    for (std::size_t y = 1; y < 7; ++y)
        for (std::size_t x = 1; x < 7; ++x)
            for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out[(y * 8 + x) * 4 + c], out[(1 * 8 + 1) * 4 + c]);
}

TEST(PredictLogits, ZeroHeadAndIdentityHead) {
    ParamTensor head("head", Tensor({1, 1}, 0.0));
    const Tensor f = Rng(10).normal_tensor({2, 16, 1});
    ag::Tape t(false);
    for (double v : predict_logits(t, t.constant(f), 4, 4, 8, 8, head).value().data()) EXPECT_EQ(v, 0.0);
    head.value[0] = 1.0;
    EXPECT_EQ(predict_logits(t, t.constant(f), 4, 4, 4, 4, head).value(), f.reshaped({2, 4, 4}));
}

TEST(DecoderGradients, DecoderAndHeadMatchFiniteDifferences) {
    for (std::uint64_t seed : {1, 2}) {
        auto problem = make_toy_problem(seed);
        auto loss = [&](ag::Tape& t) { return toy_loss(t, problem); };
        for (const auto& e : check_gradients(problem.model.sed.parameters(), loss)) EXPECT_LE(e.relative_error, 1e-5) << e.name;
    }
}

TEST(DecoderGradients, TwoStageDecoderMatchesFiniteDifferences) {
    auto problem = make_toy_problem(3, 2, 16);
    auto loss = [&](ag::Tape& t) { return toy_loss(t, problem); };
    for (const auto& e : check_gradients(problem.model.sed.parameters(), loss)) EXPECT_LE(e.relative_error, 1e-5) << e.name;
}
