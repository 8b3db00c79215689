#include <gtest/gtest.h>

#include "dcp/autograd.hpp"
#include "dcp/error.hpp"
#include "dcp/gradcheck.hpp"
#include "dcp/kernels.hpp"
#include "dcp/rng.hpp"

using namespace dcp;

namespace {

constexpr double kTol = 1e-5;

// Projects an output onto fixed random weights so every op yields a scalar loss.
ag::Var project(ag::Var y, std::uint64_t seed) {
    Rng rng(seed ^ 0xabcdefULL);
    return ag::weighted_sum(y, rng.normal_tensor(y.dims()));
}

void expect_grads_match(std::vector<ParamTensor*> params, const LossBuilder& loss) {
    for (const auto& e : check_gradients(params, loss)) EXPECT_LE(e.relative_error, kTol) << e.name;
}

class SeededGrad : public ::testing::TestWithParam<std::uint64_t> {};

}  // namespace

TEST_P(SeededGrad, MatmulBiasGelu) {
    Rng rng(GetParam());
    ParamTensor x("x", rng.normal_tensor({2, 3, 4})), w("w", rng.normal_tensor({4, 5})), b("b", rng.normal_tensor({5}));
    expect_grads_match({&x, &w, &b}, [&](ag::Tape& t) {
        auto y = ag::gelu(ag::add_bias(ag::matmul(t.param(x), t.param(w)), t.param(b)));
        return project(y, GetParam());
    });
}

TEST_P(SeededGrad, ElementwiseAndScale) {
    Rng rng(GetParam());
    ParamTensor a("a", rng.normal_tensor({3, 4})), b("b", rng.normal_tensor({3, 4}));
    expect_grads_match({&a, &b}, [&](ag::Tape& t) {
        auto pa = t.param(a), pb = t.param(b);
        return project(ag::scale(ag::add(ag::mul(pa, pb), ag::sub(pa, pb)), 1.7), GetParam());
    });
}

TEST_P(SeededGrad, LayerNorm) {
    Rng rng(GetParam());
    ParamTensor x("x", rng.normal_tensor({4, 6})), g("gain", rng.normal_tensor({6})), b("bias", rng.normal_tensor({6}));
    expect_grads_match({&x, &g, &b}, [&](ag::Tape& t) {
        return project(ag::layer_norm(t.param(x), t.param(g), t.param(b)), GetParam());
    });
}

TEST_P(SeededGrad, MaskedMultiHeadAttention) {
    Rng rng(GetParam());
    ParamTensor q("q", rng.normal_tensor({3, 4, 4})), k("k", rng.normal_tensor({3, 5, 4})), v("v", rng.normal_tensor({3, 5, 6}));
    Tensor mask({1, 4, 5});
    mask.at(0, 1, 2) = -1e9;
    mask.at(0, 3, 0) = -1e9;
    expect_grads_match({&q, &k, &v}, [&](ag::Tape& t) {
        return project(ag::attention(t.param(q), t.param(k), t.param(v), 2, &mask), GetParam());
    });
}

TEST_P(SeededGrad, LayoutOps) {
    Rng rng(GetParam());
    ParamTensor a("a", rng.normal_tensor({2, 3, 4})), b("b", rng.normal_tensor({2, 3, 2}));
    expect_grads_match({&a, &b}, [&](ag::Tape& t) {
        auto c = ag::concat({t.param(a), t.param(b)}, 2);
        auto p = ag::permute(c, {2, 0, 1});
        auto r = ag::reshape(p, {12, 3});
        auto g = ag::gather_rows(r, {0, 5, 5, 11, 2}, {5, 3});
        return project(g, GetParam());
    });
}

TEST_P(SeededGrad, ConvolutionsAndResize) {
    Rng rng(GetParam());
    ParamTensor x("x", rng.normal_tensor({2, 3, 4, 4})), k("conv", rng.normal_tensor({2, 3, 3, 3}));
    ParamTensor tk("tconv", rng.normal_tensor({2, 3, 2, 2}));
    expect_grads_match({&x, &k, &tk}, [&](ag::Tape& t) {
        auto y = ag::conv2d(t.param(x), t.param(k), 1, 1);
        y = ag::transposed_conv2d(y, t.param(tk));
        y = ag::bilinear_resize(y, 11, 13);
        return project(y, GetParam());
    });
}

TEST_P(SeededGrad, BinaryCrossEntropy) {
    Rng rng(GetParam());
    ParamTensor z("logits", rng.normal_tensor({3, 5}, 3.0));
    Tensor target({3, 5}), weight({3, 5}, 1.0);
    for (std::size_t i = 0; i < 15; ++i) target[i] = (i % 3 == 0) ? 1.0 : 0.0;
    weight[4] = 0.0;
    expect_grads_match({&z}, [&](ag::Tape& t) { return ag::bce_with_logits(t.param(z), target, weight); });
}

INSTANTIATE_TEST_SUITE_P(FiveSeeds, SeededGrad, ::testing::Values(1u, 2u, 3u, 4u, 5u));

TEST(Tape, ParamGradientsAccumulateAcrossUses) {
    ParamTensor w("w", Tensor::vector({2.0}));
    w.zero_grad();
    ag::Tape t;
    auto p = t.param(w);
    t.backward(ag::sum(ag::add(ag::mul(p, p), p)));
    EXPECT_DOUBLE_EQ(w.grad[0], 5.0);
}

TEST(Tape, ConstantsReceiveNoGradient) {
    ag::Tape t;
    auto c = t.constant(Tensor::vector({1.0, 2.0}));
    EXPECT_FALSE(t.needs_grad(ag::sum(c)));
}

TEST(Tape, NonRecordingTapeRefusesBackward) {
    ParamTensor w("w", Tensor::vector({1.0}));
    ag::Tape t(false);
    EXPECT_THROW(t.backward(ag::sum(t.param(w))), Error);
}

TEST(Bce, ZeroLogitsGiveLogTwo) {
    ag::Tape t;
    Tensor target({2, 3});
    target[1] = 1.0;
    auto loss = ag::bce_with_logits(t.constant(Tensor({2, 3})), target, Tensor({2, 3}, 1.0 / 6.0));
    EXPECT_NEAR(loss.value()[0], std::log(2.0), 1e-15);
}
