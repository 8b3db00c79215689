#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dcp/error.hpp"
#include "dcp/rng.hpp"
#include "dcp/training.hpp"

using namespace dcp;

namespace {

RunConfig small_config() {
    RunConfig c;
    c.image_size = 16;
    c.classes = 8;
    c.dim = 16;
    c.dim_c = 8;
    c.scenes = 2;
    c.batch = 2;
    return c;
}

}  // namespace

TEST(BceLoss, ZeroLogitsGiveLnTwo) {
    ag::Tape t;
    const auto loss = bce_loss(t.constant(Tensor({2, 2, 2})), {0, 3, 3, 0}, {0, 3}, 4);
    EXPECT_NEAR(loss.value()[0], std::log(2.0), 1e-15);
}

TEST(BceLoss, MatchesExtendedPrecisionOracle) {
    Rng rng(1);
    const Tensor logits = rng.normal_tensor({3, 4, 5}, 3.0);
    std::vector<std::int32_t> gt(20);
    const std::vector<std::size_t> classes{1, 4, 6};
    for (auto& g : gt) g = rng.index(5) == 0 ? -1 : static_cast<std::int32_t>(classes[rng.index(3)]);
    long double sum = 0;
    std::size_t valid = 0;
    for (std::size_t p = 0; p < 20; ++p) {
        if (gt[p] < 0) continue;
        ++valid;
        for (std::size_t s = 0; s < 3; ++s) {
            const long double x = logits[s * 20 + p], y = static_cast<std::size_t>(gt[p]) == classes[s];
            sum += std::max(x, 0.0L) - x * y + std::log1p(std::exp(-std::fabs(x)));
        }
    }
    ag::Tape t;
    EXPECT_NEAR(bce_loss(t.constant(logits), gt, classes, 8).value()[0], static_cast<double>(sum / (valid * 3)), 1e-14);
}

TEST(BceLoss, MissingGroundTruthClassThrows) {
    ag::Tape t;
    EXPECT_THROW(bce_loss(t.constant(Tensor({1, 1, 2})), {0, 2}, {0}, 4), DomainError);
    EXPECT_THROW(bce_loss(t.constant(Tensor({2, 1, 2})), {0, 2}, {0}, 4), ShapeError);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
    TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.weight_decay = 0.0;
    ParamTensor p("w", Tensor({3}, std::vector<double>{1.0, -2.0, 0.5}));
    p.grad = Tensor({3}, std::vector<double>{0.3, -7.0, 1e-3});
    AdamW opt(cfg);
    opt.step({&p});
    // Bias correction makes |m_hat / sqrt(v_hat)| = 1 on step one.
    EXPECT_NEAR(p.value[0], 1.0 - 1e-2, 1e-9);
    EXPECT_NEAR(p.value[1], -2.0 + 1e-2, 1e-9);
    EXPECT_NEAR(p.value[2], 0.5 - 1e-2 * 1e-3 / (1e-3 + 1e-8), 1e-12);
    EXPECT_EQ(opt.steps(), 1u);
}

TEST(AdamW, ThreeStepsMatchReference) {
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.05;
    ParamTensor p("w", Tensor({1}, 2.0));
    AdamW opt(cfg);
    const double grads[] = {0.5, -1.5, 0.25};
    // Decoupled decay, then bias-corrected moments.
    double w = 2.0, m = 0, v = 0;
    for (int k = 0; k < 3; ++k) {
        p.grad = Tensor({1}, grads[k]);
        opt.step({&p});
        w -= 0.1 * 0.05 * w;
        m = 0.9 * m + 0.1 * grads[k];
        v = 0.999 * v + 0.001 * grads[k] * grads[k];
        w -= 0.1 * (m / (1 - std::pow(0.9, k + 1))) / (std::sqrt(v / (1 - std::pow(0.999, k + 1))) + 1e-8);
        EXPECT_NEAR(p.value[0], w, 1e-14) << k;
    }
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
    ParamTensor p("tga.prompt", Tensor({2}, 1.0));
    p.grad = Tensor({2}, std::vector<double>{0.0, NAN});
    AdamW opt({});
    try {
        opt.step({&p});
        FAIL();
    } catch (const NonFiniteError& e) {
        EXPECT_NE(std::string(e.what()).find("tga.prompt"), std::string::npos);
    }
    EXPECT_EQ(p.value[0], 1.0);
}

TEST(Training, ZeroStepsLeavesModelUnchanged) {
    auto c = small_config();
    c.steps = 0;
    const Workbench bench(c);
    auto model = DcpModel::init(c.model_config(), 1);
    const auto before = model.tga.prompt.value;
    const auto r = train_overfit(bench, model, bench.scenes(2, 1), train_config(c));
    EXPECT_TRUE(r.losses.empty());
    EXPECT_EQ(r.initial_miou, r.final_miou);
    EXPECT_EQ(model.tga.prompt.value, before);
}

TEST(Training, ShortRunReducesLossAndIsDeterministic) {
    auto c = small_config();
    c.steps = 30;
    c.lr = 2e-3;
    const Workbench bench(c);
    const auto scenes = bench.scenes(2, 2);
    auto m1 = DcpModel::init(c.model_config(), 2);
    auto m2 = DcpModel::init(c.model_config(), 2);
    const auto a = train_overfit(bench, m1, scenes, train_config(c));
    const auto b = train_overfit(bench, m2, scenes, train_config(c));
    ASSERT_EQ(a.losses.size(), 30u);
    EXPECT_LT(a.losses.back(), a.losses.front());
    EXPECT_EQ(a.losses, b.losses);
    EXPECT_EQ(m1.sed.head.value, m2.sed.head.value);
}

TEST(Checkpoint, ModelRoundTrip) {
    auto c = small_config();
    c.theta = 0.25;
    auto model = DcpModel::init(c.model_config(), 3);
    const auto path = (std::filesystem::temp_directory_path() / "dcp_training_test.ckpt").string();
    save_model(model, c, path);
    RunConfig loaded_config;
    const auto loaded = load_model(path, &loaded_config);
    EXPECT_EQ(loaded_config.to_text(), c.to_text());
    const auto a = model.parameters();
    const auto b = loaded.parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i]->name, b[i]->name);
        EXPECT_EQ(a[i]->value, b[i]->value);
    }
    std::remove(path.c_str());
}
