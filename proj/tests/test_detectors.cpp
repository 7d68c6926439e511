#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "acr/detectors.hpp"
#include "acr/losses.hpp"
#include "acr/model.hpp"
#include "gradcheck.hpp"

using namespace acr;

namespace {

MatrixD random_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
    MatrixD m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = scale * standard_normal(rng);
    return m;
}

VectorD vec(std::initializer_list<double> values) {
    VectorD v(static_cast<Index>(values.size()));
    Index i = 0;
    for (double x : values) v[i++] = x;
    return v;
}

MatrixD column(std::initializer_list<double> values) { return MatrixD(vec(values)); }

}  // namespace

// ---------------------------------------------------------------- dsvdd

TEST(Dsvdd, PointAtCenter) {
    DsvddHead<double> head{vec({1.0, -2.0}), 1e-6, false};
    MatrixD z(1, 2);
    z << 1.0, -2.0;
    const auto sc = dsvdd_scores(z, head);
    EXPECT_DOUBLE_EQ(sc.s[0], 0.0);
    EXPECT_DOUBLE_EQ(sc.a[0], 1e6);
}

TEST(Dsvdd, ThreeFourFive) {
    DsvddHead<double> head{VectorD::Zero(2), 1e-300, false};
    MatrixD z(1, 2);
    z << 3.0, 4.0;
    const auto sc = dsvdd_scores(z, head);
    EXPECT_DOUBLE_EQ(sc.s[0], 25.0);
    EXPECT_DOUBLE_EQ(sc.a[0], 0.04);
}

TEST(Dsvdd, QuadraticInDistance) {
    Rng rng(3);
    DsvddHead<double> head{vec({0.5, 0.25, -1.0}), 1e-6, false};
    const MatrixD z = random_matrix(5, 3, rng);
    const MatrixD z2 = (2.0 * (z.rowwise() - head.center.transpose())).rowwise() + head.center.transpose();
    const auto a = dsvdd_scores(z, head);
    const auto b = dsvdd_scores(z2, head);
    for (Index i = 0; i < 5; ++i) EXPECT_NEAR(b.s[i], 4.0 * a.s[i], 1e-12 * b.s[i]);
}

TEST(Dsvdd, ScoresAreAntitone) {
    Rng rng(4);
    DsvddHead<double> head{VectorD::Zero(4), 1e-6, false};
    for (int trial = 0; trial < 50; ++trial) {
        const auto sc = dsvdd_scores(random_matrix(12, 4, rng), head);
        for (Index i = 0; i < sc.size(); ++i) {
            EXPECT_GE(sc.s[i], 0.0);
            EXPECT_GT(sc.a[i], 0.0);
            for (Index j = 0; j < sc.size(); ++j) {
                if (sc.s[i] < sc.s[j]) {
                    EXPECT_GT(sc.a[i], sc.a[j]);
                }
            }
        }
    }
}

TEST(Dsvdd, CenterDimensionMismatch) {
    DsvddHead<double> head{VectorD::Zero(3), 1e-6, false};
    EXPECT_THROW(dsvdd_scores(MatrixD(MatrixD::Zero(2, 2)), head), DimensionError);
}

// ---------------------------------------------------------------- bce

TEST(Bce, ZeroLogitIsSymmetric) {
    const auto sc = bce_scores<double>(vec({0.0}));
    EXPECT_NEAR(sc.s[0], std::log(2.0), 1e-15);
    EXPECT_DOUBLE_EQ(sc.s[0], sc.a[0]);
}

TEST(Bce, LargeLogitsMatchHighPrecisionOracle) {
    // 40-digit reference values of log(1 + exp(t)).
    constexpr double sp_minus20 = 2.061153620314380703238982798877918941817e-9;
    constexpr double sp_plus20 = 20.00000000206115362031438070323898279888;
    constexpr double sp_minus35 = 6.305116760146987397914153311306906025841e-16;
    const auto sc = bce_scores<double>(vec({20.0, -20.0, 35.0, -35.0, 800.0}));
    EXPECT_NEAR(sc.s[0], sp_plus20, 1e-14);
    EXPECT_NEAR(sc.a[0] / sp_minus20, 1.0, 1e-13);
    EXPECT_NEAR(sc.s[1] / sp_minus20, 1.0, 1e-13);
    EXPECT_NEAR(sc.a[1], sp_plus20, 1e-14);
    EXPECT_NEAR(sc.a[2] / sp_minus35, 1.0, 1e-13);
    EXPECT_NEAR(sc.s[3] / sp_minus35, 1.0, 1e-13);
    EXPECT_DOUBLE_EQ(sc.s[4], 800.0);
    EXPECT_TRUE(std::isfinite(sc.a[4]));
}

TEST(Bce, SumIdentity) {
    Rng rng(8);
    for (int i = 0; i < 1000; ++i) {
        const double t = 40.0 * (uniform_unit(rng) - 0.5);
        const auto sc = bce_scores<double>(vec({t}));
        const double expected = std::abs(t) + 2.0 * std::log1p(std::exp(-std::abs(t)));
        EXPECT_NEAR(sc.s[0] + sc.a[0], expected, 1e-10);
        EXPECT_GE(sc.s[0], 0.0);
        EXPECT_GE(sc.a[0], 0.0);
    }
}

TEST(Bce, BackwardMatchesFiniteDifference) {
    const VectorD logits = vec({-3.0, -0.2, 0.0, 1.5, 7.0});
    const VectorD ds = vec({0.3, -1.0, 2.0, 0.5, 1.0});
    const VectorD da = vec({1.0, 0.7, -0.4, 2.0, 0.1});
    const VectorD grad = bce_backward(logits, ds, da);
    for (Index i = 0; i < logits.size(); ++i) {
        const double h = 1e-6;
        const double up = ds[i] * softplus(logits[i] + h) + da[i] * softplus(-(logits[i] + h));
        const double dn = ds[i] * softplus(logits[i] - h) + da[i] * softplus(-(logits[i] - h));
        EXPECT_NEAR(grad[i], (up - dn) / (2 * h), 1e-8);
    }
}

// ---------------------------------------------------------------- naive detector

TEST(NaiveBn, HandComputedOutlier) {
    const VectorD s = naive_bn_score<double>(column({0, 0, 0, 10}));
    // mean 2.5, biased variance 18.75
    EXPECT_NEAR(s[0], 6.25 / 18.75, 1e-12);
    EXPECT_NEAR(s[1], 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(s[2], 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(s[3], 3.0, 1e-12);
}

TEST(NaiveBn, SymmetricPair) {
    const VectorD s = naive_bn_score<double>(column({-1, 1}));
    EXPECT_DOUBLE_EQ(s[0], 1.0);
    EXPECT_DOUBLE_EQ(s[1], 1.0);
}

TEST(NaiveBn, ConstantBatchScoresZero) {
    MatrixD x(5, 3);
    x.rowwise() = vec({2.0, -1.0, 7.5}).transpose();
    const VectorD s = naive_bn_score<double>(x);
    for (Index i = 0; i < 5; ++i) EXPECT_EQ(s[i], 0.0);
}

TEST(NaiveBn, ConstantFeatureIsIgnored) {
    MatrixD x(2, 2);
    x << -1, 4, 1, 4;
    const VectorD s = naive_bn_score<double>(x);
    EXPECT_DOUBLE_EQ(s[0], 1.0);
    EXPECT_DOUBLE_EQ(s[1], 1.0);
}

TEST(NaiveBn, SingleRowIsTooSmall) {
    EXPECT_THROW(naive_bn_score<double>(column({1.0})), BatchTooSmallError);
}

TEST(NaiveBn, AffineInvariance) {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const MatrixD x = random_matrix(20, 4, rng);
        double a = 0.1 + 10.0 * uniform_unit(rng);
        if (trial % 2) a = -a;
        VectorD b(4);
        for (Index k = 0; k < 4; ++k) b[k] = 200.0 * (uniform_unit(rng) - 0.5);
        const MatrixD y = (a * x).rowwise() + b.transpose();
        const VectorD s1 = naive_bn_score<double>(x);
        const VectorD s2 = naive_bn_score<double>(y);
        for (Index i = 0; i < 20; ++i) EXPECT_NEAR(s1[i], s2[i], 1e-8);
    }
}

TEST(NaiveBn, FarOutlierIsBatchMaximum) {
    Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        MatrixD x = random_matrix(30, 1, rng);
        const Index out = static_cast<Index>(uniform_index(rng, 30));
        const double side = uniform_unit(rng) < 0.5 ? -1.0 : 1.0;
        x(out, 0) = side * (5.0 + 5.0 * uniform_unit(rng));
        const VectorD s = naive_bn_score<double>(x);
        for (Index i = 0; i < 30; ++i) {
            if (i != out) {
                EXPECT_LT(s[i], s[out]);
            }
        }
    }
}

// ---------------------------------------------------------------- losses

TEST(Losses, MetaOeHandArithmetic) {
    ScoreVector<double> sc{vec({1, 2, 3}), vec({9, 9, 9})};
    EXPECT_DOUBLE_EQ(meta_oe_loss(sc, vec({0, 0, 0})), 2.0);
    ScoreVector<double> sa{vec({5, 5}), vec({2, 4})};
    EXPECT_DOUBLE_EQ(meta_oe_loss(sa, vec({1, 1})), 3.0);
    ScoreVector<double> mixed{vec({1, 1, 4, 100}), vec({-50, -50, -50, 8})};
    EXPECT_DOUBLE_EQ(meta_oe_loss(mixed, vec({0, 0, 0, 1})), 3.5);
}

TEST(Losses, OneClassIsMeanScore) {
    EXPECT_DOUBLE_EQ(one_class_loss(ScoreVector<double>{vec({0, 0}), vec({1, 1})}), 0.0);
    EXPECT_DOUBLE_EQ(one_class_loss(ScoreVector<double>{vec({2, 4}), vec({1, 1})}), 3.0);
}

TEST(Losses, OneClassEqualsMetaOeWithoutAnomalies) {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        ScoreVector<double> sc{VectorD(7), VectorD(7)};
        for (Index i = 0; i < 7; ++i) {
            sc.s[i] = 10.0 * uniform_unit(rng);
            sc.a[i] = 10.0 * uniform_unit(rng);
        }
        EXPECT_EQ(one_class_loss(sc), meta_oe_loss(sc, VectorD(VectorD::Zero(7))));
    }
}

TEST(Losses, LengthMismatchAndEmpty) {
    ScoreVector<double> sc{vec({1, 2}), vec({1, 2})};
    EXPECT_THROW(meta_oe_loss(sc, vec({0})), DimensionError);
    EXPECT_THROW(one_class_loss(ScoreVector<double>{VectorD(0), VectorD(0)}), DimensionError);
}

TEST(Losses, ParseNames) {
    EXPECT_EQ(parse_loss_kind("meta-oe"), LossKind::meta_oe);
    EXPECT_EQ(parse_loss_kind("one-class"), LossKind::one_class);
    EXPECT_THROW(parse_loss_kind("oe"), ConfigError);
    EXPECT_EQ(parse_head_kind("bce"), HeadKind::bce);
    EXPECT_THROW(parse_head_kind("svdd"), ConfigError);
}

// ---------------------------------------------------------------- end-to-end loss gradient

struct LossGradCase {
    HeadKind head;
    LossKind loss;
    nn::BnMode mode;
};

class ModelLossGradient : public ::testing::TestWithParam<LossGradCase> {};

// Gradient of the batch loss w.r.t. every model parameter, through both score branches
// (including 1/(s + eps) for DSVDD), against central differences.
TEST_P(ModelLossGradient, MatchesFiniteDifferences) {
    const auto [head, loss, mode] = GetParam();
    Rng rng(31);
    double worst = 0.0;
    int checked = 0;
    for (int attempt = 0; checked < 20 && attempt < 200; ++attempt) {
        const Index out_dim = head == HeadKind::dsvdd ? 3 : 1;
        nn::MlpArchitecture arch = nn::MlpArchitecture::standard(4, {6, 5, out_dim}, head == HeadKind::dsvdd);
        auto model = DetectorModel<double>::create(arch, head, rng, 0.5);
        if (head == HeadKind::dsvdd)
            for (Index k = 0; k < out_dim; ++k) model.dsvdd.center[k] = 0.3 * standard_normal(rng);
        const MatrixD x = random_matrix(8, 4, rng, 1.5);
        VectorD y = VectorD::Zero(8);
        y[2] = y[5] = 1.0;

        // Skip draws with a ReLU pre-activation near its kink.
        nn::MlpTape<double> probe_tape;
        model.net.forward(x, mode, probe_tape);
        double margin = 1e9;
        for (const auto& c : probe_tape.relu)
            if (c.input) margin = std::min(margin, c.input->cwiseAbs().minCoeff());
        if (margin < 0.02) continue;
        ++checked;

        auto pass = task_loss_and_gradient(model, x, y, loss, mode);
        auto f = [&] { return evaluate_loss(loss, model.score(x, mode), y); };
        EXPECT_NEAR(pass.loss, f(), 1e-12 * std::max(1.0, std::abs(pass.loss)));
        auto params = model.parameters();
        auto grads = DetectorModel<double>::gradient_views(pass.grad);
        ASSERT_EQ(params.size(), grads.size());
        for (std::size_t k = 0; k < params.size(); ++k)
            worst = std::max(worst, fdcheck::relative_error(grads[k], fdcheck::numeric_gradient(params[k], f, 1e-4)));
    }
    EXPECT_EQ(checked, 20);
    EXPECT_LE(worst, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(
    HeadsAndLosses, ModelLossGradient,
    ::testing::Values(LossGradCase{HeadKind::dsvdd, LossKind::meta_oe, nn::BnMode::batch_stats},
                      LossGradCase{HeadKind::dsvdd, LossKind::one_class, nn::BnMode::batch_stats},
                      LossGradCase{HeadKind::bce, LossKind::meta_oe, nn::BnMode::batch_stats},
                      LossGradCase{HeadKind::dsvdd, LossKind::meta_oe, nn::BnMode::identity},
                      LossGradCase{HeadKind::bce, LossKind::meta_oe, nn::BnMode::identity}));

TEST(Model, FrozenCenterGetsNoGradient) {
    Rng rng(5);
    auto model = DetectorModel<double>::create(nn::MlpArchitecture::standard(3, {4, 2}, true), HeadKind::dsvdd, rng);
    model.dsvdd.freeze_center = true;
    model.dsvdd.center << 0.5, -0.5;
    const MatrixD x = random_matrix(6, 3, rng);
    VectorD y = VectorD::Zero(6);
    y[0] = 1.0;
    const auto pass = task_loss_and_gradient(model, x, y, LossKind::meta_oe, nn::BnMode::batch_stats);
    EXPECT_EQ(pass.grad.center.size(), 2);
    EXPECT_EQ(pass.grad.center.squaredNorm(), 0.0);
}

TEST(Model, BceNeedsScalarOutput) {
    Rng rng(5);
    EXPECT_THROW(DetectorModel<double>::create(nn::MlpArchitecture::standard(3, {4, 2}, false), HeadKind::bce, rng),
                 ConfigError);
}
