#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "acr/data_io.hpp"
#include "acr/trainer.hpp"

using namespace acr;

namespace {

MetaDataset gaussian_1d(std::uint64_t seed, std::vector<double> means, Index rows = 500) {
    MetaDataset meta;
    Rng rng(seed);
    for (double mu : means) {
        MatrixD pool(rows, 1);
        for (Index r = 0; r < rows; ++r) pool(r, 0) = mu + standard_normal(rng);
        meta.add(std::move(pool));
    }
    return meta;
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.iterations = 50;
    cfg.tasks_per_iteration = 4;
    cfg.batch_size = 20;
    cfg.hidden = {16, 16};
    cfg.latent_dim = 8;
    cfg.learning_rate = 1e-3;
    cfg.seed = 5;
    return cfg;
}

std::vector<double> flat_parameters(const DetectorModel<double>& model) {
    std::vector<double> out;
    for (const auto& p : model.parameters()) out.insert(out.end(), p.begin(), p.end());
    return out;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
    double s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += v[i];
    return s / static_cast<double>(to - from);
}

}  // namespace

TEST(TrivialLoss, ClosedForm) {
    EXPECT_NEAR(no_bn_trivial_loss_value(0.8), 1.6, 1e-15);
    EXPECT_NEAR(no_bn_trivial_loss_value(0.5), 2.0, 1e-15);
    EXPECT_NEAR(no_bn_trivial_loss_value(1.0 - 1e-12), 0.0, 1e-5);
    EXPECT_EQ(no_bn_trivial_loss_value(1.0), 0.0);
    EXPECT_THROW(no_bn_trivial_loss_value(0.4), DomainError);
    EXPECT_THROW(no_bn_trivial_loss_value(1.1), DomainError);
}

TEST(TrainConfigType, Validation) {
    TrainConfig cfg = small_config();
    cfg.iterations = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.bn_mask = {true, false};
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.pi = 0.4;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.learning_rate = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_NO_THROW(small_config().validate());
}

TEST(Train, RequiresTwoDistributionsWhenContaminated) {
    const auto meta = gaussian_1d(1, {0.0});
    EXPECT_THROW(train(meta, small_config()), ConfigError);
    TrainConfig cfg = small_config();
    cfg.pi = 1.0;
    cfg.iterations = 2;
    EXPECT_NO_THROW(train(meta, cfg));
}

TEST(Train, SingleIterationIsOneOptimizerStep) {
    const auto meta = gaussian_1d(2, {-4.0, 4.0});
    TrainConfig cfg = small_config();
    cfg.iterations = 1;
    cfg.tasks_per_iteration = 1;
    const auto result = train(meta, cfg);
    ASSERT_EQ(result.report.loss_curve.size(), 1u);

    // Replay by hand with the same random streams.
    Rng init = make_rng(cfg.seed, 0);
    Rng tasks_rng = make_rng(cfg.seed, 1);
    auto model = DetectorModel<double>::create(cfg.architecture(1), cfg.head, init, cfg.inverse_eps);
    const auto before = flat_parameters(model);
    nn::OptimizerState<double> opt(nn::AdamConfig{cfg.learning_rate});
    const auto tasks = sample_iteration_tasks(meta, cfg.mixture(), tasks_rng);
    const double loss = meta_update(model, opt, tasks, cfg);
    EXPECT_EQ(opt.step, 1u);
    EXPECT_EQ(loss, result.report.loss_curve[0]);
    EXPECT_TRUE(bit_equal(flat_parameters(model), flat_parameters(result.model)));
    EXPECT_FALSE(bit_equal(before, flat_parameters(model)));
}

TEST(Train, LossDecreasesOnShiftedGaussians) {
    const auto meta = gaussian_1d(3, {-4.0, 4.0});
    TrainConfig cfg = small_config();
    cfg.iterations = 200;
    cfg.pi = 0.8;
    const auto result = train(meta, cfg);
    const auto& c = result.report.loss_curve;
    ASSERT_EQ(c.size(), 200u);
    EXPECT_LT(mean_of(c, 180, 200), mean_of(c, 0, 20));
}

TEST(Train, PiOneMatchesOneClassTrajectory) {
    const auto meta = gaussian_1d(4, {-4.0, 4.0});
    TrainConfig a = small_config();
    a.pi = 1.0;
    TrainConfig b = a;
    b.loss = LossKind::one_class;
    const auto ra = train(meta, a);
    const auto rb = train(meta, b);
    EXPECT_TRUE(bit_equal(ra.report.loss_curve, rb.report.loss_curve));
    EXPECT_TRUE(bit_equal(flat_parameters(ra.model), flat_parameters(rb.model)));
}

TEST(Train, TaskOrderDoesNotChangeTheUpdate) {
    const auto meta = gaussian_1d(5, {-4.0, 0.0, 4.0});
    TrainConfig cfg = small_config();
    cfg.tasks_per_iteration = 6;
    Rng init = make_rng(1, 0);
    const auto start = DetectorModel<double>::create(cfg.architecture(1), cfg.head, init);
    Rng rng(77);
    const auto tasks = sample_iteration_tasks(meta, cfg.mixture(), rng);

    auto reference = start;
    nn::OptimizerState<double> opt_ref(nn::AdamConfig{cfg.learning_rate});
    const double loss_ref = meta_update(reference, opt_ref, tasks, cfg);

    std::vector<std::size_t> order = {0, 1, 2, 3, 4, 5};
    for (int trial = 0; trial < 10; ++trial) {
        shuffle(order.begin(), order.end(), rng);
        std::vector<TaskBatch> permuted;
        for (std::size_t i : order) permuted.push_back(tasks[i]);
        auto model = start;
        nn::OptimizerState<double> opt(nn::AdamConfig{cfg.learning_rate});
        EXPECT_EQ(meta_update(model, opt, permuted, cfg), loss_ref);
        EXPECT_TRUE(bit_equal(flat_parameters(model), flat_parameters(reference)));
    }
}

TEST(Train, TaskStatisticsAreIsolated) {
    // The iteration loss must equal the mean of losses computed on each task alone; pooling
    // the tasks into one batch would give a different value.
    const auto meta = gaussian_1d(6, {-4.0, 4.0});
    TrainConfig cfg = small_config();
    Rng init = make_rng(2, 0);
    const auto start = DetectorModel<double>::create(cfg.architecture(1), cfg.head, init);
    Rng rng(8);
    const auto tasks = sample_iteration_tasks(meta, MixtureConfig{0.8, 20, 2, true}, rng);
    const double l0 = task_loss_and_gradient(start, tasks[0].x, tasks[0].y, cfg.loss, nn::BnMode::batch_stats).loss;
    const double l1 = task_loss_and_gradient(start, tasks[1].x, tasks[1].y, cfg.loss, nn::BnMode::batch_stats).loss;

    auto model = start;
    nn::OptimizerState<double> opt(nn::AdamConfig{cfg.learning_rate});
    EXPECT_NEAR(meta_update(model, opt, tasks, cfg), 0.5 * (l0 + l1), 1e-14);

    MatrixD pooled(40, 1);
    pooled << tasks[0].x, tasks[1].x;
    VectorD labels(40);
    labels << tasks[0].y, tasks[1].y;
    const double mixed = task_loss_and_gradient(start, pooled, labels, cfg.loss, nn::BnMode::batch_stats).loss;
    EXPECT_GT(std::abs(mixed - 0.5 * (l0 + l1)), 1e-6);
}

TEST(Train, Reproducible) {
    const auto meta = gaussian_1d(7, {-4.0, 4.0});
    const auto a = train(meta, small_config());
    const auto b = train(meta, small_config());
    EXPECT_TRUE(bit_equal(a.report.loss_curve, b.report.loss_curve));
    EXPECT_TRUE(bit_equal(flat_parameters(a.model), flat_parameters(b.model)));
    EXPECT_EQ(a.report.seed, 5u);
}

TEST(Train, ThreadCountDoesNotChangeResults) {
    const auto meta = gaussian_1d(8, {-4.0, 4.0});
    TrainConfig cfg = small_config();
    cfg.iterations = 20;
    const auto single = train(meta, cfg);
    cfg.threads = 3;
    const auto multi = train(meta, cfg);
    EXPECT_TRUE(bit_equal(single.report.loss_curve, multi.report.loss_curve));
    EXPECT_TRUE(bit_equal(flat_parameters(single.model), flat_parameters(multi.model)));
}

TEST(Train, NonFiniteDataDiverges) {
    auto meta = gaussian_1d(9, {-4.0, 4.0});
    meta.pools[0].setConstant(std::numeric_limits<double>::quiet_NaN());
    meta.pools[1].setConstant(std::numeric_limits<double>::quiet_NaN());
    EXPECT_THROW(train(meta, small_config()), DivergenceError);
}

TEST(Train, BnModeDecidesTestStatistics) {
    const auto meta = gaussian_1d(10, {-4.0, 4.0});
    TrainConfig cfg = small_config();
    cfg.iterations = 5;
    cfg.bn_mode = nn::BnMode::frozen;
    const auto frozen = train(meta, cfg);
    EXPECT_EQ(frozen.model.test_mode, nn::BnMode::frozen);
    for (const auto& bn : frozen.model.net.bn_layers()) {
        if (bn) {
            EXPECT_TRUE(bn->frozen_mean.has_value());
        }
    }

    cfg.bn_mode = nn::BnMode::identity;
    const auto identity = train(meta, cfg);
    EXPECT_EQ(identity.model.test_mode, nn::BnMode::identity);
    for (const auto& bn : identity.model.net.bn_layers()) {
        if (bn) {
            EXPECT_FALSE(bn->frozen_mean.has_value());
        }
    }
}

TEST(Train, FrozenCenterStaysAtOrigin) {
    const auto meta = gaussian_1d(11, {-4.0, 4.0});
    TrainConfig cfg = small_config();
    cfg.iterations = 10;
    cfg.freeze_center = true;
    const auto result = train(meta, cfg);
    EXPECT_EQ(result.model.dsvdd.center.squaredNorm(), 0.0);
}

// Without normalization a DSVDD cannot push the summed meta-OE loss of two training
// distributions below 4 sqrt(pi (1 - pi)); the trainer reports the mean over tasks, which
// on two distributions is half the sum.
TEST(Train, NoBatchNormRespectsTrivialOptimum) {
    GaussianMetaSpec spec;
    spec.k_train = 2;
    spec.k_test = 1;
    spec.samples_per_distribution = 500;
    const auto data = generate_gaussian_metaset(spec, 3);
    TrainConfig cfg;
    cfg.iterations = 400;
    cfg.hidden = {32, 32};
    cfg.latent_dim = 16;
    cfg.bn_mode = nn::BnMode::identity;
    cfg.seed = 3;
    const auto result = train(data.train, cfg);
    const double summed = 2.0 * result.report.mean_after(100);
    EXPECT_GE(summed, no_bn_trivial_loss_value(cfg.pi) - 0.15);
    for (std::size_t t = 100; t < result.report.loss_curve.size(); t += 50)
        EXPECT_GE(2.0 * mean_of(result.report.loss_curve, t, t + 50), no_bn_trivial_loss_value(cfg.pi) - 0.15);
}

TEST(OrderInvariantMean, IndependentOfOrder) {
    const std::vector<std::vector<double>> parts = {{1e16, 1.0}, {1.0, -3.0}, {-1e16, 0.5}};
    const auto a = detail::order_invariant_mean(parts);
    const auto b = detail::order_invariant_mean({parts[2], parts[0], parts[1]});
    EXPECT_TRUE(bit_equal(a, b));
    EXPECT_DOUBLE_EQ(a[1], -0.5);
}
