// Train on eight Gaussian distributions, then detect anomalies in four unseen ones
// without any further fitting.

#include <cstdio>
#include <cstdlib>

#include "acr/data_io.hpp"
#include "acr/evaluator.hpp"
#include "acr/trainer.hpp"

int main(int argc, char** argv) {
    const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 0;
    const auto data = acr::generate_gaussian_metaset(acr::GaussianMetaSpec::gaussian8(), seed);

    acr::TrainConfig cfg;
    cfg.seed = seed;
    cfg.iterations = 500;
    const auto trained = acr::train(data.train, cfg);
    std::printf("trained %zu iterations in %.1f s, final loss %.4f\n", cfg.iterations,
                trained.report.wall_clock_seconds, trained.report.final_loss());

    acr::EvalConfig eval;
    eval.seed = seed;
    const auto report = acr::evaluate(trained.model, data.test, eval);
    for (const auto& c : report.cells)
        std::printf("%4.0f%% anomalies: AUROC %.3f +- %.3f\n", 100.0 * (1.0 - c.ratio), c.mean, c.std);

    // Same network, but normalized with statistics from the training tasks instead of
    // the test batch.
    auto frozen = trained.model;
    frozen.test_mode = acr::nn::BnMode::frozen;
    std::printf("with training statistics at test time: AUROC %.3f\n", acr::evaluate(frozen, data.test, eval).auroc);
}
