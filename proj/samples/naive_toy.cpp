// A detector with no parameters at all: standardize each batch with its own mean and
// variance and score by squared norm. Works under arbitrary per-batch shifts because
// it never compares samples across batches.

#include <cstdio>
#include <vector>

#include "acr/detectors.hpp"
#include "acr/evaluator.hpp"
#include "acr/rng.hpp"

int main() {
    acr::Rng rng(1);
    std::vector<double> scores;
    std::vector<int> labels;
    for (int b = 0; b < 5; ++b) {
        const double mu = -100.0 + 200.0 * acr::uniform_unit(rng);
        acr::MatrixD x(20, 1);
        for (acr::Index i = 0; i < 20; ++i) x(i, 0) = mu + (i == 0 ? 5.0 : 0.0) + acr::standard_normal(rng);
        const acr::VectorD s = acr::naive_bn_score<double>(x);
        std::printf("batch %d  mu = %7.2f  anomaly score %5.2f  max normal score %5.2f\n", b, mu, s[0],
                    s.tail(19).maxCoeff());
        for (acr::Index i = 0; i < 20; ++i) {
            scores.push_back(s[i]);
            labels.push_back(i == 0 ? 1 : 0);
        }
    }
    std::printf("pooled AUROC %.3f\n", acr::auroc(scores, labels));
}
