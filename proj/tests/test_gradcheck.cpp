#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mtc/arch.hpp"
#include "mtc/nn.hpp"

#include "gradcheck.hpp"

using namespace mtc;

TEST_CASE("gradients: dense + softmax micro model") {
    auto model = Model<double>::build({DenseSpec{6, 3}, SoftmaxSpec{}}, 1);
    CHECK(testing::max_gradient_error(model, 4, 6, 42) < 1e-3);
}

TEST_CASE("gradients: every layer type in one stack") {
    auto model = Model<double>::build(
        {Conv1DSpec{1, 4, 5, 2, Padding::same}, BatchNormSpec{4}, ReLUSpec{}, MaxPool1DSpec{2},
         DropoutSpec{0.25}, Conv1DSpec{4, 3, 3, 1, Padding::valid}, BatchNormSpec{3}, ReLUSpec{},
         AvgPool1DSpec{2}, DropoutSpec{0.1}, GlobalAvgPoolSpec{}, DenseSpec{3, 4}, SoftmaxSpec{}},
        7);
    CHECK(testing::max_gradient_error(model, 3, 40, 17) < 1e-3);
}

TEST_CASE("gradients: random two-block genome models") {
    std::mt19937 rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        ArchGenome g;
        g.n_classes = 2 + static_cast<int>(rng() % 4);
        for (int b = 0; b < 2; ++b) {
            BlockGene gene;
            gene.filters = 2 + static_cast<int>(rng() % 4);
            gene.kernel = 3 + static_cast<int>(rng() % 3);
            gene.stride = 1 + static_cast<int>(rng() % 2);
            gene.padding = rng() % 2 ? Padding::same : Padding::valid;
            gene.pool = static_cast<PoolKind>(rng() % 3);
            gene.pool_size = 2;
            gene.dropout = 0.1 + 0.1 * (rng() % 3);
            g.blocks.push_back(gene);
        }
        auto model = instantiate<double>(g, 100 + trial, 32);
        CHECK(testing::max_gradient_error(model, 3, 32, 200 + trial) < 1e-3);
    }
}
