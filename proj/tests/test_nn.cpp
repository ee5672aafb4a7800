#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mtc/nn.hpp"

using namespace mtc;

namespace {

template <typename T>
Tensor<T> random_batch(int b, int c, int l, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    Tensor<T> t({b, c, l});
    for (auto& v : t.v) v = static_cast<T>(dist(rng));
    return t;
}

}  // namespace

TEST_CASE("shape algebra: valid and same conv, pooling") {
    CHECK(conv_out_len(784, 7, 5, Padding::valid) == 156);
    CHECK(conv_out_len(10, 3, 2, Padding::same) == 5);
    CHECK(pool_out_len(10, 3) == 3);
    CHECK_THROWS_AS(conv_out_len(5, 7, 1, Padding::valid), CollapsedWidth);
}

TEST_CASE("shape algebra: property over the searchable ranges") {
    // oracle: enumerate window positions explicitly
    for (int k = 1; k <= 7; ++k)
        for (int s = 1; s <= 6; ++s)
            for (int len : {1, 2, 3, 7, 10, 99, 784}) {
                if (len >= k) {
                    int count = 0;
                    for (int start = 0; start + k <= len; start += s) ++count;
                    CHECK(conv_out_len(len, k, s, Padding::valid) == count);
                }
                CHECK(conv_out_len(len, k, s, Padding::same) == (len + s - 1) / s);
                if (len >= s) {
                    int count = 0;
                    for (int start = 0; start + s <= len; start += s) ++count;
                    CHECK(pool_out_len(len, s) == count);
                }
            }
}

TEST_CASE("forward: conv output lengths materialize in tensors") {
    auto model = Model<float>::build(
        {Conv1DSpec{1, 4, 7, 5, Padding::valid}, ReLUSpec{}, GlobalAvgPoolSpec{},
         DenseSpec{4, 3}, SoftmaxSpec{}},
        1);
    auto batch = random_batch<float>(2, 1, 784, 42);
    auto probs = model.forward(batch, RunMode::infer);
    REQUIRE(probs.shape == std::vector<int>{2, 3});
}

TEST_CASE("forward: softmax rows sum to one") {
    auto model = Model<float>::build(
        {Conv1DSpec{1, 8, 3, 2, Padding::same}, BatchNormSpec{8}, ReLUSpec{}, MaxPool1DSpec{2},
         DropoutSpec{0.3}, GlobalAvgPoolSpec{}, DenseSpec{8, 5}, SoftmaxSpec{}},
        7);
    auto batch = random_batch<float>(4, 1, 50, 1);
    for (auto mode : {RunMode::train, RunMode::infer}) {
        auto probs = model.forward(batch, mode);
        for (int b = 0; b < 4; ++b) {
            float sum = 0;
            for (int c = 0; c < 5; ++c) {
                float p = probs.v[static_cast<std::size_t>(b) * 5 + c];
                CHECK(p >= 0.0f);
                sum += p;
            }
            CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-6));
        }
    }
}

TEST_CASE("cross entropy: analytic values") {
    Tensor<float> perfect({2, 3}, {1, 0, 0, 0, 1, 0});
    CHECK_THAT(cross_entropy(perfect, {0, 1}), Catch::Matchers::WithinAbs(0.0, 1e-6));

    Tensor<float> uniform({1, 4}, {0.25f, 0.25f, 0.25f, 0.25f});
    CHECK_THAT(cross_entropy(uniform, {2}), Catch::Matchers::WithinAbs(std::log(4.0), 1e-6));

    Tensor<float> mixed({2, 2}, {0.5f, 0.5f, 0.75f, 0.25f});
    double expected = (-std::log(0.5) - std::log(0.25)) / 2.0;
    CHECK_THAT(cross_entropy(mixed, {0, 1}), Catch::Matchers::WithinAbs(expected, 1e-6));
}

TEST_CASE("cross entropy: shape errors") {
    Tensor<float> probs({2, 3}, {1, 0, 0, 0, 1, 0});
    CHECK_THROWS_AS(cross_entropy(probs, {0}), ShapeMismatch);
    CHECK_THROWS_AS(cross_entropy(probs, {0, 5}), ShapeMismatch);
}

TEST_CASE("backward without forward raises StaleCache") {
    auto model = Model<float>::build({DenseSpec{4, 2}, SoftmaxSpec{}}, 1);
    ForwardCache<float> cache;
    CHECK_THROWS_AS(model.backward(cache, {0}), StaleCache);
}

TEST_CASE("backward: zero-weight dense on zero input gives softmax-minus-onehot bias grad") {
    auto model = Model<float>::build({DenseSpec{4, 3}, SoftmaxSpec{}}, 1);
    for (auto& t : model.params[0]) std::fill(t.v.begin(), t.v.end(), 0.0f);
    Tensor<float> zeros({2, 4, 1});
    ForwardCache<float> cache;
    auto probs = model.forward(zeros, RunMode::train, &cache);
    auto grads = model.backward(cache, {0, 1});
    for (float g : grads[0][0].v) CHECK(g == 0.0f);  // weight grad zero
    // uniform softmax: p = 1/3; bias grad = mean over batch of (p - onehot)
    CHECK_THAT(grads[0][1].v[0], Catch::Matchers::WithinAbs((1.0 / 3 - 1 + 1.0 / 3) / 2, 1e-6));
    CHECK_THAT(grads[0][1].v[2], Catch::Matchers::WithinAbs(1.0 / 3, 1e-6));
}

TEST_CASE("dropout rate 0 matches dropout removed") {
    std::vector<LayerSpec> with = {Conv1DSpec{1, 3, 3, 1, Padding::valid}, ReLUSpec{},
                                   DropoutSpec{0.0}, GlobalAvgPoolSpec{}, DenseSpec{3, 2},
                                   SoftmaxSpec{}};
    std::vector<LayerSpec> without = {Conv1DSpec{1, 3, 3, 1, Padding::valid}, ReLUSpec{},
                                      GlobalAvgPoolSpec{}, DenseSpec{3, 2}, SoftmaxSpec{}};
    auto m1 = Model<float>::build(with, 3);
    auto m2 = Model<float>::build(without, 3);
    m2.params[0] = m1.params[0];
    m2.params[3] = m1.params[4];
    auto batch = random_batch<float>(2, 1, 12, 5);
    ForwardCache<float> c1, c2;
    m1.forward(batch, RunMode::train, &c1);
    m2.forward(batch, RunMode::train, &c2);
    auto g1 = m1.backward(c1, {0, 1});
    auto g2 = m2.backward(c2, {0, 1});
    for (std::size_t j = 0; j < g1[0].size(); ++j)
        for (std::size_t k = 0; k < g1[0][j].v.size(); ++k)
            CHECK(g1[0][j].v[k] == g2[0][j].v[k]);
}

TEST_CASE("determinism: same seed and data give identical forward results") {
    auto batch = random_batch<float>(3, 1, 40, 9);
    auto run = [&] {
        auto m = Model<float>::build({Conv1DSpec{1, 6, 5, 2, Padding::valid}, BatchNormSpec{6},
                                      ReLUSpec{}, DropoutSpec{0.4}, GlobalAvgPoolSpec{},
                                      DenseSpec{6, 2}, SoftmaxSpec{}},
                                     77);
        return m.forward(batch, RunMode::train).v;
    };
    CHECK(run() == run());
}

TEST_CASE("batchnorm: infer-mode forward is per-sample consistent") {
    auto model = Model<float>::build({Conv1DSpec{1, 4, 3, 2, Padding::valid}, BatchNormSpec{4},
                                      ReLUSpec{}, GlobalAvgPoolSpec{}, DenseSpec{4, 3},
                                      SoftmaxSpec{}},
                                     13);
    // move the running stats off their init values
    auto warm = random_batch<float>(8, 1, 30, 2);
    model.forward(warm, RunMode::train);

    auto batch = random_batch<float>(5, 1, 30, 3);
    auto joint = model.forward(batch, RunMode::infer);
    for (int b = 0; b < 5; ++b) {
        Tensor<float> one({1, 1, 30});
        std::copy(batch.v.begin() + b * 30, batch.v.begin() + (b + 1) * 30, one.v.begin());
        auto single = model.forward(one, RunMode::infer);
        for (int c = 0; c < 3; ++c)
            CHECK_THAT(single.v[c],
                       Catch::Matchers::WithinAbs(joint.v[static_cast<std::size_t>(b) * 3 + c], 1e-6));
    }
}

TEST_CASE("dropout: inverted scaling keeps the expected activation") {
    // statistical: mean over many masks approaches the infer-mode value
    const double rate = 0.3;
    const int trials = 20000;
    auto model = Model<float>::build({DropoutSpec{rate}}, 99);
    Tensor<float> x({1, 1, 8});
    for (int i = 0; i < 8; ++i) x.v[i] = 1.0f + static_cast<float>(i);
    auto infer = model.forward(x, RunMode::infer);
    std::vector<double> sums(8, 0.0);
    for (int t = 0; t < trials; ++t) {
        auto y = model.forward(x, RunMode::train);
        for (int i = 0; i < 8; ++i) sums[i] += y.v[i];
    }
    for (int i = 0; i < 8; ++i) {
        double mean = sums[i] / trials;
        // 3 sigma of the Bernoulli estimator
        double p = 1.0 - rate;
        double sigma = infer.v[i] / p * std::sqrt(p * (1 - p) / trials);
        CHECK_THAT(mean, Catch::Matchers::WithinAbs(infer.v[i], 3.0 * sigma));
    }
}
