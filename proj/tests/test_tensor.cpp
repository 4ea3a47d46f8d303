#include <catch2/catch_amalgamated.hpp>

#include "editlab/rng.hpp"
#include "editlab/sgd.hpp"
#include "editlab/tensor.hpp"
#include "helpers.hpp"

using namespace editlab;
using testutil::conv_oracle;
using testutil::gradcheck;
using testutil::max_abs_diff;

TEST_CASE("conv2d 1x1 identity kernel reproduces the input") {
    Rng rng(1);
    auto x = randn_tensor({3, 5, 5}, rng);
    auto w = make_tensor({3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) w->data[(c * 3 + c)] = 1.0;
    auto y = conv2d(x, w, 1, 0);
    REQUIRE(y->shape == x->shape);
    REQUIRE(max_abs_diff(y, x) == 0.0);
}

TEST_CASE("conv2d all-ones 3x3 sums to 9") {
    auto x = full_like_shape({1, 3, 3}, 1.0);
    auto w = full_like_shape({1, 1, 3, 3}, 1.0);
    auto y = conv2d(x, w, 1, 0);
    REQUIRE(y->shape == std::vector<int>{1, 1, 1});
    REQUIRE(y->data[0] == 9.0);
}

TEST_CASE("conv2d matches the direct six-loop oracle") {
    Rng rng(7);
    auto w = randn_tensor({4, 2, 3, 3}, rng);
    {
        auto x = randn_tensor({2, 6, 6}, rng);
        auto mine = conv2d(x, w, 1, 1);
        auto ref = conv_oracle(x, w, 1, 1);
        REQUIRE(mine->shape == ref->shape);
        REQUIRE(max_abs_diff(mine, ref) <= 1e-12);
    }
    {
        auto x = randn_tensor({2, 7, 7}, rng);
        auto mine = conv2d(x, w, 2, 1);
        auto ref = conv_oracle(x, w, 2, 1);
        REQUIRE(mine->shape == ref->shape);
        REQUIRE(max_abs_diff(mine, ref) <= 1e-12);
    }
}

TEST_CASE("conv2d dimension errors name the offending axis") {
    Rng rng(3);
    auto x = randn_tensor({2, 5, 5}, rng);
    auto bad_w = randn_tensor({4, 3, 3, 3}, rng);
    REQUIRE_THROWS_MATCHES(conv2d(x, bad_w, 1, 1), DimensionError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("channel axis")));
    auto w = randn_tensor({4, 2, 3, 3}, rng);
    auto x2 = randn_tensor({2, 6, 6}, rng);
    REQUIRE_THROWS_AS(conv2d(x2, w, 2, 0), DimensionError);  // 6-3=3 not divisible by 2
    auto even = randn_tensor({4, 2, 2, 2}, rng);
    REQUIRE_THROWS_AS(conv2d(x, even, 1, 0), DimensionError);  // even kernel
}

TEST_CASE("backward of sum(W x) broadcasts x into every row of grad(W)") {
    Rng rng(11);
    auto W = leaf_param(randn_tensor({4, 6}, rng));
    auto x = randn_tensor({6}, rng);
    backward(sum(matvec(W, x)));
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 6; ++j) REQUIRE(W->grad[i * 6 + j] == x->data[j]);
}

TEST_CASE("backward requires a scalar loss") {
    Rng rng(5);
    auto v = leaf_param(randn_tensor({3}, rng));
    REQUIRE_THROWS_AS(backward(scale(v, 2.0)), ContractError);
}

TEST_CASE("gradient of a parameter not reaching the loss stays exactly zero") {
    Rng rng(13);
    auto used = leaf_param(randn_tensor({3, 3}, rng));
    auto unused = leaf_param(randn_tensor({5}, rng));
    auto x = randn_tensor({3}, rng);
    backward(sum_squares(matvec(used, x)));
    for (double g : unused->grad) REQUIRE(g == 0.0);
}

TEST_CASE("leaf gradients accumulate across backward calls") {
    Rng rng(17);
    auto W = leaf_param(randn_tensor({2, 2}, rng));
    auto x = randn_tensor({2}, rng);
    auto loss = sum(matvec(W, x));
    backward(loss);
    auto once = W->grad;
    backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i) REQUIRE(W->grad[i] == 2.0 * once[i]);
}

TEST_CASE("finite differences validate a 2-layer ReLU net MSE loss") {
    Rng rng(23);
    auto W1 = randn_tensor({8, 5}, rng);
    auto b1 = randn_tensor({8}, rng, 0.1);
    auto W2 = randn_tensor({3, 8}, rng);
    auto b2 = randn_tensor({3}, rng, 0.1);
    std::vector<TensorPtr> xs, ys;
    for (int s = 0; s < 4; ++s) {
        xs.push_back(randn_tensor({5}, rng));
        ys.push_back(randn_tensor({3}, rng));
    }
    auto loss_fn = [&] {
        TensorPtr total = make_scalar(0.0);
        for (int s = 0; s < 4; ++s) {
            auto out = affine(W2, relu(affine(W1, xs[s], b1)), b2);
            total = add(total, scale(sum_squares(sub(out, ys[s])), 0.25));
        }
        return total;
    };
    REQUIRE(gradcheck({W1, b1, W2, b2}, loss_fn) < 1e-5);
}

TEST_CASE("finite differences validate conv, norm, bias and channel_linear") {
    Rng rng(29);
    auto x = randn_tensor({2, 5, 5}, rng);
    auto w = randn_tensor({3, 2, 3, 3}, rng);
    auto b = randn_tensor({3}, rng, 0.1);
    auto gamma = full_like_shape({3}, 1.0);
    auto beta = make_tensor({3});
    std::vector<double> mean = {0.1, -0.2, 0.05}, var = {1.2, 0.8, 1.0};
    auto loss_fn = [&] {
        auto h = add_channel_bias(conv2d(x, w, 2, 1), b);
        return sum_squares(relu(frozen_norm(h, gamma, beta, mean, var)));
    };
    REQUIRE(gradcheck({w, b, gamma, beta}, loss_fn) < 1e-5);

    auto M = randn_tensor({4, 2}, rng);
    auto loss2 = [&] { return sum_squares(channel_linear(x, M, 2, 1)); };
    REQUIRE(gradcheck({M}, loss2) < 1e-5);

    auto Mt = randn_tensor({2, 4}, rng);
    auto loss3 = [&] { return sum_squares(channel_linear(x, Mt, 1, 0, true)); };
    REQUIRE(gradcheck({Mt}, loss3) < 1e-5);
}

TEST_CASE("finite differences validate cross entropy and matvec_t") {
    Rng rng(31);
    auto W = randn_tensor({4, 7}, rng);
    auto x = randn_tensor({7}, rng);
    auto loss_fn = [&] { return cross_entropy_logits(matvec(W, x), 2); };
    REQUIRE(gradcheck({W}, loss_fn) < 1e-5);

    auto A = randn_tensor({6, 3}, rng);
    auto v = randn_tensor({6}, rng);
    auto loss2 = [&] { return sum_squares(matvec_t(A, v)); };
    REQUIRE(gradcheck({A}, loss2) < 1e-5);
}

TEST_CASE("cross entropy rejects labels out of range") {
    Rng rng(37);
    auto z = randn_tensor({4}, rng);
    REQUIRE_THROWS_AS(cross_entropy_logits(z, 4), ContractError);
    REQUIRE_THROWS_AS(cross_entropy_logits(z, -1), ContractError);
}

TEST_CASE("conv2d with a 1x1 kernel equals per-position channel matmul") {
    Rng rng(41);
    auto x = randn_tensor({3, 4, 4}, rng);
    auto w = randn_tensor({5, 3, 1, 1}, rng);
    auto y = conv2d(x, w, 1, 0);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            for (int o = 0; o < 5; ++o) {
                double acc = 0.0;
                for (int c = 0; c < 3; ++c)
                    acc += w->data[o * 3 + c] * x->data[(c * 4 + i) * 4 + j];
                REQUIRE(std::abs(y->data[(o * 4 + i) * 4 + j] - acc) <= 1e-12);
            }
}

TEST_CASE("zero-padding a 1x1 kernel into a KxK center reproduces the 1x1 conv") {
    Rng rng(43);
    auto x = randn_tensor({2, 6, 6}, rng);
    auto w1 = randn_tensor({3, 2, 1, 1}, rng);
    for (int K : {3, 5}) {
        auto wk = make_tensor({3, 2, K, K});
        const int c0 = K / 2;
        for (int o = 0; o < 3; ++o)
            for (int c = 0; c < 2; ++c)
                wk->data[((o * 2 + c) * K + c0) * K + c0] = w1->data[o * 2 + c];
        auto a = conv2d(x, w1, 1, 0);
        auto b = conv2d(x, wk, 1, (K - 1) / 2);
        REQUIRE(a->shape == b->shape);
        REQUIRE(max_abs_diff(a, b) == 0.0);
    }
}

TEST_CASE("channel_linear with stride/offset matches a centered strided kernel") {
    Rng rng(47);
    auto x = randn_tensor({2, 9, 9}, rng);
    auto M = randn_tensor({3, 2}, rng);
    // K=3 pad=0 stride=2 base conv grid: out 4x4, offset = 1
    auto wk = make_tensor({3, 2, 3, 3});
    for (int o = 0; o < 3; ++o)
        for (int c = 0; c < 2; ++c) wk->data[((o * 2 + c) * 3 + 1) * 3 + 1] = M->data[o * 2 + c];
    auto ref = conv2d(x, wk, 2, 0);
    auto mine = channel_linear(x, M, 2, 1, false, ref->shape[1], ref->shape[2]);
    REQUIRE(mine->shape == ref->shape);
    REQUIRE(max_abs_diff(mine, ref) == 0.0);
}

TEST_CASE("sgd vanilla step") {
    std::vector<ParamGroup> params;
    params.emplace_back("layers.0.weight", make_tensor({1}, {1.0}));
    params[0].tensor->grad = {2.0};
    sgd_step(params, SgdConfig{0.1, 0.0, 0.0});
    REQUIRE(params[0].tensor->data[0] == Catch::Approx(0.8).margin(1e-15));
}

TEST_CASE("sgd momentum follows the hand recurrence") {
    std::vector<ParamGroup> params;
    params.emplace_back("layers.0.weight", make_tensor({1}, {0.0}));
    params[0].tensor->grad = {1.0};
    const SgdConfig cfg{0.1, 0.9, 0.0};
    sgd_step(params, cfg);
    REQUIRE(params[0].tensor->data[0] == Catch::Approx(-0.1).margin(1e-15));
    params[0].tensor->grad = {1.0};
    sgd_step(params, cfg);
    REQUIRE(params[0].momentum_buffer[0] == Catch::Approx(1.9).margin(1e-15));
    REQUIRE(params[0].tensor->data[0] == Catch::Approx(-0.29).margin(1e-15));
}

TEST_CASE("weight decay applies only to weight-class parameters") {
    auto run = [](const std::string& name, double decay) {
        std::vector<ParamGroup> params;
        params.emplace_back(name, make_tensor({1}, {0.5}));
        params[0].tensor->grad = {0.3};
        sgd_step(params, SgdConfig{0.05, 0.9, decay});
        return params[0].tensor->data[0];
    };
    REQUIRE(run("layers.1.bias", 1e-4) == run("layers.1.bias", 0.0));
    REQUIRE(run("edit.u", 1e-4) == run("edit.u", 0.0));
    REQUIRE(run("layers.1.weight", 1e-4) != run("layers.1.weight", 0.0));
}

TEST_CASE("sgd step is deterministic and errors on missing grads") {
    Rng rng(53);
    auto t1 = randn_tensor({8}, rng);
    auto t2 = make_tensor({8}, t1->data);
    std::vector<ParamGroup> a, b;
    a.emplace_back("layers.0.weight", t1);
    b.emplace_back("layers.0.weight", t2);
    for (int i = 0; i < 8; ++i) a[0].tensor->grad[i] = b[0].tensor->grad[i] = 0.1 * i;
    const SgdConfig cfg{0.01, 0.9, 1e-4};
    sgd_step(a, cfg);
    sgd_step(b, cfg);
    REQUIRE(testutil::bitwise_equal(t1->data, t2->data));

    std::vector<ParamGroup> c;
    c.emplace_back("layers.0.weight", make_tensor({3}));
    c[0].tensor->grad.clear();
    REQUIRE_THROWS_AS(sgd_step(c, cfg), ContractError);
}

TEST_CASE("rng streams are reproducible and distinct per path") {
    Rng a(derive_seed(99, "x")), b(derive_seed(99, "x")), c(derive_seed(99, "y"));
    bool same = true, differ = false;
    for (int i = 0; i < 16; ++i) {
        auto va = a.next_u64(), vb = b.next_u64(), vc = c.next_u64();
        same = same && va == vb;
        differ = differ || va != vc;
    }
    REQUIRE(same);
    REQUIRE(differ);
}
