#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "editlab/checkpoint.hpp"
#include "editlab/network.hpp"
#include "helpers.hpp"

using namespace editlab;
using testutil::max_abs_diff;

namespace {

Network tiny_dense_net(std::uint64_t seed) {
    Rng rng(seed);
    Network net;
    net.arch_id = "test-tiny/c3";
    net.input_shape = {6};
    net.layers.push_back(DenseLayer{randn_tensor({5, 6}, rng), randn_tensor({5}, rng, 0.1)});
    net.layers.push_back(ReluLayer{});
    net.layers.push_back(DenseLayer{randn_tensor({3, 5}, rng), randn_tensor({3}, rng, 0.1)});
    return net;
}

Network constant_output_net(const std::vector<double>& logits) {
    Network net;
    net.arch_id = "test-const/c" + std::to_string(logits.size());
    net.input_shape = {4};
    const int C = static_cast<int>(logits.size());
    net.layers.push_back(DenseLayer{make_tensor({C, 4}), make_tensor({C}, logits)});
    return net;
}

}  // namespace

TEST_CASE("forward_prefix: l=0 is identity, l=L is the full forward") {
    auto net = tiny_dense_net(1);
    Rng rng(2);
    auto x = randn_tensor({6}, rng);
    REQUIRE(max_abs_diff(forward_prefix(net, 0, x), x) == 0.0);
    REQUIRE(max_abs_diff(forward_prefix(net, net.layer_count(), x), forward(net, x)) == 0.0);
    REQUIRE_THROWS_AS(forward_prefix(net, -1, x), ContractError);
    REQUIRE_THROWS_AS(forward_prefix(net, net.layer_count() + 1, x), ContractError);
}

TEST_CASE("forward_prefix at l=2 equals applying the first two layers manually") {
    auto net = tiny_dense_net(3);
    Rng rng(4);
    auto x = randn_tensor({6}, rng);
    auto manual = net.apply_layer(1, net.apply_layer(0, x));
    REQUIRE(max_abs_diff(forward_prefix(net, 2, x), manual) == 0.0);
}

TEST_CASE("forward_suffix mirrors forward_prefix and composes to the full forward") {
    auto net = build_cnn_small(4, 99);
    Rng rng(5);
    auto x = randn_tensor({3, 32, 32}, rng);
    auto full = forward(net, x);
    REQUIRE(max_abs_diff(forward_suffix(net, net.layer_count(), full), full) == 0.0);
    for (int l = 0; l <= net.layer_count(); ++l) {
        auto composed = forward_suffix(net, l, forward_prefix(net, l, x));
        REQUIRE(composed->shape == full->shape);
        REQUIRE(max_abs_diff(composed, full) == 0.0);
    }
}

TEST_CASE("accuracy on constant-output nets") {
    auto net = constant_output_net({0.1, 0.9, 0.3});
    Rng rng(6);
    LabeledDataset all_hit, all_miss;
    for (int i = 0; i < 8; ++i) {
        all_hit.images.push_back(randn_tensor({4}, rng));
        all_hit.labels.push_back(1);
        all_miss.images.push_back(randn_tensor({4}, rng));
        all_miss.labels.push_back(2);
    }
    REQUIRE(accuracy(net, all_hit) == 1.0);
    REQUIRE(accuracy(net, all_miss) == 0.0);
    REQUIRE_THROWS_AS(accuracy(net, LabeledDataset{}), ContractError);
}

TEST_CASE("accuracy counts 7 of 10 and ties break to the lowest class index") {
    auto net = constant_output_net({0.4, 0.4, 0.1});
    Rng rng(7);
    LabeledDataset data;
    for (int i = 0; i < 10; ++i) {
        data.images.push_back(randn_tensor({4}, rng));
        data.labels.push_back(i < 7 ? 0 : 2);  // argmax ties at {0,1} -> predicts 0
    }
    REQUIRE(accuracy(net, data) == 0.7);
}

TEST_CASE("checkpoint capture/restore round-trips bit-exactly") {
    auto net = build_cnn_small(5, 11);
    auto ck = capture(net);
    auto other = build_cnn_small(5, 999);  // different init, same architecture
    restore(other, ck);
    auto a = testutil::all_params(net);
    auto b = testutil::all_params(other);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(testutil::bitwise_equal(a[i], b[i]));
    // frozen statistics travel as buffers
    for (int i = 0; i < net.layer_count(); ++i)
        if (auto* fn = std::get_if<FrozenNormLayer>(&net.layers[i])) {
            auto* fo = std::get_if<FrozenNormLayer>(&other.layers[i]);
            REQUIRE(fn->mean == fo->mean);
            REQUIRE(fn->var == fo->var);
        }
}

TEST_CASE("checkpoints of the same architecture share a layout") {
    auto a = capture(build_cnn_small(4, 1));
    auto b = capture(build_cnn_small(4, 2));
    REQUIRE(a.same_layout(b));
    auto c = capture(build_cnn_small(5, 1));
    REQUIRE_FALSE(a.same_layout(c));
    REQUIRE_THROWS_AS(interpolate(a, c, 0.5), ContractError);
}

TEST_CASE("interpolation endpoints are exact and the midpoint is the average") {
    auto net = build_mlp_small(3, 21);
    auto a = capture(net);
    auto b = a;
    for (auto& v : b.flat) v = 3.0;
    for (auto& v : a.flat) v = 1.0;
    auto mid = interpolate(a, b, 0.5);
    for (double v : mid.flat) REQUIRE(v == 2.0);
    auto at0 = interpolate(a, b, 0.0);
    auto at1 = interpolate(a, b, 1.0);
    REQUIRE(testutil::bitwise_equal(at0.flat, a.flat));
    REQUIRE(testutil::bitwise_equal(at1.flat, b.flat));
    bool extrapolated = false;
    interpolate(a, b, 1.5, &extrapolated);
    REQUIRE(extrapolated);
    interpolate(a, b, 0.5, &extrapolated);
    REQUIRE_FALSE(extrapolated);
}

TEST_CASE("interpolate(a, a, alpha) stays within 1e-12 of a") {
    auto net = build_cnn_small(3, 31);
    auto a = capture(net);
    for (double alpha : {0.0, 0.1, 0.3, 0.7, 1.0}) {
        auto r = interpolate(a, a, alpha);
        for (std::size_t i = 0; i < a.flat.size(); ++i)
            REQUIRE(std::abs(r.flat[i] - a.flat[i]) <=
                    1e-12 * std::max(1.0, std::abs(a.flat[i])));
        REQUIRE(r.buffers == a.buffers);  // statistics bypass interpolation entirely
    }
}

TEST_CASE("checkpoint file round-trip with sidecar") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "editlab_test_ckpt";
    fs::create_directories(dir);
    auto net = build_cnn_small(4, 77);
    auto ck = capture(net);
    const auto path = dir / "model.ckpt";
    save_checkpoint(path, ck, {{"kind", "test"}, {"arch", net.arch_id}});
    auto loaded = load_checkpoint(path);
    REQUIRE(loaded.same_layout(ck));
    REQUIRE(testutil::bitwise_equal(loaded.flat, ck.flat));
    REQUIRE(testutil::bitwise_equal(loaded.buffers, ck.buffers));
    auto kv = read_kv(path.string() + ".meta");
    REQUIRE(kv.at("kind") == "test");
    fs::remove_all(dir);
}

TEST_CASE("presets expose the expected editable layers") {
    auto mlp = build_mlp_small(4, 1);
    REQUIRE(mlp.editable_indices() == std::vector<int>{1, 3, 5});
    auto cnn = build_cnn_small(4, 1);
    REQUIRE(cnn.editable_indices() == std::vector<int>{0, 2, 5, 7, 11});
    Rng rng(8);
    auto x = randn_tensor({3, 32, 32}, rng);
    REQUIRE(forward(cnn, x)->shape == std::vector<int>{4});
    REQUIRE(forward(mlp, x)->shape == std::vector<int>{4});
    REQUIRE(build_preset("cnn-small/c4", 1).arch_id == "cnn-small/c4");
    REQUIRE_THROWS_AS(build_preset("bogus", 1), ContractError);
}

TEST_CASE("collect_params names follow the weight/bias convention") {
    auto net = build_cnn_small(3, 5);
    auto params = collect_params(net);
    REQUIRE(params.size() == 14);  // 5 conv/dense pairs + 2 norm pairs
    for (const auto& p : params) {
        const bool w = p.name.find("weight") != std::string::npos;
        const bool b = p.name.find("bias") != std::string::npos;
        REQUIRE((w || b));
        REQUIRE(p.weight_class() == w);
        REQUIRE(p.momentum_buffer.size() == p.tensor->data.size());
    }
}
