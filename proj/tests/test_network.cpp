#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <random>

#include "aedet/dataset.hpp"
#include "aedet/network.hpp"

using namespace aedet;

TEST_CASE("build_small_convnet construction contract") {
    auto cfg = build_small_convnet({1, 28, 28}, 10);
    REQUIRE(cfg.taps.size() == 4);
    auto shapes = layer_output_shapes(cfg);
    CHECK(tap_shape(cfg, "tap4") == std::vector<int>{10});
    CHECK(tap_shape(cfg, "tap1") == std::vector<int>{16, 28, 28});
    CHECK(tap_shape(cfg, "tap2") == std::vector<int>{32, 14, 14});
    CHECK(tap_shape(cfg, "tap3") == std::vector<int>{64, 7, 7});

    auto cfg2 = build_small_convnet({3, 32, 32}, 10);
    CHECK(cfg2.taps.size() == 4);
    CHECK(tap_shape(cfg2, "tap1") == std::vector<int>{16, 32, 32});
    CHECK(tap_shape(cfg2, "tap3")[1] > tap_shape(cfg, "tap3")[1]);

    // parameter count equals the closed-form sum over layer specs
    const size_t expect = (16 * 1 * 9 + 16) + (32 * 16 * 9 + 32) + (64 * 32 * 9 + 64) +
                          (64 * 7 * 7 * 10 + 10);
    CHECK(parameter_count(cfg) == expect);
    auto net = init_network(cfg, 1);
    size_t actual = 0;
    for (const auto& p : net.params) actual += p.numel();
    CHECK(actual == expect);

    CHECK_THROWS_AS(build_small_convnet({1, 4, 4}, 10), config_error);
}

TEST_CASE("train_classifier learns separable blobs and is deterministic") {
    auto data = synth_dataset(2, 80, 16, 1.5f, 7);
    auto cfg = build_small_convnet({1, 16, 16}, 2);
    auto net = train_classifier(cfg, data, 5, 1e-3f, 16, 123);
    CHECK(net.meta.val_accuracy >= 0.99f);

    auto net2 = train_classifier(cfg, data, 5, 1e-3f, 16, 123);
    REQUIRE(net.params.size() == net2.params.size());
    for (size_t i = 0; i < net.params.size(); ++i)
        CHECK(net.params[i].data == net2.params[i].data);  // bit-identical per seed

    CHECK_THROWS_AS(train_classifier(cfg, data, 0, 1e-3f, 16, 123), parameter_error);
}

TEST_CASE("forward_with_taps does not perturb the forward result") {
    auto data = synth_dataset(3, 4, 16, 1.5f, 21);
    auto cfg = build_small_convnet({1, 16, 16}, 3);
    auto net = init_network(cfg, 5);

    auto checksum_before = params_checksum(net);
    auto plain = forward(net, data.images);
    auto [logits, taps] = forward_with_taps(net, data.images);
    CHECK(plain.data == logits.data);  // bit-exact non-interference
    CHECK(params_checksum(net) == checksum_before);

    REQUIRE(taps.size() == 4);
    CHECK(taps.at("tap4").data == logits.data);
    for (const auto& [name, idx] : cfg.taps) {
        auto expect = tap_shape(cfg, name);
        std::vector<int> got(taps.at(name).shape.begin() + 1, taps.at(name).shape.end());
        CHECK(got == expect);
    }
}

TEST_CASE("argmax prediction and tie-break") {
    Tensor logits({2, 2}, {0.1f, 0.9f, 0.5f, 0.5f});
    auto ids = argmax_rows(logits);
    CHECK(ids[0] == 1);
    CHECK(ids[1] == 0);  // documented tie-break toward the lowest id
}

TEST_CASE("softmax-then-argmax equals argmax over raw logits") {
    std::mt19937_64 rng(2);
    for (int it = 0; it < 50; ++it) {
        auto z = Tensor::randu({3, 5}, -5, 5, rng);
        auto s = softmax<float>(nullptr, z);
        CHECK(argmax_rows(z) == argmax_rows(s));
    }
}

TEST_CASE("accuracy equals brute-force count on a hand-labeled set") {
    auto data = synth_dataset(2, 5, 16, 1.5f, 77);
    auto cfg = build_small_convnet({1, 16, 16}, 2);
    auto net = init_network(cfg, 3);
    auto preds = predict(net, data.images);
    size_t correct = 0;
    for (size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == data.labels[i]) ++correct;
    CHECK(accuracy(net, data) == doctest::Approx(double(correct) / data.size()));
}

TEST_CASE("network save/load round trip") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "aedet_net_test";
    fs::create_directories(dir);
    auto data = synth_dataset(2, 10, 16, 1.5f, 4);
    auto cfg = build_small_convnet({1, 16, 16}, 2);
    auto net = train_classifier(cfg, data, 1, 1e-3f, 8, 11);
    save_network(net, (dir / "net.aedm").string(), (dir / "net.json").string());
    auto back = load_network((dir / "net.aedm").string(), (dir / "net.json").string());
    CHECK(back.config.taps == net.config.taps);
    CHECK(params_checksum(back) == params_checksum(net));
    auto a = forward(net, data.images);
    auto b = forward(back, data.images);
    CHECK(a.data == b.data);
    fs::remove_all(dir);
}
