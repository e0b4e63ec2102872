#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "aedet/autoencoder.hpp"
#include "aedet/network.hpp"

using namespace aedet;

namespace {

// Dense-arch autoencoder that routes a D-dim input through the first D
// hidden units unchanged (valid for nonnegative inputs, relu is identity).
LayerAutoencoder identity_ae(int d) {
    AutoencoderConfig cfg;
    cfg.tap = "t";
    cfg.latent_dim = d;
    LayerAutoencoder ae = init_autoencoder(cfg, {d});
    const int H = ae.params[0].dim(1);  // hidden width
    auto route = [&](Tensor& w, int rows, int cols) {
        std::fill(w.data.begin(), w.data.end(), 0.0f);
        for (int i = 0; i < std::min(rows, cols); ++i) w.data[i * cols + i] = 1.0f;
    };
    route(ae.params[0], d, H);
    std::fill(ae.params[1].data.begin(), ae.params[1].data.end(), 0.0f);
    route(ae.params[2], H, d);
    std::fill(ae.params[3].data.begin(), ae.params[3].data.end(), 0.0f);
    route(ae.params[4], d, H);
    std::fill(ae.params[5].data.begin(), ae.params[5].data.end(), 0.0f);
    route(ae.params[6], H, d);
    std::fill(ae.params[7].data.begin(), ae.params[7].data.end(), 0.0f);
    return ae;
}

// plain scalar-loop forward through a dense-arch autoencoder
std::vector<float> scalar_dense_forward(const std::vector<Tensor>& p, std::vector<float> v,
                                        int first) {
    for (int layer = 0; layer < 2; ++layer) {
        const Tensor& w = p[first + 2 * layer];
        const Tensor& b = p[first + 2 * layer + 1];
        std::vector<float> out(w.dim(1));
        for (int o = 0; o < w.dim(1); ++o) {
            float s = b.data[o];
            for (size_t i = 0; i < v.size(); ++i) s += v[i] * w.data[i * w.dim(1) + o];
            out[o] = s;
        }
        if (layer == 0)
            for (auto& x : out) x = std::max(0.0f, x);
        v = std::move(out);
    }
    return v;
}

Tensor random_acts(std::vector<int> shape, uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
    std::mt19937_64 rng(seed);
    return Tensor::randu(shape, lo, hi, rng);
}

}  // namespace

TEST_CASE("identity autoencoder has zero reconstruction error") {
    auto ae = identity_ae(2);
    Tensor x({3, 2}, {0.5f, 1.0f, 0.0f, 2.0f, 3.0f, 4.0f});
    auto err = reconstruction_error(ae, x);
    for (float e : err) CHECK(e == doctest::Approx(0.0f).epsilon(1e-6));
}

TEST_CASE("latent norm is the plain L2 norm of the code") {
    auto ae = identity_ae(2);
    Tensor x({1, 2}, {3.0f, 4.0f});  // encodes to (3,4)
    CHECK(latent_norm(ae, x)[0] == doctest::Approx(5.0f));
    Tensor z0({1, 2}, {0.0f, 0.0f});
    CHECK(latent_norm(ae, z0)[0] == doctest::Approx(0.0f));
}

TEST_CASE("zero decoder gives error equal to the squared input norm") {
    auto ae = identity_ae(3);
    for (int i = 4; i < 8; ++i) std::fill(ae.params[i].data.begin(), ae.params[i].data.end(), 0.0f);
    Tensor x({2, 3}, {1.0f, 2.0f, 2.0f, 0.5f, 0.0f, 0.5f});
    auto err = reconstruction_error(ae, x);
    CHECK(err[0] == doctest::Approx(9.0f));
    CHECK(err[1] == doctest::Approx(0.5f));
}

TEST_CASE("encode/decode agree with a scalar-loop oracle on a random dense ae") {
    AutoencoderConfig cfg;
    cfg.tap = "t";
    cfg.latent_dim = 4;
    cfg.seed = 9;
    auto ae = init_autoencoder(cfg, {6});
    Tensor x = random_acts({3, 6}, 11, -1.0f, 1.0f);
    Tensor z = encode(ae, x);
    Tensor xr = decode(ae, z);
    for (int i = 0; i < 3; ++i) {
        std::vector<float> row(x.data.begin() + i * 6, x.data.begin() + (i + 1) * 6);
        auto oz = scalar_dense_forward(ae.params, row, 0);
        for (int j = 0; j < 4; ++j)
            CHECK(z.data[i * 4 + j] == doctest::Approx(oz[j]).epsilon(1e-5));
        auto ox = scalar_dense_forward(ae.params, oz, 4);
        for (int j = 0; j < 6; ++j)
            CHECK(xr.data[i * 6 + j] == doctest::Approx(ox[j]).epsilon(1e-5));
    }
    // reconstruction_error vs the oracle's own squared distance
    auto err = reconstruction_error(ae, x);
    for (int i = 0; i < 3; ++i) {
        std::vector<float> row(x.data.begin() + i * 6, x.data.begin() + (i + 1) * 6);
        auto ox = scalar_dense_forward(ae.params, scalar_dense_forward(ae.params, row, 0), 4);
        double s = 0;
        for (int j = 0; j < 6; ++j) s += (row[j] - ox[j]) * (row[j] - ox[j]);
        CHECK(err[i] == doctest::Approx(s).epsilon(1e-4));
    }
}

TEST_CASE("mmd2 of a sample set against itself is zero") {
    Tensor x = random_acts({8, 4}, 21, -2.0f, 2.0f);
    CHECK(mmd2(x, x, KernelKind::Imq, 8.0f) == doctest::Approx(0.0f).epsilon(1e-6));
    CHECK(mmd2(x, x, KernelKind::Rbf, 8.0f) == doctest::Approx(0.0f).epsilon(1e-6));
}

TEST_CASE("mmd2 separates distant distributions") {
    std::mt19937_64 rng(5);
    Tensor x = Tensor::randn({64, 4}, 0.0f, 1.0f, rng);
    Tensor y = Tensor::randn({64, 4}, 5.0f, 1.0f, rng);
    Tensor y2 = Tensor::randn({64, 4}, 0.0f, 1.0f, rng);
    const float far = mmd2(x, y, KernelKind::Imq, 8.0f);
    const float near = mmd2(x, y2, KernelKind::Imq, 8.0f);
    CHECK(far > 10.0f * std::abs(near));
    CHECK(far > 0.1f);
}

TEST_CASE("training with lambda=0 beats the untrained init on held-out data") {
    // low-rank structured activations so there is something to learn
    std::mt19937_64 rng(33);
    auto make = [&](int n) {
        Tensor acts = Tensor::zeros({n, 12});
        std::normal_distribution<float> g(0.0f, 1.0f);
        for (int i = 0; i < n; ++i) {
            const float a = g(rng), b = g(rng);
            for (int j = 0; j < 12; ++j)
                acts.data[i * 12 + j] = a * std::sin(0.5f * j) + b * std::cos(0.3f * j);
        }
        return acts;
    };
    Tensor train = make(256), held = make(64);
    AutoencoderConfig cfg;
    cfg.tap = "t";
    cfg.latent_dim = 4;
    cfg.mmd_weight = 0.0f;
    cfg.epochs = 30;
    cfg.seed = 7;
    auto trained = train_wae(train, cfg);
    auto untrained = init_autoencoder(cfg, {12});
    auto e1 = reconstruction_error(trained, held);
    auto e0 = reconstruction_error(untrained, held);
    double m1 = 0, m0 = 0;
    for (float v : e1) m1 += v;
    for (float v : e0) m0 += v;
    CHECK(m1 < m0);
    // the smoothed curve is monotone nonincreasing
    for (size_t i = 1; i < trained.training_curve.size(); ++i)
        CHECK(trained.training_curve[i] <= trained.training_curve[i - 1]);
}

TEST_CASE("wae prior matching keeps latent norms near sqrt(Z)") {
    std::mt19937_64 rng(44);
    Tensor train = Tensor::randn({300, 12}, 0.0f, 1.0f, rng);
    AutoencoderConfig cfg;
    cfg.tap = "t";
    cfg.latent_dim = 8;
    cfg.epochs = 40;
    cfg.batch_size = 50;
    cfg.seed = 3;
    auto ae = train_wae(train, cfg);
    auto norms = latent_norm(ae, train);
    double m = 0;
    for (float v : norms) m += v;
    m /= norms.size();
    const double target = std::sqrt(8.0);
    CHECK(m > target / 2.0);
    CHECK(m < target * 2.0);
}

TEST_CASE("conv-arch autoencoder trains and mirrors the tap shape") {
    Tensor acts = random_acts({40, 4, 8, 8}, 55);
    AutoencoderConfig cfg;
    cfg.tap = "t";
    cfg.latent_dim = 16;
    cfg.epochs = 3;
    cfg.seed = 2;
    auto ae = train_wae(acts, cfg);
    Tensor xr = reconstruct(ae, acts);
    CHECK(xr.shape == acts.shape);
    for (float e : reconstruction_error(ae, acts)) CHECK(e >= 0.0f);
}

TEST_CASE("feature extraction layout and per-op consistency") {
    auto net = init_network(build_small_convnet({1, 16, 16}, 2), 1);
    AeBank bank;
    for (const auto& [tap, _] : net.config.taps) {
        auto shape = tap_shape(net.config, tap);
        auto cfg = default_ae_config(tap, shape);
        cfg.seed = 13;
        bank.emplace(tap, init_autoencoder(cfg, shape));
    }
    Tensor x = random_acts({6, 1, 16, 16}, 66);

    auto compact = extract_features(net, bank, x, FeatureMode::Compact, "clean");
    CHECK(compact.columns.size() == 8);  // (rec_err, lat_norm) x 4 taps
    CHECK(compact.columns[0] == "tap1_rec_err");
    CHECK(compact.columns[1] == "tap1_lat_norm");
    CHECK(compact.columns[7] == "tap4_lat_norm");

    auto full = extract_features(net, bank, x, FeatureMode::Full, "adversarial");
    CHECK(full.columns.size() == 16 * 3 + 8);  // conv taps Z=16, logits tap Z=8
    CHECK(full.columns[0] == "tap1_z0");
    CHECK(full.provenance[0] == "adversarial");

    // compact columns equal individually recomputed per-op values
    auto [logits, taps] = forward_with_taps(net, x);
    (void)logits;
    for (const auto& [tap, act] : taps) {
        auto re = reconstruction_error(bank.at(tap), act);
        auto ln = latent_norm(bank.at(tap), act);
        const int cr = compact.column(tap + "_rec_err");
        const int cl = compact.column(tap + "_lat_norm");
        for (int i = 0; i < 6; ++i) {
            CHECK(compact.values[i][cr] == re[i]);
            CHECK(compact.values[i][cl] == ln[i]);
        }
    }

    // determinism
    auto again = extract_features(net, bank, x, FeatureMode::Compact, "clean");
    CHECK(again.values == compact.values);

    bank.erase("tap2");
    CHECK_THROWS_AS(extract_features(net, bank, x, FeatureMode::Compact, "clean"), config_error);
}

TEST_CASE("feature csv round-trips exactly") {
    namespace fs = std::filesystem;
    auto net = init_network(build_small_convnet({1, 16, 16}, 2), 1);
    AeBank bank;
    for (const auto& [tap, _] : net.config.taps) {
        auto shape = tap_shape(net.config, tap);
        bank.emplace(tap, init_autoencoder(default_ae_config(tap, shape), shape));
    }
    Tensor x = random_acts({4, 1, 16, 16}, 77);
    auto fm = extract_features(net, bank, x, FeatureMode::Compact, "noisy");

    auto dir = fs::temp_directory_path() / "aedet_ae_test";
    fs::create_directories(dir);
    write_feature_csv((dir / "f.csv").string(), fm);
    auto back = read_feature_csv((dir / "f.csv").string());
    CHECK(back.columns == fm.columns);
    CHECK(back.sample_ids == fm.sample_ids);
    CHECK(back.provenance == fm.provenance);
    CHECK(back.values == fm.values);
    CHECK(back.mode == FeatureMode::Compact);
    fs::remove_all(dir);
}

TEST_CASE("ae bank persists and reloads with identical behavior") {
    namespace fs = std::filesystem;
    Tensor acts = random_acts({30, 6}, 88);
    AutoencoderConfig cfg;
    cfg.tap = "tap4";
    cfg.latent_dim = 4;
    cfg.epochs = 2;
    AeBank bank;
    bank.emplace("tap4", train_wae(acts, cfg));

    auto dir = fs::temp_directory_path() / "aedet_bank_test";
    save_ae_bank(bank, dir.string());
    auto back = load_ae_bank(dir.string());
    REQUIRE(back.count("tap4"));
    const auto& a = bank.at("tap4");
    const auto& b = back.at("tap4");
    CHECK(b.input_shape == a.input_shape);
    CHECK(b.training_curve == a.training_curve);
    CHECK(encode(b, acts).data == encode(a, acts).data);
    CHECK(reconstruction_error(b, acts) == reconstruction_error(a, acts));
    fs::remove_all(dir);
}

TEST_CASE("config and shape contracts") {
    AutoencoderConfig bad;
    bad.latent_dim = 0;
    CHECK_THROWS_AS(init_autoencoder(bad, {4}), config_error);
    AutoencoderConfig cfg;
    cfg.latent_dim = 2;
    CHECK_THROWS_AS(init_autoencoder(cfg, {2, 3}), config_error);  // rank 2 unsupported
    auto ae = init_autoencoder(cfg, {4});
    Tensor wrong({2, 5}, std::vector<float>(10, 0.0f));
    CHECK_THROWS_AS(encode(ae, wrong), dimension_error);
}
