#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "aedet/tensor.hpp"
#include "fd_check.hpp"

using namespace aedet;
using aedet_test::fd_check;

namespace {

constexpr int kInstances = 24;

template <typename T>
struct Tol {
    static constexpr double h = 1e-3;
    static constexpr double tol = 1e-2;
};
template <>
struct Tol<double> {
    static constexpr double h = 1e-5;
    static constexpr double tol = 1e-5;
};

template <typename T, typename F>
void run_fd_instances(F make_instance, uint64_t seed = 7) {
    std::mt19937_64 rng(seed);
    for (int it = 0; it < kInstances; ++it) {
        auto rep = make_instance(rng);
        CHECK(rep.checked > 0);
        CHECK(rep.max_rel_err < Tol<T>::tol);
    }
}

template <typename T>
using Tn = BasicTensor<T>;

}  // namespace

TEST_CASE_TEMPLATE("fd: dense", T, float, double) {
    run_fd_instances<T>([](std::mt19937_64& rng) {
        std::uniform_int_distribution<int> d(1, 4);
        int B = d(rng), I = d(rng), O = d(rng);
        auto x = Tn<T>::randu({B, I}, -1, 1, rng);
        auto w = Tn<T>::randu({I, O}, -1, 1, rng);
        auto b = Tn<T>::randu({O}, -1, 1, rng);
        return fd_check<T>(
            [&](BasicTape<T>* tp) { return sum_squares(tp, dense(tp, x, w, b)); }, {&x, &w, &b},
            Tol<T>::h, Tol<T>::tol);
    });
}

TEST_CASE_TEMPLATE("fd: conv2d", T, float, double) {
    run_fd_instances<T>([](std::mt19937_64& rng) {
        std::uniform_int_distribution<int> hw(4, 6), cf(1, 2), sp(1, 2), pp(0, 1);
        int B = cf(rng), C = cf(rng), H = hw(rng), W = hw(rng), F = cf(rng);
        int s = sp(rng), p = pp(rng);
        auto x = Tn<T>::randu({B, C, H, W}, -1, 1, rng);
        auto k = Tn<T>::randu({F, C, 3, 3}, -1, 1, rng);
        auto b = Tn<T>::randu({F}, -1, 1, rng);
        return fd_check<T>(
            [&](BasicTape<T>* tp) { return sum_squares(tp, conv2d(tp, x, k, b, s, p)); },
            {&x, &k, &b}, Tol<T>::h, Tol<T>::tol);
    });
}

TEST_CASE_TEMPLATE("fd: conv_transpose2d", T, float, double) {
    run_fd_instances<T>([](std::mt19937_64& rng) {
        std::uniform_int_distribution<int> hw(2, 4), cf(1, 2), sp(1, 2);
        int B = cf(rng), F = cf(rng), H = hw(rng), W = hw(rng), C = cf(rng);
        int s = sp(rng);
        int op = s > 1 ? 1 : 0;
        auto x = Tn<T>::randu({B, F, H, W}, -1, 1, rng);
        auto k = Tn<T>::randu({F, C, 3, 3}, -1, 1, rng);
        auto b = Tn<T>::randu({C}, -1, 1, rng);
        return fd_check<T>(
            [&](BasicTape<T>* tp) {
                return sum_squares(tp, conv_transpose2d(tp, x, k, b, s, 1, op));
            },
            {&x, &k, &b}, Tol<T>::h, Tol<T>::tol);
    });
}

TEST_CASE_TEMPLATE("fd: relu away from the kink", T, float, double) {
    run_fd_instances<T>([](std::mt19937_64& rng) {
        auto x = Tn<T>::randu({3, 5}, T(0.2), T(1.5), rng);
        std::bernoulli_distribution flip(0.5);
        for (auto& v : x.data)
            if (flip(rng)) v = -v;
        return fd_check<T>([&](BasicTape<T>* tp) { return sum_squares(tp, relu(tp, x)); }, {&x},
                           Tol<T>::h, Tol<T>::tol);
    });
}

TEST_CASE_TEMPLATE("fd: tanh", T, float, double) {
    run_fd_instances<T>([](std::mt19937_64& rng) {
        auto x = Tn<T>::randu({2, 7}, -2, 2, rng);
        return fd_check<T>([&](BasicTape<T>* tp) { return sum_squares(tp, tanh_op(tp, x)); },
                           {&x}, Tol<T>::h, Tol<T>::tol);
    });
}

TEST_CASE_TEMPLATE("fd: softmax through mse", T, float, double) {
    run_fd_instances<T>([](std::mt19937_64& rng) {
        auto x = Tn<T>::randu({3, 4}, -2, 2, rng);
        auto target = Tn<T>::randu({3, 4}, 0, 1, rng);
        return fd_check<T>(
            [&](BasicTape<T>* tp) { return mse(tp, softmax(tp, x), target); }, {&x}, Tol<T>::h,
            Tol<T>::tol);
    });
}

TEST_CASE_TEMPLATE("fd: cross_entropy", T, float, double) {
    run_fd_instances<T>([](std::mt19937_64& rng) {
        auto x = Tn<T>::randu({4, 5}, -2, 2, rng);
        std::uniform_int_distribution<int> lab(0, 4);
        std::vector<int> labels(4);
        for (auto& y : labels) y = lab(rng);
        return fd_check<T>([&](BasicTape<T>* tp) { return cross_entropy(tp, x, labels); }, {&x},
                           Tol<T>::h, Tol<T>::tol);
    });
}

TEST_CASE_TEMPLATE("fd: mse both sides", T, float, double) {
    run_fd_instances<T>([](std::mt19937_64& rng) {
        auto a = Tn<T>::randu({2, 3, 2}, -1, 1, rng);
        auto b = Tn<T>::randu({2, 3, 2}, -1, 1, rng);
        return fd_check<T>([&](BasicTape<T>* tp) { return mse(tp, a, b); }, {&a, &b}, Tol<T>::h,
                           Tol<T>::tol);
    });
}

TEST_CASE_TEMPLATE("fd: kernel_gram rbf and imq", T, float, double) {
    for (auto kind : {KernelKind::Rbf, KernelKind::Imq}) {
        run_fd_instances<T>([kind](std::mt19937_64& rng) {
            auto a = Tn<T>::randu({3, 4}, -1, 1, rng);
            auto b = Tn<T>::randu({2, 4}, -1, 1, rng);
            return fd_check<T>(
                [&](BasicTape<T>* tp) { return sum(tp, kernel_gram(tp, a, b, kind, T(2))); },
                {&a, &b}, Tol<T>::h, Tol<T>::tol);
        });
    }
}

TEST_CASE_TEMPLATE("fd: elementwise/reduction chain", T, float, double) {
    run_fd_instances<T>([](std::mt19937_64& rng) {
        auto a = Tn<T>::randu({2, 6}, -1, 1, rng);
        auto b = Tn<T>::randu({2, 6}, -1, 1, rng);
        return fd_check<T>(
            [&](BasicTape<T>* tp) {
                auto c = add(tp, a, b);
                auto d = sub(tp, scale(tp, c, T(1.7)), b);
                auto e = scale(tp, d, T(0.9));
                auto f = reshape(tp, e, {3, 4});
                return add(tp, mean(tp, f), sum_squares(tp, f));
            },
            {&a, &b}, Tol<T>::h, Tol<T>::tol);
    });
}

TEST_CASE_TEMPLATE("fd: cw_margin away from hinge kink", T, float, double) {
    run_fd_instances<T>([](std::mt19937_64& rng) {
        const int B = 3, K = 4;
        std::uniform_int_distribution<int> lab(0, K - 1);
        Tn<T> x;
        std::vector<int> labels(B);
        // resample until every sample's margin sits away from zero
        while (true) {
            x = Tn<T>::randu({B, K}, -2, 2, rng);
            for (auto& y : labels) y = lab(rng);
            bool ok = true;
            for (int b = 0; b < B; ++b) {
                T zy = x.data[b * K + labels[b]], zo = -1e9;
                for (int k = 0; k < K; ++k)
                    if (k != labels[b]) zo = std::max(zo, x.data[b * K + k]);
                if (std::abs(zy - zo) < T(0.1)) ok = false;
            }
            if (ok) break;
        }
        return fd_check<T>([&](BasicTape<T>* tp) { return cw_margin(tp, x, labels, T(0)); }, {&x},
                           Tol<T>::h, Tol<T>::tol);
    });
}

TEST_CASE("dense trivial examples") {
    Tensor x({1, 2}, {1, 2});
    Tensor w({2, 2}, {1, 0, 0, 1});
    Tensor b({2}, {0, 0});
    auto y = dense<float>(nullptr, x, w, b);
    CHECK(y.data[0] == doctest::Approx(1));
    CHECK(y.data[1] == doctest::Approx(2));

    Tensor x0({1, 2}, {0, 0});
    Tensor w2({2, 2}, {5, -3, 2, 7});
    Tensor b2({2}, {3, 4});
    auto y2 = dense<float>(nullptr, x0, w2, b2);
    CHECK(y2.data[0] == doctest::Approx(3));
    CHECK(y2.data[1] == doctest::Approx(4));

    CHECK_THROWS_AS(dense<float>(nullptr, x, Tensor({3, 2}, {1, 2, 3, 4, 5, 6}), b),
                    dimension_error);
}

TEST_CASE("dense matches triple-loop matmul oracle") {
    std::mt19937_64 rng(11);
    auto x = Tensor::randu({2, 3}, -1, 1, rng);
    auto w = Tensor::randu({3, 2}, -1, 1, rng);
    auto b = Tensor::randu({2}, -1, 1, rng);
    auto y = dense<float>(nullptr, x, w, b);
    for (int bi = 0; bi < 2; ++bi)
        for (int o = 0; o < 2; ++o) {
            double acc = b.data[o];
            for (int i = 0; i < 3; ++i) acc += double(x.data[bi * 3 + i]) * w.data[i * 2 + o];
            CHECK(y.data[bi * 2 + o] == doctest::Approx(acc).epsilon(1e-5));
        }
}

TEST_CASE("conv2d trivial and oracle") {
    std::mt19937_64 rng(5);
    // 1x1 kernel with value 1 is the identity on C=F=1
    auto x = Tensor::randu({1, 1, 4, 4}, -1, 1, rng);
    Tensor k1({1, 1, 1, 1}, {1});
    auto y = conv2d<float>(nullptr, x, k1, Tensor{}, 1, 0);
    CHECK(y.shape == x.shape);
    for (size_t i = 0; i < x.numel(); ++i) CHECK(y.data[i] == x.data[i]);

    // all-zero kernel gives all-zero output
    Tensor kz({2, 1, 3, 3}, std::vector<float>(18, 0.f));
    auto yz = conv2d<float>(nullptr, x, kz, Tensor{}, 1, 1);
    for (float v : yz.data) CHECK(v == 0.f);

    // sliding-window oracle, 4x4 input, 3x3 kernel, stride 1
    auto k = Tensor::randu({1, 1, 3, 3}, -1, 1, rng);
    auto yo = conv2d<float>(nullptr, x, k, Tensor{}, 1, 0);
    CHECK(yo.dim(2) == 2);
    for (int oh = 0; oh < 2; ++oh)
        for (int ow = 0; ow < 2; ++ow) {
            double acc = 0;
            for (int kh = 0; kh < 3; ++kh)
                for (int kw = 0; kw < 3; ++kw)
                    acc += double(x.data[(oh + kh) * 4 + (ow + kw)]) * k.data[kh * 3 + kw];
            CHECK(yo.data[oh * 2 + ow] == doctest::Approx(acc).epsilon(1e-5));
        }

    // kernel larger than input
    Tensor kbig({1, 1, 6, 6}, std::vector<float>(36, 1.f));
    CHECK_THROWS_AS(conv2d<float>(nullptr, x, kbig, Tensor{}, 1, 0), dimension_error);
}

TEST_CASE("softmax / relu / cross_entropy values") {
    Tensor z({1, 3}, {0, 0, 0});
    auto s = softmax<float>(nullptr, z);
    for (float v : s.data) CHECK(v == doctest::Approx(1.0f / 3));

    Tensor r({3}, {-1, 2, 0});
    auto rr = relu<float>(nullptr, r);
    CHECK(rr.data[0] == 0.f);
    CHECK(rr.data[1] == 2.f);
    CHECK(rr.data[2] == 0.f);

    Tensor logits({1, 2}, {10, -10});
    auto ce = cross_entropy<float>(nullptr, logits, {0});
    // independent scalar oracle: -log(exp(10)/(exp(10)+exp(-10)))
    double oracle = -std::log(std::exp(10.0) / (std::exp(10.0) + std::exp(-10.0)));
    CHECK(ce.scalar() == doctest::Approx(oracle).epsilon(1e-4));
    CHECK(ce.scalar() < 1e-6);

    CHECK_THROWS_AS(cross_entropy<float>(nullptr, logits, {2}), index_error);
}

TEST_CASE("softmax rows sum to one on random logits") {
    std::mt19937_64 rng(3);
    for (int it = 0; it < 30; ++it) {
        auto x = Tensor::randu({4, 6}, -8, 8, rng);
        auto s = softmax<float>(nullptr, x);
        for (int b = 0; b < 4; ++b) {
            double row = 0;
            for (int k = 0; k < 6; ++k) {
                float v = s.data[b * 6 + k];
                CHECK(v > 0.f);
                CHECK(v < 1.f);
                row += v;
            }
            CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("kernel_gram values against scalar oracle") {
    Tensor a({2, 2}, {0, 0, 1, 1});
    Tensor b({2, 2}, {0, 0, 3, -1});
    for (auto kind : {KernelKind::Rbf, KernelKind::Imq}) {
        auto g = kernel_gram<float>(nullptr, a, b, kind, 2.0f);
        CHECK(g.data[0] == doctest::Approx(1.0));  // identical points
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                double d2 = 0;
                for (int z = 0; z < 2; ++z) {
                    double d = a.data[i * 2 + z] - b.data[j * 2 + z];
                    d2 += d * d;
                }
                double expect = kind == KernelKind::Rbf ? std::exp(-d2 / 2.0) : 2.0 / (2.0 + d2);
                CHECK(g.data[i * 2 + j] == doctest::Approx(expect).epsilon(1e-5));
            }
    }
    // limit case: huge distance -> entry near 0
    Tensor far({1, 2}, {1e4f, -1e4f});
    auto g = kernel_gram<float>(nullptr, a, far, KernelKind::Imq, 2.0f);
    CHECK(g.data[0] < 1e-6);
    CHECK_THROWS_AS(kernel_gram<float>(nullptr, a, b, KernelKind::Rbf, 0.0f), parameter_error);
}

TEST_CASE("backward trivial gradients") {
    Tape tape;
    auto x = Tensor({2, 2}, {1, -2, 3, 0.5f});
    tape.watch(x);
    auto loss = sum(&tape, x);
    tape.backward(loss);
    for (float g : tape.grad(x)) CHECK(g == 1.0f);

    Tape tape2;
    auto x2 = Tensor({1}, {2});
    tape2.watch(x2);
    auto zero = Tensor({1}, {0});
    auto loss2 = mse(&tape2, x2, zero);
    tape2.backward(loss2);
    CHECK(tape2.grad(x2)[0] == doctest::Approx(4.0f));

    CHECK_THROWS_AS(tape2.backward(x), contract_error);  // non-scalar / foreign tensor
}

TEST_CASE("backward is deterministic: identical tapes, identical bits") {
    auto run = [] {
        std::mt19937_64 rng(99);
        Tape tape;
        auto x = Tensor::randu({2, 1, 5, 5}, -1, 1, rng);
        auto k = Tensor::randu({2, 1, 3, 3}, -1, 1, rng);
        auto b = Tensor::randu({2}, -1, 1, rng);
        tape.watch(x);
        tape.watch(k);
        tape.watch(b);
        auto y = conv2d(&tape, x, k, b, 2, 1);
        auto loss = sum_squares(&tape, relu(&tape, y));
        tape.backward(loss);
        std::vector<std::vector<float>> out{tape.grad(x), tape.grad(k), tape.grad(b)};
        return out;
    };
    auto a = run();
    auto b = run();
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < a[i].size(); ++j) CHECK(a[i][j] == b[i][j]);
}

TEST_CASE("optimizer: sgd and adam") {
    Tensor p({1}, {1.0f});
    std::vector<float> g{1.0f};
    Optimizer<float> sgd(OptimizerKind::Sgd, 0.1f);
    sgd.step({&p}, {&g});
    CHECK(p.data[0] == doctest::Approx(0.9f));

    std::vector<float> gz{0.0f};
    sgd.step({&p}, {&gz});
    CHECK(p.data[0] == doctest::Approx(0.9f));  // zero gradient, unchanged

    // adam first step: update magnitude ~ lr regardless of gradient scale;
    // scalar recurrence oracle for three steps
    for (float gscale : {1.0f, 100.0f}) {
        Tensor q({1}, {0.0f});
        Optimizer<float> adam(OptimizerKind::Adam, 0.01f);
        std::vector<float> gq{gscale};
        adam.step({&q}, {&gq});
        CHECK(std::abs(q.data[0] + 0.01f) < 1e-4);
    }
    {
        Tensor q({1}, {0.5f});
        Optimizer<double> oracle_unused(OptimizerKind::Adam, 0.05);
        Optimizer<float> adam(OptimizerKind::Adam, 0.05f);
        double m = 0, v = 0, qd = 0.5, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        std::vector<float> grads{0.3f, -0.7f, 0.1f};
        for (int t = 1; t <= 3; ++t) {
            std::vector<float> g1{grads[t - 1]};
            adam.step({&q}, {&g1});
            double gg = grads[t - 1];
            m = b1 * m + (1 - b1) * gg;
            v = b2 * v + (1 - b2) * gg * gg;
            double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
            qd -= 0.05 * mh / (std::sqrt(vh) + eps);
            CHECK(q.data[0] == doctest::Approx(qd).epsilon(1e-4));
        }
    }

    CHECK_THROWS_AS(sgd.step({&p}, {nullptr}), contract_error);
}
