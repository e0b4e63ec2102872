#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "aedet/detectors.hpp"
#include "aedet/eval.hpp"

using namespace aedet;

namespace {

std::pair<Features, std::vector<int>> gaussian_two_class(int per_class, float sep, int d,
                                                         uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g(0.0f, 1.0f);
    Features x;
    std::vector<int> y;
    for (int cls : {0, 1})
        for (int i = 0; i < per_class; ++i) {
            std::vector<float> row(d);
            for (auto& v : row) v = g(rng);
            row[0] += cls ? sep : 0.0f;
            x.push_back(std::move(row));
            y.push_back(cls);
        }
    return {x, y};
}

// exhaustive search over a coarse family of linear separators
bool brute_force_separable(const Features& x, const std::vector<int>& y) {
    for (double angle = 0.0; angle < 2.0 * M_PI; angle += 0.005) {
        const double w0 = std::cos(angle), w1 = std::sin(angle);
        double lo = 1e30, hi = -1e30;
        for (size_t i = 0; i < x.size(); ++i) {
            const double p = w0 * x[i][0] + w1 * x[i][1];
            if (y[i])
                lo = std::min(lo, p);
            else
                hi = std::max(hi, p);
        }
        if (lo > hi) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("svm separates 1-d two-class data with matching score signs") {
    Features x = {{-1.2f}, {-0.8f}, {-1.0f}, {0.9f}, {1.1f}, {1.0f}};
    std::vector<int> y = {0, 0, 0, 1, 1, 1};
    auto m = fit_linear_svm(x, y, 1.0f, 50, 0.1f, 1);
    auto s = svm_score(m, x);
    for (size_t i = 0; i < y.size(); ++i) CHECK((s[i] > 0) == (y[i] == 1));
}

TEST_CASE("duplicating every sample leaves svm classifications unchanged") {
    auto [x, y] = gaussian_two_class(15, 4.0f, 3, 2);
    auto m1 = fit_linear_svm(x, y, 1.0f, 60, 0.05f, 3);
    Features x2 = x;
    std::vector<int> y2 = y;
    x2.insert(x2.end(), x.begin(), x.end());
    y2.insert(y2.end(), y.begin(), y.end());
    auto m2 = fit_linear_svm(x2, y2, 1.0f, 60, 0.05f, 3);
    auto s1 = svm_score(m1, x), s2 = svm_score(m2, x);
    for (size_t i = 0; i < x.size(); ++i) CHECK((s1[i] > 0) == (s2[i] > 0));
}

TEST_CASE("svm reaches 100% training accuracy on a separable 20-point set") {
    auto [x, y] = gaussian_two_class(10, 6.0f, 2, 7);
    REQUIRE(brute_force_separable(x, y));  // oracle confirms separability
    auto m = fit_linear_svm(x, y, 10.0f, 200, 0.05f, 5);
    auto s = svm_score(m, x);
    for (size_t i = 0; i < y.size(); ++i) CHECK((s[i] > 0) == (y[i] == 1));
}

TEST_CASE("svm fit contracts") {
    CHECK_THROWS_AS(fit_linear_svm({}, {}, 1.0f, 10, 0.1f, 0), contract_error);
    Features x = {{1.0f}, {2.0f}};
    CHECK_THROWS_AS(fit_linear_svm(x, {0, 0}, 1.0f, 10, 0.1f, 0), training_error);
    CHECK_THROWS_AS(fit_linear_svm(x, {0, 1}, -1.0f, 10, 0.1f, 0), parameter_error);
}

TEST_CASE("svm ranking is invariant to affine column rescaling") {
    auto [x, y] = gaussian_two_class(25, 2.0f, 4, 11);
    auto m1 = fit_linear_svm(x, y, 1.0f, 60, 0.05f, 9);
    const double a1 = auroc(svm_score(m1, x), y);
    Features x2 = x;
    for (auto& row : x2) row[2] = 8.0f * row[2] + 4.0f;  // power-of-two scale keeps floats exact
    auto m2 = fit_linear_svm(x2, y, 1.0f, 60, 0.05f, 9);
    const double a2 = auroc(svm_score(m2, x2), y);
    CHECK(a1 == a2);
}

TEST_CASE("grid search returns the single grid value and breaks ties low") {
    auto [x, y] = gaussian_two_class(20, 8.0f, 2, 13);
    CHECK(grid_search_cv(x, y, {3.5f}, 5, 40, 0.05f, 1) == 3.5f);
    // trivially separable data: every C scores AUROC 1 -> smallest C wins
    CHECK(grid_search_cv(x, y, {0.1f, 1.0f, 10.0f}, 5, 40, 0.05f, 1) == 0.1f);
}

TEST_CASE("grid search avoids the largest C when it overfits label noise") {
    std::mt19937_64 rng(17);
    std::normal_distribution<float> g(0.0f, 1.0f);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Features x;
    std::vector<int> y;
    for (int i = 0; i < 80; ++i) {
        const int label = i % 2;
        std::vector<float> row(60);
        for (auto& v : row) v = g(rng);
        row[0] += label ? 1.0f : 0.0f;  // weak signal
        x.push_back(std::move(row));
        y.push_back(u(rng) < 0.3f ? 1 - label : label);  // injected label noise
    }
    const float c = grid_search_cv(x, y, {0.01f, 1.0f, 10000.0f}, 5, 80, 0.05f, 19);
    CHECK(c < 10000.0f);
}

TEST_CASE("grid search rejects infeasible folds") {
    Features x = {{0.0f}, {1.0f}, {2.0f}, {3.0f}};
    std::vector<int> y = {0, 0, 1, 1};
    CHECK_THROWS_AS(grid_search_cv(x, y, {1.0f}, 5, 10, 0.1f, 0), protocol_error);
}

TEST_CASE("svm model round-trips through json") {
    namespace fs = std::filesystem;
    auto [x, y] = gaussian_two_class(10, 3.0f, 3, 23);
    auto m = fit_linear_svm(x, y, 2.0f, 40, 0.05f, 29);
    auto path = (fs::temp_directory_path() / "aedet_svm.json").string();
    save_svm(m, path);
    auto back = load_svm(path);
    CHECK(back.weights == m.weights);
    CHECK(back.bias == m.bias);
    CHECK(svm_score(back, x) == svm_score(m, x));
    fs::remove(path);
}

TEST_CASE("random forest importances favor the single predictive feature") {
    std::mt19937_64 rng(31);
    std::normal_distribution<float> g(0.0f, 1.0f);
    Features x;
    std::vector<int> y;
    for (int i = 0; i < 200; ++i) {
        std::vector<float> row(6);
        for (auto& v : row) v = g(rng);
        const int label = i % 2;
        row[3] = label ? 2.0f + g(rng) * 0.2f : -2.0f + g(rng) * 0.2f;
        x.push_back(std::move(row));
        y.push_back(label);
    }
    auto m = fit_random_forest(x, y, 40, 8, 37);
    auto imp = rf_importances(m);
    double total = 0;
    for (double v : imp) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    for (size_t j = 0; j < imp.size(); ++j)
        if (j != 3) CHECK(imp[3] > imp[j]);
    // the separable problem should score well
    CHECK(auroc(rf_score(m, x), y) > 0.95);
}

TEST_CASE("random forest importance stays near uniform on label-independent data") {
    for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        std::mt19937_64 rng(100 + seed);
        std::normal_distribution<float> g(0.0f, 1.0f);
        Features x;
        std::vector<int> y;
        for (int i = 0; i < 150; ++i) {
            std::vector<float> row(8);
            for (auto& v : row) v = g(rng);
            x.push_back(std::move(row));
            y.push_back(i % 2);
        }
        auto imp = rf_importances(fit_random_forest(x, y, 30, 6, seed));
        for (double v : imp) CHECK(v <= 3.0 / 8.0);
    }
}

TEST_CASE("random forest on constant features reports uniform importances") {
    Features x(20, std::vector<float>(4, 1.5f));
    std::vector<int> y;
    for (int i = 0; i < 20; ++i) y.push_back(i % 2);
    auto m = fit_random_forest(x, y, 10, 4, 1);
    auto imp = rf_importances(m);
    for (double v : imp) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("random forest is bit-reproducible for a fixed seed") {
    auto [x, y] = gaussian_two_class(30, 1.5f, 5, 41);
    auto m1 = fit_random_forest(x, y, 15, 8, 43);
    auto m2 = fit_random_forest(x, y, 15, 8, 43);
    CHECK(rf_score(m1, x) == rf_score(m2, x));
    CHECK(rf_importances(m1) == rf_importances(m2));
}

TEST_CASE("random forest round-trips through json") {
    namespace fs = std::filesystem;
    auto [x, y] = gaussian_two_class(20, 2.0f, 3, 47);
    auto m = fit_random_forest(x, y, 8, 6, 53);
    auto path = (fs::temp_directory_path() / "aedet_rf.json").string();
    save_random_forest(m, path);
    auto back = load_random_forest(path);
    CHECK(rf_score(back, x) == rf_score(m, x));
    CHECK(rf_importances(back) == rf_importances(m));
    fs::remove(path);
}

TEST_CASE("avg_path_length matches the exact harmonic-number formula") {
    CHECK(avg_path_length(1) == 0.0);
    CHECK(avg_path_length(2) == 1.0);
    for (int n : {16, 64, 256}) {
        double h = 0.0;
        for (int i = 1; i < n; ++i) h += 1.0 / i;
        const double exact = 2.0 * h - 2.0 * (n - 1.0) / n;
        CHECK(avg_path_length(n) == doctest::Approx(exact).epsilon(0.01));
    }
}

TEST_CASE("isolation forest flags a far outlier above every inlier") {
    std::mt19937_64 rng(59);
    std::normal_distribution<float> g(0.0f, 0.01f);  // tight blob
    Features train;
    for (int i = 0; i < 300; ++i) train.push_back({g(rng), g(rng)});
    auto m = fit_isolation_forest(train, 100, 256, 61);
    Features probe = train;
    probe.push_back({1.0f, 1.0f});  // 100 sigma away
    auto s = iso_score(m, probe);
    for (size_t i = 0; i + 1 < s.size(); ++i) CHECK(s.back() > s[i]);
    for (float v : s) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}

TEST_CASE("isolation forest clamps psi to the training size") {
    Features train;
    for (int i = 0; i < 10; ++i) train.push_back({static_cast<float>(i)});
    auto m = fit_isolation_forest(train, 10, 256, 67);
    CHECK(m.psi == 10);
    CHECK(m.c_psi == doctest::Approx(avg_path_length(10)));
}

TEST_CASE("isolation forest contracts and persistence") {
    namespace fs = std::filesystem;
    CHECK_THROWS_AS(fit_isolation_forest({}, 10, 64, 0), contract_error);
    CHECK_THROWS_AS(fit_isolation_forest({{1.0f}}, 10, 64, 0), contract_error);
    std::mt19937_64 rng(71);
    std::normal_distribution<float> g(0.0f, 1.0f);
    Features train;
    for (int i = 0; i < 50; ++i) train.push_back({g(rng), g(rng), g(rng)});
    auto m = fit_isolation_forest(train, 20, 32, 73);
    auto path = (fs::temp_directory_path() / "aedet_iso.json").string();
    save_isolation_forest(m, path);
    auto back = load_isolation_forest(path);
    CHECK(iso_score(back, train) == iso_score(m, train));
    fs::remove(path);
}

TEST_CASE("score csv emits sample_id,score,label rows") {
    namespace fs = std::filesystem;
    auto path = (fs::temp_directory_path() / "aedet_scores.csv").string();
    write_scores_csv(path, {0.25f, 0.75f}, {0, 1});
    auto t = read_csv(path);
    CHECK(t.header == std::vector<std::string>{"sample_id", "score", "label"});
    CHECK(t.rows[1] == std::vector<std::string>{"1", "0.75", "1"});
    fs::remove(path);
}
