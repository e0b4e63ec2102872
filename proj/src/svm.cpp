#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "aedet/csv.hpp"
#include "aedet/detectors.hpp"
#include "aedet/eval.hpp"
#include "nlohmann/json.hpp"

namespace aedet {

namespace {

void check_features(const Features& x, const std::vector<int>& y, const char* op) {
    if (x.empty()) throw contract_error(std::string(op) + ": empty feature matrix");
    if (x.size() != y.size()) throw contract_error(std::string(op) + ": feature/label count mismatch");
    const size_t d = x[0].size();
    if (d == 0) throw contract_error(std::string(op) + ": zero-width features");
    for (const auto& row : x)
        if (row.size() != d) throw contract_error(std::string(op) + ": ragged feature rows");
}

std::vector<float> standardize_row(const LinearSvmModel& m, const std::vector<float>& row) {
    std::vector<float> out(row.size());
    for (size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - m.col_mean[j]) / m.col_std[j];
    return out;
}

}  // namespace

LinearSvmModel fit_linear_svm(const Features& x, const std::vector<int>& y, float C, int epochs,
                              float lr, uint64_t seed) {
    check_features(x, y, "fit_linear_svm");
    if (!(C > 0.0f)) throw parameter_error("fit_linear_svm: C must be positive");
    if (epochs < 1) throw parameter_error("fit_linear_svm: epochs must be >= 1");
    const size_t n = x.size(), d = x[0].size();
    size_t pos = 0;
    for (int v : y) {
        if (v != 0 && v != 1) throw contract_error("fit_linear_svm: labels must be 0/1");
        pos += v;
    }
    if (pos == 0 || pos == n)
        throw training_error("fit_linear_svm: training set contains a single class");

    LinearSvmModel m;
    m.C = C;
    m.epochs = epochs;
    m.lr = lr;
    m.col_mean.assign(d, 0.0f);
    m.col_std.assign(d, 1.0f);
    for (size_t j = 0; j < d; ++j) {
        double s = 0;
        for (const auto& row : x) s += row[j];
        m.col_mean[j] = static_cast<float>(s / n);
        double v = 0;
        for (const auto& row : x) {
            const double dj = row[j] - m.col_mean[j];
            v += dj * dj;
        }
        const double sd = std::sqrt(v / n);
        m.col_std[j] = sd > 1e-12 ? static_cast<float>(sd) : 1.0f;
    }

    Features xs(n);
    for (size_t i = 0; i < n; ++i) xs[i] = standardize_row(m, x[i]);

    m.weights.assign(d, 0.0f);
    m.bias = 0.0f;
    const float lambda = 1.0f / C;
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, "svm-shuffle"));
    // Polyak-Ruppert averaging of the iterates; the averaged model is far
    // less sensitive to the final shuffle than the last iterate.
    std::vector<double> avg_w(d, 0.0);
    double avg_b = 0.0;
    size_t iterates = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t i : order) {
            const float yi = y[i] ? 1.0f : -1.0f;
            float margin = m.bias;
            for (size_t j = 0; j < d; ++j) margin += m.weights[j] * xs[i][j];
            const float decay = 1.0f - lr * lambda / static_cast<float>(n);
            for (auto& w : m.weights) w *= decay;
            if (yi * margin < 1.0f) {
                for (size_t j = 0; j < d; ++j) m.weights[j] += lr * yi * xs[i][j];
                m.bias += lr * yi;
            }
            for (size_t j = 0; j < d; ++j) avg_w[j] += m.weights[j];
            avg_b += m.bias;
            ++iterates;
        }
    }
    for (size_t j = 0; j < d; ++j)
        m.weights[j] = static_cast<float>(avg_w[j] / static_cast<double>(iterates));
    m.bias = static_cast<float>(avg_b / static_cast<double>(iterates));
    for (float w : m.weights)
        if (!std::isfinite(w)) throw training_error("fit_linear_svm: weights diverged");
    return m;
}

std::vector<float> svm_score(const LinearSvmModel& model, const Features& x) {
    if (x.empty()) throw contract_error("svm_score: empty feature matrix");
    std::vector<float> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        if (x[i].size() != model.weights.size())
            throw dimension_error("svm_score: feature width mismatch");
        auto row = standardize_row(model, x[i]);
        float s = model.bias;
        for (size_t j = 0; j < row.size(); ++j) s += model.weights[j] * row[j];
        out[i] = s;
    }
    return out;
}

float grid_search_cv(const Features& x, const std::vector<int>& y,
                     const std::vector<float>& c_grid, int folds, int epochs, float lr,
                     uint64_t seed) {
    check_features(x, y, "grid_search_cv");
    if (c_grid.empty()) throw parameter_error("grid_search_cv: empty C grid");
    if (folds < 2) throw parameter_error("grid_search_cv: folds must be >= 2");

    // stratified fold assignment: shuffle within each class, deal round-robin
    std::vector<int> fold_of(x.size(), -1);
    std::mt19937_64 rng(derive_seed(seed, "cv-folds"));
    for (int cls : {0, 1}) {
        std::vector<size_t> idx;
        for (size_t i = 0; i < y.size(); ++i)
            if (y[i] == cls) idx.push_back(i);
        if (static_cast<int>(idx.size()) < folds)
            throw protocol_error("grid_search_cv: class " + std::to_string(cls) + " has " +
                                 std::to_string(idx.size()) + " samples, need >= " +
                                 std::to_string(folds));
        std::shuffle(idx.begin(), idx.end(), rng);
        for (size_t i = 0; i < idx.size(); ++i) fold_of[idx[i]] = static_cast<int>(i % folds);
    }

    std::vector<float> grid = c_grid;
    std::sort(grid.begin(), grid.end());
    float best_c = grid.front();
    double best_mean = -1.0;
    for (float c : grid) {
        double mean = 0.0;
        for (int f = 0; f < folds; ++f) {
            Features xtr, xev;
            std::vector<int> ytr, yev;
            for (size_t i = 0; i < x.size(); ++i) {
                if (fold_of[i] == f) {
                    xev.push_back(x[i]);
                    yev.push_back(y[i]);
                } else {
                    xtr.push_back(x[i]);
                    ytr.push_back(y[i]);
                }
            }
            auto model = fit_linear_svm(xtr, ytr, c, epochs, lr, derive_seed(seed, "cv-fit"));
            auto scores = svm_score(model, xev);
            mean += auroc(scores, yev);
        }
        mean /= folds;
        if (mean > best_mean + 1e-12) {  // ties keep the smaller C
            best_mean = mean;
            best_c = c;
        }
    }
    return best_c;
}

void save_svm(const LinearSvmModel& model, const std::string& path) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["kind"] = "linear_svm";
    j["weights"] = model.weights;
    j["bias"] = model.bias;
    j["col_mean"] = model.col_mean;
    j["col_std"] = model.col_std;
    j["C"] = model.C;
    j["epochs"] = model.epochs;
    j["lr"] = model.lr;
    std::ofstream out(path);
    if (!out) throw format_error(path + ": cannot open for writing");
    out << j.dump(2) << "\n";
}

LinearSvmModel load_svm(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw format_error(path + ": cannot open");
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("format_version").get<int>() != 1)
        throw format_error(path + ": unsupported format version");
    LinearSvmModel m;
    m.weights = j.at("weights").get<std::vector<float>>();
    m.bias = j.at("bias").get<float>();
    m.col_mean = j.at("col_mean").get<std::vector<float>>();
    m.col_std = j.at("col_std").get<std::vector<float>>();
    m.C = j.at("C").get<float>();
    m.epochs = j.at("epochs").get<int>();
    m.lr = j.at("lr").get<float>();
    return m;
}

void write_scores_csv(const std::string& path, const std::vector<float>& scores,
                      const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw contract_error("write_scores_csv: score/label count mismatch");
    CsvTable t;
    t.header = {"sample_id", "score", "label"};
    for (size_t i = 0; i < scores.size(); ++i)
        t.rows.push_back({std::to_string(i), csv_float(scores[i]), std::to_string(labels[i])});
    write_csv(path, t);
}

}  // namespace aedet
