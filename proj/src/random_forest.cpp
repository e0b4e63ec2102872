#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include "aedet/detectors.hpp"
#include "nlohmann/json.hpp"

namespace aedet {

namespace {

double gini(size_t pos, size_t n) {
    if (n == 0) return 0.0;
    const double p = static_cast<double>(pos) / n;
    return 2.0 * p * (1.0 - p);
}

struct TreeBuilder {
    const Features& x;
    const std::vector<int>& y;
    int max_depth;
    int mtry;
    std::mt19937_64& rng;
    size_t n_total;
    std::vector<TreeNode>& nodes;
    std::vector<double>& importance;

    int build(std::vector<size_t> idx, int depth) {
        const size_t n = idx.size();
        size_t pos = 0;
        for (size_t i : idx) pos += y[i];
        const int node_id = static_cast<int>(nodes.size());
        nodes.push_back({});
        nodes[node_id].value = static_cast<float>(static_cast<double>(pos) / n);
        if (depth >= max_depth || pos == 0 || pos == n || n < 2) return node_id;

        // sample mtry candidate features without replacement
        const size_t d = x[0].size();
        std::vector<int> feats(d);
        std::iota(feats.begin(), feats.end(), 0);
        for (int i = 0; i < mtry; ++i) {
            std::uniform_int_distribution<size_t> pick(i, d - 1);
            std::swap(feats[i], feats[pick(rng)]);
        }

        const double parent_gini = gini(pos, n);
        double best_gain = 1e-12;
        int best_feat = -1;
        float best_thr = 0.0f;
        std::vector<std::pair<float, int>> vals(n);
        for (int fi = 0; fi < mtry; ++fi) {
            const int f = feats[fi];
            for (size_t i = 0; i < n; ++i) vals[i] = {x[idx[i]][f], y[idx[i]]};
            std::sort(vals.begin(), vals.end());
            size_t lpos = 0;
            for (size_t i = 0; i + 1 < n; ++i) {
                lpos += vals[i].second;
                if (vals[i].first == vals[i + 1].first) continue;
                const size_t nl = i + 1, nr = n - nl;
                const double gain = parent_gini -
                                    (static_cast<double>(nl) / n) * gini(lpos, nl) -
                                    (static_cast<double>(nr) / n) * gini(pos - lpos, nr);
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feat = f;
                    best_thr = 0.5f * (vals[i].first + vals[i + 1].first);
                }
            }
        }
        if (best_feat < 0) return node_id;

        std::vector<size_t> li, ri;
        for (size_t i : idx)
            (x[i][best_feat] <= best_thr ? li : ri).push_back(i);
        if (li.empty() || ri.empty()) return node_id;

        importance[best_feat] += (static_cast<double>(n) / n_total) * best_gain;
        nodes[node_id].feature = best_feat;
        nodes[node_id].threshold = best_thr;
        nodes[node_id].left = build(std::move(li), depth + 1);
        nodes[node_id].right = build(std::move(ri), depth + 1);
        return node_id;
    }
};

float tree_predict(const std::vector<TreeNode>& nodes, const std::vector<float>& row) {
    int cur = 0;
    while (nodes[cur].feature >= 0)
        cur = row[nodes[cur].feature] <= nodes[cur].threshold ? nodes[cur].left : nodes[cur].right;
    return nodes[cur].value;
}

nlohmann::json nodes_to_json(const std::vector<TreeNode>& nodes) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& nd : nodes)
        arr.push_back({{"f", nd.feature},
                       {"t", nd.threshold},
                       {"l", nd.left},
                       {"r", nd.right},
                       {"v", nd.value}});
    return arr;
}

std::vector<TreeNode> nodes_from_json(const nlohmann::json& arr) {
    std::vector<TreeNode> nodes;
    for (const auto& j : arr)
        nodes.push_back({j.at("f").get<int>(), j.at("t").get<float>(), j.at("l").get<int>(),
                         j.at("r").get<int>(), j.at("v").get<float>()});
    return nodes;
}

}  // namespace

RandomForestModel fit_random_forest(const Features& x, const std::vector<int>& y, int trees,
                                    int max_depth, uint64_t seed) {
    if (x.empty()) throw contract_error("fit_random_forest: empty feature matrix");
    if (x.size() != y.size())
        throw contract_error("fit_random_forest: feature/label count mismatch");
    if (trees < 1) throw parameter_error("fit_random_forest: trees must be >= 1");
    if (max_depth < 1) throw parameter_error("fit_random_forest: max_depth must be >= 1");
    const size_t n = x.size(), d = x[0].size();
    for (const auto& row : x)
        if (row.size() != d) throw contract_error("fit_random_forest: ragged feature rows");

    RandomForestModel m;
    m.n_features = static_cast<int>(d);
    m.max_depth = max_depth;
    m.seed = seed;
    m.importance_raw.assign(d, 0.0);
    const int mtry = std::max(1, static_cast<int>(std::lround(std::ceil(std::sqrt(
                                  static_cast<double>(d))))));

    for (int t = 0; t < trees; ++t) {
        std::mt19937_64 rng(derive_seed(seed, "rf-tree/" + std::to_string(t)));
        std::uniform_int_distribution<size_t> pick(0, n - 1);
        std::vector<size_t> boot(n);
        for (auto& i : boot) i = pick(rng);
        m.trees.emplace_back();
        TreeBuilder b{x, y, max_depth, mtry, rng, n, m.trees.back(), m.importance_raw};
        b.build(std::move(boot), 0);
    }
    return m;
}

std::vector<float> rf_score(const RandomForestModel& model, const Features& x) {
    if (x.empty()) throw contract_error("rf_score: empty feature matrix");
    std::vector<float> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        if (x[i].size() != static_cast<size_t>(model.n_features))
            throw dimension_error("rf_score: feature width mismatch");
        double s = 0;
        for (const auto& tr : model.trees) s += tree_predict(tr, x[i]);
        out[i] = static_cast<float>(s / model.trees.size());
    }
    return out;
}

std::vector<double> rf_importances(const RandomForestModel& model) {
    double total = std::accumulate(model.importance_raw.begin(), model.importance_raw.end(), 0.0);
    if (total <= 0.0) {
        std::cerr << "rf_importances: forest has no splits; reporting uniform importances\n";
        return std::vector<double>(model.n_features, 1.0 / model.n_features);
    }
    std::vector<double> out(model.importance_raw);
    for (auto& v : out) v /= total;
    return out;
}

void save_random_forest(const RandomForestModel& model, const std::string& path) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["kind"] = "random_forest";
    j["n_features"] = model.n_features;
    j["max_depth"] = model.max_depth;
    j["seed"] = model.seed;
    j["importance_raw"] = model.importance_raw;
    j["trees"] = nlohmann::json::array();
    for (const auto& tr : model.trees) j["trees"].push_back(nodes_to_json(tr));
    std::ofstream out(path);
    if (!out) throw format_error(path + ": cannot open for writing");
    out << j.dump() << "\n";
}

RandomForestModel load_random_forest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw format_error(path + ": cannot open");
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("format_version").get<int>() != 1)
        throw format_error(path + ": unsupported format version");
    RandomForestModel m;
    m.n_features = j.at("n_features").get<int>();
    m.max_depth = j.at("max_depth").get<int>();
    m.seed = j.at("seed").get<uint64_t>();
    m.importance_raw = j.at("importance_raw").get<std::vector<double>>();
    for (const auto& tj : j.at("trees")) m.trees.push_back(nodes_from_json(tj));
    return m;
}

}  // namespace aedet
