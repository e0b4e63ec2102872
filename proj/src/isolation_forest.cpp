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

struct IsoBuilder {
    const Features& x;
    int height_limit;
    std::mt19937_64& rng;
    std::vector<TreeNode>& nodes;

    int build(std::vector<size_t> idx, int depth) {
        const int node_id = static_cast<int>(nodes.size());
        nodes.push_back({});
        nodes[node_id].value = static_cast<float>(idx.size());
        if (depth >= height_limit || idx.size() <= 1) return node_id;

        // features with spread at this node
        const size_t d = x[0].size();
        std::vector<int> usable;
        std::vector<std::pair<float, float>> ranges(d);
        for (size_t f = 0; f < d; ++f) {
            float lo = x[idx[0]][f], hi = lo;
            for (size_t i : idx) {
                lo = std::min(lo, x[i][f]);
                hi = std::max(hi, x[i][f]);
            }
            ranges[f] = {lo, hi};
            if (hi > lo) usable.push_back(static_cast<int>(f));
        }
        if (usable.empty()) return node_id;

        std::uniform_int_distribution<size_t> pickf(0, usable.size() - 1);
        const int f = usable[pickf(rng)];
        std::uniform_real_distribution<float> pickt(ranges[f].first, ranges[f].second);
        const float thr = pickt(rng);
        std::vector<size_t> li, ri;
        for (size_t i : idx) (x[i][f] < thr ? li : ri).push_back(i);
        if (li.empty() || ri.empty()) return node_id;

        nodes[node_id].feature = f;
        nodes[node_id].threshold = thr;
        nodes[node_id].left = build(std::move(li), depth + 1);
        nodes[node_id].right = build(std::move(ri), depth + 1);
        return node_id;
    }
};

double path_length(const std::vector<TreeNode>& nodes, const std::vector<float>& row) {
    int cur = 0;
    int depth = 0;
    while (nodes[cur].feature >= 0) {
        cur = row[nodes[cur].feature] < nodes[cur].threshold ? nodes[cur].left : nodes[cur].right;
        ++depth;
    }
    return depth + avg_path_length(static_cast<int>(nodes[cur].value));
}

}  // namespace

double avg_path_length(int n) {
    if (n <= 1) return 0.0;
    if (n == 2) return 1.0;
    // harmonic number H(n-1) via ln(m) + gamma + 1/(2m)
    const double m = n - 1.0;
    const double h = std::log(m) + 0.5772156649015329 + 0.5 / m;
    return 2.0 * h - 2.0 * (n - 1.0) / n;
}

IsolationForestModel fit_isolation_forest(const Features& x, int trees, int psi, uint64_t seed) {
    if (x.empty()) throw contract_error("fit_isolation_forest: empty feature matrix");
    if (x.size() < 2) throw contract_error("fit_isolation_forest: need >= 2 training samples");
    if (trees < 1) throw parameter_error("fit_isolation_forest: trees must be >= 1");
    if (psi < 2) throw parameter_error("fit_isolation_forest: psi must be >= 2");
    const size_t d = x[0].size();
    for (const auto& row : x)
        if (row.size() != d) throw contract_error("fit_isolation_forest: ragged feature rows");

    IsolationForestModel m;
    m.n_features = static_cast<int>(d);
    m.seed = seed;
    if (static_cast<size_t>(psi) > x.size()) {
        std::cerr << "fit_isolation_forest: psi " << psi << " exceeds training size " << x.size()
                  << "; clamping\n";
        psi = static_cast<int>(x.size());
    }
    m.psi = psi;
    m.c_psi = avg_path_length(psi);
    const int height_limit =
        static_cast<int>(std::ceil(std::log2(static_cast<double>(psi))));

    std::vector<size_t> all(x.size());
    std::iota(all.begin(), all.end(), 0);
    for (int t = 0; t < trees; ++t) {
        std::mt19937_64 rng(derive_seed(seed, "iso-tree/" + std::to_string(t)));
        std::vector<size_t> sub = all;
        std::shuffle(sub.begin(), sub.end(), rng);
        sub.resize(psi);
        m.trees.emplace_back();
        IsoBuilder b{x, height_limit, rng, m.trees.back()};
        b.build(std::move(sub), 0);
    }
    return m;
}

std::vector<float> iso_score(const IsolationForestModel& model, const Features& x) {
    if (x.empty()) throw contract_error("iso_score: empty feature matrix");
    std::vector<float> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        if (x[i].size() != static_cast<size_t>(model.n_features))
            throw dimension_error("iso_score: feature width mismatch");
        double e = 0;
        for (const auto& tr : model.trees) e += path_length(tr, x[i]);
        e /= model.trees.size();
        out[i] = static_cast<float>(std::pow(2.0, -e / model.c_psi));
    }
    return out;
}

void save_isolation_forest(const IsolationForestModel& model, const std::string& path) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["kind"] = "isolation_forest";
    j["n_features"] = model.n_features;
    j["psi"] = model.psi;
    j["c_psi"] = model.c_psi;
    j["seed"] = model.seed;
    j["trees"] = nlohmann::json::array();
    for (const auto& tr : model.trees) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& nd : tr)
            arr.push_back({{"f", nd.feature},
                           {"t", nd.threshold},
                           {"l", nd.left},
                           {"r", nd.right},
                           {"v", nd.value}});
        j["trees"].push_back(std::move(arr));
    }
    std::ofstream out(path);
    if (!out) throw format_error(path + ": cannot open for writing");
    out << j.dump() << "\n";
}

IsolationForestModel load_isolation_forest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw format_error(path + ": cannot open");
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("format_version").get<int>() != 1)
        throw format_error(path + ": unsupported format version");
    IsolationForestModel m;
    m.n_features = j.at("n_features").get<int>();
    m.psi = j.at("psi").get<int>();
    m.c_psi = j.at("c_psi").get<double>();
    m.seed = j.at("seed").get<uint64_t>();
    for (const auto& tj : j.at("trees")) {
        std::vector<TreeNode> nodes;
        for (const auto& nj : tj)
            nodes.push_back({nj.at("f").get<int>(), nj.at("t").get<float>(),
                             nj.at("l").get<int>(), nj.at("r").get<int>(),
                             nj.at("v").get<float>()});
        m.trees.push_back(std::move(nodes));
    }
    return m;
}

}  // namespace aedet
