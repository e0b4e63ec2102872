#pragma once

#include <string>
#include <vector>

#include "aedet/common.hpp"

namespace aedet {

// Features are row-major [N][d]; labels are 0 (benign) / 1 (adversarial).
using Features = std::vector<std::vector<float>>;

// ---- linear SVM -------------------------------------------------------------

struct LinearSvmModel {
    std::vector<float> weights;
    float bias = 0.0f;
    std::vector<float> col_mean, col_std;  // learned standardization, std > 0
    float C = 1.0f;
    int epochs = 0;
    float lr = 0.0f;
};

// Subgradient descent on hinge loss + (1/C) * ||w||^2 / 2 over standardized
// columns (degenerate columns get std = 1).
LinearSvmModel fit_linear_svm(const Features& x, const std::vector<int>& y, float C, int epochs,
                              float lr, uint64_t seed);

// Signed margin w . standardize(x) + b; higher = more adversarial.
std::vector<float> svm_score(const LinearSvmModel& model, const Features& x);

// Stratified k-fold grid search maximizing mean fold AUROC; ties break to the
// smallest C.
float grid_search_cv(const Features& x, const std::vector<int>& y,
                     const std::vector<float>& c_grid, int folds, int epochs, float lr,
                     uint64_t seed);

void save_svm(const LinearSvmModel& model, const std::string& path);
LinearSvmModel load_svm(const std::string& path);

// ---- random forest ----------------------------------------------------------

struct TreeNode {
    int feature = -1;  // -1 = leaf
    float threshold = 0.0f;
    int left = -1, right = -1;
    float value = 0.0f;  // leaf: class-1 fraction (RF) / subset size (iForest)
};

struct RandomForestModel {
    std::vector<std::vector<TreeNode>> trees;
    int n_features = 0;
    int max_depth = 0;
    uint64_t seed = 0;
    std::vector<double> importance_raw;  // unnormalized Gini decrease per feature
};

// Bagged CART with Gini splits and sqrt(d) feature subsampling per node.
RandomForestModel fit_random_forest(const Features& x, const std::vector<int>& y, int trees,
                                    int max_depth, uint64_t seed);

// Mean leaf class-1 fraction across trees.
std::vector<float> rf_score(const RandomForestModel& model, const Features& x);

// Normalized total impurity decrease; a split-free forest reports uniform
// importances and warns on stderr.
std::vector<double> rf_importances(const RandomForestModel& model);

void save_random_forest(const RandomForestModel& model, const std::string& path);
RandomForestModel load_random_forest(const std::string& path);

// ---- isolation forest ---------------------------------------------------------

struct IsolationForestModel {
    std::vector<std::vector<TreeNode>> trees;
    int n_features = 0;
    int psi = 0;  // subsample size
    double c_psi = 0.0;
    uint64_t seed = 0;
};

// c(n) = 2 H(n-1) - 2 (n-1)/n, the average unsuccessful-search path length.
double avg_path_length(int n);

// One-class model fit on clean features only; psi clamps to the training size
// (with a warning) when larger.
IsolationForestModel fit_isolation_forest(const Features& x, int trees, int psi, uint64_t seed);

// s(x) = 2^(-E[h(x)] / c(psi)), in (0,1); higher = more anomalous.
std::vector<float> iso_score(const IsolationForestModel& model, const Features& x);

void save_isolation_forest(const IsolationForestModel& model, const std::string& path);
IsolationForestModel load_isolation_forest(const std::string& path);

// ---- score emission -----------------------------------------------------------

// CSV: sample_id,score,label
void write_scores_csv(const std::string& path, const std::vector<float>& scores,
                      const std::vector<int>& labels);

}  // namespace aedet
