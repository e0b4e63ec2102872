#pragma once

#include <map>
#include <string>
#include <vector>

#include "aedet/attacks.hpp"
#include "aedet/dataset.hpp"
#include "aedet/eval.hpp"

namespace aedet {

struct DatasetSpec {
    std::string kind = "synthetic";  // synthetic | idx
    // synthetic
    int classes = 4;
    int train_per_class = 150;
    int test_per_class = 40;
    int image_size = 16;
    float blob_sigma = 1.5f;
    // idx
    std::string train_images, train_labels, test_images, test_labels;
};

struct ExperimentConfig {
    std::string output_dir = "out";
    uint64_t seed = 0;
    int threads = 1;
    DatasetSpec dataset;
    // target network training
    int net_epochs = 6;
    float net_lr = 1e-3f;
    int net_batch = 32;
    // autoencoders (shared hyperparameters per tap)
    int ae_epochs = 12;
    float ae_lr = 1e-3f;
    int ae_batch = 64;
    float ae_mmd_weight = 1.0f;
    // attacks and noise control
    std::vector<AttackSpec> attacks;
    float noise_epsilon = 0.3f;
    // detectors
    std::vector<float> c_grid = {0.1f, 1.0f, 10.0f, 100.0f};
    int svm_epochs = 150;
    float svm_lr = 0.01f;
    int rf_trees = 100;
    int rf_max_depth = 12;
    int iso_trees = 100;
    int iso_psi = 256;
    // analyses
    int trajectory_samples = 30;
    int trajectory_grid_points = 5;
    std::vector<int> pgd_iteration_grid = {1, 5, 10, 40};
    int kde_grid_n = 40;
};

// Loads the JSON config; `overrides` entries are dotted-path assignments
// ("network.epochs=3") applied before parsing.
ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides = {});
void write_experiment_config(const ExperimentConfig& config, const std::string& path);

// FNV-1a over the canonical JSON dump of the config.
uint64_t config_fingerprint(const ExperimentConfig& config);

inline constexpr const char* kToolVersion = "0.1.0";

struct RunManifest {
    std::string config_fingerprint;  // hex
    std::string tool_version = kToolVersion;
    std::vector<std::string> completed;  // stage names
    std::vector<std::string> artifacts;
    std::map<std::string, double> runtime_seconds;  // per completed stage

    bool stage_done(const std::string& stage) const;
};

RunManifest load_manifest(const std::string& path);
void save_manifest(const RunManifest& m, const std::string& path);

// Ordered pipeline stages; `all` runs them in this order.
const std::vector<std::string>& stage_names();
// Direct prerequisites of a stage.
const std::vector<std::string>& stage_deps(const std::string& stage);

// Runs one stage (or "all"). Skips completed stages whose config fingerprint
// is unchanged unless `force`; missing prerequisites raise a config_error
// naming the stage to run first. Returns true when work was performed.
bool run_stage(const ExperimentConfig& config, const std::string& stage, bool force = false);

}  // namespace aedet
