#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "aedet/attacks.hpp"
#include "aedet/autoencoder.hpp"
#include "aedet/detectors.hpp"
#include "aedet/network.hpp"

namespace aedet {

// Probability a random positive score exceeds a random negative one, ties
// counted 1/2; computed via rank statistics.
double auroc(const std::vector<float>& scores, const std::vector<int>& labels);

// ---- detection protocol -------------------------------------------------------

// label 0 = class 1 (clean/noisy, correctly classified), label 1 = class 2
// (adversarial, misclassified).
struct DetectionDataset {
    Tensor inputs;
    std::vector<int> labels;
    std::vector<std::string> provenance;  // clean / noisy / adversarial
    std::vector<int> source_index;        // originating test-set sample

    size_t size() const { return labels.size(); }
};

DetectionDataset build_detection_dataset(const TrainedNetwork& net, const LabeledImages& test,
                                         const AttackSpec& spec, float noise_eps, uint64_t seed);

// Same protocol over an attack batch that was already computed on `test`.
DetectionDataset build_detection_dataset(const TrainedNetwork& net, const LabeledImages& test,
                                         const AdversarialBatch& adv, float noise_eps,
                                         uint64_t seed);

// AEDM tensor ("inputs") + CSV manifest: sample_id,label,provenance,source_index
void save_detection_dataset(const DetectionDataset& ds, const std::string& aedm_path,
                            const std::string& csv_path);
DetectionDataset load_detection_dataset(const std::string& aedm_path,
                                        const std::string& csv_path);

// Stratified 10/90 split (10% train, rounded up, >= 1 per class); returns
// (train indices, eval indices).
std::pair<std::vector<size_t>, std::vector<size_t>> split_10_90(const DetectionDataset& ds,
                                                                uint64_t seed);

// ---- analyses -----------------------------------------------------------------

struct ImportanceReport {
    std::vector<std::string> taps;
    std::map<std::string, double> rec_err;    // per tap
    std::map<std::string, double> lat_norm;   // per tap
    std::map<std::string, double> tap_sum;    // per tap, rec_err + lat_norm
    double rec_err_total = 0.0;
    double lat_norm_total = 0.0;
};

// Interprets rf importances against a compact-feature column layout.
ImportanceReport layer_and_feature_importance(const RandomForestModel& rf,
                                              const std::vector<std::string>& columns);

struct TrajectoryRecord {
    int sample_id = 0;
    AttackKind kind = AttackKind::Bim;
    std::vector<float> eps_grid;  // starts at 0
    // per grid point, per tap: (rec_err, lat_norm)
    std::vector<std::map<std::string, std::pair<float, float>>> points;
};

std::vector<TrajectoryRecord> compute_trajectories(const TrainedNetwork& net, const AeBank& bank,
                                                   const Tensor& inputs,
                                                   const std::vector<int>& labels, AttackKind kind,
                                                   float eps_max, int grid_points);

struct HypothesisReport {
    // H1: median over samples of (relative rec_err increase at eps_max)
    //     minus (relative lat_norm increase at eps_max), per tap.
    std::map<std::string, double> h1_per_tap;
    // H2: single-feature (rec_err) AUROC per tap, a profile over depth.
    std::map<std::string, double> h2_auroc_per_tap;
};

HypothesisReport hypothesis_checks(const std::vector<TrajectoryRecord>& trajectories,
                                   const FeatureMatrix& compact_features,
                                   const std::vector<int>& labels);

struct Kde2dGrid {
    std::vector<float> xs, ys;                // cell centers
    std::vector<std::vector<float>> density;  // [y][x]
    float cell_area = 0.0f;
};

Kde2dGrid kde2d_grid(const std::vector<std::pair<float, float>>& points, float bandwidth,
                     int grid_n, float x_lo, float x_hi, float y_lo, float y_hi);

// ---- detection pipelines ---------------------------------------------------------

enum class Representation { Full, Both, RecErr, LatNorm };

const char* representation_name(Representation r);

// Feature rows for the chosen representation: Full = latent coordinates,
// the rest are column subsets of the compact features.
Features detection_features(const TrainedNetwork& net, const AeBank& bank, const Tensor& inputs,
                            Representation rep);

// SVM with 5-fold grid-searched C, fit on the 10% split, AUROC on the 90%.
double supervised_detection_auroc(const TrainedNetwork& net, const AeBank& bank,
                                  const DetectionDataset& ds, Representation rep, uint64_t seed);

// Isolation forest fit on clean-training-set features only, AUROC over the
// full detection dataset.
double unsupervised_detection_auroc(const TrainedNetwork& net, const AeBank& bank,
                                    const LabeledImages& clean_train, const DetectionDataset& ds,
                                    Representation rep, uint64_t seed);

// ---- appendix studies -----------------------------------------------------------

struct StudyRow {
    std::string key;
    double auroc_value = 0.0;
};

// Unsupervised (isolation forest on compact features) detection AUROC as the
// PGD iteration budget grows.
std::vector<StudyRow> pgd_iteration_study(const TrainedNetwork& net, const AeBank& bank,
                                          const LabeledImages& clean_train,
                                          const LabeledImages& test, float epsilon,
                                          const std::vector<int>& iteration_grid, uint64_t seed);

// SVM fit once on the FGSM detection dataset's 10% split (full latents),
// evaluated against every attack's 90% split.
std::vector<StudyRow> transfer_study(const TrainedNetwork& net, const AeBank& bank,
                                     const LabeledImages& test,
                                     const std::vector<AttackSpec>& attacks, uint64_t seed);

// Supervised AUROC per representation {full, both, rec_err, lat_norm} plus
// unsupervised rows for the latter three (keys prefixed "sup_" / "unsup_").
std::vector<StudyRow> representation_ablation(const TrainedNetwork& net, const AeBank& bank,
                                              const LabeledImages& clean_train,
                                              const LabeledImages& test, const AttackSpec& spec,
                                              uint64_t seed);

// ---- report emission -------------------------------------------------------------

void write_study_csv(const std::string& path, const std::string& key_column,
                     const std::vector<StudyRow>& rows);
std::vector<StudyRow> read_study_csv(const std::string& path);

}  // namespace aedet
