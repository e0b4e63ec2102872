#pragma once

#include <string>
#include <vector>

#include "aedet/network.hpp"
#include "aedet/tensor.hpp"

namespace aedet {

enum class AttackKind { Fgsm, Bim, Pgd, DeepFool, Cw };

const char* attack_kind_name(AttackKind k);
AttackKind attack_kind_from(const std::string& s);

struct AttackSpec {
    AttackKind kind = AttackKind::Fgsm;
    float epsilon = 0.1f;     // L-inf budget where applicable
    int steps = 10;           // bim/pgd/deepfool/cw iteration budget
    float step_size = 0.0f;   // 0 = derive default (bim eps/4, pgd 2.5*eps/steps)
    float cw_confidence = 0.0f;
    float cw_const = 1.0f;
    float cw_lr = 0.01f;
    uint64_t seed = 0;

    void validate() const;
};

AttackSpec default_attack_spec(AttackKind kind, float epsilon);

struct AdversarialBatch {
    Tensor originals;
    Tensor perturbed;
    std::vector<int> true_labels;
    std::vector<int> pred_clean;
    std::vector<int> pred_adv;
    std::vector<char> success;  // misclassified w.r.t. the true label
    std::vector<float> linf;
    std::vector<float> l2;

    size_t size() const { return true_labels.size(); }
};

// x_adv = clip(x + eps * sign(grad_x CE(F(x), y)), 0, 1); sign(0) = 0.
AdversarialBatch fgsm(const TrainedNetwork& net, const Tensor& x, const std::vector<int>& y,
                      float epsilon);

// Repeated sign steps, each projected into the eps-ball around x and [0,1].
// BIM when random_start=false, PGD when true.
AdversarialBatch iterative_linf(const TrainedNetwork& net, const Tensor& x,
                                const std::vector<int>& y, float epsilon, int steps,
                                float step_size, bool random_start, uint64_t seed = 0);

// Minimal-norm step to the nearest linearized boundary until the label
// flips, final perturbation overshoots by factor 1.02.
AdversarialBatch deepfool(const TrainedNetwork& net, const Tensor& x, const std::vector<int>& y,
                          int steps_max);

// L2 attack: minimize ||delta||^2 + c * margin hinge via tanh-space
// reparameterization and Adam; returns the lowest-norm successful iterate.
AdversarialBatch cw_l2(const TrainedNetwork& net, const Tensor& x, const std::vector<int>& y,
                       float c, float kappa, int steps, float lr);

AdversarialBatch run_attack(const TrainedNetwork& net, const Tensor& x, const std::vector<int>& y,
                            const AttackSpec& spec);

// One perturbed batch per grid point eps in linspace(0, 2*eps_max, grid_points).
// Only eps-bounded kinds are supported.
std::vector<Tensor> epsilon_sweep(const TrainedNetwork& net, const Tensor& x,
                                  const std::vector<int>& y, AttackKind kind, float eps_max,
                                  int grid_points);

// AEDM tensors (originals, perturbed) plus CSV manifest:
// sample_id,true_label,pred_clean,pred_adv,success,linf,l2
void save_adversarial_batch(const std::string& aedm_path, const std::string& manifest_csv_path,
                            const AdversarialBatch& batch);
AdversarialBatch load_adversarial_batch(const std::string& aedm_path,
                                        const std::string& manifest_csv_path);

}  // namespace aedet
