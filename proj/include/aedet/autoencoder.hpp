#pragma once

#include <map>
#include <string>
#include <vector>

#include "aedet/csv.hpp"
#include "aedet/network.hpp"
#include "aedet/tensor.hpp"

namespace aedet {

struct AutoencoderConfig {
    std::string tap;
    int latent_dim = 16;
    float mmd_weight = 1.0f;
    KernelKind kernel = KernelKind::Imq;
    float kernel_scale = 0.0f;  // 0 = default 2 * latent_dim
    int epochs = 20;
    float lr = 1e-3f;
    int batch_size = 32;
    uint64_t seed = 0;

    float effective_scale() const {
        return kernel_scale > 0.0f ? kernel_scale : 2.0f * static_cast<float>(latent_dim);
    }
};

// conv taps (rank-3 activations) get a 2-conv encoder with a dense head;
// the logits tap (rank-1) gets a 2-layer dense encoder with a smaller latent.
AutoencoderConfig default_ae_config(const std::string& tap, const std::vector<int>& tap_shape);

struct LayerAutoencoder {
    AutoencoderConfig config;
    std::vector<int> input_shape;  // per-sample activation shape (no batch)
    bool conv_arch = false;
    std::vector<Tensor> params;  // encoder then decoder, fixed layout per arch
    std::vector<float> training_curve;  // monotone-smoothed epoch losses
};

LayerAutoencoder init_autoencoder(const AutoencoderConfig& config,
                                  const std::vector<int>& tap_shape);

// Minimizes mean per-sample reconstruction error + lambda * MMD^2 between
// encoded batches and fresh standard-Gaussian samples (biased V-statistic).
LayerAutoencoder train_wae(const Tensor& activations, const AutoencoderConfig& config);

// acts is a batched activation tensor: [N, ...input_shape].
Tensor encode(const LayerAutoencoder& ae, const Tensor& acts, Tape* tape = nullptr);
Tensor decode(const LayerAutoencoder& ae, const Tensor& latents, Tape* tape = nullptr);
Tensor reconstruct(const LayerAutoencoder& ae, const Tensor& acts, Tape* tape = nullptr);

// Per-sample squared L2 distance to the reconstruction (summed over coords).
std::vector<float> reconstruction_error(const LayerAutoencoder& ae, const Tensor& acts);
// Per-sample L2 norm of the latent code.
std::vector<float> latent_norm(const LayerAutoencoder& ae, const Tensor& acts);

// Biased V-statistic MMD^2 between two sample sets [N,Z], [M,Z].
float mmd2(const Tensor& x, const Tensor& y, KernelKind kind, float scale);

enum class FeatureMode { Compact, Full };

struct FeatureMatrix {
    FeatureMode mode = FeatureMode::Compact;
    std::vector<std::string> columns;   // tap-major, deterministic layout
    std::vector<int> sample_ids;
    std::vector<std::string> provenance;  // clean/noisy/adversarial/unknown per sample
    std::vector<std::vector<float>> values;  // [N][columns]

    size_t size() const { return sample_ids.size(); }
    int column(const std::string& name) const;
};

using AeBank = std::map<std::string, LayerAutoencoder>;

// Runs forward_with_taps once, feeds every tap to its autoencoder and
// assembles features: compact = (rec_err, lat_norm) per tap in config order,
// full = the Z latent coordinates per tap.
FeatureMatrix extract_features(const TrainedNetwork& net, const AeBank& bank, const Tensor& inputs,
                               FeatureMode mode, const std::string& provenance);

void append_features(FeatureMatrix& dst, const FeatureMatrix& src);

void write_feature_csv(const std::string& path, const FeatureMatrix& fm);
FeatureMatrix read_feature_csv(const std::string& path);

// One AEDM container per tap plus a JSON sidecar describing the bank.
void save_ae_bank(const AeBank& bank, const std::string& dir);
AeBank load_ae_bank(const std::string& dir);

}  // namespace aedet
