#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "aedet/dataset.hpp"
#include "aedet/tensor.hpp"

namespace aedet {

enum class LayerKind { Conv, Relu, Dense, Flatten };

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    int filters = 0, kernel = 0, stride = 1, padding = 0;  // conv
    int units = 0;                                         // dense

    static LayerSpec conv(int filters, int kernel, int stride, int padding) {
        return {LayerKind::Conv, filters, kernel, stride, padding, 0};
    }
    static LayerSpec relu() { return {LayerKind::Relu, 0, 0, 1, 0, 0}; }
    static LayerSpec dense(int units) { return {LayerKind::Dense, 0, 0, 1, 0, units}; }
    static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0, 1, 0, 0}; }
};

struct NetworkConfig {
    std::vector<int> input_shape;  // C,H,W
    int num_classes = 0;
    std::vector<LayerSpec> layers;
    // tap name -> layer index; the tap exports the activation produced by
    // that layer. Indices strictly increasing.
    std::vector<std::pair<std::string, int>> taps;
};

struct TrainMeta {
    int epochs = 0;
    float train_accuracy = 0.0f;
    float val_accuracy = 0.0f;
};

struct TrainedNetwork {
    NetworkConfig config;
    std::vector<Tensor> params;  // conv: kernel, bias; dense: weight, bias; in layer order
    TrainMeta meta;
};

using TapActivations = std::map<std::string, Tensor>;

// conv(16,3,s1,p1)+relu -> conv(32,3,s2,p1)+relu -> conv(64,3,s2,p1)+relu
// -> flatten -> dense(K); taps tap1..tap3 after each relu, tap4 at the logits.
NetworkConfig build_small_convnet(const std::vector<int>& input_shape, int num_classes);

// Closed-form activation shape per layer (excluding batch). Entry i is the
// output shape of layers[i].
std::vector<std::vector<int>> layer_output_shapes(const NetworkConfig& config);
size_t parameter_count(const NetworkConfig& config);
std::vector<int> tap_shape(const NetworkConfig& config, const std::string& tap_name);

TrainedNetwork init_network(const NetworkConfig& config, uint64_t seed);

// Minibatch Adam on cross-entropy. The last 10% of a deterministic shuffle
// is held out for validation accuracy. Throws training_error on NaN loss.
TrainedNetwork train_classifier(const NetworkConfig& config, const LabeledImages& train_set,
                                int epochs, float lr, int batch_size, uint64_t seed);

// Forward pass over explicit parameters; used by training and attacks
// (which watch x on the tape). taps, when non-null, receives every
// configured tap's activation.
Tensor network_forward(const NetworkConfig& config, const std::vector<Tensor>& params,
                       const Tensor& x, Tape* tape = nullptr, TapActivations* taps = nullptr);

inline Tensor forward(const TrainedNetwork& net, const Tensor& x, Tape* tape = nullptr) {
    return network_forward(net.config, net.params, x, tape);
}

std::pair<Tensor, TapActivations> forward_with_taps(const TrainedNetwork& net, const Tensor& x);

// argmax over logits, ties broken toward the lowest class id.
std::vector<int> predict(const TrainedNetwork& net, const Tensor& x);
std::vector<int> argmax_rows(const Tensor& logits);
double accuracy(const TrainedNetwork& net, const LabeledImages& data);

// Parameter checksum for freeze assertions across pipeline stages.
uint64_t params_checksum(const TrainedNetwork& net);

void save_network(const TrainedNetwork& net, const std::string& aedm_path,
                  const std::string& json_path);
TrainedNetwork load_network(const std::string& aedm_path, const std::string& json_path);

}  // namespace aedet
