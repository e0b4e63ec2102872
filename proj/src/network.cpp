#include "aedet/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "aedet/common.hpp"
#include "aedet/serialize.hpp"
#include "json.hpp"

namespace aedet {

namespace {

void validate_config(const NetworkConfig& config) {
    if (config.input_shape.size() != 3)
        throw config_error("network: input shape must be C,H,W");
    if (config.num_classes < 2) throw config_error("network: need at least 2 classes");
    int prev = -1;
    for (const auto& [name, idx] : config.taps) {
        if (idx <= prev) throw config_error("network: tap indices must be strictly increasing");
        if (idx < 0 || idx >= static_cast<int>(config.layers.size()))
            throw config_error("network: tap index out of range for tap '" + name + "'");
        prev = idx;
    }
}

}  // namespace

NetworkConfig build_small_convnet(const std::vector<int>& input_shape, int num_classes) {
    if (input_shape.size() != 3) throw config_error("build_small_convnet: input shape must be C,H,W");
    if (input_shape[1] < 8 || input_shape[2] < 8)
        throw config_error("build_small_convnet: spatial extents must be >= 8");
    NetworkConfig cfg;
    cfg.input_shape = input_shape;
    cfg.num_classes = num_classes;
    cfg.layers = {
        LayerSpec::conv(16, 3, 1, 1), LayerSpec::relu(),
        LayerSpec::conv(32, 3, 2, 1), LayerSpec::relu(),
        LayerSpec::conv(64, 3, 2, 1), LayerSpec::relu(),
        LayerSpec::flatten(),
        LayerSpec::dense(num_classes),
    };
    cfg.taps = {{"tap1", 1}, {"tap2", 3}, {"tap3", 5}, {"tap4", 7}};
    validate_config(cfg);
    return cfg;
}

std::vector<std::vector<int>> layer_output_shapes(const NetworkConfig& config) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur = config.input_shape;  // C,H,W or {D}
    for (const auto& l : config.layers) {
        switch (l.kind) {
            case LayerKind::Conv: {
                if (cur.size() != 3) throw config_error("layer_output_shapes: conv on non-image");
                const int ho = (cur[1] + 2 * l.padding - l.kernel) / l.stride + 1;
                const int wo = (cur[2] + 2 * l.padding - l.kernel) / l.stride + 1;
                if (ho < 1 || wo < 1) throw dimension_error("layer_output_shapes: conv output empty");
                cur = {l.filters, ho, wo};
                break;
            }
            case LayerKind::Relu:
                break;
            case LayerKind::Flatten: {
                int n = 1;
                for (int e : cur) n *= e;
                cur = {n};
                break;
            }
            case LayerKind::Dense:
                if (cur.size() != 1) throw config_error("layer_output_shapes: dense on non-flat input");
                cur = {l.units};
                break;
        }
        out.push_back(cur);
    }
    return out;
}

size_t parameter_count(const NetworkConfig& config) {
    size_t n = 0;
    std::vector<int> cur = config.input_shape;
    for (const auto& l : config.layers) {
        if (l.kind == LayerKind::Conv) {
            n += static_cast<size_t>(l.filters) * cur[0] * l.kernel * l.kernel + l.filters;
            cur = {l.filters, (cur[1] + 2 * l.padding - l.kernel) / l.stride + 1,
                   (cur[2] + 2 * l.padding - l.kernel) / l.stride + 1};
        } else if (l.kind == LayerKind::Flatten) {
            int flat = 1;
            for (int e : cur) flat *= e;
            cur = {flat};
        } else if (l.kind == LayerKind::Dense) {
            n += static_cast<size_t>(cur[0]) * l.units + l.units;
            cur = {l.units};
        }
    }
    return n;
}

std::vector<int> tap_shape(const NetworkConfig& config, const std::string& tap_name) {
    const auto shapes = layer_output_shapes(config);
    for (const auto& [name, idx] : config.taps)
        if (name == tap_name) return shapes[idx];
    throw config_error("tap_shape: unknown tap '" + tap_name + "'");
}

TrainedNetwork init_network(const NetworkConfig& config, uint64_t seed) {
    validate_config(config);
    std::mt19937_64 rng(seed);
    TrainedNetwork net;
    net.config = config;
    std::vector<int> cur = config.input_shape;
    for (const auto& l : config.layers) {
        if (l.kind == LayerKind::Conv) {
            const int fan_in = cur[0] * l.kernel * l.kernel;
            const float bound = std::sqrt(2.0f / fan_in);  // He init
            net.params.push_back(
                Tensor::randn({l.filters, cur[0], l.kernel, l.kernel}, 0.0f, bound, rng));
            net.params.push_back(Tensor::zeros({l.filters}));
            cur = {l.filters, (cur[1] + 2 * l.padding - l.kernel) / l.stride + 1,
                   (cur[2] + 2 * l.padding - l.kernel) / l.stride + 1};
        } else if (l.kind == LayerKind::Flatten) {
            int flat = 1;
            for (int e : cur) flat *= e;
            cur = {flat};
        } else if (l.kind == LayerKind::Dense) {
            const float bound = std::sqrt(2.0f / cur[0]);
            net.params.push_back(Tensor::randn({cur[0], l.units}, 0.0f, bound, rng));
            net.params.push_back(Tensor::zeros({l.units}));
            cur = {l.units};
        }
    }
    return net;
}

Tensor network_forward(const NetworkConfig& config, const std::vector<Tensor>& params,
                       const Tensor& x, Tape* tape, TapActivations* taps) {
    if (x.rank() != 4 || x.dim(1) != config.input_shape[0] || x.dim(2) != config.input_shape[1] ||
        x.dim(3) != config.input_shape[2])
        throw dimension_error("network_forward: input shape mismatch");
    Tensor cur = x;
    size_t p = 0;
    size_t tap_i = 0;
    for (size_t li = 0; li < config.layers.size(); ++li) {
        const auto& l = config.layers[li];
        switch (l.kind) {
            case LayerKind::Conv:
                cur = conv2d(tape, cur, params.at(p), params.at(p + 1), l.stride, l.padding);
                p += 2;
                break;
            case LayerKind::Relu:
                cur = relu(tape, cur);
                break;
            case LayerKind::Flatten:
                cur = reshape(tape, cur, {cur.dim(0), static_cast<int>(cur.numel()) / cur.dim(0)});
                break;
            case LayerKind::Dense:
                cur = dense(tape, cur, params.at(p), params.at(p + 1));
                p += 2;
                break;
        }
        if (taps && tap_i < config.taps.size() &&
            config.taps[tap_i].second == static_cast<int>(li)) {
            Tensor copy = cur;
            copy.node = -1;
            copy.requires_grad = false;
            (*taps)[config.taps[tap_i].first] = std::move(copy);
            ++tap_i;
        }
    }
    return cur;
}

std::pair<Tensor, TapActivations> forward_with_taps(const TrainedNetwork& net, const Tensor& x) {
    TapActivations taps;
    Tensor logits = network_forward(net.config, net.params, x, nullptr, &taps);
    return {std::move(logits), std::move(taps)};
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const int B = logits.dim(0), K = logits.dim(1);
    std::vector<int> out(B);
    for (int b = 0; b < B; ++b) {
        int best = 0;
        for (int k = 1; k < K; ++k)
            if (logits.data[b * K + k] > logits.data[b * K + best]) best = k;
        out[b] = best;
    }
    return out;
}

std::vector<int> predict(const TrainedNetwork& net, const Tensor& x) {
    return argmax_rows(forward(net, x));
}

double accuracy(const TrainedNetwork& net, const LabeledImages& data) {
    const auto preds = predict(net, data.images);
    size_t correct = 0;
    for (size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == data.labels[i]) ++correct;
    return data.size() ? static_cast<double>(correct) / data.size() : 0.0;
}

uint64_t params_checksum(const TrainedNetwork& net) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : net.params)
        for (float v : t.data) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            h ^= bits;
            h *= 0x100000001b3ULL;
        }
    return h;
}

TrainedNetwork train_classifier(const NetworkConfig& config, const LabeledImages& train_set,
                                int epochs, float lr, int batch_size, uint64_t seed) {
    if (epochs < 1) throw parameter_error("train_classifier: epochs must be >= 1");
    if (batch_size < 1) throw parameter_error("train_classifier: batch size must be >= 1");
    for (int y : train_set.labels)
        if (y < 0 || y >= config.num_classes)
            throw index_error("train_classifier: label out of range");

    TrainedNetwork net = init_network(config, derive_seed(seed, "init"));
    std::mt19937_64 rng(derive_seed(seed, "shuffle"));

    // deterministic 90/10 train/validation split
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const size_t n_val = std::max<size_t>(1, order.size() / 10);
    std::vector<size_t> val_idx(order.end() - n_val, order.end());
    std::vector<size_t> fit_idx(order.begin(), order.end() - n_val);
    const LabeledImages val = train_set.subset(val_idx);

    Optimizer<float> opt(OptimizerKind::Adam, lr);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(fit_idx.begin(), fit_idx.end(), rng);
        for (size_t start = 0; start < fit_idx.size(); start += batch_size) {
            const size_t end = std::min(fit_idx.size(), start + batch_size);
            std::vector<size_t> batch_idx(fit_idx.begin() + start, fit_idx.begin() + end);
            const LabeledImages batch = train_set.subset(batch_idx);

            Tape tape;
            for (auto& t : net.params) tape.watch(t);
            Tensor logits = network_forward(config, net.params, batch.images, &tape);
            Tensor loss = cross_entropy(&tape, logits, batch.labels);
            if (!std::isfinite(loss.scalar()))
                throw training_error("train_classifier: loss diverged (NaN/Inf) at epoch " +
                                     std::to_string(epoch) + ", batch offset " +
                                     std::to_string(start));
            tape.backward(loss);

            std::vector<Tensor*> ps;
            std::vector<const std::vector<float>*> gs;
            for (auto& t : net.params) {
                ps.push_back(&t);
                gs.push_back(tape.has_grad(t) ? &tape.grad(t) : nullptr);
            }
            // layers whose gradient did not materialize (dead relu) keep zero
            std::vector<std::vector<float>> zeros_store;
            zeros_store.reserve(gs.size());
            for (size_t i = 0; i < gs.size(); ++i)
                if (!gs[i]) {
                    zeros_store.emplace_back(ps[i]->numel(), 0.0f);
                    gs[i] = &zeros_store.back();
                }
            opt.step(ps, gs);
            for (auto& t : net.params) {
                t.node = -1;
                t.requires_grad = false;
            }
        }
    }
    net.meta.epochs = epochs;
    net.meta.train_accuracy = static_cast<float>(accuracy(net, train_set.subset(fit_idx)));
    net.meta.val_accuracy = static_cast<float>(accuracy(net, val));
    return net;
}

// --- persistence -----------------------------------------------------------

namespace {

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Relu: return "relu";
        case LayerKind::Dense: return "dense";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

LayerKind kind_from(const std::string& s) {
    if (s == "conv") return LayerKind::Conv;
    if (s == "relu") return LayerKind::Relu;
    if (s == "dense") return LayerKind::Dense;
    if (s == "flatten") return LayerKind::Flatten;
    throw format_error("unknown layer kind '" + s + "'");
}

}  // namespace

void save_network(const TrainedNetwork& net, const std::string& aedm_path,
                  const std::string& json_path) {
    NamedTensors tensors;
    for (size_t i = 0; i < net.params.size(); ++i)
        tensors.emplace_back("param" + std::to_string(i), net.params[i]);
    write_aedm(aedm_path, tensors);

    nlohmann::json j;
    j["format_version"] = 1;
    j["input_shape"] = net.config.input_shape;
    j["num_classes"] = net.config.num_classes;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : net.config.layers)
        j["layers"].push_back({{"kind", kind_name(l.kind)},
                               {"filters", l.filters},
                               {"kernel", l.kernel},
                               {"stride", l.stride},
                               {"padding", l.padding},
                               {"units", l.units}});
    j["taps"] = nlohmann::json::array();
    for (const auto& [name, idx] : net.config.taps) j["taps"].push_back({{"name", name}, {"layer", idx}});
    j["meta"] = {{"epochs", net.meta.epochs},
                 {"train_accuracy", net.meta.train_accuracy},
                 {"val_accuracy", net.meta.val_accuracy}};
    std::ofstream out(json_path);
    if (!out) throw format_error(json_path + ": cannot open for writing");
    out << j.dump(2) << "\n";
}

TrainedNetwork load_network(const std::string& aedm_path, const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw format_error(json_path + ": cannot open");
    nlohmann::json j;
    in >> j;
    if (j.value("format_version", -1) != 1)
        throw format_error(json_path + ": unsupported format version");
    TrainedNetwork net;
    net.config.input_shape = j.at("input_shape").get<std::vector<int>>();
    net.config.num_classes = j.at("num_classes").get<int>();
    for (const auto& lj : j.at("layers")) {
        LayerSpec l;
        l.kind = kind_from(lj.at("kind").get<std::string>());
        l.filters = lj.at("filters").get<int>();
        l.kernel = lj.at("kernel").get<int>();
        l.stride = lj.at("stride").get<int>();
        l.padding = lj.at("padding").get<int>();
        l.units = lj.at("units").get<int>();
        net.config.layers.push_back(l);
    }
    for (const auto& tj : j.at("taps"))
        net.config.taps.emplace_back(tj.at("name").get<std::string>(), tj.at("layer").get<int>());
    net.meta.epochs = j.at("meta").at("epochs").get<int>();
    net.meta.train_accuracy = j.at("meta").at("train_accuracy").get<float>();
    net.meta.val_accuracy = j.at("meta").at("val_accuracy").get<float>();

    for (auto& [name, t] : read_aedm(aedm_path)) net.params.push_back(std::move(t));
    return net;
}

}  // namespace aedet
