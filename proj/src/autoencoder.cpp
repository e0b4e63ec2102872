#include "aedet/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "aedet/serialize.hpp"
#include "nlohmann/json.hpp"

namespace aedet {

namespace {

constexpr int kConvFilters = 32;
constexpr int kDenseHidden = 32;

// floor conv output extent for kernel 3, stride 2, padding 1
int half_extent(int h) { return (h - 1) / 2 + 1; }

// output_padding needed so conv_transpose (k=3, s=2, p=1) maps h_in back to
// the target extent; always 0 or 1 for extents produced by half_extent.
int out_pad(int h_in, int target) {
    const int op = target - (2 * h_in - 1);
    if (op < 0 || op > 1)
        throw config_error("autoencoder: cannot mirror extent " + std::to_string(target) +
                           " from " + std::to_string(h_in));
    return op;
}

Tensor he_init(const std::vector<int>& shape, int fan_in, std::mt19937_64& rng) {
    return Tensor::randn(shape, 0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)), rng);
}

const char* kernel_name(KernelKind k) { return k == KernelKind::Imq ? "imq" : "rbf"; }

KernelKind kernel_from(const std::string& s) {
    if (s == "imq") return KernelKind::Imq;
    if (s == "rbf") return KernelKind::Rbf;
    throw format_error("autoencoder: unknown kernel '" + s + "'");
}

}  // namespace

AutoencoderConfig default_ae_config(const std::string& tap, const std::vector<int>& tap_shape) {
    AutoencoderConfig cfg;
    cfg.tap = tap;
    cfg.latent_dim = tap_shape.size() == 3 ? 16 : 8;
    return cfg;
}

LayerAutoencoder init_autoencoder(const AutoencoderConfig& config,
                                  const std::vector<int>& tap_shape) {
    if (config.latent_dim < 1) throw config_error("autoencoder: latent_dim must be >= 1");
    if (config.mmd_weight < 0.0f) throw config_error("autoencoder: mmd_weight must be >= 0");
    LayerAutoencoder ae;
    ae.config = config;
    ae.input_shape = tap_shape;
    std::mt19937_64 rng(derive_seed(config.seed, "ae-init/" + config.tap));
    const int Z = config.latent_dim;
    if (tap_shape.size() == 3) {
        ae.conv_arch = true;
        const int C = tap_shape[0], H = tap_shape[1], W = tap_shape[2];
        const int h2 = half_extent(half_extent(H)), w2 = half_extent(half_extent(W));
        const int flat = kConvFilters * h2 * w2;
        ae.params = {
            he_init({kConvFilters, C, 3, 3}, C * 9, rng),
            Tensor::zeros({kConvFilters}),
            he_init({kConvFilters, kConvFilters, 3, 3}, kConvFilters * 9, rng),
            Tensor::zeros({kConvFilters}),
            he_init({flat, Z}, flat, rng),
            Tensor::zeros({Z}),
            // decoder
            he_init({Z, flat}, Z, rng),
            Tensor::zeros({flat}),
            he_init({kConvFilters, kConvFilters, 3, 3}, kConvFilters * 9, rng),
            Tensor::zeros({kConvFilters}),
            he_init({kConvFilters, C, 3, 3}, kConvFilters * 9, rng),
            Tensor::zeros({C}),
        };
    } else if (tap_shape.size() == 1) {
        ae.conv_arch = false;
        const int D = tap_shape[0];
        ae.params = {
            he_init({D, kDenseHidden}, D, rng),
            Tensor::zeros({kDenseHidden}),
            he_init({kDenseHidden, Z}, kDenseHidden, rng),
            Tensor::zeros({Z}),
            // decoder
            he_init({Z, kDenseHidden}, Z, rng),
            Tensor::zeros({kDenseHidden}),
            he_init({kDenseHidden, D}, kDenseHidden, rng),
            Tensor::zeros({D}),
        };
    } else {
        throw config_error("autoencoder: tap rank " + std::to_string(tap_shape.size()) +
                           " unsupported (want 1 or 3)");
    }
    return ae;
}

namespace {

void check_batch_shape(const LayerAutoencoder& ae, const Tensor& acts) {
    const auto& want = ae.input_shape;
    if (static_cast<size_t>(acts.rank()) != want.size() + 1)
        throw dimension_error("autoencoder: activation rank mismatch");
    for (size_t i = 0; i < want.size(); ++i)
        if (acts.dim(static_cast<int>(i) + 1) != want[i])
            throw dimension_error("autoencoder: activation shape mismatch at axis " +
                                  std::to_string(i + 1));
}

}  // namespace

Tensor encode(const LayerAutoencoder& ae, const Tensor& acts, Tape* tape) {
    check_batch_shape(ae, acts);
    const auto& p = ae.params;
    const int N = acts.dim(0);
    if (ae.conv_arch) {
        Tensor h = relu(tape, conv2d(tape, acts, p[0], p[1], 2, 1));
        h = relu(tape, conv2d(tape, h, p[2], p[3], 2, 1));
        h = reshape(tape, h, {N, h.dim(1) * h.dim(2) * h.dim(3)});
        return dense(tape, h, p[4], p[5]);
    }
    Tensor h = relu(tape, dense(tape, acts, p[0], p[1]));
    return dense(tape, h, p[2], p[3]);
}

Tensor decode(const LayerAutoencoder& ae, const Tensor& latents, Tape* tape) {
    if (latents.rank() != 2 || latents.dim(1) != ae.config.latent_dim)
        throw dimension_error("autoencoder: latent shape mismatch");
    const auto& p = ae.params;
    const int N = latents.dim(0);
    if (ae.conv_arch) {
        const int H = ae.input_shape[1], W = ae.input_shape[2];
        const int h1 = half_extent(H), w1 = half_extent(W);
        const int h2 = half_extent(h1), w2 = half_extent(w1);
        if (out_pad(h1, H) != out_pad(w1, W) || out_pad(h2, h1) != out_pad(w2, w1))
            throw config_error("autoencoder: asymmetric output padding unsupported");
        Tensor h = relu(tape, dense(tape, latents, p[6], p[7]));
        h = reshape(tape, h, {N, kConvFilters, h2, w2});
        h = relu(tape, conv_transpose2d(tape, h, p[8], p[9], 2, 1, out_pad(h2, h1)));
        return conv_transpose2d(tape, h, p[10], p[11], 2, 1, out_pad(h1, H));
    }
    Tensor h = relu(tape, dense(tape, latents, p[4], p[5]));
    return dense(tape, h, p[6], p[7]);
}

Tensor reconstruct(const LayerAutoencoder& ae, const Tensor& acts, Tape* tape) {
    return decode(ae, encode(ae, acts, tape), tape);
}

float mmd2(const Tensor& x, const Tensor& y, KernelKind kind, float scale) {
    auto avg = [&](const Tensor& a, const Tensor& b) {
        Tensor g = kernel_gram<float>(nullptr, a, b, kind, scale);
        return static_cast<float>(std::accumulate(g.data.begin(), g.data.end(), 0.0) /
                                  static_cast<double>(g.numel()));
    };
    return avg(x, x) + avg(y, y) - 2.0f * avg(x, y);
}

LayerAutoencoder train_wae(const Tensor& activations, const AutoencoderConfig& config) {
    if (config.epochs < 1) throw parameter_error("train_wae: epochs must be >= 1");
    if (config.batch_size < 1) throw parameter_error("train_wae: batch size must be >= 1");
    if (activations.dim(0) < 1) throw parameter_error("train_wae: empty activation set");
    std::vector<int> tap_shape(activations.shape.begin() + 1, activations.shape.end());
    LayerAutoencoder ae = init_autoencoder(config, tap_shape);

    const int N = activations.dim(0);
    const size_t per = activations.numel() / N;
    std::vector<size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, "ae-shuffle/" + config.tap));
    std::mt19937_64 prior_rng(derive_seed(config.seed, "ae-prior/" + config.tap));
    Optimizer<float> opt(OptimizerKind::Adam, config.lr);
    const float kscale = config.effective_scale();

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        int batches = 0;
        for (int start = 0; start < N; start += config.batch_size) {
            const int end = std::min(N, start + config.batch_size);
            const int B = end - start;
            std::vector<int> bshape = activations.shape;
            bshape[0] = B;
            Tensor batch(bshape, std::vector<float>(static_cast<size_t>(B) * per));
            for (int i = 0; i < B; ++i)
                std::copy_n(&activations.data[order[start + i] * per], per,
                            &batch.data[static_cast<size_t>(i) * per]);

            Tape tape;
            for (auto& t : ae.params) tape.watch(t);
            Tensor z = encode(ae, batch, &tape);
            Tensor xr = decode(ae, z, &tape);
            Tensor loss = scale(&tape, sum_squares(&tape, sub(&tape, xr, batch)),
                                1.0f / static_cast<float>(B));
            if (config.mmd_weight > 0.0f) {
                Tensor prior =
                    Tensor::randn({B, config.latent_dim}, 0.0f, 1.0f, prior_rng);
                Tensor gzz = kernel_gram(&tape, z, z, config.kernel, kscale);
                Tensor gzp = kernel_gram(&tape, z, prior, config.kernel, kscale);
                Tensor gpp = kernel_gram<float>(nullptr, prior, prior, config.kernel, kscale);
                Tensor m = add(&tape, sub(&tape, mean(&tape, gzz),
                                          scale(&tape, mean(&tape, gzp), 2.0f)),
                               mean(&tape, gpp));
                loss = add(&tape, loss, scale(&tape, m, config.mmd_weight));
            }
            if (!std::isfinite(loss.scalar()))
                throw training_error("train_wae: loss diverged at epoch " +
                                     std::to_string(epoch));
            epoch_loss += loss.scalar();
            ++batches;
            tape.backward(loss);

            std::vector<Tensor*> ps;
            std::vector<const std::vector<float>*> gs;
            for (auto& t : ae.params) {
                ps.push_back(&t);
                gs.push_back(tape.has_grad(t) ? &tape.grad(t) : nullptr);
            }
            std::vector<std::vector<float>> zeros_store;
            zeros_store.reserve(gs.size());
            for (size_t i = 0; i < gs.size(); ++i)
                if (!gs[i]) {
                    zeros_store.emplace_back(ps[i]->numel(), 0.0f);
                    gs[i] = &zeros_store.back();
                }
            opt.step(ps, gs);
            for (auto& t : ae.params) {
                t.node = -1;
                t.requires_grad = false;
            }
        }
        const float raw = static_cast<float>(epoch_loss / std::max(1, batches));
        ae.training_curve.push_back(
            ae.training_curve.empty() ? raw : std::min(ae.training_curve.back(), raw));
    }
    return ae;
}

std::vector<float> reconstruction_error(const LayerAutoencoder& ae, const Tensor& acts) {
    Tensor xr = reconstruct(ae, acts);
    const int N = acts.dim(0);
    const size_t per = acts.numel() / N;
    std::vector<float> out(N);
    for (int i = 0; i < N; ++i) {
        double s = 0.0;
        for (size_t j = 0; j < per; ++j) {
            const double d = static_cast<double>(acts.data[i * per + j]) - xr.data[i * per + j];
            s += d * d;
        }
        out[i] = static_cast<float>(s);
    }
    return out;
}

std::vector<float> latent_norm(const LayerAutoencoder& ae, const Tensor& acts) {
    Tensor z = encode(ae, acts);
    const int N = z.dim(0), Z = z.dim(1);
    std::vector<float> out(N);
    for (int i = 0; i < N; ++i) {
        double s = 0.0;
        for (int j = 0; j < Z; ++j) {
            const double v = z.data[static_cast<size_t>(i) * Z + j];
            s += v * v;
        }
        out[i] = static_cast<float>(std::sqrt(s));
    }
    return out;
}

int FeatureMatrix::column(const std::string& name) const {
    for (size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return static_cast<int>(i);
    throw format_error("feature matrix: missing column '" + name + "'");
}

FeatureMatrix extract_features(const TrainedNetwork& net, const AeBank& bank, const Tensor& inputs,
                               FeatureMode mode, const std::string& provenance) {
    for (const auto& [tap, _] : net.config.taps)
        if (!bank.count(tap)) throw config_error("extract_features: no autoencoder for tap '" +
                                                 tap + "'");
    auto [logits, taps] = forward_with_taps(net, inputs);
    (void)logits;
    const int N = inputs.dim(0);
    FeatureMatrix fm;
    fm.mode = mode;
    fm.sample_ids.resize(N);
    std::iota(fm.sample_ids.begin(), fm.sample_ids.end(), 0);
    fm.provenance.assign(N, provenance);
    fm.values.assign(N, {});

    for (const auto& [tap, _] : net.config.taps) {
        const LayerAutoencoder& ae = bank.at(tap);
        const Tensor& act = taps.at(tap);
        if (mode == FeatureMode::Compact) {
            auto re = reconstruction_error(ae, act);
            auto ln = latent_norm(ae, act);
            fm.columns.push_back(tap + "_rec_err");
            fm.columns.push_back(tap + "_lat_norm");
            for (int i = 0; i < N; ++i) {
                fm.values[i].push_back(re[i]);
                fm.values[i].push_back(ln[i]);
            }
        } else {
            Tensor z = encode(ae, act);
            const int Z = z.dim(1);
            for (int j = 0; j < Z; ++j) fm.columns.push_back(tap + "_z" + std::to_string(j));
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < Z; ++j)
                    fm.values[i].push_back(z.data[static_cast<size_t>(i) * Z + j]);
        }
    }
    return fm;
}

void append_features(FeatureMatrix& dst, const FeatureMatrix& src) {
    if (dst.columns.empty()) {
        dst = src;
        return;
    }
    if (dst.columns != src.columns || dst.mode != src.mode)
        throw contract_error("append_features: column layout mismatch");
    const int base = dst.sample_ids.empty() ? 0 : dst.sample_ids.back() + 1;
    for (size_t i = 0; i < src.size(); ++i) {
        dst.sample_ids.push_back(base + static_cast<int>(i));
        dst.provenance.push_back(src.provenance[i]);
        dst.values.push_back(src.values[i]);
    }
}

void write_feature_csv(const std::string& path, const FeatureMatrix& fm) {
    CsvTable t;
    t.header = {"sample_id", "provenance"};
    t.header.insert(t.header.end(), fm.columns.begin(), fm.columns.end());
    for (size_t i = 0; i < fm.size(); ++i) {
        std::vector<std::string> row = {std::to_string(fm.sample_ids[i]), fm.provenance[i]};
        for (float v : fm.values[i]) row.push_back(csv_float(v));
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

FeatureMatrix read_feature_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    if (t.header.size() < 3 || t.header[0] != "sample_id" || t.header[1] != "provenance")
        throw format_error(path + ": not a feature matrix csv");
    FeatureMatrix fm;
    fm.columns.assign(t.header.begin() + 2, t.header.end());
    fm.mode = FeatureMode::Full;
    for (const auto& c : fm.columns)
        if (c.size() > 8 && c.substr(c.size() - 8) == "_rec_err") fm.mode = FeatureMode::Compact;
    for (const auto& row : t.rows) {
        fm.sample_ids.push_back(std::stoi(row[0]));
        fm.provenance.push_back(row[1]);
        std::vector<float> vals;
        vals.reserve(fm.columns.size());
        for (size_t j = 2; j < row.size(); ++j) vals.push_back(std::stof(row[j]));
        fm.values.push_back(std::move(vals));
    }
    return fm;
}

void save_ae_bank(const AeBank& bank, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json index;
    index["format_version"] = 1;
    index["taps"] = nlohmann::json::array();
    for (const auto& [tap, ae] : bank) {
        index["taps"].push_back(tap);
        NamedTensors nt;
        for (size_t i = 0; i < ae.params.size(); ++i)
            nt.emplace_back("p" + std::to_string(i), ae.params[i]);
        write_aedm((fs::path(dir) / (tap + ".aedm")).string(), nt);

        nlohmann::json j;
        j["format_version"] = 1;
        j["tap"] = tap;
        j["latent_dim"] = ae.config.latent_dim;
        j["mmd_weight"] = ae.config.mmd_weight;
        j["kernel"] = kernel_name(ae.config.kernel);
        j["kernel_scale"] = ae.config.kernel_scale;
        j["epochs"] = ae.config.epochs;
        j["lr"] = ae.config.lr;
        j["batch_size"] = ae.config.batch_size;
        j["seed"] = ae.config.seed;
        j["input_shape"] = ae.input_shape;
        j["conv_arch"] = ae.conv_arch;
        j["training_curve"] = ae.training_curve;
        std::ofstream out(fs::path(dir) / (tap + ".json"));
        out << j.dump(2) << "\n";
    }
    std::ofstream out(fs::path(dir) / "bank.json");
    out << index.dump(2) << "\n";
}

AeBank load_ae_bank(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream idx(fs::path(dir) / "bank.json");
    if (!idx) throw format_error(dir + ": missing bank.json");
    nlohmann::json index = nlohmann::json::parse(idx);
    if (index.at("format_version").get<int>() != 1)
        throw format_error(dir + ": unsupported bank format version");
    AeBank bank;
    for (const auto& tap_j : index.at("taps")) {
        const std::string tap = tap_j.get<std::string>();
        std::ifstream in(fs::path(dir) / (tap + ".json"));
        if (!in) throw format_error(dir + ": missing sidecar for tap " + tap);
        nlohmann::json j = nlohmann::json::parse(in);
        if (j.at("format_version").get<int>() != 1)
            throw format_error(dir + ": unsupported autoencoder format version");
        LayerAutoencoder ae;
        ae.config.tap = tap;
        ae.config.latent_dim = j.at("latent_dim").get<int>();
        ae.config.mmd_weight = j.at("mmd_weight").get<float>();
        ae.config.kernel = kernel_from(j.at("kernel").get<std::string>());
        ae.config.kernel_scale = j.at("kernel_scale").get<float>();
        ae.config.epochs = j.at("epochs").get<int>();
        ae.config.lr = j.at("lr").get<float>();
        ae.config.batch_size = j.at("batch_size").get<int>();
        ae.config.seed = j.at("seed").get<uint64_t>();
        ae.input_shape = j.at("input_shape").get<std::vector<int>>();
        ae.conv_arch = j.at("conv_arch").get<bool>();
        ae.training_curve = j.at("training_curve").get<std::vector<float>>();
        NamedTensors nt = read_aedm((fs::path(dir) / (tap + ".aedm")).string());
        ae.params.reserve(nt.size());
        for (auto& [name, t] : nt) {
            (void)name;
            ae.params.push_back(std::move(t));
        }
        bank.emplace(tap, std::move(ae));
    }
    return bank;
}

}  // namespace aedet
