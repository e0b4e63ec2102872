#include "aedet/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "aedet/common.hpp"

namespace aedet {

namespace {

constexpr uint32_t kImagesMagic = 0x00000803;
constexpr uint32_t kLabelsMagic = 0x00000801;

uint32_t get_u32_be(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw format_error(path + ": truncated header at offset " +
                           std::to_string(static_cast<long long>(in.tellg())));
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | b[3];
}

void put_u32_be(std::ofstream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::string hex(uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", v);
    return buf;
}

}  // namespace

Tensor LabeledImages::sample(size_t i) const {
    const int C = channels(), H = height(), W = width();
    const size_t n = static_cast<size_t>(C) * H * W;
    Tensor out = Tensor::zeros({1, C, H, W});
    std::memcpy(out.data.data(), images.data.data() + i * n, n * sizeof(float));
    return out;
}

LabeledImages LabeledImages::subset(const std::vector<size_t>& idx) const {
    const int C = channels(), H = height(), W = width();
    const size_t n = static_cast<size_t>(C) * H * W;
    LabeledImages out;
    out.images = Tensor::zeros({static_cast<int>(idx.size()), C, H, W});
    out.labels.reserve(idx.size());
    for (size_t j = 0; j < idx.size(); ++j) {
        std::memcpy(out.images.data.data() + j * n, images.data.data() + idx[j] * n,
                    n * sizeof(float));
        out.labels.push_back(labels[idx[j]]);
    }
    return out;
}

LabeledImages load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw format_error(images_path + ": cannot open");
    const uint32_t im = get_u32_be(imgs, images_path);
    if (im != kImagesMagic)
        throw format_error(images_path + ": bad magic, expected " + hex(kImagesMagic) + ", got " +
                           hex(im));
    const uint32_t n = get_u32_be(imgs, images_path);
    const uint32_t h = get_u32_be(imgs, images_path);
    const uint32_t w = get_u32_be(imgs, images_path);
    std::vector<unsigned char> raw(static_cast<size_t>(n) * h * w);
    if (!imgs.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw format_error(images_path + ": truncated payload at offset " +
                           std::to_string(static_cast<long long>(imgs.tellg())));

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw format_error(labels_path + ": cannot open");
    const uint32_t lm = get_u32_be(labs, labels_path);
    if (lm != kLabelsMagic)
        throw format_error(labels_path + ": bad magic, expected " + hex(kLabelsMagic) + ", got " +
                           hex(lm));
    const uint32_t ln = get_u32_be(labs, labels_path);
    if (ln != n)
        throw format_error(labels_path + ": label count " + std::to_string(ln) +
                           " != image count " + std::to_string(n));
    std::vector<unsigned char> lraw(ln);
    if (!labs.read(reinterpret_cast<char*>(lraw.data()), ln))
        throw format_error(labels_path + ": truncated payload");

    LabeledImages out;
    out.images = Tensor::zeros({static_cast<int>(n), 1, static_cast<int>(h), static_cast<int>(w)});
    for (size_t i = 0; i < raw.size(); ++i) out.images.data[i] = raw[i] / 255.0f;
    out.labels.assign(lraw.begin(), lraw.end());
    return out;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const LabeledImages& data) {
    if (data.channels() != 1) throw format_error("write_idx: IDX stores single-channel images");
    std::ofstream imgs(images_path, std::ios::binary);
    if (!imgs) throw format_error(images_path + ": cannot open for writing");
    put_u32_be(imgs, kImagesMagic);
    put_u32_be(imgs, static_cast<uint32_t>(data.size()));
    put_u32_be(imgs, static_cast<uint32_t>(data.height()));
    put_u32_be(imgs, static_cast<uint32_t>(data.width()));
    for (float v : data.images.data) {
        const float c = std::min(1.0f, std::max(0.0f, v));
        const unsigned char b = static_cast<unsigned char>(std::lround(c * 255.0f));
        imgs.write(reinterpret_cast<const char*>(&b), 1);
    }
    std::ofstream labs(labels_path, std::ios::binary);
    if (!labs) throw format_error(labels_path + ": cannot open for writing");
    put_u32_be(labs, kLabelsMagic);
    put_u32_be(labs, static_cast<uint32_t>(data.size()));
    for (int y : data.labels) {
        const unsigned char b = static_cast<unsigned char>(y);
        labs.write(reinterpret_cast<const char*>(&b), 1);
    }
}

LabeledImages synth_dataset(int num_classes, int per_class, int image_size, float blob_sigma,
                            uint64_t seed) {
    if (num_classes < 1 || per_class < 1 || image_size < 8)
        throw parameter_error("synth_dataset: need K >= 1, n >= 1, image size >= 8");
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> jitter(0.0f, 0.8f);
    std::uniform_real_distribution<float> amp(0.7f, 1.0f);
    std::normal_distribution<float> pixel_noise(0.0f, 0.02f);

    const int n = num_classes * per_class;
    LabeledImages out;
    out.images = Tensor::zeros({n, 1, image_size, image_size});
    out.labels.resize(n);
    const float cx0 = image_size / 2.0f, r = image_size / 4.0f;
    size_t off = 0;
    for (int c = 0; c < num_classes; ++c) {
        const float ang = 2.0f * float(M_PI) * c / std::max(num_classes, 2);
        const float bx = cx0 + r * std::cos(ang), by = cx0 + r * std::sin(ang);
        for (int s = 0; s < per_class; ++s) {
            const float cx = bx + jitter(rng), cy = by + jitter(rng);
            const float a = amp(rng);
            for (int i = 0; i < image_size; ++i)
                for (int j = 0; j < image_size; ++j) {
                    const float d2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
                    float v = a * std::exp(-d2 / (2.0f * blob_sigma * blob_sigma)) +
                              pixel_noise(rng);
                    out.images.data[off++] = std::min(1.0f, std::max(0.0f, v));
                }
            out.labels[c * per_class + s] = c;
        }
    }
    return out;
}

}  // namespace aedet
