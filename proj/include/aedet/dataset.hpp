#pragma once

#include <string>
#include <vector>

#include "aedet/tensor.hpp"

namespace aedet {

// Labeled grayscale-or-multichannel image set; images [N,C,H,W] in [0,1].
struct LabeledImages {
    Tensor images;
    std::vector<int> labels;

    size_t size() const { return labels.size(); }
    int channels() const { return images.dim(1); }
    int height() const { return images.dim(2); }
    int width() const { return images.dim(3); }

    // One sample as a [1,C,H,W] tensor.
    Tensor sample(size_t i) const;
    // Rows `idx` as a batch tensor plus labels.
    LabeledImages subset(const std::vector<size_t>& idx) const;
};

// IDX ingestion (big-endian magic 0x00000803 / 0x00000801, ubyte payload).
// Pixels are scaled to [0,1]; images come back as [N,1,H,W].
LabeledImages load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const std::string& images_path, const std::string& labels_path,
               const LabeledImages& data);

// Gaussian intensity blob per class at a class-specific position, with
// per-sample jitter so the classes have spread but stay separable.
LabeledImages synth_dataset(int num_classes, int per_class, int image_size, float blob_sigma,
                            uint64_t seed);

}  // namespace aedet
