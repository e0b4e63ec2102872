#include "aedet/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "aedet/common.hpp"

namespace aedet {

static_assert(std::endian::native == std::endian::little,
              "AEDM I/O assumes a little-endian host");

namespace {

void put_u32(std::ofstream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t get_u32(std::ifstream& in, const std::string& path, const char* what) {
    uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4))
        throw format_error(path + ": truncated while reading " + what + " at offset " +
                           std::to_string(static_cast<long long>(in.tellg())));
    return v;
}

}  // namespace

void write_aedm(const std::string& path, const NamedTensors& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw format_error(path + ": cannot open for writing");
    out.write("AEDM", 4);
    put_u32(out, kAedmVersion);
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<uint32_t>(t.rank()));
        for (int e : t.shape) put_u32(out, static_cast<uint32_t>(e));
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!out) throw format_error(path + ": write failed");
}

NamedTensors read_aedm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error(path + ": cannot open");
    char magic[4];
    if (!in.read(magic, 4)) throw format_error(path + ": truncated magic");
    if (std::memcmp(magic, "AEDM", 4) != 0)
        throw format_error(path + ": bad magic, expected AEDM, got '" +
                           std::string(magic, 4) + "'");
    const uint32_t version = get_u32(in, path, "version");
    if (version != kAedmVersion)
        throw format_error(path + ": unsupported format version " + std::to_string(version));
    const uint32_t count = get_u32(in, path, "tensor count");
    NamedTensors out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = get_u32(in, path, "name length");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw format_error(path + ": truncated name");
        const uint32_t rank = get_u32(in, path, "rank");
        std::vector<int> shape(rank);
        size_t numel = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            shape[r] = static_cast<int>(get_u32(in, path, "extent"));
            if (shape[r] <= 0) throw format_error(path + ": nonpositive extent");
            numel *= static_cast<size_t>(shape[r]);
        }
        std::vector<float> data(numel);
        if (!in.read(reinterpret_cast<char*>(data.data()),
                     static_cast<std::streamsize>(numel * sizeof(float))))
            throw format_error(path + ": truncated payload for tensor '" + name + "' at offset " +
                               std::to_string(static_cast<long long>(in.tellg())));
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return out;
}

}  // namespace aedet
