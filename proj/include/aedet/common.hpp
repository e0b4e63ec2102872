#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace aedet {

// Error taxonomy. Everything derives from std::runtime_error so callers
// that do not care can catch one type.
struct dimension_error : std::runtime_error {
    explicit dimension_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct parameter_error : std::runtime_error {
    explicit parameter_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct index_error : std::runtime_error {
    explicit index_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct training_error : std::runtime_error {
    explicit training_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct attack_error : std::runtime_error {
    explicit attack_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct format_error : std::runtime_error {
    explicit format_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct protocol_error : std::runtime_error {
    explicit protocol_error(const std::string& msg) : std::runtime_error(msg) {}
};

// splitmix64, used to fan a master seed out into per-stage / per-tree seeds.
// Adding a consumer never shifts the stream another consumer sees.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// FNV-1a over a byte string; used for config fingerprints and seed derivation
// from stage names.
inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t derive_seed(uint64_t master, const std::string& consumer) {
    return splitmix64(master ^ fnv1a64(consumer));
}

}  // namespace aedet
