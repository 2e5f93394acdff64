#pragma once

#include "umg/errors.hpp"
#include "umg/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace umg {

// Binary container: magic "UMGM", version 1, all integers little-endian.
// Layout: header (magic, version u32, digest u64, step i64, count u64),
// directory (per tensor: name, dtype u8, shape, payload byte offset u64),
// then the raw payload blob.
struct TensorEntry {
    std::string name;
    uint8_t dtype = 0; // 0 = f32, 1 = f64
    Shape shape;
    std::vector<unsigned char> bytes;
};

struct Checkpoint {
    uint64_t digest = 0;
    int64_t step = 0;
    std::vector<TensorEntry> tensors;

    void add_f32(const std::string& name, const Shape& shape, const std::vector<float>& data);
    void add_f64(const std::string& name, const Shape& shape, const std::vector<double>& data);
    const TensorEntry* find(const std::string& name) const;
    std::vector<float> get_f32(const std::string& name, const Shape& expect) const;
    std::vector<double> get_f64(const std::string& name, const Shape& expect) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over a string; used to fingerprint the run configuration.
uint64_t fnv1a(const std::string& s);

} // namespace umg
