#include "umg/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace umg {

namespace {

void put_bytes(std::string& out, const void* p, size_t n) {
    out.append(static_cast<const char*>(p), n);
}

void put_u32(std::string& out, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(out, b, 4);
}

void put_u64(std::string& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(out, b, 8);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    void need(size_t n, const std::string& what) const {
        if (pos + n > buf.size())
            throw FormatError("checkpoint truncated at byte " + std::to_string(pos) +
                              " while reading " + what);
    }
    uint32_t u32(const std::string& what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64(const std::string& what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::string str(size_t n, const std::string& what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

size_t dtype_size(uint8_t dtype) {
    if (dtype == 0) return sizeof(float);
    if (dtype == 1) return sizeof(double);
    throw FormatError("checkpoint: unknown dtype tag " + std::to_string(dtype));
}

} // namespace

void Checkpoint::add_f32(const std::string& name, const Shape& shape,
                         const std::vector<float>& data) {
    if (static_cast<int64_t>(data.size()) != numel(shape))
        throw ContractError("checkpoint add: data does not match shape for " + name);
    TensorEntry e;
    e.name = name;
    e.dtype = 0;
    e.shape = shape;
    e.bytes.resize(data.size() * sizeof(float));
    std::memcpy(e.bytes.data(), data.data(), e.bytes.size());
    tensors.push_back(std::move(e));
}

void Checkpoint::add_f64(const std::string& name, const Shape& shape,
                         const std::vector<double>& data) {
    if (static_cast<int64_t>(data.size()) != numel(shape))
        throw ContractError("checkpoint add: data does not match shape for " + name);
    TensorEntry e;
    e.name = name;
    e.dtype = 1;
    e.shape = shape;
    e.bytes.resize(data.size() * sizeof(double));
    std::memcpy(e.bytes.data(), data.data(), e.bytes.size());
    tensors.push_back(std::move(e));
}

const TensorEntry* Checkpoint::find(const std::string& name) const {
    for (const auto& e : tensors)
        if (e.name == name) return &e;
    return nullptr;
}

std::vector<float> Checkpoint::get_f32(const std::string& name, const Shape& expect) const {
    const auto* e = find(name);
    if (!e) throw FormatError("checkpoint: missing tensor " + name);
    if (e->dtype != 0) throw FormatError("checkpoint: tensor " + name + " is not f32");
    if (e->shape != expect)
        throw FormatError("checkpoint: tensor " + name + " has shape " + shape_str(e->shape) +
                          ", expected " + shape_str(expect));
    std::vector<float> out(e->bytes.size() / sizeof(float));
    std::memcpy(out.data(), e->bytes.data(), e->bytes.size());
    return out;
}

std::vector<double> Checkpoint::get_f64(const std::string& name, const Shape& expect) const {
    const auto* e = find(name);
    if (!e) throw FormatError("checkpoint: missing tensor " + name);
    if (e->dtype != 1) throw FormatError("checkpoint: tensor " + name + " is not f64");
    if (e->shape != expect)
        throw FormatError("checkpoint: tensor " + name + " has shape " + shape_str(e->shape) +
                          ", expected " + shape_str(expect));
    std::vector<double> out(e->bytes.size() / sizeof(double));
    std::memcpy(out.data(), e->bytes.data(), e->bytes.size());
    return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::string out;
    out.append("UMGM");
    put_u32(out, 1);
    put_u64(out, ckpt.digest);
    put_u64(out, static_cast<uint64_t>(ckpt.step));
    put_u64(out, static_cast<uint64_t>(ckpt.tensors.size()));
    uint64_t offset = 0;
    for (const auto& e : ckpt.tensors) {
        put_u32(out, static_cast<uint32_t>(e.name.size()));
        out.append(e.name);
        out.push_back(static_cast<char>(e.dtype));
        put_u32(out, static_cast<uint32_t>(e.shape.size()));
        for (int64_t d : e.shape) put_u64(out, static_cast<uint64_t>(d));
        put_u64(out, offset);
        offset += e.bytes.size();
    }
    for (const auto& e : ckpt.tensors)
        put_bytes(out, e.bytes.data(), e.bytes.size());

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};
    if (r.str(4, "magic") != "UMGM") throw FormatError("checkpoint " + path + ": bad magic");
    const uint32_t version = r.u32("version");
    if (version != 1)
        throw FormatError("checkpoint " + path + ": unsupported version " +
                          std::to_string(version));
    Checkpoint ckpt;
    ckpt.digest = r.u64("digest");
    ckpt.step = static_cast<int64_t>(r.u64("step"));
    const uint64_t count = r.u64("tensor count");
    struct Dir {
        TensorEntry entry;
        uint64_t offset;
        size_t bytes;
    };
    std::vector<Dir> dir;
    for (uint64_t i = 0; i < count; ++i) {
        Dir d;
        const uint32_t nlen = r.u32("name length");
        d.entry.name = r.str(nlen, "tensor name");
        d.entry.dtype = static_cast<uint8_t>(r.str(1, "dtype")[0]);
        const uint32_t ndim = r.u32("rank");
        for (uint32_t k = 0; k < ndim; ++k)
            d.entry.shape.push_back(static_cast<int64_t>(r.u64("dimension")));
        d.offset = r.u64("payload offset");
        d.bytes = static_cast<size_t>(numel(d.entry.shape)) * dtype_size(d.entry.dtype);
        dir.push_back(std::move(d));
    }
    const size_t payload_start = r.pos;
    for (auto& d : dir) {
        if (payload_start + d.offset + d.bytes > buf.size())
            throw FormatError("checkpoint truncated at byte " +
                              std::to_string(payload_start + d.offset) + " while reading tensor " +
                              d.entry.name);
        d.entry.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(payload_start + d.offset),
                             buf.begin() +
                                 static_cast<std::ptrdiff_t>(payload_start + d.offset + d.bytes));
        ckpt.tensors.push_back(std::move(d.entry));
    }
    return ckpt;
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace umg
