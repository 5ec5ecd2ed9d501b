#include "hear/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace hear {

namespace {

constexpr char kMagic[8] = {'H', 'E', 'A', 'R', 'C', 'K', 'P', '1'};

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T)); // little-endian hosts
}

template <class T>
T take(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::istream& in) {
    const uint32_t n = take<uint32_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
}

} // namespace

void Checkpoint::add(const std::string& name, const Tensorf& t) {
    for (const auto& [n, _] : blobs)
        if (n == name) throw NumericError("checkpoint: duplicate blob " + name);
    blobs.emplace_back(name, t);
}

const Tensorf* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : blobs)
        if (n == name) return &t;
    return nullptr;
}

const Tensorf& Checkpoint::require(const std::string& name) const {
    const Tensorf* t = find(name);
    if (!t) throw DataError("checkpoint: missing blob " + name);
    return *t;
}

void Checkpoint::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot write " + path);
    out.write(kMagic, 8);
    put<uint32_t>(out, kVersion);
    put<uint64_t>(out, config_hash);
    put<uint64_t>(out, struct_hash);
    put<uint64_t>(out, seed);
    put<uint64_t>(out, step);
    put<uint8_t>(out, stage);
    put<uint8_t>(out, mode);
    put<uint16_t>(out, 0);
    put<uint32_t>(out, static_cast<uint32_t>(blobs.size()));
    for (const auto& [name, t] : blobs) {
        put_string(out, name);
        put<uint8_t>(out, 0); // dtype f32
        put<uint8_t>(out, static_cast<uint8_t>(t.shape.size()));
        for (int d : t.shape) put<uint32_t>(out, static_cast<uint32_t>(d));
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!out) throw DataError("checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    Checkpoint c;
    const uint32_t version = take<uint32_t>(in);
    if (version != kVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    c.config_hash = take<uint64_t>(in);
    c.struct_hash = take<uint64_t>(in);
    c.seed = take<uint64_t>(in);
    c.step = take<uint64_t>(in);
    c.stage = take<uint8_t>(in);
    c.mode = take<uint8_t>(in);
    take<uint16_t>(in);
    const uint32_t count = take<uint32_t>(in);
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = take_string(in);
        const uint8_t dtype = take<uint8_t>(in);
        if (dtype != 0) throw DataError("checkpoint: unsupported dtype in blob " + name);
        const uint8_t rank = take<uint8_t>(in);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(take<uint32_t>(in));
        Tensorf t(shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        c.blobs.emplace_back(name, std::move(t));
    }
    if (!in) throw DataError("checkpoint: truncated file " + path);
    return c;
}

void checkpoint_store_optimizer(Checkpoint& ckpt, const AdamW<float>& opt) {
    Tensorf step({1});
    step[0] = static_cast<float>(opt.step_count()); // exact below 2^24 steps
    ckpt.add("adam/step", step);
    for (const auto& [name, slot] : opt.slots()) {
        ckpt.add("adam/m/" + name, slot.m);
        ckpt.add("adam/v/" + name, slot.v);
    }
}

void checkpoint_restore_optimizer(const Checkpoint& ckpt, AdamW<float>& opt) {
    opt.set_step_count(static_cast<int64_t>(ckpt.require("adam/step")[0]));
    opt.slots().clear();
    for (const auto& [name, t] : ckpt.blobs) {
        if (name.rfind("adam/m/", 0) == 0)
            opt.slots()[name.substr(7)].m = t;
        else if (name.rfind("adam/v/", 0) == 0)
            opt.slots()[name.substr(7)].v = t;
    }
}

} // namespace hear
