#pragma once

#include <cstring>
#include <fstream>

#include "obj2seq/config.hpp"
#include "obj2seq/model.hpp"
#include "obj2seq/optimizer.hpp"

namespace obj2seq {

namespace detail {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len,
                           std::uint32_t crc = 0xffffffffu) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
    return crc;
}

struct ByteWriter {
    std::vector<std::uint8_t> bytes;

    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void i32(std::int32_t v) { raw(&v, 4); }
    void i64(std::int64_t v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void floats(const std::vector<float>& v) { raw(v.data(), v.size() * 4); }
};

struct ByteReader {
    const std::uint8_t* p;
    std::size_t left;

    void raw(void* out, std::size_t n) {
        if (n > left) throw DataError("checkpoint: truncated file");
        std::memcpy(out, p, n);
        p += n;
        left -= n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, 8);
        return v;
    }
    std::int32_t i32() {
        std::int32_t v;
        raw(&v, 4);
        return v;
    }
    std::int64_t i64() {
        std::int64_t v;
        raw(&v, 8);
        return v;
    }
    std::string str() {
        std::uint32_t n = u32();
        if (n > left) throw DataError("checkpoint: truncated string");
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        left -= n;
        return s;
    }
    std::vector<float> floats(std::size_t n) {
        std::vector<float> v(n);
        raw(v.data(), n * 4);
        return v;
    }
};

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'O', '2', 'S', 'Q', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    TrainConfig config;
    int epoch = 0;  // epochs completed
    std::vector<std::pair<std::string, Tensor>> params;
    long adam_step = 0;
    std::vector<std::vector<float>> adam_m, adam_v;

    static Checkpoint capture(const Model& model, const AdamW<float>* opt, int epoch) {
        Checkpoint ck;
        ck.config = model.config();
        ck.epoch = epoch;
        for (const auto& [name, t] : model.params().items()) ck.params.emplace_back(name, t);
        if (opt) {
            auto* mut = const_cast<AdamW<float>*>(opt);
            ck.adam_step = opt->step_count();
            ck.adam_m = mut->moments_m();
            ck.adam_v = mut->moments_v();
        }
        return ck;
    }
};

// Self-describing little-endian container: magic, version, config snapshot,
// named parameter tensors, optimizer moments, trailing CRC32.
inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    detail::ByteWriter w;
    w.raw(kCheckpointMagic, 8);
    w.u32(kCheckpointVersion);
    w.str(serialize_config(ck.config));
    w.i32(ck.epoch);
    w.i64(ck.adam_step);
    w.u32(static_cast<std::uint32_t>(ck.params.size()));
    for (const auto& [name, t] : ck.params) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t.shape().size()));
        for (int d : t.shape()) w.i32(d);
        w.floats(t.values());
    }
    bool have_moments = !ck.adam_m.empty();
    w.u32(have_moments ? 1 : 0);
    if (have_moments) {
        for (size_t i = 0; i < ck.params.size(); ++i) {
            w.floats(ck.adam_m[i]);
            w.floats(ck.adam_v[i]);
        }
    }
    std::uint32_t crc = detail::crc32(w.bytes.data() + 8, w.bytes.size() - 8);
    w.u32(crc);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(w.bytes.data()),
            static_cast<std::streamsize>(w.bytes.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
        throw DataError("checkpoint: '" + path + "' is not a checkpoint file");

    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    std::uint32_t crc = detail::crc32(bytes.data() + 8, bytes.size() - 12);
    if (crc != stored_crc)
        throw DataError("checkpoint: integrity check failed for '" + path + "'");

    detail::ByteReader r{bytes.data() + 8, bytes.size() - 12};
    std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw DataError("checkpoint: file version " + std::to_string(version) +
                        " unsupported, this build reads version " +
                        std::to_string(kCheckpointVersion));
    Checkpoint ck;
    {
        std::istringstream cfg_in(r.str());
        ck.config = parse_config(cfg_in);
    }
    ck.epoch = r.i32();
    ck.adam_step = r.i64();
    std::uint32_t n = r.u32();
    std::vector<std::size_t> sizes;
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = r.str();
        std::uint32_t ndim = r.u32();
        std::vector<int> shape;
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            shape.push_back(r.i32());
            numel *= static_cast<std::size_t>(shape.back());
        }
        sizes.push_back(numel);
        ck.params.emplace_back(name, Tensor::from_data(shape, r.floats(numel)));
    }
    if (r.u32() == 1) {
        for (std::uint32_t i = 0; i < n; ++i) {
            ck.adam_m.push_back(r.floats(sizes[i]));
            ck.adam_v.push_back(r.floats(sizes[i]));
        }
    }
    return ck;
}

// Copy checkpoint weights into a model, verifying the parameter inventory.
inline void apply_checkpoint(const Checkpoint& ck, Model& model) {
    std::vector<std::string> problems;
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : ck.params) by_name[name] = &t;
    for (const auto& [name, t] : model.params().items()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            problems.push_back("missing: " + name);
            continue;
        }
        if (it->second->shape() != t.shape()) {
            problems.push_back("shape mismatch: " + name + " checkpoint " +
                               shape_str(it->second->shape()) + " vs model " +
                               shape_str(t.shape()));
        }
        by_name.erase(it);
    }
    for (const auto& [name, t] : by_name) problems.push_back("unexpected: " + name);
    if (!problems.empty()) {
        std::string msg = "checkpoint incompatible with model:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw DataError(msg);
    }
    for (const auto& [name, t] : ck.params) {
        auto dst = model.params().find(name);
        dst.mutable_values() = t.values();
    }
}

inline Model model_from_checkpoint(const Checkpoint& ck) {
    Model model(ck.config);
    apply_checkpoint(ck, model);
    return model;
}

}  // namespace obj2seq
