#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rkdea/errors.hpp"
#include "rkdea/matrix.hpp"

namespace rkdea {

// On-disk container: magic "RKDA", u32 format version, u64 JSON header
// length (both little-endian), UTF-8 JSON header, then raw little-endian
// tensor payloads concatenated in header order. The header carries the
// tensor directory plus a config echo and the final loss report.
constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorBlock {
    std::string name;
    std::vector<std::size_t> shape;  // row, col
    std::string dtype;               // "f32" or "f64"
    std::vector<unsigned char> raw;

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::size_t s : shape) n *= s;
        return n;
    }

    std::size_t elem_size() const { return dtype == "f32" ? 4 : 8; }

    template <typename T>
    static TensorBlock from_matrix(const std::string& name, const DenseMatrix<T>& m) {
        static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
        TensorBlock b;
        b.name = name;
        b.shape = {m.rows(), m.cols()};
        b.dtype = std::is_same_v<T, float> ? "f32" : "f64";
        b.raw.resize(m.size() * sizeof(T));
        std::memcpy(b.raw.data(), m.data().data(), b.raw.size());
        return b;
    }

    template <typename T>
    DenseMatrix<T> to_matrix() const {
        static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
        const char* want = std::is_same_v<T, float> ? "f32" : "f64";
        if (dtype != want)
            throw CheckpointError(CheckpointError::Kind::Shape,
                                  "tensor '" + name + "' is " + dtype + ", requested " + want);
        if (shape.size() != 2)
            throw CheckpointError(CheckpointError::Kind::Shape,
                                  "tensor '" + name + "' is not two-dimensional");
        DenseMatrix<T> m(shape[0], shape[1]);
        std::memcpy(m.data().data(), raw.data(), raw.size());
        return m;
    }
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::vector<TensorBlock> tensors;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json loss = nlohmann::json::object();

    const TensorBlock* find(const std::string& name) const {
        for (const TensorBlock& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }

    const TensorBlock& require(const std::string& name) const {
        const TensorBlock* t = find(name);
        if (!t)
            throw CheckpointError(CheckpointError::Kind::Header,
                                  "missing tensor '" + name + "'");
        return *t;
    }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_uint(const unsigned char* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
    nlohmann::json header;
    nlohmann::json dir = nlohmann::json::array();
    for (const TensorBlock& t : ckpt.tensors) {
        if (t.raw.size() != t.numel() * t.elem_size())
            throw CheckpointError(CheckpointError::Kind::Shape,
                                  "tensor '" + t.name + "' payload disagrees with its shape");
        dir.push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", t.dtype}});
    }
    header["tensors"] = dir;
    header["config"] = ckpt.config;
    header["loss"] = ckpt.loss;
    const std::string hjson = header.dump();

    std::string out;
    out.append("RKDA");
    detail::put_u32(out, ckpt.version);
    detail::put_u64(out, hjson.size());
    out.append(hjson);
    for (const TensorBlock& t : ckpt.tensors)
        out.append(reinterpret_cast<const char*>(t.raw.data()), t.raw.size());
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
    using Kind = CheckpointError::Kind;
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 4 || bytes.compare(0, 4, "RKDA") != 0)
        throw CheckpointError(Kind::Magic, "bad magic, not a checkpoint file");
    if (bytes.size() < 16) throw CheckpointError(Kind::Truncated, "file ends inside the fixed header");
    const auto version = static_cast<std::uint32_t>(detail::get_uint(p + 4, 4));
    if (version != kCheckpointVersion)
        throw CheckpointError(Kind::Version, "unsupported format version " + std::to_string(version));
    const std::uint64_t hlen = detail::get_uint(p + 8, 8);
    if (16 + hlen > bytes.size())
        throw CheckpointError(Kind::Truncated, "file ends inside the JSON header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(16, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(Kind::Header, std::string("malformed JSON header: ") + e.what());
    }
    if (!header.is_object() || !header.contains("tensors") || !header["tensors"].is_array())
        throw CheckpointError(Kind::Header, "header lacks a tensor directory");

    Checkpoint ckpt;
    ckpt.version = version;
    ckpt.config = header.value("config", nlohmann::json::object());
    ckpt.loss = header.value("loss", nlohmann::json::object());

    std::size_t payload = 0;
    for (const auto& e : header["tensors"]) {
        TensorBlock t;
        try {
            t.name = e.at("name").get<std::string>();
            t.shape = e.at("shape").get<std::vector<std::size_t>>();
            t.dtype = e.at("dtype").get<std::string>();
        } catch (const nlohmann::json::exception& ex) {
            throw CheckpointError(Kind::Header, std::string("malformed tensor entry: ") + ex.what());
        }
        if (t.dtype != "f32" && t.dtype != "f64")
            throw CheckpointError(Kind::Header, "unknown dtype '" + t.dtype + "'");
        payload += t.numel() * t.elem_size();
        ckpt.tensors.push_back(std::move(t));
    }

    // Shape consistency against the config echo, checked before the payload
    // so a wrong shape is reported as such rather than as a length mismatch.
    if (ckpt.config.is_object() && ckpt.config.contains("dim")) {
        const auto dim = ckpt.config["dim"].get<std::size_t>();
        for (const TensorBlock& t : ckpt.tensors) {
            if (t.shape.size() != 2)
                throw CheckpointError(Kind::Shape, "tensor '" + t.name + "' is not two-dimensional");
            const bool ok = t.name.ends_with("b_T") ? (t.shape[0] == 1 && t.shape[1] == dim)
                                                    : t.shape[1] == dim;
            if (!ok)
                throw CheckpointError(Kind::Shape, "tensor '" + t.name +
                                                       "' shape disagrees with config dim " +
                                                       std::to_string(dim));
        }
        if (ckpt.config.contains("n_nodes")) {
            const auto n = ckpt.config["n_nodes"].get<std::size_t>();
            const TensorBlock* x = ckpt.find("X");
            if (x && x->shape[0] != n)
                throw CheckpointError(Kind::Shape,
                                      "tensor 'X' row count disagrees with config n_nodes");
        }
    }

    if (16 + hlen + payload != bytes.size())
        throw CheckpointError(Kind::Truncated,
                              "payload holds " + std::to_string(bytes.size() - 16 - hlen) +
                                  " bytes, header declares " + std::to_string(payload));
    std::size_t off = 16 + hlen;
    for (TensorBlock& t : ckpt.tensors) {
        const std::size_t n = t.numel() * t.elem_size();
        t.raw.assign(p + off, p + off + n);
        off += n;
    }
    return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot open '" + path + "' for writing");
    const std::string bytes = encode_checkpoint(ckpt);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw InputError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open '" + path + "' for reading");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace rkdea
