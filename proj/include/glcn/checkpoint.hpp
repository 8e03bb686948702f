#pragma once

// Checkpoint container and binary format.
//
// Layout (all integers little-endian):
//   magic "GLCN" | u32 version | u32 metadata length | metadata (UTF-8 JSON)
//   then per-tensor records until EOF:
//   u32 name length | name bytes | u32 rank | u32 dims[rank] | f32 data
//
// Tensors are written in the order they were added, and JSON metadata is
// emitted with sorted keys, so saving the same model twice is byte-identical.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "glcn/common.hpp"
#include "glcn/tensor.hpp"

namespace glcn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointWriteError : public Error {
public:
    explicit CheckpointWriteError(const std::string& m) : Error(m) {}
};
class CheckpointFormatError : public Error {
public:
    explicit CheckpointFormatError(const std::string& m) : Error(m) {}
};
class CheckpointVersionError : public Error {
public:
    explicit CheckpointVersionError(const std::string& m) : Error(m) {}
};
class CheckpointTruncatedError : public Error {
public:
    explicit CheckpointTruncatedError(const std::string& m) : Error(m) {}
};
class CheckpointShapeError : public Error {
public:
    explicit CheckpointShapeError(const std::string& m) : Error(m) {}
};

struct Checkpoint {
    nlohmann::json metadata;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    const Tensor<float>* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }

    // Fetches a tensor and validates its shape, naming the offending tensor.
    const Tensor<float>& expect(const std::string& name, const Shape& shape) const {
        const Tensor<float>* t = find(name);
        if (!t)
            throw CheckpointShapeError(cat("shape mismatch for tensor '", name, "': expected ",
                                           shape_str(shape), ", tensor absent from checkpoint"));
        if (t->shape != shape)
            throw CheckpointShapeError(cat("shape mismatch for tensor '", name, "': expected ",
                                           shape_str(shape), ", got ", shape_str(t->shape)));
        return *t;
    }
};

namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline std::uint32_t get_u32(const std::string& buf, std::size_t& pos) {
    if (pos + 4 > buf.size()) throw CheckpointTruncatedError("truncated checkpoint file (header field)");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos + std::size_t(i)])) << (8 * i);
    pos += 4;
    return v;
}
inline void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}
} // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string out = "GLCN";
    detail::put_u32(out, kCheckpointVersion);
    const std::string meta = ckpt.metadata.dump();
    detail::put_u32(out, std::uint32_t(meta.size()));
    out += meta;
    for (const auto& [name, tensor] : ckpt.tensors) {
        detail::put_u32(out, std::uint32_t(name.size()));
        out += name;
        detail::put_u32(out, std::uint32_t(tensor.shape.size()));
        for (auto d : tensor.shape) detail::put_u32(out, std::uint32_t(d));
        for (float f : tensor.data) detail::put_f32(out, f);
    }
    return out;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointWriteError(cat("cannot open checkpoint for writing: ", path));
    std::string bytes = serialize_checkpoint(ckpt);
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw CheckpointWriteError(cat("write failed for checkpoint: ", path));
}

inline Checkpoint parse_checkpoint(const std::string& buf, const std::string& origin = "<memory>") {
    std::size_t pos = 0;
    if (buf.size() < 4 || buf.compare(0, 4, "GLCN") != 0)
        throw CheckpointFormatError(cat("not a checkpoint file (bad magic): ", origin));
    pos = 4;
    std::uint32_t version = detail::get_u32(buf, pos);
    if (version != kCheckpointVersion)
        throw CheckpointVersionError(cat("unsupported checkpoint version ", version, " (expected ",
                                         kCheckpointVersion, "): ", origin));
    std::uint32_t meta_len = detail::get_u32(buf, pos);
    if (pos + meta_len > buf.size())
        throw CheckpointTruncatedError(cat("truncated checkpoint file (metadata): ", origin));
    Checkpoint ckpt;
    try {
        ckpt.metadata = nlohmann::json::parse(buf.substr(pos, meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointFormatError(cat("invalid checkpoint metadata: ", e.what(), ": ", origin));
    }
    pos += meta_len;
    while (pos < buf.size()) {
        std::uint32_t name_len = detail::get_u32(buf, pos);
        if (pos + name_len > buf.size())
            throw CheckpointTruncatedError(cat("truncated checkpoint file (tensor name): ", origin));
        std::string name = buf.substr(pos, name_len);
        pos += name_len;
        std::uint32_t rank = detail::get_u32(buf, pos);
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(std::int64_t(detail::get_u32(buf, pos)));
        std::int64_t numel = shape_numel(shape);
        if (pos + std::size_t(numel) * 4 > buf.size())
            throw CheckpointTruncatedError(cat("truncated checkpoint file (tensor '", name, "' data): ",
                                               origin));
        Tensor<float> t(shape);
        std::memcpy(t.data.data(), buf.data() + pos, std::size_t(numel) * 4);
        pos += std::size_t(numel) * 4;
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError(cat("checkpoint not found: ", path));
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_checkpoint(buf, path);
}

} // namespace glcn
