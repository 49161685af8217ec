#pragma once

// Named-tensor container: magic "GCMCF1", a JSON metadata header, then
// name-length-prefixed entries of row-major little-endian float32 data.
// Used for model checkpoints, oracle sidecars and raw feature dumps.

#include "cfrec/common.hpp"

#include <json.hpp>

#include <map>
#include <string>
#include <vector>

namespace cfrec {

inline constexpr char kTensorMagic[] = "GCMCF1";

struct TensorContainer {
    nlohmann::ordered_json metadata;
    std::vector<std::pair<std::string, Mat>> tensors;  // insertion order preserved

    const Mat& at(const std::string& name) const {
        for (const auto& [n, m] : tensors)
            if (n == name) return m;
        throw FormatError("tensor container: missing tensor '" + name + "'");
    }

    bool has(const std::string& name) const {
        for (const auto& [n, m] : tensors)
            if (n == name) return true;
        return false;
    }
};

inline std::string encode_tensor_container(const TensorContainer& c) {
    std::string out;
    out.append(kTensorMagic, 6);
    const std::string meta = c.metadata.dump();
    put_u32(out, static_cast<std::uint32_t>(meta.size()));
    out += meta;
    put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& [name, m] : c.tensors) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(m.rows()));
        put_u32(out, static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                put_f32(out, static_cast<float>(m(i, j)));
    }
    return out;
}

inline void save_tensor_container(const TensorContainer& c, const std::string& path) {
    write_file_atomic(path, encode_tensor_container(c));
}

inline TensorContainer decode_tensor_container(const std::string& bytes, const std::string& origin) {
    ByteReader r(bytes, origin);
    if (r.bytes(6) != std::string(kTensorMagic, 6))
        throw FormatError(origin + ": bad magic, not a GCMCF1 container");
    TensorContainer c;
    const std::uint32_t meta_len = r.u32();
    const std::string meta = r.bytes(meta_len);
    try {
        c.metadata = nlohmann::ordered_json::parse(meta);
    } catch (const std::exception& e) {
        throw FormatError(origin + ": metadata is not valid JSON: " + e.what());
    }
    const std::uint32_t count = r.u32();
    c.tensors.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.bytes(name_len);
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        Mat m(rows, cols);
        for (std::uint32_t i = 0; i < rows; ++i)
            for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = static_cast<double>(r.f32());
        c.tensors.emplace_back(std::move(name), std::move(m));
    }
    if (!r.at_end()) throw FormatError(origin + ": trailing bytes after last tensor");
    return c;
}

inline TensorContainer load_tensor_container(const std::string& path) {
    return decode_tensor_container(read_file_bytes(path), path);
}

}  // namespace cfrec
