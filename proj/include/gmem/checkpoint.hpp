#pragma once

// Checkpoint format: magic "GMEM", u32 LE version = 1, u32 LE JSON header byte
// length, UTF-8 JSON header (hyperparameters, flags, ordered tensor manifest),
// then each tensor's 64-bit little-endian floats in manifest order.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gmem/model.hpp"

namespace gmem {

struct BadMagicError : std::runtime_error {
    explicit BadMagicError(const std::string& what) : std::runtime_error(what) {}
};
struct VersionMismatchError : std::runtime_error {
    explicit VersionMismatchError(const std::string& what) : std::runtime_error(what) {}
};
struct TruncatedCheckpointError : std::runtime_error {
    explicit TruncatedCheckpointError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

struct TensorEntry {
    std::string name;
    const Matrix* matrix = nullptr;
    Matrix* mutable_matrix = nullptr;
};

// Canonical manifest order; vectors (biases, norm gains) ride as 1 x len.
template <class Params, class Fn>
void visit_tensors(Params& params, Fn&& fn) {
    fn("embed_in", params.embed_in);
    fn("embed_out", params.embed_out);
    if (!params.positions.empty()) {
        fn("positions", params.positions);
    }
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& layer = params.layers[l];
        const std::string base = "layer" + std::to_string(l);
        for (std::size_t h = 0; h < layer.heads.size(); ++h) {
            auto& head = layer.heads[h];
            const std::string hb = base + ".head" + std::to_string(h);
            fn(hb + ".wq", head.wq);
            fn(hb + ".wk", head.wk);
            fn(hb + ".wv", head.wv);
            fn(hb + ".wo", head.wo);
        }
        for (std::size_t m = 0; m < layer.mlp.size(); ++m) {
            fn(base + ".mlp" + std::to_string(m) + ".w", layer.mlp[m].w);
        }
    }
}

inline void push_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline void append_f64_le(std::string& out, const double* values, std::size_t count) {
    static_assert(sizeof(double) == 8);
    const std::size_t offset = out.size();
    out.resize(offset + count * 8);
    std::memcpy(out.data() + offset, values, count * 8);  // host is little-endian
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json checkpoint_header(const ModelParams& params) {
    nlohmann::json header;
    header["d"] = params.d;
    header["n_subjects"] = params.n_subjects;
    header["n_relations"] = params.n_relations;
    header["attention"] = to_string(params.attention);
    header["norm"] = to_string(params.norm);
    header["activation"] = to_string(params.activation);
    header["decode"] = to_string(params.decode);
    header["prepend_bos"] = params.prepend_bos;
    header["layers"] = params.layers.size();
    nlohmann::json arch = nlohmann::json::array();
    for (const auto& layer : params.layers) {
        nlohmann::json lj;
        lj["heads"] = layer.heads.size();
        nlohmann::json mlp = nlohmann::json::array();
        for (const auto& ml : layer.mlp) {
            mlp.push_back({{"out", ml.w.rows}, {"in", ml.w.cols}});
        }
        lj["mlp"] = mlp;
        lj["norm_attn"] = layer.norm_attn.size();
        lj["norm_mlp"] = layer.norm_mlp.size();
        arch.push_back(lj);
    }
    header["arch"] = arch;

    nlohmann::json manifest = nlohmann::json::array();
    auto add = [&](const std::string& name, const Matrix& m) {
        manifest.push_back({{"name", name}, {"rows", m.rows}, {"cols", m.cols}});
    };
    detail::visit_tensors(params, add);
    // Biases and norm gains appended after weights, in layer order.
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        const std::string base = "layer" + std::to_string(l);
        for (std::size_t m = 0; m < layer.mlp.size(); ++m) {
            manifest.push_back({{"name", base + ".mlp" + std::to_string(m) + ".b"},
                                {"rows", 1},
                                {"cols", layer.mlp[m].b.size()}});
        }
        if (!layer.norm_attn.empty()) {
            manifest.push_back(
                {{"name", base + ".norm_attn.g"}, {"rows", 1}, {"cols", layer.norm_attn.size()}});
        }
        if (!layer.norm_mlp.empty()) {
            manifest.push_back(
                {{"name", base + ".norm_mlp.g"}, {"rows", 1}, {"cols", layer.norm_mlp.size()}});
        }
    }
    header["tensors"] = manifest;
    return header;
}

inline std::string serialize_checkpoint(const ModelParams& params) {
    std::string out = "GMEM";
    detail::push_u32_le(out, kCheckpointVersion);
    const std::string header = checkpoint_header(params).dump();
    detail::push_u32_le(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    detail::visit_tensors(params, [&](const std::string&, const Matrix& m) {
        detail::append_f64_le(out, m.data.data(), m.data.size());
    });
    for (const auto& layer : params.layers) {
        for (const auto& ml : layer.mlp) {
            detail::append_f64_le(out, ml.b.data(), ml.b.size());
        }
        if (!layer.norm_attn.empty()) {
            detail::append_f64_le(out, layer.norm_attn.data(), layer.norm_attn.size());
        }
        if (!layer.norm_mlp.empty()) {
            detail::append_f64_le(out, layer.norm_mlp.data(), layer.norm_mlp.size());
        }
    }
    return out;
}

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::ofstream file(path, std::ios::binary);
    if (!file) {
        throw std::runtime_error("save_checkpoint: cannot open " + path);
    }
    const std::string bytes = serialize_checkpoint(params);
    file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!file) {
        throw std::runtime_error("save_checkpoint: write failed for " + path);
    }
}

inline ModelParams deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 12 || bytes.compare(0, 4, "GMEM") != 0) {
        throw BadMagicError("checkpoint: bad magic (expected GMEM)");
    }
    auto read_u32 = [&](std::size_t offset) {
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) {
            v = (v << 8) | static_cast<std::uint8_t>(bytes[offset + static_cast<std::size_t>(i)]);
        }
        return v;
    };
    const std::uint32_t version = read_u32(4);
    if (version != kCheckpointVersion) {
        throw VersionMismatchError("checkpoint: version " + std::to_string(version) +
                                   " unsupported (expected " + std::to_string(kCheckpointVersion) +
                                   ")");
    }
    const std::uint32_t header_len = read_u32(8);
    if (bytes.size() < 12 + static_cast<std::size_t>(header_len)) {
        throw TruncatedCheckpointError("checkpoint: truncated JSON header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(12, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw TruncatedCheckpointError(std::string("checkpoint: malformed header: ") + e.what());
    }

    ModelParams params;
    params.d = header.at("d").get<std::size_t>();
    params.n_subjects = header.at("n_subjects").get<std::size_t>();
    params.n_relations = header.at("n_relations").get<std::size_t>();
    params.attention = enum_from_string<AttentionMode>(header.at("attention").get<std::string>());
    params.norm = enum_from_string<NormMode>(header.at("norm").get<std::string>());
    params.activation = enum_from_string<Activation>(header.at("activation").get<std::string>());
    params.decode = enum_from_string<DecodeMode>(header.at("decode").get<std::string>());
    params.prepend_bos = header.at("prepend_bos").get<bool>();
    params.layers.resize(header.at("layers").get<std::size_t>());
    const auto& arch = header.at("arch");
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& layer = params.layers[l];
        layer.heads.resize(arch.at(l).at("heads").get<std::size_t>());
        const auto& mlp = arch.at(l).at("mlp");
        layer.mlp.resize(mlp.size());
        for (std::size_t m = 0; m < layer.mlp.size(); ++m) {
            layer.mlp[m].b.resize(mlp.at(m).at("out").get<std::size_t>());
        }
        layer.norm_attn.resize(arch.at(l).at("norm_attn").get<std::size_t>());
        layer.norm_mlp.resize(arch.at(l).at("norm_mlp").get<std::size_t>());
    }

    std::size_t offset = 12 + header_len;
    auto read_block = [&](double* dst, std::size_t count, const std::string& name) {
        const std::size_t need = count * 8;
        if (bytes.size() < offset + need) {
            throw TruncatedCheckpointError("checkpoint: truncated tensor data at " + name);
        }
        std::memcpy(dst, bytes.data() + offset, need);
        offset += need;
    };

    // Allocate weights from the manifest, then read in manifest order.
    const auto& manifest = header.at("tensors");
    std::size_t entry = 0;
    auto take_matrix = [&](const std::string& name, Matrix& m) {
        if (entry >= manifest.size()) {
            throw TruncatedCheckpointError("checkpoint: manifest missing tensor " + name);
        }
        const auto& item = manifest.at(entry++);
        if (item.at("name").get<std::string>() != name) {
            throw TruncatedCheckpointError("checkpoint: manifest order mismatch at " + name);
        }
        m = Matrix(item.at("rows").get<std::size_t>(), item.at("cols").get<std::size_t>());
        read_block(m.data.data(), m.data.size(), name);
    };

    take_matrix("embed_in", params.embed_in);
    take_matrix("embed_out", params.embed_out);
    bool has_positions = false;
    for (const auto& item : manifest) {
        if (item.at("name").get<std::string>() == "positions") {
            has_positions = true;
        }
    }
    if (has_positions) {
        take_matrix("positions", params.positions);
    }
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& layer = params.layers[l];
        const std::string base = "layer" + std::to_string(l);
        for (std::size_t h = 0; h < layer.heads.size(); ++h) {
            const std::string hb = base + ".head" + std::to_string(h);
            take_matrix(hb + ".wq", layer.heads[h].wq);
            take_matrix(hb + ".wk", layer.heads[h].wk);
            take_matrix(hb + ".wv", layer.heads[h].wv);
            take_matrix(hb + ".wo", layer.heads[h].wo);
        }
        for (std::size_t m = 0; m < layer.mlp.size(); ++m) {
            Matrix w;
            take_matrix(base + ".mlp" + std::to_string(m) + ".w", w);
            layer.mlp[m].w = std::move(w);
        }
    }
    // Trailing vectors: biases and norm gains, in the same order as written.
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& layer = params.layers[l];
        const std::string base = "layer" + std::to_string(l);
        for (std::size_t m = 0; m < layer.mlp.size(); ++m) {
            read_block(layer.mlp[m].b.data(), layer.mlp[m].b.size(),
                       base + ".mlp" + std::to_string(m) + ".b");
        }
        if (!layer.norm_attn.empty()) {
            read_block(layer.norm_attn.data(), layer.norm_attn.size(), base + ".norm_attn.g");
        }
        if (!layer.norm_mlp.empty()) {
            read_block(layer.norm_mlp.data(), layer.norm_mlp.size(), base + ".norm_mlp.g");
        }
    }
    if (offset != bytes.size()) {
        throw TruncatedCheckpointError("checkpoint: trailing bytes after tensor data");
    }
    return params;
}

inline ModelParams load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw std::runtime_error("load_checkpoint: cannot open " + path);
    }
    std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace gmem
