#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>

#include "advkit/network.hpp"

namespace advkit {

struct CheckpointMeta {
    std::string regime;     // training regime name, "" if not applicable
    std::uint64_t seed = 0;
    int epoch = 0;
};

namespace ckpt_detail {

constexpr char MAGIC[8] = {'A', 'D', 'V', 'K', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t VERSION = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t get_u32(std::istream& is, const char* field) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw ParseError(std::string("checkpoint truncated while reading ") + field);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
}

inline std::uint64_t get_u64(std::istream& is, const char* field) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw ParseError(std::string("checkpoint truncated while reading ") + field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

inline std::string get_str(std::istream& is, const char* field) {
    std::uint32_t n = get_u32(is, field);
    if (n > (1u << 20)) throw ParseError(std::string("implausible string length in ") + field);
    std::string s(n, '\0');
    if (n && !is.read(s.data(), n))
        throw ParseError(std::string("checkpoint truncated while reading ") + field);
    return s;
}

template <typename T>
void put_values(std::ostream& os, const Tensor<T>& t) {
    put_u64(os, t.size());
    for (const T& v : t.values) {
        if constexpr (sizeof(T) == 4) {
            put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        } else {
            put_u64(os, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
        }
    }
}

template <typename T>
void get_values(std::istream& is, Tensor<T>& t, int file_precision, const char* field) {
    std::uint64_t n = get_u64(is, field);
    if (n != t.size())
        throw ParseError(std::string("parameter count mismatch in ") + field + ": file has " +
                         std::to_string(n) + ", architecture needs " + std::to_string(t.size()));
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (file_precision == 4) {
            t[i] = static_cast<T>(std::bit_cast<float>(get_u32(is, field)));
        } else {
            t[i] = static_cast<T>(std::bit_cast<double>(get_u64(is, field)));
        }
    }
}

inline void put_spec(std::ostream& os, const LayerSpec& s) {
    os.put(static_cast<char>(s.kind));
    put_u64(os, s.in_features);
    put_u64(os, s.out_features);
    put_u64(os, s.in_channels);
    put_u64(os, s.out_channels);
    put_u64(os, s.kernel_h);
    put_u64(os, s.kernel_w);
}

inline LayerSpec get_spec(std::istream& is) {
    int k = is.get();
    if (k < 0) throw ParseError("checkpoint truncated while reading layer kind");
    if (k > static_cast<int>(LayerKind::flatten)) throw ParseError("unknown layer kind in checkpoint");
    LayerSpec s;
    s.kind = static_cast<LayerKind>(k);
    s.in_features = get_u64(is, "layer in_features");
    s.out_features = get_u64(is, "layer out_features");
    s.in_channels = get_u64(is, "layer in_channels");
    s.out_channels = get_u64(is, "layer out_channels");
    s.kernel_h = get_u64(is, "layer kernel_h");
    s.kernel_w = get_u64(is, "layer kernel_w");
    return s;
}

} // namespace ckpt_detail

template <typename T>
void save_checkpoint(const std::string& path, const Network<T>& net, const CheckpointMeta& meta) {
    namespace d = ckpt_detail;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open checkpoint for writing: " + path);
    os.write(d::MAGIC, 8);
    d::put_u32(os, d::VERSION);
    os.put(static_cast<char>(sizeof(T)));  // precision: 4 or 8 bytes
    d::put_u32(os, static_cast<std::uint32_t>(net.num_classes));
    d::put_str(os, meta.regime);
    d::put_u64(os, meta.seed);
    d::put_u32(os, static_cast<std::uint32_t>(meta.epoch));
    d::put_u32(os, static_cast<std::uint32_t>(net.layers.size()));
    for (const auto& l : net.layers) d::put_spec(os, l.spec);
    for (const auto& l : net.layers) {
        d::put_values(os, l.weight);
        d::put_values(os, l.bias);
    }
    if (!os) throw ConfigError("write failed for checkpoint: " + path);
}

struct CheckpointHeader {
    int precision_bytes = 0;
    int num_classes = 0;
    CheckpointMeta meta;
    std::vector<LayerSpec> arch;
};

namespace ckpt_detail {

inline CheckpointHeader read_header(std::istream& is) {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, MAGIC, 8) != 0)
        throw ParseError("bad checkpoint magic");
    std::uint32_t ver = get_u32(is, "version");
    if (ver != VERSION)
        throw ParseError("unsupported checkpoint version " + std::to_string(ver));
    int prec = is.get();
    if (prec != 4 && prec != 8) throw ParseError("bad precision field in checkpoint");
    CheckpointHeader h;
    h.precision_bytes = prec;
    h.num_classes = static_cast<int>(get_u32(is, "num_classes"));
    h.meta.regime = get_str(is, "regime");
    h.meta.seed = get_u64(is, "seed");
    h.meta.epoch = static_cast<int>(get_u32(is, "epoch"));
    std::uint32_t nl = get_u32(is, "layer count");
    if (nl > 4096) throw ParseError("implausible layer count in checkpoint");
    for (std::uint32_t i = 0; i < nl; ++i) h.arch.push_back(get_spec(is));
    return h;
}

} // namespace ckpt_detail

inline CheckpointHeader peek_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open checkpoint: " + path);
    return ckpt_detail::read_header(is);
}

// Widening a 32-bit checkpoint into a 64-bit network is exact and allowed; the
// lossy direction is refused.
template <typename T>
std::pair<Network<T>, CheckpointMeta> load_checkpoint(const std::string& path) {
    namespace d = ckpt_detail;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open checkpoint: " + path);
    CheckpointHeader h = d::read_header(is);
    if (h.precision_bytes > static_cast<int>(sizeof(T)))
        throw ConfigError("checkpoint precision is " + std::to_string(8 * h.precision_bytes) +
                          "-bit, cannot load into a " + std::to_string(8 * sizeof(T)) +
                          "-bit network");
    Network<T> net;
    net.num_classes = h.num_classes;
    for (const auto& spec : h.arch) {
        Layer<T> l;
        l.spec = spec;
        if (spec.kind == LayerKind::affine) {
            l.weight = Tensor<T>({spec.out_features, spec.in_features});
            l.bias = Tensor<T>({spec.out_features});
        } else if (spec.kind == LayerKind::conv2d) {
            l.weight = Tensor<T>({spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w});
            l.bias = Tensor<T>({spec.out_channels});
        }
        net.layers.push_back(std::move(l));
    }
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        d::get_values(is, net.layers[i].weight, h.precision_bytes, "layer weights");
        d::get_values(is, net.layers[i].bias, h.precision_bytes, "layer biases");
    }
    return {std::move(net), h.meta};
}

template <typename T>
bool same_architecture(const Network<T>& a, const Network<T>& b) {
    if (a.num_classes != b.num_classes || a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i)
        if (!(a.layers[i].spec == b.layers[i].spec)) return false;
    return true;
}

template <typename T>
void require_same_architecture(const Network<T>& a, const Network<T>& b) {
    if (!same_architecture(a, b))
        throw ConfigError("incompatible network architectures");
}

} // namespace advkit
