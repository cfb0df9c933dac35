#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "advkit/checkpoint.hpp"
#include "advkit/rng.hpp"
#include "advkit/tensor.hpp"

namespace advkit::data {

template <typename T>
struct LabeledBatch {
    Tensor<T> images;          // [M, ...], values in [0,1]
    std::vector<int> labels;

    std::size_t count() const { return labels.size(); }
};

template <typename T>
struct Dataset {
    std::string name;
    LabeledBatch<T> train, val, test;
    std::vector<std::size_t> image_shape;  // per sample, e.g. {1,14,14}
    int num_classes = 0;
};

template <typename T>
void validate_batch(const LabeledBatch<T>& b, int num_classes) {
    if (b.images.rank() < 2 || b.images.dim(0) != b.labels.size())
        throw ConfigError("labeled batch images/labels mismatch");
    for (const T& v : b.images.values)
        if (!(v >= T(0) && v <= T(1))) throw ConfigError("image values must lie in [0,1]");
    for (int y : b.labels)
        if (y < 0 || y >= num_classes) throw ConfigError("label out of range");
}

// ---- IDX files (big-endian; 0x00000803 images, 0x00000801 labels) -----------------

namespace idx_detail {

inline std::uint32_t read_be32(std::istream& is, const char* field) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw ParseError(std::string("idx file truncated while reading ") + field);
    return std::uint32_t(b[0]) << 24 | std::uint32_t(b[1]) << 16 | std::uint32_t(b[2]) << 8 |
           std::uint32_t(b[3]);
}

} // namespace idx_detail

struct RawIdx {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> pixels;  // count*rows*cols
    std::vector<std::uint8_t> labels;  // count
};

inline RawIdx read_idx_pair(const std::string& images_path, const std::string& labels_path) {
    namespace d = idx_detail;
    RawIdx out;

    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw ConfigError("cannot open idx image file: " + images_path);
    if (d::read_be32(imgs, "image magic") != 0x00000803u)
        throw ParseError("bad idx image magic (want 0x00000803)");
    out.count = d::read_be32(imgs, "image count");
    out.rows = d::read_be32(imgs, "image rows");
    out.cols = d::read_be32(imgs, "image cols");
    out.pixels.resize(out.count * out.rows * out.cols);
    if (!imgs.read(reinterpret_cast<char*>(out.pixels.data()),
                   static_cast<std::streamsize>(out.pixels.size())))
        throw ParseError("idx file truncated while reading pixel data");

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw ConfigError("cannot open idx label file: " + labels_path);
    if (d::read_be32(labs, "label magic") != 0x00000801u)
        throw ParseError("bad idx label magic (want 0x00000801)");
    std::size_t n = d::read_be32(labs, "label count");
    if (n != out.count) throw ParseError("idx image/label count mismatch");
    out.labels.resize(n);
    if (!labs.read(reinterpret_cast<char*>(out.labels.data()), static_cast<std::streamsize>(n)))
        throw ParseError("idx file truncated while reading label data");
    for (std::uint8_t l : out.labels)
        if (l > 9) throw ParseError("idx label outside 0-9");
    return out;
}

// Pixels scaled to [0,1] by /255; optional 2x mean-pool downsampling.
template <typename T>
LabeledBatch<T> idx_to_batch(const RawIdx& raw, bool downsample_2x) {
    LabeledBatch<T> b;
    const std::size_t r = raw.rows, c = raw.cols;
    if (downsample_2x) {
        const std::size_t r2 = r / 2, c2 = c / 2;
        b.images = Tensor<T>({raw.count, 1, r2, c2});
        for (std::size_t m = 0; m < raw.count; ++m) {
            const std::uint8_t* src = raw.pixels.data() + m * r * c;
            T* dst = b.images.row(m);
            for (std::size_t i = 0; i < r2; ++i)
                for (std::size_t j = 0; j < c2; ++j) {
                    unsigned s = src[(2 * i) * c + 2 * j] + src[(2 * i) * c + 2 * j + 1] +
                                 src[(2 * i + 1) * c + 2 * j] + src[(2 * i + 1) * c + 2 * j + 1];
                    dst[i * c2 + j] = static_cast<T>(s) / T(4 * 255);
                }
        }
    } else {
        b.images = Tensor<T>({raw.count, 1, r, c});
        for (std::size_t i = 0; i < raw.pixels.size(); ++i)
            b.images[i] = static_cast<T>(raw.pixels[i]) / T(255);
    }
    b.labels.assign(raw.labels.begin(), raw.labels.end());
    return b;
}

struct MnistOptions {
    std::size_t train_count = 2000;
    std::size_t val_count = 500;
    std::size_t test_count = 1000;
    bool downsample_2x = true;
    std::uint64_t seed = 0;
};

// Loads train/test IDX pairs from a directory using the canonical filenames and
// draws deterministic desk-scale subsets.
template <typename T>
Dataset<T> load_mnist_idx(const std::string& dir, const MnistOptions& opt) {
    RawIdx train_raw = read_idx_pair(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
    RawIdx test_raw = read_idx_pair(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
    LabeledBatch<T> train_full = idx_to_batch<T>(train_raw, opt.downsample_2x);
    LabeledBatch<T> test_full = idx_to_batch<T>(test_raw, opt.downsample_2x);

    auto subset = [](const LabeledBatch<T>& full, std::size_t from, std::size_t n,
                     const std::vector<std::size_t>& order) {
        LabeledBatch<T> out;
        std::vector<std::size_t> shape = full.images.shape;
        shape[0] = n;
        out.images = Tensor<T>(shape);
        out.labels.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t src = order[from + i];
            std::copy(full.images.row(src), full.images.row(src) + full.images.row_size(),
                      out.images.row(i));
            out.labels[i] = full.labels[src];
        }
        return out;
    };

    if (opt.train_count + opt.val_count > train_full.count())
        throw ConfigError("requested more train+val samples than the idx file holds");
    if (opt.test_count > test_full.count())
        throw ConfigError("requested more test samples than the idx file holds");

    std::vector<std::size_t> order(train_full.count());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto rng = sample_stream(opt.seed, 0x315d, 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    std::vector<std::size_t> torder(test_full.count());
    for (std::size_t i = 0; i < torder.size(); ++i) torder[i] = i;

    Dataset<T> ds;
    ds.name = "mnist";
    ds.num_classes = 10;
    ds.train = subset(train_full, 0, opt.train_count, order);
    ds.val = subset(train_full, opt.train_count, opt.val_count, order);
    ds.test = subset(test_full, 0, opt.test_count, torder);
    ds.image_shape = {ds.train.images.shape.begin() + 1, ds.train.images.shape.end()};
    return ds;
}

// ---- synthetic Gaussian blobs ------------------------------------------------------

// Isotropic blobs at fixed random centers, clipped to [0,1]^dim. separation 0 puts
// every center at 0.5 (chance-level task); separation ~1 spreads them across the cube.
template <typename T>
Dataset<T> synth_gaussians(int n_classes, int n_per_class, int dim, double separation,
                           std::uint64_t seed) {
    if (n_classes < 2 || n_per_class < 1 || dim < 1) throw ConfigError("bad synth_gaussians sizes");
    if (separation < 0) throw ConfigError("separation must be nonnegative");
    const double sigma = 0.1;

    auto crng = sample_stream(seed, 0xce27, 0);
    std::vector<std::vector<double>> centers(n_classes, std::vector<double>(dim));
    for (auto& c : centers) {
        double norm = 0;
        for (auto& v : c) {
            v = uniform_in(crng, -1.0, 1.0);
            norm += v * v;
        }
        norm = std::sqrt(std::max(norm, 1e-12));
        for (auto& v : c) v = 0.5 + 0.5 * separation * (v / norm);
    }

    auto fill = [&](int per_class, std::uint64_t stream) {
        LabeledBatch<T> b;
        std::size_t n = static_cast<std::size_t>(n_classes) * per_class;
        b.images = Tensor<T>({n, static_cast<std::size_t>(dim)});
        b.labels.resize(n);
        std::size_t m = 0;
        for (int k = 0; k < n_classes; ++k) {
            for (int i = 0; i < per_class; ++i, ++m) {
                auto rng = sample_stream(seed, stream, m);
                T* px = b.images.row(m);
                for (int d = 0; d < dim; ++d)
                    px[d] = static_cast<T>(clamp01(centers[k][d] + sigma * gaussian<double>(rng)));
                b.labels[m] = k;
            }
        }
        return b;
    };

    Dataset<T> ds;
    ds.name = "gauss";
    ds.num_classes = n_classes;
    ds.train = fill(n_per_class, 1);
    ds.val = fill(std::max(1, n_per_class / 4), 2);
    ds.test = fill(std::max(1, n_per_class / 2), 3);
    ds.image_shape = {static_cast<std::size_t>(dim)};
    return ds;
}

// ---- procedural digit glyphs (desk-scale MNIST stand-in) ---------------------------

namespace digits_detail {

// 7x5 pixel-font digits 0-9
inline const std::array<std::array<const char*, 7>, 10>& glyphs() {
    static const std::array<std::array<const char*, 7>, 10> g = {{
        {{"01110", "10001", "10011", "10101", "11001", "10001", "01110"}},  // 0
        {{"00100", "01100", "00100", "00100", "00100", "00100", "01110"}},  // 1
        {{"01110", "10001", "00001", "00010", "00100", "01000", "11111"}},  // 2
        {{"11111", "00010", "00100", "00010", "00001", "10001", "01110"}},  // 3
        {{"00010", "00110", "01010", "10010", "11111", "00010", "00010"}},  // 4
        {{"11111", "10000", "11110", "00001", "00001", "10001", "01110"}},  // 5
        {{"00110", "01000", "10000", "11110", "10001", "10001", "01110"}},  // 6
        {{"11111", "00001", "00010", "00100", "01000", "01000", "01000"}},  // 7
        {{"01110", "10001", "10001", "01110", "10001", "10001", "01110"}},  // 8
        {{"01110", "10001", "10001", "01111", "00001", "00010", "01100"}},  // 9
    }};
    return g;
}

} // namespace digits_detail

struct DigitsOptions {
    std::size_t train_count = 2000;
    std::size_t val_count = 500;
    std::size_t test_count = 1000;
    double max_shift = 1.5;     // subpixel glyph offset range, both axes
    double noise = 0.08;        // additive uniform background noise
    double dropout = 0.05;      // probability a stroke pixel is erased
    double intensity_lo = 0.85; // stroke brightness range
    double intensity_hi = 1.0;
    std::uint64_t seed = 0;
};

// 14x14 ten-class digit images: a pixel-font glyph rendered at 2x stroke width and
// a continuous subpixel offset (bilinear, so stroke interiors keep full contrast
// while edges carry anti-aliased grays), with intensity jitter, stroke dropout and
// background noise.
template <typename T>
Dataset<T> synth_digits(const DigitsOptions& opt) {
    constexpr std::size_t H = 14, W = 14, GH = 7, GW = 5, SCALE = 2;
    const auto& glyphs = digits_detail::glyphs();

    // upscaled glyph as an indicator on [0, GH*SCALE) x [0, GW*SCALE)
    auto stroke = [&](int cls, int u, int v) -> double {
        if (u < 0 || v < 0 || u >= static_cast<int>(GH * SCALE) || v >= static_cast<int>(GW * SCALE))
            return 0.0;
        return glyphs[cls][static_cast<std::size_t>(u) / SCALE]
                     [static_cast<std::size_t>(v) / SCALE] == '1'
                   ? 1.0
                   : 0.0;
    };

    auto fill = [&](std::size_t n, std::uint64_t stream) {
        LabeledBatch<T> b;
        b.images = Tensor<T>({n, 1, H, W});
        b.labels.resize(n);
        for (std::size_t m = 0; m < n; ++m) {
            auto rng = sample_stream(opt.seed, stream, m);
            int cls = static_cast<int>(rng() % 10);
            b.labels[m] = cls;
            double dr = uniform_in(rng, -opt.max_shift, opt.max_shift);
            double dc = 2.0 + uniform_in(rng, -opt.max_shift, opt.max_shift);  // center the glyph
            double intensity = uniform_in(rng, opt.intensity_lo, opt.intensity_hi);
            T* px = b.images.row(m);
            for (std::size_t r = 0; r < H; ++r) {
                for (std::size_t c = 0; c < W; ++c) {
                    double u = static_cast<double>(r) - dr;
                    double v = static_cast<double>(c) - dc;
                    int u0 = static_cast<int>(std::floor(u)), v0 = static_cast<int>(std::floor(v));
                    double fu = u - u0, fv = v - v0;
                    double s = (1 - fu) * (1 - fv) * stroke(cls, u0, v0) +
                               (1 - fu) * fv * stroke(cls, u0, v0 + 1) +
                               fu * (1 - fv) * stroke(cls, u0 + 1, v0) +
                               fu * fv * stroke(cls, u0 + 1, v0 + 1);
                    if (s > 0 && unit_double(rng) < opt.dropout) s = 0;
                    px[r * W + c] = static_cast<T>(clamp01(s * intensity + uniform_in(rng, 0.0, opt.noise)));
                }
            }
        }
        return b;
    };

    Dataset<T> ds;
    ds.name = "digits";
    ds.num_classes = 10;
    ds.train = fill(opt.train_count, 1);
    ds.val = fill(opt.val_count, 2);
    ds.test = fill(opt.test_count, 3);
    ds.image_shape = {1, H, W};
    return ds;
}

// ---- binary cache ------------------------------------------------------------------

namespace cache_detail {

constexpr char MAGIC[8] = {'A', 'D', 'V', 'K', 'D', 'A', 'T', 'A'};
constexpr std::uint32_t VERSION = 1;

template <typename T>
void put_batch(std::ostream& os, const LabeledBatch<T>& b) {
    namespace c = ckpt_detail;
    c::put_u32(os, static_cast<std::uint32_t>(b.images.rank()));
    for (std::size_t d : b.images.shape) c::put_u64(os, d);
    c::put_values(os, b.images);
    c::put_u64(os, b.labels.size());
    for (int l : b.labels) c::put_u32(os, static_cast<std::uint32_t>(l));
}

template <typename T>
LabeledBatch<T> get_batch(std::istream& is) {
    namespace c = ckpt_detail;
    LabeledBatch<T> b;
    std::uint32_t rank = c::get_u32(is, "batch rank");
    if (rank < 2 || rank > 8) throw ParseError("implausible batch rank in dataset cache");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = c::get_u64(is, "batch shape");
    b.images = Tensor<T>(shape);
    c::get_values(is, b.images, static_cast<int>(sizeof(T)), "batch pixels");
    std::uint64_t n = c::get_u64(is, "label count");
    if (n != shape[0]) throw ParseError("dataset cache label count mismatch");
    b.labels.resize(n);
    for (auto& l : b.labels) l = static_cast<int>(c::get_u32(is, "label"));
    return b;
}

} // namespace cache_detail

template <typename T>
void save_dataset(const std::string& path, const Dataset<T>& ds) {
    namespace c = ckpt_detail;
    namespace d = cache_detail;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open dataset cache for writing: " + path);
    os.write(d::MAGIC, 8);
    c::put_u32(os, d::VERSION);
    os.put(static_cast<char>(sizeof(T)));
    c::put_str(os, ds.name);
    c::put_u32(os, static_cast<std::uint32_t>(ds.num_classes));
    c::put_u32(os, static_cast<std::uint32_t>(ds.image_shape.size()));
    for (std::size_t v : ds.image_shape) c::put_u64(os, v);
    d::put_batch(os, ds.train);
    d::put_batch(os, ds.val);
    d::put_batch(os, ds.test);
    if (!os) throw ConfigError("write failed for dataset cache: " + path);
}

template <typename T>
Dataset<T> load_dataset(const std::string& path) {
    namespace c = ckpt_detail;
    namespace d = cache_detail;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open dataset cache: " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, d::MAGIC, 8) != 0)
        throw ParseError("bad dataset cache magic");
    if (c::get_u32(is, "version") != d::VERSION) throw ParseError("unsupported dataset cache version");
    int prec = is.get();
    if (prec != static_cast<int>(sizeof(T)))
        throw ConfigError("dataset cache precision is " + std::to_string(8 * prec) + "-bit");
    Dataset<T> ds;
    ds.name = c::get_str(is, "dataset name");
    ds.num_classes = static_cast<int>(c::get_u32(is, "num_classes"));
    std::uint32_t rank = c::get_u32(is, "image shape rank");
    if (rank > 8) throw ParseError("implausible image rank in dataset cache");
    ds.image_shape.resize(rank);
    for (auto& v : ds.image_shape) v = c::get_u64(is, "image shape");
    ds.train = d::get_batch<T>(is);
    ds.val = d::get_batch<T>(is);
    ds.test = d::get_batch<T>(is);
    return ds;
}

} // namespace advkit::data
