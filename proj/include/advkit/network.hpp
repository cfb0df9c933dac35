#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advkit/rng.hpp"
#include "advkit/tensor.hpp"

namespace advkit {

enum class LayerKind : std::uint8_t { affine, relu, conv2d, maxpool2x2, flatten };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::affine: return "affine";
        case LayerKind::relu: return "relu";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::maxpool2x2: return "maxpool2x2";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in_features = 0, out_features = 0;              // affine
    std::size_t in_channels = 0, out_channels = 0;              // conv2d
    std::size_t kernel_h = 0, kernel_w = 0;                     // conv2d

    bool operator==(const LayerSpec&) const = default;
};

template <typename T>
struct Layer {
    LayerSpec spec;
    Tensor<T> weight;   // affine: [out,in]; conv2d: [oc,ic,kh,kw]
    Tensor<T> bias;     // [out] / [oc]
};

template <typename T>
struct Network {
    std::vector<Layer<T>> layers;
    int num_classes = 0;
};

// ---- builders ---------------------------------------------------------------

template <typename T>
void add_affine(Network<T>& net, std::size_t in, std::size_t out) {
    Layer<T> l;
    l.spec.kind = LayerKind::affine;
    l.spec.in_features = in;
    l.spec.out_features = out;
    l.weight = Tensor<T>({out, in});
    l.bias = Tensor<T>({out});
    net.layers.push_back(std::move(l));
}

template <typename T>
void add_relu(Network<T>& net) {
    net.layers.push_back(Layer<T>{LayerSpec{LayerKind::relu}, {}, {}});
}

template <typename T>
void add_conv2d(Network<T>& net, std::size_t in_c, std::size_t out_c, std::size_t kh, std::size_t kw) {
    Layer<T> l;
    l.spec.kind = LayerKind::conv2d;
    l.spec.in_channels = in_c;
    l.spec.out_channels = out_c;
    l.spec.kernel_h = kh;
    l.spec.kernel_w = kw;
    l.weight = Tensor<T>({out_c, in_c, kh, kw});
    l.bias = Tensor<T>({out_c});
    net.layers.push_back(std::move(l));
}

template <typename T>
void add_maxpool2x2(Network<T>& net) {
    net.layers.push_back(Layer<T>{LayerSpec{LayerKind::maxpool2x2}, {}, {}});
}

template <typename T>
void add_flatten(Network<T>& net) {
    net.layers.push_back(Layer<T>{LayerSpec{LayerKind::flatten}, {}, {}});
}

// Flatten -> affine/relu stack. Accepts inputs of any shape whose per-sample
// element count equals input_dim.
template <typename T>
Network<T> make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, int num_classes) {
    Network<T> net;
    net.num_classes = num_classes;
    add_flatten(net);
    std::size_t prev = input_dim;
    for (std::size_t h : hidden) {
        add_affine(net, prev, h);
        add_relu(net);
        prev = h;
    }
    add_affine(net, prev, static_cast<std::size_t>(num_classes));
    return net;
}

// Small conv net in the LeNet mold: conv-relu-pool-conv-relu-pool-fc.
template <typename T>
Network<T> make_small_convnet(std::size_t in_c, std::size_t h, std::size_t w,
                              std::size_t c1, std::size_t c2, std::size_t fc, int num_classes) {
    Network<T> net;
    net.num_classes = num_classes;
    add_conv2d(net, in_c, c1, 3, 3);
    add_relu(net);
    add_maxpool2x2(net);
    add_conv2d(net, c1, c2, 3, 3);
    add_relu(net);
    add_maxpool2x2(net);
    add_flatten(net);
    std::size_t h1 = (h - 2) / 2, w1 = (w - 2) / 2;
    std::size_t h2 = (h1 - 2) / 2, w2 = (w1 - 2) / 2;
    add_affine(net, c2 * h2 * w2, fc);
    add_relu(net);
    add_affine(net, fc, static_cast<std::size_t>(num_classes));
    return net;
}

// He-style init, deterministic given the seed.
template <typename T>
void init_params(Network<T>& net, std::uint64_t seed) {
    std::size_t li = 0;
    for (auto& layer : net.layers) {
        auto rng = sample_stream(seed, 0xadf0, li++);
        if (layer.spec.kind == LayerKind::affine) {
            T scale = static_cast<T>(std::sqrt(2.0 / static_cast<double>(layer.spec.in_features)));
            for (auto& v : layer.weight.values) v = gaussian<T>(rng) * scale;
            for (auto& v : layer.bias.values) v = T(0);
        } else if (layer.spec.kind == LayerKind::conv2d) {
            double fan_in = static_cast<double>(layer.spec.in_channels * layer.spec.kernel_h * layer.spec.kernel_w);
            T scale = static_cast<T>(std::sqrt(2.0 / fan_in));
            for (auto& v : layer.weight.values) v = gaussian<T>(rng) * scale;
            for (auto& v : layer.bias.values) v = T(0);
        }
    }
}

// ---- shape inference / validation -------------------------------------------

inline std::vector<std::size_t> layer_output_shape(const LayerSpec& spec,
                                                   const std::vector<std::size_t>& in,
                                                   std::size_t layer_index) {
    auto fail = [&](const std::string& msg) {
        throw ConfigError("layer " + std::to_string(layer_index) + " (" + layer_kind_name(spec.kind) +
                          "): " + msg + ", input shape " + shape_str(in));
    };
    switch (spec.kind) {
        case LayerKind::relu:
            return in;
        case LayerKind::flatten: {
            if (in.size() < 2) fail("needs a batch axis plus data axes");
            std::size_t flat = 1;
            for (std::size_t i = 1; i < in.size(); ++i) flat *= in[i];
            return {in[0], flat};
        }
        case LayerKind::affine: {
            if (in.size() != 2) fail("expects [batch, features]");
            if (in[1] != spec.in_features)
                fail("expects " + std::to_string(spec.in_features) + " features");
            return {in[0], spec.out_features};
        }
        case LayerKind::conv2d: {
            if (in.size() != 4) fail("expects [batch, channels, h, w]");
            if (in[1] != spec.in_channels)
                fail("expects " + std::to_string(spec.in_channels) + " channels");
            if (in[2] < spec.kernel_h || in[3] < spec.kernel_w) fail("kernel larger than input");
            return {in[0], spec.out_channels, in[2] - spec.kernel_h + 1, in[3] - spec.kernel_w + 1};
        }
        case LayerKind::maxpool2x2: {
            if (in.size() != 4) fail("expects [batch, channels, h, w]");
            if (in[2] < 2 || in[3] < 2) fail("input smaller than pooling window");
            return {in[0], in[1], in[2] / 2, in[3] / 2};
        }
    }
    fail("unknown layer kind");
    return {};
}

template <typename T>
std::vector<std::size_t> output_shape(const Network<T>& net, std::vector<std::size_t> in) {
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        in = layer_output_shape(net.layers[i].spec, in, i);
    return in;
}

template <typename T>
void validate_network(const Network<T>& net, const std::vector<std::size_t>& input_shape) {
    if (net.num_classes < 2) throw ConfigError("network needs at least 2 classes");
    auto out = output_shape(net, input_shape);
    if (out.size() != 2 || out[1] != static_cast<std::size_t>(net.num_classes))
        throw ConfigError("network output shape " + shape_str(out) + " does not produce " +
                          std::to_string(net.num_classes) + " logits per sample");
}

// ---- forward -----------------------------------------------------------------

template <typename T>
struct ForwardTrace {
    // acts[0] is the input, acts[i+1] the output of layer i; acts.back() the logits.
    std::vector<Tensor<T>> acts;
    // flat argmax index into the layer input, one per pooled output element
    std::vector<std::vector<std::uint32_t>> pool_argmax;
};

namespace detail {

template <typename T>
void check_finite(const Tensor<T>& t, std::size_t layer_index) {
    for (const T& v : t.values)
        if (!std::isfinite(static_cast<double>(v))) [[unlikely]]
            throw NumericError("non-finite value in output of layer " + std::to_string(layer_index));
}

// o outer, i inner keeps the weight row contiguous
template <typename T>
Tensor<T> affine_fwd(const Layer<T>& l, const Tensor<T>& x) {
    const std::size_t m_count = x.dim(0), in = l.spec.in_features, out = l.spec.out_features;
    Tensor<T> y({m_count, out});
    for (std::size_t m = 0; m < m_count; ++m) {
        const T* xr = x.row(m);
        T* yr = y.row(m);
        for (std::size_t o = 0; o < out; ++o) {
            const T* wr = l.weight.data() + o * in;
            T acc = l.bias[o];
            for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
            yr[o] = acc;
        }
    }
    return y;
}

template <typename T>
Tensor<T> conv2d_fwd(const Layer<T>& l, const Tensor<T>& x) {
    const std::size_t mc = x.dim(0), ic = l.spec.in_channels, h = x.dim(2), w = x.dim(3);
    const std::size_t oc = l.spec.out_channels, kh = l.spec.kernel_h, kw = l.spec.kernel_w;
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    Tensor<T> y({mc, oc, oh, ow});
    for (std::size_t m = 0; m < mc; ++m) {
        const T* xm = x.row(m);
        T* ym = y.row(m);
        for (std::size_t o = 0; o < oc; ++o) {
            T* yo = ym + o * oh * ow;
            for (std::size_t p = 0; p < oh * ow; ++p) yo[p] = l.bias[o];
            for (std::size_t c = 0; c < ic; ++c) {
                const T* xc = xm + c * h * w;
                const T* wk = l.weight.data() + (o * ic + c) * kh * kw;
                for (std::size_t u = 0; u < kh; ++u) {
                    for (std::size_t v = 0; v < kw; ++v) {
                        const T wv = wk[u * kw + v];
                        if (wv == T(0)) continue;
                        for (std::size_t r = 0; r < oh; ++r) {
                            const T* xrow = xc + (r + u) * w + v;
                            T* yrow = yo + r * ow;
                            for (std::size_t s = 0; s < ow; ++s) yrow[s] += wv * xrow[s];
                        }
                    }
                }
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> maxpool_fwd(const Tensor<T>& x, std::vector<std::uint32_t>& argmax) {
    const std::size_t mc = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor<T> y({mc, c, oh, ow});
    argmax.assign(y.size(), 0);
    std::size_t out_idx = 0;
    for (std::size_t m = 0; m < mc; ++m) {
        const T* xm = x.row(m);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* xc = xm + ch * h * w;
            const std::size_t base = m * c * h * w + ch * h * w;
            for (std::size_t r = 0; r < oh; ++r) {
                for (std::size_t s = 0; s < ow; ++s) {
                    // first maximum in scan order wins on ties
                    std::size_t best = (2 * r) * w + 2 * s;
                    T bv = xc[best];
                    const std::size_t cand[3] = {(2 * r) * w + 2 * s + 1,
                                                 (2 * r + 1) * w + 2 * s,
                                                 (2 * r + 1) * w + 2 * s + 1};
                    for (std::size_t q : cand)
                        if (xc[q] > bv) { bv = xc[q]; best = q; }
                    y[out_idx] = bv;
                    argmax[out_idx] = static_cast<std::uint32_t>(base + best);
                    ++out_idx;
                }
            }
        }
    }
    return y;
}

} // namespace detail

template <typename T>
ForwardTrace<T> forward_trace(const Network<T>& net, const Tensor<T>& batch) {
    if (batch.rank() < 2 || batch.dim(0) == 0)
        throw ConfigError("batch must have shape [M, ...] with M >= 1, got " + shape_str(batch.shape));
    validate_network(net, batch.shape);

    ForwardTrace<T> tr;
    tr.acts.reserve(net.layers.size() + 1);
    tr.acts.push_back(batch);
    tr.pool_argmax.resize(net.layers.size());

    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& layer = net.layers[i];
        const Tensor<T>& x = tr.acts.back();
        Tensor<T> y;
        switch (layer.spec.kind) {
            case LayerKind::affine:
                y = detail::affine_fwd(layer, x);
                break;
            case LayerKind::relu:
                y = x;
                for (auto& v : y.values) v = v > T(0) ? v : T(0);
                break;
            case LayerKind::conv2d:
                y = detail::conv2d_fwd(layer, x);
                break;
            case LayerKind::maxpool2x2:
                y = detail::maxpool_fwd(x, tr.pool_argmax[i]);
                break;
            case LayerKind::flatten:
                y = x;
                y.shape = layer_output_shape(layer.spec, x.shape, i);
                break;
        }
        detail::check_finite(y, i);
        tr.acts.push_back(std::move(y));
    }
    return tr;
}

// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    Tensor<T> p = logits;
    const std::size_t n = logits.row_size();
    for (std::size_t m = 0; m < logits.dim(0); ++m) {
        T* r = p.row(m);
        T mx = r[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, r[j]);
        T sum = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            r[j] = std::exp(r[j] - mx);
            sum += r[j];
        }
        for (std::size_t j = 0; j < n; ++j) r[j] /= sum;
    }
    return p;
}

template <typename T>
struct ForwardResult {
    Tensor<T> logits;
    Tensor<T> probs;
};

template <typename T>
ForwardResult<T> forward(const Network<T>& net, const Tensor<T>& batch) {
    auto tr = forward_trace(net, batch);
    ForwardResult<T> out;
    out.logits = std::move(tr.acts.back());
    out.probs = softmax_rows(out.logits);
    return out;
}

// ---- backward ----------------------------------------------------------------

template <typename T>
struct ParamGrads {
    std::vector<Tensor<T>> weight;  // aligned with net.layers; empty for non-parametric layers
    std::vector<Tensor<T>> bias;
};

template <typename T>
ParamGrads<T> zero_grads(const Network<T>& net) {
    ParamGrads<T> g;
    g.weight.reserve(net.layers.size());
    g.bias.reserve(net.layers.size());
    for (const auto& l : net.layers) {
        g.weight.push_back(Tensor<T>::zeros_like(l.weight));
        g.bias.push_back(Tensor<T>::zeros_like(l.bias));
    }
    return g;
}

namespace detail {

template <typename T>
Tensor<T> affine_bwd(const Layer<T>& l, const Tensor<T>& x, const Tensor<T>& gy,
                     Tensor<T>* gw, Tensor<T>* gb) {
    const std::size_t mc = x.dim(0), in = l.spec.in_features, out = l.spec.out_features;
    Tensor<T> gx({mc, in});
    for (std::size_t m = 0; m < mc; ++m) {
        const T* gyr = gy.row(m);
        const T* xr = x.row(m);
        T* gxr = gx.row(m);
        for (std::size_t o = 0; o < out; ++o) {
            const T g = gyr[o];
            if (g == T(0)) continue;
            const T* wr = l.weight.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) gxr[i] += g * wr[i];
            if (gw) {
                T* gwr = gw->data() + o * in;
                for (std::size_t i = 0; i < in; ++i) gwr[i] += g * xr[i];
            }
            if (gb) (*gb)[o] += g;
        }
    }
    return gx;
}

template <typename T>
Tensor<T> conv2d_bwd(const Layer<T>& l, const Tensor<T>& x, const Tensor<T>& gy,
                     Tensor<T>* gw, Tensor<T>* gb) {
    const std::size_t mc = x.dim(0), ic = l.spec.in_channels, h = x.dim(2), w = x.dim(3);
    const std::size_t oc = l.spec.out_channels, kh = l.spec.kernel_h, kw = l.spec.kernel_w;
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    Tensor<T> gx(x.shape);
    for (std::size_t m = 0; m < mc; ++m) {
        const T* xm = x.row(m);
        const T* gym = gy.row(m);
        T* gxm = gx.row(m);
        for (std::size_t o = 0; o < oc; ++o) {
            const T* go = gym + o * oh * ow;
            if (gb) {
                T acc = T(0);
                for (std::size_t p = 0; p < oh * ow; ++p) acc += go[p];
                (*gb)[o] += acc;
            }
            for (std::size_t c = 0; c < ic; ++c) {
                const T* xc = xm + c * h * w;
                T* gxc = gxm + c * h * w;
                const T* wk = l.weight.data() + (o * ic + c) * kh * kw;
                T* gwk = gw ? gw->data() + (o * ic + c) * kh * kw : nullptr;
                for (std::size_t u = 0; u < kh; ++u) {
                    for (std::size_t v = 0; v < kw; ++v) {
                        const T wv = wk[u * kw + v];
                        T acc = T(0);
                        for (std::size_t r = 0; r < oh; ++r) {
                            const T* grow = go + r * ow;
                            const T* xrow = xc + (r + u) * w + v;
                            T* gxrow = gxc + (r + u) * w + v;
                            for (std::size_t s = 0; s < ow; ++s) {
                                const T g = grow[s];
                                gxrow[s] += g * wv;
                                acc += g * xrow[s];
                            }
                        }
                        if (gwk) gwk[u * kw + v] += acc;
                    }
                }
            }
        }
    }
    return gx;
}

} // namespace detail

// Backprop from dL/dlogits. Returns dL/dinput; accumulates parameter gradients
// (summed over the batch) into *pg when pg is non-null.
template <typename T>
Tensor<T> backward(const Network<T>& net, const ForwardTrace<T>& tr,
                   const Tensor<T>& grad_logits, ParamGrads<T>* pg) {
    if (!same_shape(grad_logits, tr.acts.back()))
        throw ConfigError("grad_logits shape " + shape_str(grad_logits.shape) +
                          " does not match logits shape " + shape_str(tr.acts.back().shape));
    Tensor<T> g = grad_logits;
    for (std::size_t ii = net.layers.size(); ii-- > 0;) {
        const auto& layer = net.layers[ii];
        const Tensor<T>& x = tr.acts[ii];
        Tensor<T>* gw = pg ? &pg->weight[ii] : nullptr;
        Tensor<T>* gb = pg ? &pg->bias[ii] : nullptr;
        switch (layer.spec.kind) {
            case LayerKind::affine:
                g = detail::affine_bwd(layer, x, g, gw, gb);
                break;
            case LayerKind::relu: {
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (x[i] <= T(0)) g[i] = T(0);  // subgradient 0 at the kink
                break;
            }
            case LayerKind::conv2d:
                g = detail::conv2d_bwd(layer, x, g, gw, gb);
                break;
            case LayerKind::maxpool2x2: {
                Tensor<T> gx(x.shape);
                const auto& amax = tr.pool_argmax[ii];
                for (std::size_t i = 0; i < g.size(); ++i) gx[amax[i]] += g[i];
                g = std::move(gx);
                break;
            }
            case LayerKind::flatten:
                g.shape = x.shape;
                break;
        }
    }
    return g;
}

// Objective over logits: fills per-sample losses, and dL/dlogits when grad != nullptr.
template <typename T>
using LogitObjective =
    std::function<void(const Tensor<T>& logits, std::vector<T>& loss, Tensor<T>* grad)>;

template <typename T>
Tensor<T> input_gradient(const Network<T>& net, const Tensor<T>& batch, const LogitObjective<T>& obj) {
    auto tr = forward_trace(net, batch);
    std::vector<T> loss;
    Tensor<T> gl(tr.acts.back().shape);
    obj(tr.acts.back(), loss, &gl);
    return backward(net, tr, gl, static_cast<ParamGrads<T>*>(nullptr));
}

template <typename T>
ParamGrads<T> param_gradient(const Network<T>& net, const Tensor<T>& batch, const LogitObjective<T>& obj) {
    auto tr = forward_trace(net, batch);
    std::vector<T> loss;
    Tensor<T> gl(tr.acts.back().shape);
    obj(tr.acts.back(), loss, &gl);
    auto pg = zero_grads(net);
    backward(net, tr, gl, &pg);
    return pg;
}

// ---- prediction & scoring ------------------------------------------------------

// Lowest index wins ties.
template <typename T>
int argmax_lowest(const T* row, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
        if (row[j] > row[best]) best = j;
    return static_cast<int>(best);
}

// Correct only if the true-class probability strictly beats every other class;
// a tie on the true class scores as a miss.
template <typename T>
bool scored_correct(const T* probs, std::size_t n, int y) {
    const T py = probs[static_cast<std::size_t>(y)];
    for (std::size_t j = 0; j < n; ++j)
        if (j != static_cast<std::size_t>(y) && probs[j] >= py) return false;
    return true;
}

template <typename T>
double accuracy(const Tensor<T>& probs, std::span<const int> labels) {
    const std::size_t m = probs.dim(0), n = probs.row_size();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < m; ++i)
        if (scored_correct(probs.row(i), n, labels[i])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(m);
}

} // namespace advkit
