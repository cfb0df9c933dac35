#pragma once

#include "advkit/network.hpp"

namespace advkit {

// Momentum buffers, one per parameter tensor.
template <typename T>
struct SgdState {
    std::vector<Tensor<T>> vel_w;
    std::vector<Tensor<T>> vel_b;
};

template <typename T>
SgdState<T> make_sgd_state(const Network<T>& net) {
    SgdState<T> s;
    for (const auto& l : net.layers) {
        s.vel_w.push_back(Tensor<T>::zeros_like(l.weight));
        s.vel_b.push_back(Tensor<T>::zeros_like(l.bias));
    }
    return s;
}

// Classic momentum SGD: v = mu*v + (g + wd*theta); theta -= lr*v.
template <typename T>
void sgd_step(Network<T>& net, const ParamGrads<T>& grads, SgdState<T>& state,
              T lr, T momentum, T weight_decay) {
    if (grads.weight.size() != net.layers.size())
        throw ConfigError("gradient count does not match layer count");
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        auto& layer = net.layers[li];
        if (layer.weight.size() != grads.weight[li].size() || layer.bias.size() != grads.bias[li].size())
            throw ConfigError("gradient shape mismatch at layer " + std::to_string(li));
        auto update = [&](Tensor<T>& theta, const Tensor<T>& g, Tensor<T>& v) {
            for (std::size_t i = 0; i < theta.size(); ++i) {
                T gi = g[i] + weight_decay * theta[i];
                v[i] = momentum * v[i] + gi;
                theta[i] -= lr * v[i];
            }
        };
        update(layer.weight, grads.weight[li], state.vel_w[li]);
        update(layer.bias, grads.bias[li], state.vel_b[li]);
    }
}

template <typename T>
void accumulate(ParamGrads<T>& into, const ParamGrads<T>& other) {
    for (std::size_t li = 0; li < into.weight.size(); ++li) {
        for (std::size_t i = 0; i < into.weight[li].size(); ++i)
            into.weight[li][i] += other.weight[li][i];
        for (std::size_t i = 0; i < into.bias[li].size(); ++i)
            into.bias[li][i] += other.bias[li][i];
    }
}

} // namespace advkit
