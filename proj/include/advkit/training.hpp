#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "advkit/attacks.hpp"
#include "advkit/losses.hpp"
#include "advkit/network.hpp"
#include "advkit/sgd.hpp"

namespace advkit::training {

enum class Regime { standard, fgsm_at, rfgsm_at, gat };

inline const char* regime_name(Regime r) {
    switch (r) {
        case Regime::standard: return "standard";
        case Regime::fgsm_at: return "fgsm-at";
        case Regime::rfgsm_at: return "rfgsm-at";
        case Regime::gat: return "gat";
    }
    return "?";
}

inline std::optional<Regime> regime_from_name(const std::string& s) {
    for (Regime r : {Regime::standard, Regime::fgsm_at, Regime::rfgsm_at, Regime::gat})
        if (s == regime_name(r)) return r;
    return std::nullopt;
}

template <typename T>
struct LrSchedule {
    T initial = T(0.01);
    std::vector<std::pair<int, T>> drops;  // (1-based epoch, divide-by), applied from that epoch on

    T at(int epoch) const {
        T lr = initial;
        for (const auto& [e, d] : drops)
            if (epoch >= e) lr /= d;
        return lr;
    }
};

template <typename T>
struct GatConfig {
    T epsilon = T(0.3);
    T alpha = T(0.3);                  // initial Bernoulli noise magnitude
    T lambda_init = T(15);
    T stepup_factor = T(3);
    std::vector<int> stepup_epochs;    // must coincide with lr-drop epochs
    int epochs = 16;
    int batch_size = 64;
    LrSchedule<T> lr;
    T momentum = T(0.9);
    T weight_decay = T(5e-4);
    bool alternate_lambda = true;      // lambda = 0 for attack generation on odd minibatches
    std::uint64_t seed = 0;
    bool allow_alpha_above_epsilon = false;
    int val_pgd_steps = 7;             // per-epoch robustness diagnostic
};

struct EpochStats {
    int epoch = 0;
    double clean_acc = 0, fgsm_acc = 0, pgd_acc = 0;
    double ce_clean = 0, ce_adv = 0;
    double lambda = 0;
    double lr = 0;
    // catastrophic-overfitting monitor: CE on single-step vs multi-step validation adversaries
    double ce_fgsm_val = 0, ce_pgd_val = 0;

    double overfit_gap() const { return std::abs(ce_fgsm_val - ce_pgd_val); }
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    std::string checkpoint_path;  // filled by callers that persist the model
};

template <typename T>
void validate_config(const GatConfig<T>& cfg) {
    if (cfg.epsilon < T(0)) throw ConfigError("epsilon must be nonnegative");
    if (cfg.alpha < T(0)) throw ConfigError("alpha must be nonnegative");
    if (cfg.alpha > cfg.epsilon && !cfg.allow_alpha_above_epsilon)
        throw ConfigError("alpha above epsilon requires allow_alpha_above_epsilon");
    if (cfg.lambda_init < T(0)) throw ConfigError("lambda must be nonnegative");
    if (cfg.stepup_factor < T(1)) throw ConfigError("step-up factor must be >= 1");
    if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("epochs and batch size must be positive");
    for (int e : cfg.stepup_epochs) {
        bool on_drop = false;
        for (const auto& [de, _] : cfg.lr.drops) on_drop |= (de == e);
        if (!on_drop)
            throw ConfigError("lambda step-up epoch " + std::to_string(e) +
                              " does not coincide with an lr drop");
    }
}

// lambda in force during a given 1-based epoch
template <typename T>
T lambda_at_epoch(const GatConfig<T>& cfg, int epoch) {
    T lam = cfg.lambda_init;
    for (int e : cfg.stepup_epochs)
        if (epoch >= e) lam *= cfg.stepup_factor;
    return lam;
}

// ---- single-step adversary generation (Alg: noise, one eps-step on the guided
// cross-entropy loss, ball projection, image clamp) --------------------------------

template <typename T>
Tensor<T> gat_attack_step(const Network<T>& net, const Tensor<T>& images,
                          std::span<const int> labels, T epsilon, T alpha, T lambda,
                          bool parity_even, std::uint64_t seed, std::uint64_t stream) {
    const std::size_t mc = images.dim(0), rs = images.row_size();
    Tensor<T> delta(images.shape);
    for (std::size_t m = 0; m < mc; ++m) {
        auto rng = sample_stream(seed, stream, m);
        T* d = delta.row(m);
        for (std::size_t i = 0; i < rs; ++i) d[i] = bernoulli_pm(rng, alpha);
    }

    const T lam_attack = parity_even ? lambda : T(0);
    losses::LossSpec<T> spec;
    spec.kind = losses::LossKind::ga_ce;
    spec.lambda = lam_attack;
    if (lam_attack > T(0)) spec.reference_probs = forward(net, images).probs;  // clean reference
    else spec.kind = losses::LossKind::cross_entropy;

    Tensor<T> x_noised = attacks::detail::add(images, delta);
    Tensor<T> gin = input_gradient(
        net, x_noised, losses::make_objective(spec, std::vector<int>(labels.begin(), labels.end())));

    for (std::size_t i = 0; i < delta.size(); ++i)
        delta[i] = clamp_to(delta[i] + epsilon * static_cast<T>(sign_of(gin[i])),
                            -epsilon, epsilon);
    attacks::detail::clamp_image(delta, images);
    return attacks::detail::add(images, delta);
}

// ---- training loop -----------------------------------------------------------------

namespace detail {

template <typename T>
void gather(const Tensor<T>& images, const std::vector<int>& labels,
            std::span<const std::size_t> idx, Tensor<T>& out_images, std::vector<int>& out_labels) {
    std::vector<std::size_t> shape = images.shape;
    shape[0] = idx.size();
    out_images = Tensor<T>(shape);
    out_labels.resize(idx.size());
    const std::size_t rs = images.row_size();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy(images.row(idx[i]), images.row(idx[i]) + rs, out_images.row(i));
        out_labels[i] = labels[idx[i]];
    }
}

// dL/dp pushed through the softmax jacobian, added into g
template <typename T>
void add_through_softmax(const T* p, const T* dp, std::size_t n, T scale, T* g) {
    T dot = T(0);
    for (std::size_t j = 0; j < n; ++j) dot += dp[j] * p[j];
    for (std::size_t j = 0; j < n; ++j) g[j] += scale * p[j] * (dp[j] - dot);
}

template <typename T>
double mean_ce_from_probs(const Tensor<T>& probs, std::span<const int> labels) {
    double s = 0;
    const std::size_t n = probs.row_size();
    for (std::size_t m = 0; m < probs.dim(0); ++m)
        s += static_cast<double>(losses::cross_entropy(std::span<const T>(probs.row(m), n), labels[m]));
    return s / static_cast<double>(probs.dim(0));
}

// unfloored stable logsumexp form, so divergence is visible
template <typename T>
double mean_ce_from_logits(const Tensor<T>& logits, std::span<const int> labels) {
    double s = 0;
    const std::size_t n = logits.row_size();
    for (std::size_t m = 0; m < logits.dim(0); ++m) {
        const T* z = logits.row(m);
        double mx = z[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(z[j]));
        double sum = 0;
        for (std::size_t j = 0; j < n; ++j) sum += std::exp(static_cast<double>(z[j]) - mx);
        s += mx + std::log(sum) - static_cast<double>(z[labels[m]]);
    }
    return s / static_cast<double>(logits.dim(0));
}

} // namespace detail

// Trains in place over cfg.epochs; per-epoch diagnostics are computed on the given
// validation split with the training epsilon.
template <typename T>
TrainReport train(Network<T>& net, const Tensor<T>& train_images, const std::vector<int>& train_labels,
                  const Tensor<T>& val_images, const std::vector<int>& val_labels,
                  const GatConfig<T>& cfg, Regime regime) {
    validate_config(cfg);
    const std::size_t n_train = train_images.dim(0);
    if (train_labels.size() != n_train) throw ConfigError("training labels do not match images");
    const std::size_t n_cls = static_cast<std::size_t>(net.num_classes);

    SgdState<T> opt = make_sgd_state(net);
    TrainReport report;
    std::uint64_t global_step = 0;

    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const T lr = cfg.lr.at(epoch);
        const T lam = lambda_at_epoch(cfg, epoch);

        auto shuffle_rng = sample_stream(cfg.seed, 0x5f0f, static_cast<std::uint64_t>(epoch));
        for (std::size_t i = n_train; i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng() % i]);

        double ce_clean_sum = 0, ce_adv_sum = 0;
        std::size_t seen = 0, adv_seen = 0;

        Tensor<T> bx;
        std::vector<int> by;
        for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
            const std::size_t end = std::min(n_train, start + cfg.batch_size);
            detail::gather(train_images, train_labels,
                           std::span<const std::size_t>(order.data() + start, end - start), bx, by);
            const std::size_t m = bx.dim(0);
            const T inv_m = T(1) / static_cast<T>(m);

            // adversarial batch under the current parameters
            Tensor<T> bx_adv;
            switch (regime) {
                case Regime::standard:
                    break;
                case Regime::fgsm_at:
                    bx_adv = attacks::fgsm(net, bx, by, cfg.epsilon).adversarial;
                    break;
                case Regime::rfgsm_at: {
                    // alpha noise then an (eps - alpha) step; projection is a no-op
                    auto res = attacks::rfgsm(net, bx, by, cfg.epsilon, cfg.alpha,
                                              cfg.epsilon - cfg.alpha,
                                              losses::LossKind::cross_entropy,
                                              mix_seed(cfg.seed, 0xf65a, global_step),
                                              /*restart_index=*/0);
                    bx_adv = std::move(res.adversarial);
                    break;
                }
                case Regime::gat: {
                    const bool parity_even = !cfg.alternate_lambda || (global_step % 2 == 0);
                    bx_adv = gat_attack_step(net, bx, std::span<const int>(by), cfg.epsilon,
                                             cfg.alpha, lam, parity_even, cfg.seed, global_step);
                    break;
                }
            }

            auto tr_c = forward_trace(net, bx);
            Tensor<T> p_c = softmax_rows(tr_c.acts.back());

            // fused softmax-CE seed on the clean batch, scaled by 1/M
            Tensor<T> grad_c(tr_c.acts.back().shape);
            for (std::size_t i = 0; i < m; ++i) {
                T* g = grad_c.row(i);
                const T* p = p_c.row(i);
                for (std::size_t j = 0; j < n_cls; ++j) g[j] = p[j] * inv_m;
                g[by[i]] -= inv_m;
            }

            double batch_loss = detail::mean_ce_from_logits(tr_c.acts.back(), by);
            ce_clean_sum += batch_loss * static_cast<double>(m);
            seen += m;

            ForwardTrace<T> tr_a;
            Tensor<T> p_a, grad_a;
            if (regime != Regime::standard) {
                tr_a = forward_trace(net, bx_adv);
                p_a = softmax_rows(tr_a.acts.back());
                grad_a = Tensor<T>(tr_a.acts.back().shape);

                if (regime == Regime::gat) {
                    // lambda * ||p_adv - p_clean||^2, differentiated through both passes
                    std::vector<T> dp(n_cls);
                    double relax_sum = 0;
                    for (std::size_t i = 0; i < m; ++i) {
                        const T* pa = p_a.row(i);
                        const T* pc = p_c.row(i);
                        T s2 = T(0);
                        for (std::size_t j = 0; j < n_cls; ++j) {
                            dp[j] = T(2) * lam * (pa[j] - pc[j]);
                            s2 += (pa[j] - pc[j]) * (pa[j] - pc[j]);
                        }
                        relax_sum += static_cast<double>(lam * s2);
                        detail::add_through_softmax(pa, dp.data(), n_cls, inv_m, grad_a.row(i));
                        for (std::size_t j = 0; j < n_cls; ++j) dp[j] = -dp[j];
                        detail::add_through_softmax(pc, dp.data(), n_cls, inv_m, grad_c.row(i));
                    }
                    batch_loss += relax_sum / static_cast<double>(m);
                } else {
                    // CE on the adversarial batch
                    for (std::size_t i = 0; i < m; ++i) {
                        T* g = grad_a.row(i);
                        const T* p = p_a.row(i);
                        for (std::size_t j = 0; j < n_cls; ++j) g[j] = p[j] * inv_m;
                        g[by[i]] -= inv_m;
                    }
                    batch_loss += detail::mean_ce_from_logits(tr_a.acts.back(), by);
                }
                ce_adv_sum += detail::mean_ce_from_logits(tr_a.acts.back(), by) * static_cast<double>(m);
                adv_seen += m;
            }

            ParamGrads<T> grads = zero_grads(net);
            backward(net, tr_c, grad_c, &grads);
            if (regime != Regime::standard) backward(net, tr_a, grad_a, &grads);

            if (!std::isfinite(batch_loss) || batch_loss > 1e3)
                throw NumericError("training diverged at epoch " + std::to_string(epoch));

            sgd_step(net, grads, opt, lr, cfg.momentum, cfg.weight_decay);
            ++global_step;
        }

        // validation diagnostics
        EpochStats st;
        st.epoch = epoch;
        st.lambda = static_cast<double>(lam);
        st.lr = static_cast<double>(lr);
        st.ce_clean = ce_clean_sum / static_cast<double>(seen);
        st.ce_adv = adv_seen ? ce_adv_sum / static_cast<double>(adv_seen)
                             : std::numeric_limits<double>::quiet_NaN();

        auto val_fwd = forward(net, val_images);
        st.clean_acc = accuracy(val_fwd.probs, std::span<const int>(val_labels));

        auto fg = attacks::fgsm(net, val_images, std::span<const int>(val_labels), cfg.epsilon);
        auto fg_probs = forward(net, fg.adversarial).probs;
        st.fgsm_acc = accuracy(fg_probs, std::span<const int>(val_labels));
        st.ce_fgsm_val = detail::mean_ce_from_probs(fg_probs, std::span<const int>(val_labels));

        auto pgd_cfg = attacks::preset_pgd(cfg.epsilon, cfg.val_pgd_steps, losses::LossKind::cross_entropy);
        pgd_cfg.seed = mix_seed(cfg.seed, 0xe7a1, static_cast<std::uint64_t>(epoch));
        auto pg = attacks::pgd_baseline(net, val_images, std::span<const int>(val_labels), pgd_cfg);
        auto pg_probs = forward(net, pg.adversarial).probs;
        st.pgd_acc = accuracy(pg_probs, std::span<const int>(val_labels));
        st.ce_pgd_val = detail::mean_ce_from_probs(pg_probs, std::span<const int>(val_labels));

        report.epochs.push_back(st);
    }
    return report;
}

// Named regimes per the external interface.
template <typename T>
TrainReport gat_train(Network<T>& net, const Tensor<T>& tx, const std::vector<int>& ty,
                      const Tensor<T>& vx, const std::vector<int>& vy, const GatConfig<T>& cfg) {
    return train(net, tx, ty, vx, vy, cfg, Regime::gat);
}

template <typename T>
TrainReport fgsm_at(Network<T>& net, const Tensor<T>& tx, const std::vector<int>& ty,
                    const Tensor<T>& vx, const std::vector<int>& vy, const GatConfig<T>& cfg) {
    return train(net, tx, ty, vx, vy, cfg, Regime::fgsm_at);
}

template <typename T>
TrainReport rfgsm_at(Network<T>& net, const Tensor<T>& tx, const std::vector<int>& ty,
                     const Tensor<T>& vx, const std::vector<int>& vy, const GatConfig<T>& cfg) {
    return train(net, tx, ty, vx, vy, cfg, Regime::rfgsm_at);
}

template <typename T>
TrainReport standard_train(Network<T>& net, const Tensor<T>& tx, const std::vector<int>& ty,
                           const Tensor<T>& vx, const std::vector<int>& vy, const GatConfig<T>& cfg) {
    return train(net, tx, ty, vx, vy, cfg, Regime::standard);
}

// ---- presets --------------------------------------------------------------------

// MNIST-style: full-magnitude noise, lambda 15 stepped up 3x at each of three lr
// drops, lr 0.01 divided by 5 at regular intervals.
template <typename T>
GatConfig<T> preset_gat_mnist(T epsilon, int epochs = 16, std::uint64_t seed = 0) {
    GatConfig<T> cfg;
    cfg.epsilon = epsilon;
    cfg.alpha = epsilon;
    cfg.lambda_init = T(15);
    cfg.stepup_factor = T(3);
    cfg.epochs = epochs;
    cfg.lr.initial = T(0.01);
    int d1 = epochs / 2, d2 = epochs * 5 / 8, d3 = epochs * 3 / 4;
    cfg.lr.drops = {{d1, T(5)}, {d2, T(5)}, {d3, T(5)}};
    cfg.stepup_epochs = {d1, d2, d3};
    cfg.seed = seed;
    return cfg;
}

// CIFAR-style: half-magnitude noise, lambda 10 stepped up 4x at the second lr drop,
// lr 0.1 divided by 10 twice.
template <typename T>
GatConfig<T> preset_gat_cifar(T epsilon, int epochs = 16, std::uint64_t seed = 0) {
    GatConfig<T> cfg;
    cfg.epsilon = epsilon;
    cfg.alpha = epsilon / T(2);
    cfg.lambda_init = T(10);
    cfg.stepup_factor = T(4);
    cfg.epochs = epochs;
    cfg.lr.initial = T(0.1);
    int d1 = epochs * 7 / 10, d2 = epochs * 17 / 20;
    if (d2 <= d1) d2 = d1 + 1;
    cfg.lr.drops = {{d1, T(10)}, {d2, T(10)}};
    cfg.stepup_epochs = {d2};
    cfg.seed = seed;
    return cfg;
}

} // namespace advkit::training
