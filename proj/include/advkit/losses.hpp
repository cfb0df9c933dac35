#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advkit/network.hpp"

namespace advkit::losses {

enum class LossKind {
    cross_entropy,
    margin_prob,
    margin_logit,
    gama,
    ga_ce,
    targeted_margin,
    l2_prob_sq,
};

inline const char* loss_name(LossKind k) {
    switch (k) {
        case LossKind::cross_entropy: return "ce";
        case LossKind::margin_prob: return "margin-prob";
        case LossKind::margin_logit: return "margin-logit";
        case LossKind::gama: return "gama";
        case LossKind::ga_ce: return "ga-ce";
        case LossKind::targeted_margin: return "targeted-margin";
        case LossKind::l2_prob_sq: return "l2-prob-sq";
    }
    return "?";
}

inline std::optional<LossKind> loss_from_name(const std::string& s) {
    for (LossKind k : {LossKind::cross_entropy, LossKind::margin_prob, LossKind::margin_logit,
                       LossKind::gama, LossKind::ga_ce, LossKind::targeted_margin,
                       LossKind::l2_prob_sq})
        if (s == loss_name(k)) return k;
    return std::nullopt;
}

inline bool needs_reference(LossKind k) {
    return k == LossKind::gama || k == LossKind::ga_ce || k == LossKind::l2_prob_sq;
}

template <typename T>
struct LossSpec {
    LossKind kind = LossKind::cross_entropy;
    T lambda = T(0);                             // relaxation weight (gama / ga-ce / l2-prob-sq)
    int target_class = -1;                       // targeted-margin
    Tensor<T> reference_probs;                   // [M,N] clean softmax rows, fixed constants
};

// ---- per-sample values in probability/logit space ----------------------------

namespace detail {

constexpr double LOG_FLOOR = 1e-12;

template <typename T>
void check_label(int y, std::size_t n) {
    if (y < 0 || static_cast<std::size_t>(y) >= n)
        throw ConfigError("label " + std::to_string(y) + " out of range for " +
                          std::to_string(n) + " classes");
}

// argmax over j != y, lowest index on ties
template <typename T>
std::size_t best_competitor(std::span<const T> v, int y) {
    if (v.size() < 2) throw ConfigError("margin losses need at least 2 classes");
    std::size_t best = (y == 0) ? 1 : 0;
    for (std::size_t j = 0; j < v.size(); ++j)
        if (j != static_cast<std::size_t>(y) && v[j] > v[best]) best = j;
    return best;
}

} // namespace detail

template <typename T>
T sq_l2_dist(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) throw ConfigError("probability vector length mismatch");
    T s = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        T d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

template <typename T>
T cross_entropy(std::span<const T> probs, int y) {
    detail::check_label<T>(y, probs.size());
    return -std::log(std::max(probs[static_cast<std::size_t>(y)], static_cast<T>(detail::LOG_FLOOR)));
}

template <typename T>
T margin_prob(std::span<const T> probs, int y) {
    detail::check_label<T>(y, probs.size());
    std::size_t j = detail::best_competitor(probs, y);
    return probs[j] - probs[static_cast<std::size_t>(y)];
}

template <typename T>
T margin_logit(std::span<const T> logits, int y) {
    detail::check_label<T>(y, logits.size());
    std::size_t j = detail::best_competitor(logits, y);
    return logits[j] - logits[static_cast<std::size_t>(y)];
}

// margin plus lambda-weighted squared l2 between probability vectors; the
// relaxation branch is skipped entirely at lambda == 0 so the reduction to
// margin_prob is bitwise.
template <typename T>
T gama_loss(std::span<const T> probs_adv, int y, std::span<const T> probs_clean, T lambda) {
    if (lambda < T(0)) throw ConfigError("lambda must be nonnegative");
    T v = margin_prob(probs_adv, y);
    if (lambda != T(0)) v += lambda * sq_l2_dist(probs_adv, probs_clean);
    return v;
}

template <typename T>
T ga_ce_loss(std::span<const T> probs_adv, std::span<const T> logits_adv, int y,
             std::span<const T> probs_clean, T lambda) {
    if (lambda < T(0)) throw ConfigError("lambda must be nonnegative");
    detail::check_label<T>(y, logits_adv.size());
    // stable CE from logits
    T mx = logits_adv[0];
    for (T z : logits_adv) mx = std::max(mx, z);
    T s = T(0);
    for (T z : logits_adv) s += std::exp(z - mx);
    T v = mx + std::log(s) - logits_adv[static_cast<std::size_t>(y)];
    if (lambda != T(0)) v += lambda * sq_l2_dist(probs_adv, probs_clean);
    return v;
}

template <typename T>
T targeted_margin(std::span<const T> probs, int y, int target) {
    detail::check_label<T>(y, probs.size());
    detail::check_label<T>(target, probs.size());
    if (target == y) throw ConfigError("target class must differ from the true label");
    return probs[static_cast<std::size_t>(target)] - probs[static_cast<std::size_t>(y)];
}

// ---- logit-space evaluation with gradients -------------------------------------
//
// The cross-entropy term differentiates through the fused softmax-CE form; margin,
// targeted and relaxation terms differentiate through the explicit softmax.
// `targets`, when non-empty, replaces the margin term of gama/targeted kinds with a
// per-sample targeted margin (used by the multi-targeted attack).

template <typename T>
void eval_loss(const Tensor<T>& logits, std::span<const int> labels, const LossSpec<T>& spec,
               std::vector<T>& loss_out, Tensor<T>* grad_logits,
               std::span<const int> targets = {}) {
    const std::size_t mc = logits.dim(0), n = logits.row_size();
    if (labels.size() != mc) throw ConfigError("label count does not match batch size");
    if (spec.lambda < T(0)) throw ConfigError("lambda must be nonnegative");
    const bool relax = needs_reference(spec.kind);
    if (relax) {
        if (spec.reference_probs.size() == 0)
            throw ConfigError(std::string(loss_name(spec.kind)) + " needs reference probabilities");
        if (spec.reference_probs.dim(0) != mc || spec.reference_probs.row_size() != n)
            throw ConfigError("reference probability shape mismatch");
    }
    if (!targets.empty() && targets.size() != mc)
        throw ConfigError("target count does not match batch size");

    loss_out.assign(mc, T(0));
    if (grad_logits) {
        grad_logits->shape = logits.shape;
        grad_logits->values.assign(logits.size(), T(0));
    }

    std::vector<T> p(n), dp(n);
    for (std::size_t m = 0; m < mc; ++m) {
        const T* z = logits.row(m);
        const int y = labels[m];
        detail::check_label<T>(y, n);
        T* g = grad_logits ? grad_logits->row(m) : nullptr;

        if (spec.kind == LossKind::margin_logit) {
            std::size_t j = detail::best_competitor(std::span<const T>(z, n), y);
            loss_out[m] = z[j] - z[y];
            if (g) {
                g[j] += T(1);
                g[y] -= T(1);
            }
            continue;
        }

        // softmax of this row (max-subtracted) plus logsumexp for the CE term
        T mx = z[0];
        for (std::size_t jj = 1; jj < n; ++jj) mx = std::max(mx, z[jj]);
        T sum = T(0);
        for (std::size_t jj = 0; jj < n; ++jj) {
            p[jj] = std::exp(z[jj] - mx);
            sum += p[jj];
        }
        for (std::size_t jj = 0; jj < n; ++jj) p[jj] /= sum;

        T loss = T(0);
        std::fill(dp.begin(), dp.end(), T(0));  // dL/dp, mapped through the softmax at the end
        bool use_dp = false;

        const bool has_ce = spec.kind == LossKind::cross_entropy || spec.kind == LossKind::ga_ce;
        if (has_ce) {
            loss += mx + std::log(sum) - z[y];
            if (g) {
                for (std::size_t jj = 0; jj < n; ++jj) g[jj] += p[jj];
                g[y] -= T(1);
            }
        }

        int tgt = targets.empty() ? spec.target_class : targets[m];
        switch (spec.kind) {
            case LossKind::margin_prob:
            case LossKind::gama: {
                if (!targets.empty()) {
                    detail::check_label<T>(tgt, n);
                    if (tgt == y) throw ConfigError("target class must differ from the true label");
                    loss += p[tgt] - p[y];
                    dp[tgt] += T(1);
                    dp[y] -= T(1);
                } else {
                    std::size_t j = detail::best_competitor(std::span<const T>(p.data(), n), y);
                    loss += p[j] - p[y];
                    dp[j] += T(1);
                    dp[y] -= T(1);
                }
                use_dp = true;
                break;
            }
            case LossKind::targeted_margin: {
                detail::check_label<T>(tgt, n);
                if (tgt == y) throw ConfigError("target class must differ from the true label");
                loss += p[tgt] - p[y];
                dp[tgt] += T(1);
                dp[y] -= T(1);
                use_dp = true;
                break;
            }
            default:
                break;
        }

        if (relax && spec.lambda != T(0)) {
            const T* ref = spec.reference_probs.row(m);
            T s2 = T(0);
            for (std::size_t jj = 0; jj < n; ++jj) {
                T d = p[jj] - ref[jj];
                s2 += d * d;
                dp[jj] += T(2) * spec.lambda * d;
            }
            loss += spec.lambda * s2;
            use_dp = true;
        }

        if (g && use_dp) {
            // softmax jacobian: dL/dz_k = p_k * (dp_k - <dp, p>)
            T dot = T(0);
            for (std::size_t jj = 0; jj < n; ++jj) dot += dp[jj] * p[jj];
            for (std::size_t jj = 0; jj < n; ++jj) g[jj] += p[jj] * (dp[jj] - dot);
        }
        loss_out[m] = loss;
    }
}

// Adapter for the engine's gradient entry points. Copies the labels and spec so the
// returned callable owns everything it needs.
template <typename T>
LogitObjective<T> make_objective(LossSpec<T> spec, std::vector<int> labels,
                                 std::vector<int> targets = {}) {
    return [spec = std::move(spec), labels = std::move(labels), targets = std::move(targets)](
               const Tensor<T>& logits, std::vector<T>& loss, Tensor<T>* grad) {
        eval_loss(logits, std::span<const int>(labels), spec, loss, grad,
                  std::span<const int>(targets));
    };
}

} // namespace advkit::losses
