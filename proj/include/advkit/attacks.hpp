#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advkit/losses.hpp"
#include "advkit/network.hpp"
#include "advkit/rng.hpp"

namespace advkit::attacks {

enum class AttackMode { pgd, fw };
enum class InitNoise { bernoulli, uniform, zero };

constexpr double BALL_TOL = 1e-12;

template <typename T>
struct AttackConfig {
    T epsilon = T(0.3);
    int steps = 100;
    AttackMode mode = AttackMode::pgd;
    T step_size = T(0);                 // pgd step (eta)
    T fw_gamma = T(0.5);                // fw convex parameter
    T lambda0 = T(0);                   // initial relaxation weight
    int tau = 1;                        // relaxation decay steps
    std::vector<int> drop_steps;        // iterations after which the step size divides
    T drop_factor = T(10);
    InitNoise init = InitNoise::bernoulli;
    losses::LossKind loss = losses::LossKind::cross_entropy;  // baseline PGD / fgsm loss
    int restarts = 1;
    std::uint64_t seed = 0;
    int restart_index = 0;              // rng stream slot of this particular run
    T rfgsm_alpha = T(0);               // rfgsm initial noise magnitude
    int targets_k = 5;                  // gama-mt target count
    bool record_trace = false;
};

template <typename T>
struct AttackResult {
    Tensor<T> adversarial;                   // [M, ...] in [0,1]
    std::vector<std::uint8_t> success;       // per sample, ties count for the attacker
    std::vector<T> final_margin;             // margin_prob at the returned adversary
    // populated when record_trace is set:
    std::vector<std::vector<T>> loss_trace;  // [M][steps] attack loss per iteration
    std::vector<T> best_margin;              // best margin over feasible iterates
    Tensor<T> best_adversarial;              // the corresponding iterate
};

// ---- primitive operations -----------------------------------------------------

// Each coordinate independently +eps or -eps.
template <typename T>
Tensor<T> bernoulli_init(const std::vector<std::size_t>& shape, T epsilon, std::mt19937_64& rng) {
    Tensor<T> t(shape);
    for (auto& v : t.values) v = bernoulli_pm(rng, epsilon);
    return t;
}

// Relaxation weight after t decrements: max(lambda0 - t*lambda0/tau, 0).
template <typename T>
T lambda_schedule(T lambda0, int tau, int t) {
    if (tau < 1) throw ConfigError("tau must be positive");
    if (t >= tau) return T(0);
    T v = lambda0 - static_cast<T>(t) * (lambda0 / static_cast<T>(tau));
    return v > T(0) ? v : T(0);
}

// delta' = clamp(delta + eta*sign(grad), -eps, eps), elementwise; sign(0) = 0.
template <typename T>
void pgd_update(Tensor<T>& delta, const Tensor<T>& grad, T eta, T epsilon) {
    if (!same_shape(delta, grad)) throw ConfigError("pgd_update shape mismatch");
    for (std::size_t i = 0; i < delta.size(); ++i) {
        T v = delta[i] + eta * static_cast<T>(sign_of(grad[i]));
        delta[i] = clamp_to(v, -epsilon, epsilon);
    }
}

// delta' = (1-gamma)*delta + gamma*eps*sign(grad); stays in the ball by convexity.
template <typename T>
void fw_update(Tensor<T>& delta, const Tensor<T>& grad, T gamma, T epsilon) {
    if (!same_shape(delta, grad)) throw ConfigError("fw_update shape mismatch");
    for (std::size_t i = 0; i < delta.size(); ++i) {
        delta[i] = (T(1) - gamma) * delta[i] + gamma * epsilon * static_cast<T>(sign_of(grad[i]));
        if (std::abs(delta[i]) > epsilon + static_cast<T>(BALL_TOL))
            throw NumericError("fw iterate left the epsilon ball");
    }
}

// ---- shared helpers -------------------------------------------------------------

namespace detail {

inline std::uint64_t stream_slot(int restart_index, int run_index) {
    return static_cast<std::uint64_t>(restart_index) * 256 + static_cast<std::uint64_t>(run_index);
}

template <typename T>
void validate_common(const AttackConfig<T>& cfg, const Tensor<T>& images) {
    if (cfg.epsilon < T(0)) throw ConfigError("epsilon must be nonnegative");
    if (cfg.steps < 1) throw ConfigError("attack needs at least one step");
    if (cfg.tau < 1 || cfg.tau > cfg.steps) throw ConfigError("tau must satisfy 1 <= tau <= steps");
    if (cfg.fw_gamma <= T(0) || cfg.fw_gamma > T(1)) throw ConfigError("gamma must lie in (0,1]");
    if (cfg.drop_factor <= T(1)) throw ConfigError("drop factor must exceed 1");
    for (int s : cfg.drop_steps)
        if (s < 0 || s >= cfg.steps) throw ConfigError("schedule step outside [0, steps)");
    if (images.rank() < 2) throw ConfigError("images must have shape [M, ...]");
}

template <typename T>
Tensor<T> init_delta(const Tensor<T>& images, const AttackConfig<T>& cfg, int run_index) {
    Tensor<T> delta(images.shape);
    if (cfg.init == InitNoise::zero) return delta;
    const std::size_t rs = images.row_size();
    for (std::size_t m = 0; m < images.dim(0); ++m) {
        auto rng = sample_stream(cfg.seed, stream_slot(cfg.restart_index, run_index), m);
        T* d = delta.row(m);
        if (cfg.init == InitNoise::bernoulli) {
            for (std::size_t i = 0; i < rs; ++i) d[i] = bernoulli_pm(rng, cfg.epsilon);
        } else {
            for (std::size_t i = 0; i < rs; ++i) d[i] = uniform_in(rng, -cfg.epsilon, cfg.epsilon);
        }
    }
    return delta;
}

// delta <- clamp(x + delta, 0, 1) - x
template <typename T>
void clamp_image(Tensor<T>& delta, const Tensor<T>& x) {
    for (std::size_t i = 0; i < delta.size(); ++i)
        delta[i] = clamp01(x[i] + delta[i]) - x[i];
}

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& delta) {
    Tensor<T> out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += delta[i];
    return out;
}

template <typename T>
void score_result(const Network<T>& net, const Tensor<T>& x_adv, std::span<const int> labels,
                  AttackResult<T>& res) {
    auto fwd = forward(net, x_adv);
    const std::size_t mc = x_adv.dim(0), n = fwd.probs.row_size();
    res.adversarial = x_adv;
    res.success.resize(mc);
    res.final_margin.resize(mc);
    for (std::size_t m = 0; m < mc; ++m) {
        res.final_margin[m] =
            losses::margin_prob(std::span<const T>(fwd.probs.row(m), n), labels[m]);
        res.success[m] = !scored_correct(fwd.probs.row(m), n, labels[m]);
    }
}

} // namespace detail

// ---- GAMA (relaxed margin attack, PGD or Frank-Wolfe mode) ----------------------
//
// Loop shape: evaluate the relaxed margin loss at the current iterate, decay the
// relaxation weight linearly to zero over tau steps, take the mode-specific update,
// clamp the image to [0,1], and divide the step size at the scheduled iterations.
// The relaxation reference is the softmax of the noise-added start point, held fixed.
// When `targets` is given (multi-targeted runs) the margin term is targeted instead.

template <typename T>
AttackResult<T> gama_run(const Network<T>& net, const Tensor<T>& images, std::span<const int> labels,
                         const AttackConfig<T>& cfg, int run_index,
                         std::span<const int> targets = {}) {
    detail::validate_common(cfg, images);
    if (cfg.lambda0 < T(0)) throw ConfigError("lambda0 must be nonnegative");
    const std::size_t mc = images.dim(0);
    if (labels.size() != mc) throw ConfigError("label count does not match batch size");

    Tensor<T> delta = detail::init_delta(images, cfg, run_index);

    losses::LossSpec<T> spec;
    if (cfg.lambda0 > T(0)) {
        spec.kind = losses::LossKind::gama;
        Tensor<T> x0 = detail::add(images, delta);  // reference point includes the init noise
        spec.reference_probs = forward(net, x0).probs;
    } else {
        spec.kind = targets.empty() ? losses::LossKind::margin_prob : losses::LossKind::targeted_margin;
    }

    AttackResult<T> res;
    if (cfg.record_trace) {
        res.loss_trace.assign(mc, {});
        res.best_margin.assign(mc, std::numeric_limits<T>::lowest());
        res.best_adversarial = images;
    }

    std::vector<T> loss_vals;
    Tensor<T> grad_logits;
    T eta = cfg.step_size;
    T gamma = cfg.fw_gamma;
    for (int t = 0; t < cfg.steps; ++t) {
        Tensor<T> x_t = detail::add(images, delta);
        auto tr = forward_trace(net, x_t);
        spec.lambda = lambda_schedule(cfg.lambda0, cfg.tau, t);
        losses::eval_loss(tr.acts.back(), labels, spec, loss_vals, &grad_logits, targets);

        if (cfg.record_trace) {
            auto probs = softmax_rows(tr.acts.back());
            const std::size_t n = probs.row_size();
            for (std::size_t m = 0; m < mc; ++m) {
                res.loss_trace[m].push_back(loss_vals[m]);
                if (t >= 1) {  // x_0 may predate the image clamp; track feasible iterates only
                    T mg = losses::margin_prob(std::span<const T>(probs.row(m), n), labels[m]);
                    if (mg > res.best_margin[m]) {
                        res.best_margin[m] = mg;
                        std::copy(x_t.row(m), x_t.row(m) + x_t.row_size(), res.best_adversarial.row(m));
                    }
                }
            }
        }

        Tensor<T> gin = backward(net, tr, grad_logits, static_cast<ParamGrads<T>*>(nullptr));
        if (cfg.mode == AttackMode::pgd) {
            pgd_update(delta, gin, eta, cfg.epsilon);
        } else {
            fw_update(delta, gin, gamma, cfg.epsilon);
        }
        detail::clamp_image(delta, images);

        if (std::find(cfg.drop_steps.begin(), cfg.drop_steps.end(), t) != cfg.drop_steps.end()) {
            eta /= cfg.drop_factor;
            gamma /= cfg.drop_factor;
        }
    }

    detail::score_result(net, detail::add(images, delta), labels, res);
    if (cfg.record_trace) {
        for (std::size_t m = 0; m < mc; ++m) {
            if (res.final_margin[m] > res.best_margin[m]) {
                res.best_margin[m] = res.final_margin[m];
                std::copy(res.adversarial.row(m), res.adversarial.row(m) + res.adversarial.row_size(),
                          res.best_adversarial.row(m));
            }
        }
    }
    return res;
}

template <typename T>
AttackResult<T> gama_attack(const Network<T>& net, const Tensor<T>& images,
                            std::span<const int> labels, const AttackConfig<T>& cfg) {
    return gama_run(net, images, labels, cfg, /*run_index=*/0);
}

// Union of the untargeted run and k targeted runs toward the top-k non-true classes
// ranked by clean-image probability. Per sample the reported adversary is the run
// with the largest final margin (so any success beats every failure).
template <typename T>
AttackResult<T> gama_mt(const Network<T>& net, const Tensor<T>& images,
                        std::span<const int> labels, const AttackConfig<T>& cfg, int k) {
    if (k < 0) throw ConfigError("targets_k must be nonnegative");
    AttackResult<T> best = gama_run(net, images, labels, cfg, /*run_index=*/0);
    if (k == 0) return best;

    const std::size_t mc = images.dim(0);
    const std::size_t n = static_cast<std::size_t>(net.num_classes);
    const int k_eff = std::min<int>(k, static_cast<int>(n) - 1);

    // rank non-true classes once, from the clean images
    auto clean = forward(net, images);
    std::vector<std::vector<int>> ranked(mc);
    for (std::size_t m = 0; m < mc; ++m) {
        const T* p = clean.probs.row(m);
        std::vector<int> order;
        for (int j = 0; j < static_cast<int>(n); ++j)
            if (j != labels[m]) order.push_back(j);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return p[a] > p[b]; });
        ranked[m] = std::move(order);
    }

    std::vector<int> targets(mc);
    for (int r = 1; r <= k_eff; ++r) {
        for (std::size_t m = 0; m < mc; ++m) targets[m] = ranked[m][static_cast<std::size_t>(r - 1)];
        AttackResult<T> run = gama_run(net, images, labels, cfg, r, targets);
        for (std::size_t m = 0; m < mc; ++m) {
            if (run.final_margin[m] > best.final_margin[m]) {
                best.final_margin[m] = run.final_margin[m];
                std::copy(run.adversarial.row(m), run.adversarial.row(m) + run.adversarial.row_size(),
                          best.adversarial.row(m));
            }
            best.success[m] = best.success[m] || run.success[m];
        }
    }
    return best;
}

// ---- baselines ------------------------------------------------------------------

// Single signed-gradient step of size epsilon from the clean image.
template <typename T>
AttackResult<T> fgsm(const Network<T>& net, const Tensor<T>& images, std::span<const int> labels,
                     T epsilon, losses::LossKind loss = losses::LossKind::cross_entropy) {
    if (epsilon < T(0)) throw ConfigError("epsilon must be nonnegative");
    losses::LossSpec<T> spec;
    spec.kind = loss;
    Tensor<T> gin = input_gradient(net, images,
                                   losses::make_objective(spec, std::vector<int>(labels.begin(), labels.end())));
    Tensor<T> x_adv = images;
    for (std::size_t i = 0; i < x_adv.size(); ++i)
        x_adv[i] = clamp01(x_adv[i] + epsilon * static_cast<T>(sign_of(gin[i])));
    AttackResult<T> res;
    detail::score_result(net, x_adv, labels, res);
    return res;
}

// Bernoulli noise of magnitude alpha, one signed step, projection to the ball,
// then the image clamp.
template <typename T>
AttackResult<T> rfgsm(const Network<T>& net, const Tensor<T>& images, std::span<const int> labels,
                      T epsilon, T alpha, T step, losses::LossKind loss, std::uint64_t seed,
                      int restart_index = 0) {
    if (epsilon < T(0) || alpha < T(0)) throw ConfigError("epsilon and alpha must be nonnegative");
    const std::size_t mc = images.dim(0), rs = images.row_size();
    Tensor<T> delta(images.shape);
    for (std::size_t m = 0; m < mc; ++m) {
        auto rng = sample_stream(seed, detail::stream_slot(restart_index, 0), m);
        T* d = delta.row(m);
        for (std::size_t i = 0; i < rs; ++i) d[i] = bernoulli_pm(rng, alpha);
    }
    losses::LossSpec<T> spec;
    spec.kind = loss;
    Tensor<T> x_noised = detail::add(images, delta);
    Tensor<T> gin = input_gradient(net, x_noised,
                                   losses::make_objective(spec, std::vector<int>(labels.begin(), labels.end())));
    for (std::size_t i = 0; i < delta.size(); ++i) {
        delta[i] = clamp_to(delta[i] + step * static_cast<T>(sign_of(gin[i])), -epsilon, epsilon);
    }
    detail::clamp_image(delta, images);
    AttackResult<T> res;
    detail::score_result(net, detail::add(images, delta), labels, res);
    return res;
}

// Iterative signed-gradient ascent on a configurable loss with ball projection.
// I-FGSM is this with zero init.
template <typename T>
AttackResult<T> pgd_baseline(const Network<T>& net, const Tensor<T>& images,
                             std::span<const int> labels, const AttackConfig<T>& cfg) {
    detail::validate_common(cfg, images);
    if (cfg.loss != losses::LossKind::cross_entropy && cfg.loss != losses::LossKind::margin_prob &&
        cfg.loss != losses::LossKind::margin_logit)
        throw ConfigError("pgd baseline supports ce, margin-prob and margin-logit losses");
    const std::size_t mc = images.dim(0);
    if (labels.size() != mc) throw ConfigError("label count does not match batch size");

    Tensor<T> delta = detail::init_delta(images, cfg, /*run_index=*/0);
    losses::LossSpec<T> spec;
    spec.kind = cfg.loss;

    std::vector<T> loss_vals;
    Tensor<T> grad_logits;
    T eta = cfg.step_size;
    for (int t = 0; t < cfg.steps; ++t) {
        Tensor<T> x_t = detail::add(images, delta);
        auto tr = forward_trace(net, x_t);
        losses::eval_loss(tr.acts.back(), labels, spec, loss_vals, &grad_logits);
        Tensor<T> gin = backward(net, tr, grad_logits, static_cast<ParamGrads<T>*>(nullptr));
        pgd_update(delta, gin, eta, cfg.epsilon);
        detail::clamp_image(delta, images);
        if (std::find(cfg.drop_steps.begin(), cfg.drop_steps.end(), t) != cfg.drop_steps.end())
            eta /= cfg.drop_factor;
    }

    AttackResult<T> res;
    detail::score_result(net, detail::add(images, delta), labels, res);
    return res;
}

// ---- dispatch, restarts -----------------------------------------------------------

enum class AttackKind {
    fgsm,
    rfgsm,
    ifgsm,
    pgd_ce,
    pgd_margin_prob,
    pgd_margin_logit,
    gama_pgd,
    gama_fw,
    gama_mt,
};

inline const char* attack_name(AttackKind k) {
    switch (k) {
        case AttackKind::fgsm: return "fgsm";
        case AttackKind::rfgsm: return "rfgsm";
        case AttackKind::ifgsm: return "ifgsm";
        case AttackKind::pgd_ce: return "pgd-ce";
        case AttackKind::pgd_margin_prob: return "pgd-margin-prob";
        case AttackKind::pgd_margin_logit: return "pgd-margin-logit";
        case AttackKind::gama_pgd: return "gama-pgd";
        case AttackKind::gama_fw: return "gama-fw";
        case AttackKind::gama_mt: return "gama-mt";
    }
    return "?";
}

inline const std::vector<AttackKind>& all_attack_kinds() {
    static const std::vector<AttackKind> kinds = {
        AttackKind::fgsm,     AttackKind::rfgsm,           AttackKind::ifgsm,
        AttackKind::pgd_ce,   AttackKind::pgd_margin_prob, AttackKind::pgd_margin_logit,
        AttackKind::gama_pgd, AttackKind::gama_fw,         AttackKind::gama_mt};
    return kinds;
}

inline std::optional<AttackKind> attack_from_name(const std::string& s) {
    for (AttackKind k : all_attack_kinds())
        if (s == attack_name(k)) return k;
    return std::nullopt;
}

template <typename T>
AttackResult<T> run_attack(const Network<T>& net, const Tensor<T>& images,
                           std::span<const int> labels, AttackKind kind, AttackConfig<T> cfg) {
    switch (kind) {
        case AttackKind::fgsm:
            return fgsm(net, images, labels, cfg.epsilon, cfg.loss);
        case AttackKind::rfgsm: {
            T alpha = cfg.rfgsm_alpha > T(0) ? cfg.rfgsm_alpha : cfg.epsilon / T(2);
            T step = cfg.step_size > T(0) ? cfg.step_size : cfg.epsilon;
            return rfgsm(net, images, labels, cfg.epsilon, alpha, step, cfg.loss, cfg.seed,
                         cfg.restart_index);
        }
        case AttackKind::ifgsm:
            cfg.init = InitNoise::zero;
            if (cfg.loss != losses::LossKind::margin_prob && cfg.loss != losses::LossKind::margin_logit)
                cfg.loss = losses::LossKind::cross_entropy;
            return pgd_baseline(net, images, labels, cfg);
        case AttackKind::pgd_ce:
            cfg.loss = losses::LossKind::cross_entropy;
            return pgd_baseline(net, images, labels, cfg);
        case AttackKind::pgd_margin_prob:
            cfg.loss = losses::LossKind::margin_prob;
            return pgd_baseline(net, images, labels, cfg);
        case AttackKind::pgd_margin_logit:
            cfg.loss = losses::LossKind::margin_logit;
            return pgd_baseline(net, images, labels, cfg);
        case AttackKind::gama_pgd:
            cfg.mode = AttackMode::pgd;
            return gama_attack(net, images, labels, cfg);
        case AttackKind::gama_fw:
            cfg.mode = AttackMode::fw;
            return gama_attack(net, images, labels, cfg);
        case AttackKind::gama_mt:
            cfg.mode = AttackMode::pgd;
            return gama_mt(net, images, labels, cfg, cfg.targets_k);
    }
    throw ConfigError("unknown attack kind");
}

template <typename T>
struct RestartSweep {
    AttackResult<T> combined;                               // per-sample worst case
    std::vector<std::vector<std::uint8_t>> per_restart_success;
};

// R independently seeded runs; per-sample union of successes, keeping the
// max-margin adversary. Restart r uses rng stream slot r, so the first restart
// reproduces a plain single run exactly.
template <typename T>
RestartSweep<T> worst_case_over_restarts(const Network<T>& net, const Tensor<T>& images,
                                         std::span<const int> labels, AttackKind kind,
                                         AttackConfig<T> cfg, int restarts) {
    if (restarts < 1) throw ConfigError("need at least one restart");
    RestartSweep<T> sweep;
    for (int r = 0; r < restarts; ++r) {
        cfg.restart_index = r;
        AttackResult<T> run = run_attack(net, images, labels, kind, cfg);
        sweep.per_restart_success.push_back(run.success);
        if (r == 0) {
            sweep.combined = std::move(run);
            continue;
        }
        auto& best = sweep.combined;
        for (std::size_t m = 0; m < images.dim(0); ++m) {
            if (run.final_margin[m] > best.final_margin[m]) {
                best.final_margin[m] = run.final_margin[m];
                std::copy(run.adversarial.row(m), run.adversarial.row(m) + run.adversarial.row_size(),
                          best.adversarial.row(m));
            }
            best.success[m] = best.success[m] || run.success[m];
        }
    }
    return sweep;
}

// ---- per-dataset presets ----------------------------------------------------------

// 100-step schedule: lambda 50 decayed over 25 iterations, step 2*eps dropped by
// 10x at iterations 60 and 85.
template <typename T>
AttackConfig<T> preset_gama_pgd(T epsilon) {
    AttackConfig<T> cfg;
    cfg.epsilon = epsilon;
    cfg.steps = 100;
    cfg.mode = AttackMode::pgd;
    cfg.step_size = T(2) * epsilon;
    cfg.lambda0 = T(50);
    cfg.tau = 25;
    cfg.drop_steps = {60, 85};
    cfg.drop_factor = T(10);
    cfg.init = InitNoise::bernoulli;
    cfg.loss = losses::LossKind::gama;
    return cfg;
}

// MNIST-style models need gentler settings: lambda 5 decayed over 50 iterations,
// step eps dropped at 50 and 75.
template <typename T>
AttackConfig<T> preset_gama_pgd_mnist(T epsilon) {
    AttackConfig<T> cfg = preset_gama_pgd(epsilon);
    cfg.step_size = epsilon;
    cfg.lambda0 = T(5);
    cfg.tau = 50;
    cfg.drop_steps = {50, 75};
    return cfg;
}

template <typename T>
AttackConfig<T> preset_gama_fw(T epsilon) {
    AttackConfig<T> cfg = preset_gama_pgd(epsilon);
    cfg.mode = AttackMode::fw;
    cfg.fw_gamma = T(0.5);
    cfg.drop_factor = T(5);
    return cfg;
}

template <typename T>
AttackConfig<T> preset_gama_fw_mnist(T epsilon) {
    AttackConfig<T> cfg = preset_gama_pgd_mnist(epsilon);
    cfg.mode = AttackMode::fw;
    cfg.fw_gamma = T(0.5);
    cfg.drop_factor = T(5);
    return cfg;
}

// Short-budget variant: the relaxation weight decays over the whole run and the
// step size stays fixed.
template <typename T>
AttackConfig<T> preset_short(AttackConfig<T> cfg, int steps) {
    cfg.steps = steps;
    cfg.tau = steps;
    cfg.drop_steps.clear();
    return cfg;
}

template <typename T>
AttackConfig<T> preset_pgd(T epsilon, int steps, losses::LossKind loss) {
    AttackConfig<T> cfg;
    cfg.epsilon = epsilon;
    cfg.steps = steps;
    cfg.mode = AttackMode::pgd;
    cfg.step_size = T(2.5) * epsilon / static_cast<T>(steps);
    cfg.tau = steps;
    cfg.init = InitNoise::bernoulli;
    cfg.loss = loss;
    return cfg;
}

} // namespace advkit::attacks
