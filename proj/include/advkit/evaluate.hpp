#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "advkit/attacks.hpp"
#include "advkit/dataset.hpp"
#include "advkit/losses.hpp"
#include "advkit/network.hpp"

namespace advkit::eval {

template <typename T>
struct NamedAttack {
    std::string name;
    attacks::AttackKind kind;
    attacks::AttackConfig<T> cfg;
};

struct AttackScore {
    std::string name;
    double robust_acc = 0;               // first restart
    double worst_case_acc = 0;           // union over restarts
    std::vector<double> per_restart_acc;
    double mean_linf = 0, mean_l2 = 0;   // distortion of successful adversaries
    double runtime_s = 0;
};

struct EvalReport {
    double clean_acc = 0;
    std::vector<AttackScore> attacks;
    double runtime_s = 0;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename T>
double acc_from_success(const std::vector<std::uint8_t>& success) {
    std::size_t ok = 0;
    for (auto s : success) ok += !s;
    return static_cast<double>(ok) / static_cast<double>(success.size());
}

template <typename T>
void distortions(const Tensor<T>& clean, const attacks::AttackResult<T>& res, AttackScore& score) {
    double linf = 0, l2 = 0;
    std::size_t n = 0;
    for (std::size_t m = 0; m < clean.dim(0); ++m) {
        if (!res.success[m]) continue;
        linf += static_cast<double>(linf_distance(res.adversarial, clean, m));
        l2 += static_cast<double>(l2_distance(res.adversarial, clean, m));
        ++n;
    }
    score.mean_linf = n ? linf / static_cast<double>(n) : 0;
    score.mean_l2 = n ? l2 / static_cast<double>(n) : 0;
}

} // namespace detail

// White-box protocol: clean accuracy plus per-attack robust accuracy, worst case
// over the configured restarts, and distortion statistics. Read-only on the network.
template <typename T>
EvalReport evaluate(const Network<T>& net, const data::LabeledBatch<T>& split,
                    const std::vector<NamedAttack<T>>& attack_list) {
    auto t0 = std::chrono::steady_clock::now();
    EvalReport report;
    auto fwd = forward(net, split.images);
    report.clean_acc = accuracy(fwd.probs, std::span<const int>(split.labels));

    for (const auto& na : attack_list) {
        auto ta = std::chrono::steady_clock::now();
        AttackScore score;
        score.name = na.name;
        int restarts = std::max(1, na.cfg.restarts);
        auto sweep = attacks::worst_case_over_restarts(net, split.images,
                                                       std::span<const int>(split.labels), na.kind,
                                                       na.cfg, restarts);
        for (const auto& s : sweep.per_restart_success)
            score.per_restart_acc.push_back(detail::acc_from_success<T>(s));
        score.robust_acc = score.per_restart_acc.front();
        score.worst_case_acc = detail::acc_from_success<T>(sweep.combined.success);
        detail::distortions(split.images, sweep.combined, score);
        score.runtime_s = detail::seconds_since(ta);
        report.attacks.push_back(std::move(score));
    }
    report.runtime_s = detail::seconds_since(t0);
    return report;
}

// Black-box protocol: adversaries are generated on the source model and scored on
// the target. The per-sample union across restarts is chosen by source-side margin
// (the attacker cannot consult the target), which reduces to the white-box rule
// when source and target coincide.
template <typename T>
EvalReport transfer_eval(const Network<T>& source, const Network<T>& target,
                         const data::LabeledBatch<T>& split,
                         const std::vector<NamedAttack<T>>& attack_list) {
    auto t0 = std::chrono::steady_clock::now();
    EvalReport report;
    auto fwd = forward(target, split.images);
    report.clean_acc = accuracy(fwd.probs, std::span<const int>(split.labels));
    const std::size_t mc = split.images.dim(0);

    for (const auto& na : attack_list) {
        auto ta = std::chrono::steady_clock::now();
        AttackScore score;
        score.name = na.name;
        int restarts = std::max(1, na.cfg.restarts);

        attacks::AttackResult<T> chosen;  // per-sample best by source margin
        for (int r = 0; r < restarts; ++r) {
            auto cfg = na.cfg;
            cfg.restart_index = r;
            auto run = attacks::run_attack(source, split.images, std::span<const int>(split.labels),
                                           na.kind, cfg);
            auto tp = forward(target, run.adversarial);
            std::size_t ok = 0;
            for (std::size_t m = 0; m < mc; ++m)
                ok += scored_correct(tp.probs.row(m), tp.probs.row_size(), split.labels[m]);
            score.per_restart_acc.push_back(static_cast<double>(ok) / static_cast<double>(mc));

            if (r == 0) {
                chosen = std::move(run);
            } else {
                for (std::size_t m = 0; m < mc; ++m) {
                    if (run.final_margin[m] > chosen.final_margin[m]) {
                        chosen.final_margin[m] = run.final_margin[m];
                        std::copy(run.adversarial.row(m),
                                  run.adversarial.row(m) + run.adversarial.row_size(),
                                  chosen.adversarial.row(m));
                    }
                }
            }
        }

        auto tp = forward(target, chosen.adversarial);
        chosen.success.resize(mc);
        for (std::size_t m = 0; m < mc; ++m)
            chosen.success[m] = !scored_correct(tp.probs.row(m), tp.probs.row_size(), split.labels[m]);
        score.robust_acc = score.per_restart_acc.front();
        score.worst_case_acc = detail::acc_from_success<T>(chosen.success);
        detail::distortions(split.images, chosen, score);
        score.runtime_s = detail::seconds_since(ta);
        report.attacks.push_back(std::move(score));
    }
    report.runtime_s = detail::seconds_since(t0);
    return report;
}

// ---- loss surface grid --------------------------------------------------------------
//
// Values of the chosen loss on clamp(x + d1*g + d2*g_perp, 0, 1) where g is the sign
// of the input gradient at the clean image and g_perp is a seeded random direction
// orthogonalized against g and rescaled to ||g||_2.

template <typename T>
struct SurfaceGrid {
    std::vector<T> axis1, axis2;  // delta1 / delta2 values
    std::vector<T> values;        // row-major: axis1 index major
    Tensor<T> g, g_perp;
    losses::LossKind kind = losses::LossKind::cross_entropy;
    T lambda = T(0);
    std::uint64_t seed = 0;
};

template <typename T>
SurfaceGrid<T> loss_surface(const Network<T>& net, const Tensor<T>& image, int label,
                            losses::LossKind kind, T lambda, T range, int resolution,
                            std::uint64_t seed) {
    if (image.rank() < 2 || image.dim(0) != 1)
        throw ConfigError("loss_surface expects a single sample of shape [1, ...]");
    if (resolution < 2) throw ConfigError("resolution must be at least 2");
    if (range <= T(0)) throw ConfigError("range must be positive");

    losses::LossSpec<T> spec;
    spec.kind = kind;
    spec.lambda = lambda;
    if (losses::needs_reference(kind)) spec.reference_probs = forward(net, image).probs;

    SurfaceGrid<T> grid;
    grid.kind = kind;
    grid.lambda = lambda;
    grid.seed = seed;

    Tensor<T> grad = input_gradient(net, image, losses::make_objective(spec, {label}));
    grid.g = grad;
    for (auto& v : grid.g.values) v = static_cast<T>(sign_of(v));

    double g_norm2 = 0;
    for (const T& v : grid.g.values) g_norm2 += static_cast<double>(v) * static_cast<double>(v);
    if (g_norm2 == 0) throw NumericError("loss gradient vanishes at the sample; no surface direction");

    auto rng = sample_stream(seed, 0x9b1d, 0);
    grid.g_perp = Tensor<T>(grid.g.shape);
    double p_norm2 = 0;
    for (int attempt = 0; attempt < 16 && p_norm2 < 1e-12; ++attempt) {
        for (auto& v : grid.g_perp.values) v = gaussian<T>(rng);
        // two Gram-Schmidt passes against g
        for (int pass = 0; pass < 2; ++pass) {
            T dot = T(0);
            for (std::size_t i = 0; i < grid.g.size(); ++i) dot += grid.g_perp[i] * grid.g[i];
            T coef = dot / static_cast<T>(g_norm2);
            for (std::size_t i = 0; i < grid.g.size(); ++i) grid.g_perp[i] -= coef * grid.g[i];
        }
        p_norm2 = 0;
        for (const T& v : grid.g_perp.values) p_norm2 += static_cast<double>(v) * static_cast<double>(v);
    }
    if (p_norm2 < 1e-12) throw NumericError("failed to build an orthogonal surface direction");
    T rescale = static_cast<T>(std::sqrt(g_norm2 / p_norm2));
    for (auto& v : grid.g_perp.values) v *= rescale;

    grid.axis1.resize(resolution);
    grid.axis2.resize(resolution);
    for (int i = 0; i < resolution; ++i) {
        T f = T(-1) + T(2) * static_cast<T>(i) / static_cast<T>(resolution - 1);
        grid.axis1[i] = f * range;
        grid.axis2[i] = f * range;
    }

    const std::size_t rs = image.row_size();
    grid.values.resize(static_cast<std::size_t>(resolution) * resolution);

    // evaluate one axis1-row of the grid per forward pass
    std::vector<std::size_t> batch_shape = image.shape;
    batch_shape[0] = static_cast<std::size_t>(resolution);
    Tensor<T> batch(batch_shape);
    std::vector<int> labels(resolution, label);
    std::vector<T> loss_vals;
    losses::LossSpec<T> row_spec = spec;
    if (losses::needs_reference(kind)) {
        row_spec.reference_probs = Tensor<T>({static_cast<std::size_t>(resolution), spec.reference_probs.row_size()});
        for (int j = 0; j < resolution; ++j)
            std::copy(spec.reference_probs.row(0), spec.reference_probs.row(0) + spec.reference_probs.row_size(),
                      row_spec.reference_probs.row(j));
    }
    for (int i = 0; i < resolution; ++i) {
        for (int j = 0; j < resolution; ++j) {
            T* dst = batch.row(j);
            for (std::size_t p = 0; p < rs; ++p)
                dst[p] = clamp01(image.row(0)[p] + grid.axis1[i] * grid.g[p] + grid.axis2[j] * grid.g_perp[p]);
        }
        auto fwd = forward_trace(net, batch);
        losses::eval_loss(fwd.acts.back(), std::span<const int>(labels), row_spec, loss_vals,
                          static_cast<Tensor<T>*>(nullptr));
        for (int j = 0; j < resolution; ++j)
            grid.values[static_cast<std::size_t>(i) * resolution + j] = loss_vals[j];
    }
    return grid;
}

// ---- epsilon sweeps -------------------------------------------------------------------

struct SweepPoint {
    double epsilon = 0;
    double pgd_acc = 0;       // accuracy under the multi-step probe
    double fgsm_loss = 0;     // mean CE on single-step adversaries
};

template <typename T>
std::vector<SweepPoint> sweep_epsilon(const Network<T>& net, const data::LabeledBatch<T>& split,
                                      const std::vector<T>& epsilons, int pgd_steps,
                                      std::uint64_t seed) {
    std::vector<SweepPoint> curve;
    const std::size_t mc = split.images.dim(0);
    for (T eps : epsilons) {
        if (eps < T(0)) throw ConfigError("epsilon must be nonnegative");
        SweepPoint pt;
        pt.epsilon = static_cast<double>(eps);

        auto cfg = attacks::preset_pgd(eps, pgd_steps, losses::LossKind::cross_entropy);
        cfg.seed = seed;
        auto res = attacks::pgd_baseline(net, split.images, std::span<const int>(split.labels), cfg);
        std::size_t ok = 0;
        for (auto s : res.success) ok += !s;
        pt.pgd_acc = static_cast<double>(ok) / static_cast<double>(mc);

        auto fg = attacks::fgsm(net, split.images, std::span<const int>(split.labels), eps);
        auto probs = forward(net, fg.adversarial).probs;
        double ce = 0;
        for (std::size_t m = 0; m < mc; ++m)
            ce += static_cast<double>(losses::cross_entropy(
                std::span<const T>(probs.row(m), probs.row_size()), split.labels[m]));
        pt.fgsm_loss = ce / static_cast<double>(mc);
        curve.push_back(pt);
    }
    return curve;
}

// ---- local Lipschitz estimates ----------------------------------------------------------

struct LipschitzReport {
    std::vector<double> per_sample;  // max ratio over sampled neighbors
    double mean = 0, max = 0;
};

// Ratios ||f(x)-f(x')||_2 / ||x-x'||_2 over uniform draws from the epsilon ball
// (clamped to the image domain), optionally including the attack-found adversary.
template <typename T>
LipschitzReport lipschitz_estimate(const Network<T>& net, const data::LabeledBatch<T>& split,
                                   T epsilon, int n_samples, std::uint64_t seed,
                                   const attacks::AttackConfig<T>* gama_cfg = nullptr) {
    if (n_samples < 0) throw ConfigError("n_samples must be nonnegative");
    const std::size_t mc = split.images.dim(0), rs = split.images.row_size();
    auto clean = forward(net, split.images);
    const std::size_t n_cls = clean.probs.row_size();

    Tensor<T> adv;
    if (gama_cfg) {
        auto res = attacks::gama_attack(net, split.images, std::span<const int>(split.labels), *gama_cfg);
        adv = std::move(res.adversarial);
    }

    LipschitzReport report;
    report.per_sample.assign(mc, 0.0);
    const std::size_t draws = static_cast<std::size_t>(n_samples) + (gama_cfg ? 1 : 0);
    if (draws == 0) return report;

    std::vector<std::size_t> shape = split.images.shape;
    shape[0] = draws;
    Tensor<T> batch(shape);
    for (std::size_t m = 0; m < mc; ++m) {
        auto rng = sample_stream(seed, 0x11b5, m);
        const T* x = split.images.row(m);
        for (int s = 0; s < n_samples; ++s) {
            T* dst = batch.row(static_cast<std::size_t>(s));
            for (std::size_t p = 0; p < rs; ++p)
                dst[p] = clamp01(x[p] + uniform_in(rng, -epsilon, epsilon));
        }
        if (gama_cfg)
            std::copy(adv.row(m), adv.row(m) + rs, batch.row(draws - 1));

        auto fwd = forward(net, batch);
        double best = 0;
        for (std::size_t s = 0; s < draws; ++s) {
            double dx = 0, df = 0;
            const T* xp = batch.row(s);
            for (std::size_t p = 0; p < rs; ++p) {
                double d = static_cast<double>(xp[p]) - static_cast<double>(x[p]);
                dx += d * d;
            }
            dx = std::sqrt(dx);
            if (dx < 1e-6) continue;
            const T* pa = fwd.probs.row(s);
            const T* pc = clean.probs.row(m);
            for (std::size_t j = 0; j < n_cls; ++j) {
                double d = static_cast<double>(pa[j]) - static_cast<double>(pc[j]);
                df += d * d;
            }
            best = std::max(best, std::sqrt(df) / dx);
        }
        report.per_sample[m] = best;
    }
    double sum = 0;
    for (double v : report.per_sample) {
        sum += v;
        report.max = std::max(report.max, v);
    }
    report.mean = sum / static_cast<double>(mc);
    return report;
}

} // namespace advkit::eval
