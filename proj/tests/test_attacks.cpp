#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "advkit/attacks.hpp"
#include "advkit/losses.hpp"
#include "advkit/network.hpp"
#include "oracles.hpp"

using namespace advkit;
using namespace advkit::attacks;

namespace {

Network<double> trained_toy_net(std::uint64_t seed) {
    // an untuned random mlp is enough for attack mechanics
    auto net = make_mlp<double>(6, {12}, 3);
    init_params(net, seed);
    return net;
}

Tensor<double> toy_batch(std::size_t m, std::size_t d, std::uint64_t seed) {
    Tensor<double> x({m, d});
    auto rng = sample_stream(seed, 1, 0);
    for (auto& v : x.values) v = uniform_in(rng, 0.1, 0.9);
    return x;
}

std::vector<int> toy_labels(std::size_t m, int classes, std::uint64_t seed) {
    std::vector<int> y(m);
    auto rng = sample_stream(seed, 2, 0);
    for (auto& v : y) v = static_cast<int>(rng() % classes);
    return y;
}

// 2-input linear classifier with chosen weights
Network<double> linear2(std::vector<double> w, std::vector<double> b) {
    Network<double> net;
    net.num_classes = static_cast<int>(b.size());
    add_affine(net, 2, b.size());
    net.layers[0].weight.values = std::move(w);
    net.layers[0].bias.values = std::move(b);
    return net;
}

} // namespace

TEST_CASE("bernoulli init: zero epsilon gives the zero tensor") {
    auto rng = sample_stream(1, 0, 0);
    auto t = bernoulli_init<double>({4, 5}, 0.0, rng);
    for (double v : t.values) CHECK(v == 0.0);
}

TEST_CASE("bernoulli init: every coordinate is plus or minus epsilon") {
    auto rng = sample_stream(2, 0, 0);
    auto t = bernoulli_init<double>({10, 10}, 0.1, rng);
    for (double v : t.values) CHECK(std::abs(v) == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("bernoulli init: sample mean obeys the clt bound") {
    auto rng = sample_stream(3, 0, 0);
    const std::size_t n = 100000;
    auto t = bernoulli_init<double>({n}, 0.1, rng);
    double mean = 0;
    for (double v : t.values) mean += v;
    mean /= static_cast<double>(n);
    CHECK(std::abs(mean) < 3.0 * 0.1 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("lambda schedule hand values") {
    CHECK(lambda_schedule(50.0, 25, 0) == 50.0);
    CHECK(lambda_schedule(50.0, 25, 10) == doctest::Approx(30.0).epsilon(1e-15));
    CHECK(lambda_schedule(50.0, 25, 25) == 0.0);
    CHECK(lambda_schedule(50.0, 25, 80) == 0.0);
    CHECK(lambda_schedule(5.0, 50, 50) == 0.0);
}

TEST_CASE("pgd update: projection only when the gradient is zero") {
    Tensor<double> delta({1, 3}, {0.5, 0.5, 0.5});
    Tensor<double> grad({1, 3}, {0, 0, 0});
    pgd_update(delta, grad, 0.1, 0.3);
    for (double v : delta.values) CHECK(v == 0.3);
}

TEST_CASE("pgd update: one step saturates at the ball radius") {
    Tensor<double> delta({1, 3});
    Tensor<double> grad({1, 3}, {1.0, 2.0, 0.5});
    pgd_update(delta, grad, 0.6, 0.3);  // eta = 2 eps
    for (double v : delta.values) CHECK(v == 0.3);
}

TEST_CASE("pgd update: zero step size inside the ball changes nothing") {
    Tensor<double> delta({1, 2}, {0.1, -0.2});
    Tensor<double> grad({1, 2}, {1.0, -1.0});
    pgd_update(delta, grad, 0.0, 0.3);
    CHECK(delta[0] == 0.1);
    CHECK(delta[1] == -0.2);
}

TEST_CASE("fw update: vertex is a fixed point") {
    Tensor<double> grad({1, 2}, {1.0, -2.0});
    Tensor<double> delta({1, 2}, {0.3, -0.3});  // already eps*sign(grad)
    fw_update(delta, grad, 0.5, 0.3);
    CHECK(delta[0] == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(delta[1] == doctest::Approx(-0.3).epsilon(1e-15));
}

TEST_CASE("fw update: halfway from zero, and gamma=1 jumps to the vertex") {
    Tensor<double> delta({1, 2});
    Tensor<double> grad({1, 2}, {2.0, -1.0});
    fw_update(delta, grad, 0.5, 0.3);
    CHECK(delta[0] == doctest::Approx(0.15).epsilon(1e-15));
    CHECK(delta[1] == doctest::Approx(-0.15).epsilon(1e-15));
    fw_update(delta, grad, 1.0, 0.3);
    CHECK(delta[0] == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(delta[1] == doctest::Approx(-0.3).epsilon(1e-15));
}

TEST_CASE("paper default schedules are wired into the presets") {
    auto pgd = preset_gama_pgd<double>(0.1);
    CHECK(pgd.lambda0 == 50.0);
    CHECK(pgd.tau == 25);
    CHECK(pgd.steps == 100);
    CHECK(pgd.step_size == doctest::Approx(0.2));
    CHECK(pgd.drop_steps == std::vector<int>{60, 85});
    CHECK(pgd.drop_factor == 10.0);

    auto fw = preset_gama_fw<double>(0.1);
    CHECK(fw.fw_gamma == 0.5);
    CHECK(fw.drop_factor == 5.0);
    CHECK(fw.drop_steps == std::vector<int>{60, 85});

    auto mnist = preset_gama_pgd_mnist<double>(0.3);
    CHECK(mnist.lambda0 == 5.0);
    CHECK(mnist.tau == 50);
    CHECK(mnist.step_size == doctest::Approx(0.3));
    CHECK(mnist.drop_steps == std::vector<int>{50, 75});
}

TEST_CASE("gama with lambda zero reproduces margin pgd bitwise on a shared seed") {
    auto net = trained_toy_net(11);
    auto x = toy_batch(6, 6, 12);
    auto y = toy_labels(6, 3, 13);

    AttackConfig<double> cfg;
    cfg.epsilon = 0.1;
    cfg.steps = 20;
    cfg.tau = 10;
    cfg.step_size = 0.02;
    cfg.drop_steps = {10};
    cfg.drop_factor = 10.0;
    cfg.seed = 99;
    cfg.lambda0 = 0.0;
    auto a = gama_attack(net, x, y, cfg);

    auto cfg2 = cfg;
    cfg2.loss = losses::LossKind::margin_prob;
    auto b = pgd_baseline(net, x, y, cfg2);

    CHECK(a.adversarial.values == b.adversarial.values);
    CHECK(a.final_margin == b.final_margin);
    CHECK(a.success == b.success);
}

TEST_CASE("pgd with one zero-init full step of cross entropy reproduces fgsm bitwise") {
    auto net = trained_toy_net(21);
    auto x = toy_batch(5, 6, 22);
    auto y = toy_labels(5, 3, 23);

    AttackConfig<double> cfg;
    cfg.epsilon = 0.08;
    cfg.steps = 1;
    cfg.tau = 1;
    cfg.step_size = 0.08;
    cfg.init = InitNoise::zero;
    cfg.loss = losses::LossKind::cross_entropy;
    auto a = pgd_baseline(net, x, y, cfg);
    auto b = fgsm(net, x, y, 0.08);
    CHECK(a.adversarial.values == b.adversarial.values);
}

TEST_CASE("gama-mt with k=0 is exactly gama-pgd") {
    auto net = trained_toy_net(31);
    auto x = toy_batch(4, 6, 32);
    auto y = toy_labels(4, 3, 33);
    auto cfg = preset_short(preset_gama_pgd_mnist<double>(0.1), 8);
    cfg.seed = 5;
    auto a = gama_attack(net, x, y, cfg);
    auto b = gama_mt(net, x, y, cfg, 0);
    CHECK(a.adversarial.values == b.adversarial.values);
    CHECK(a.success == b.success);
}

TEST_CASE("gama-mt union can only help the attacker") {
    auto net = trained_toy_net(41);
    auto x = toy_batch(10, 6, 42);
    auto y = toy_labels(10, 3, 43);
    auto cfg = preset_short(preset_gama_pgd_mnist<double>(0.15), 10);
    cfg.seed = 7;
    auto single = gama_attack(net, x, y, cfg);
    auto mt = gama_mt(net, x, y, cfg, 2);
    std::size_t acc_single = 0, acc_mt = 0;
    for (std::size_t m = 0; m < 10; ++m) {
        acc_single += !single.success[m];
        acc_mt += !mt.success[m];
        if (single.success[m]) CHECK(mt.success[m]);  // per-sample union
    }
    CHECK(acc_mt <= acc_single);
}

TEST_CASE("epsilon zero attacks return the clean batch") {
    auto net = trained_toy_net(51);
    auto x = toy_batch(6, 6, 52);
    auto y = toy_labels(6, 3, 53);
    auto res = fgsm(net, x, y, 0.0);
    CHECK(res.adversarial.values == x.values);

    auto clean_probs = forward(net, x).probs;
    double clean_acc = accuracy(clean_probs, std::span<const int>(y));
    std::size_t ok = 0;
    for (auto s : res.success) ok += !s;
    CHECK(static_cast<double>(ok) / 6.0 == doctest::Approx(clean_acc));
}

TEST_CASE("fgsm on a linear model matches the closed-form signed step") {
    auto net = linear2({1.0, -0.5, -1.0, 0.5}, {0.0, 0.1});
    Tensor<double> x({1, 2}, {0.4, 0.6});
    std::vector<int> y = {0};
    const double eps = 0.1;

    // closed form: grad_x ce = W^T (p - onehot)
    auto fwd = forward(net, x);
    double p0 = fwd.probs[0], p1 = fwd.probs[1];
    double g0 = 1.0 * (p0 - 1.0) + (-1.0) * p1;
    double g1 = -0.5 * (p0 - 1.0) + 0.5 * p1;
    double want0 = clamp01(0.4 + eps * (g0 > 0 ? 1.0 : g0 < 0 ? -1.0 : 0.0));
    double want1 = clamp01(0.6 + eps * (g1 > 0 ? 1.0 : g1 < 0 ? -1.0 : 0.0));

    auto res = fgsm(net, x, y, eps);
    CHECK(res.adversarial[0] == doctest::Approx(want0).epsilon(1e-12));
    CHECK(res.adversarial[1] == doctest::Approx(want1).epsilon(1e-12));
}

TEST_CASE("gama finds a near-optimal margin on a 2d instance (grid oracle)") {
    auto net = linear2({2.0, -1.5, -2.0, 1.5}, {0.05, -0.05});
    Tensor<double> x({1, 2}, {0.45, 0.55});
    std::vector<int> y = {0};
    const double eps = 0.2;

    double grid_best = oracles::grid_max_margin(net, x, 0, eps);
    REQUIRE(grid_best > 0.05);

    auto cfg = preset_gama_pgd<double>(eps);
    cfg.seed = 3;
    auto res = gama_attack(net, x, y, cfg);
    CHECK(res.final_margin[0] >= 0.99 * grid_best);
}

TEST_CASE("attack constraints hold for every kind") {
    auto net = trained_toy_net(61);
    auto x = toy_batch(12, 6, 62);
    auto y = toy_labels(12, 3, 63);
    const double eps = 0.12;

    for (auto kind : all_attack_kinds()) {
        auto cfg = preset_short(preset_gama_pgd_mnist<double>(eps), 10);
        cfg.seed = 17;
        cfg.targets_k = 2;
        if (kind == AttackKind::gama_fw) cfg.fw_gamma = 0.5;
        if (kind == AttackKind::fgsm || kind == AttackKind::rfgsm)
            cfg.loss = losses::LossKind::cross_entropy;
        auto res = run_attack(net, x, y, kind, cfg);
        INFO("attack ", attack_name(kind));
        for (std::size_t m = 0; m < x.dim(0); ++m) {
            CHECK(linf_distance(res.adversarial, x, m) <= eps + BALL_TOL);
            for (std::size_t i = 0; i < x.row_size(); ++i) {
                double v = res.adversarial.row(m)[i];
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
}

TEST_CASE("attacks are deterministic given the seed") {
    auto net = trained_toy_net(71);
    auto x = toy_batch(5, 6, 72);
    auto y = toy_labels(5, 3, 73);
    auto cfg = preset_short(preset_gama_fw_mnist<double>(0.1), 12);
    cfg.seed = 123;
    auto a = gama_attack(net, x, y, cfg);
    auto b = gama_attack(net, x, y, cfg);
    CHECK(a.adversarial.values == b.adversarial.values);
    CHECK(a.final_margin == b.final_margin);
}

TEST_CASE("restart sweep: first restart equals a single run, union is monotone") {
    auto net = trained_toy_net(81);
    auto x = toy_batch(16, 6, 82);
    auto y = toy_labels(16, 3, 83);
    auto cfg = preset_short(preset_gama_pgd_mnist<double>(0.1), 8);
    cfg.seed = 9;

    auto single = gama_attack(net, x, y, cfg);
    auto sweep = worst_case_over_restarts(net, x, y, AttackKind::gama_pgd, cfg, 5);
    CHECK(sweep.per_restart_success[0] == single.success);

    auto acc = [](const std::vector<std::uint8_t>& s) {
        std::size_t ok = 0;
        for (auto v : s) ok += !v;
        return static_cast<double>(ok) / static_cast<double>(s.size());
    };
    double worst = acc(sweep.combined.success);
    CHECK(worst <= acc(sweep.per_restart_success[0]));
    for (const auto& s : sweep.per_restart_success) CHECK(worst <= acc(s));

    // recompute the union externally from independently executed runs
    std::vector<std::uint8_t> manual(x.dim(0), 0);
    for (int r = 0; r < 5; ++r) {
        auto c = cfg;
        c.restart_index = r;
        auto run = gama_attack(net, x, y, c);
        CHECK(run.success == sweep.per_restart_success[r]);
        for (std::size_t m = 0; m < manual.size(); ++m)
            manual[m] = manual[m] || run.success[m];
    }
    CHECK(manual == sweep.combined.success);
}

TEST_CASE("fw iterates stay inside the ball before the image clamp") {
    // fw_update itself throws if the convex step ever leaves the ball; run a full
    // attack to exercise it across iterations
    auto net = trained_toy_net(91);
    auto x = toy_batch(8, 6, 92);
    auto y = toy_labels(8, 3, 93);
    auto cfg = preset_short(preset_gama_fw_mnist<double>(0.25), 15);
    cfg.seed = 31;
    CHECK_NOTHROW(gama_attack(net, x, y, cfg));
}

TEST_CASE("attack config invariants are enforced") {
    auto net = trained_toy_net(95);
    auto x = toy_batch(2, 6, 96);
    auto y = toy_labels(2, 3, 97);

    auto cfg = preset_gama_pgd<double>(0.1);
    cfg.tau = 200;  // tau > steps
    CHECK_THROWS_AS(gama_attack(net, x, y, cfg), ConfigError);

    cfg = preset_gama_pgd<double>(0.1);
    cfg.drop_steps = {100};  // s >= steps
    CHECK_THROWS_AS(gama_attack(net, x, y, cfg), ConfigError);

    cfg = preset_gama_pgd<double>(-0.1);
    CHECK_THROWS_AS(gama_attack(net, x, y, cfg), ConfigError);

    cfg = preset_gama_fw<double>(0.1);
    cfg.fw_gamma = 1.5;
    CHECK_THROWS_AS(gama_attack(net, x, y, cfg), ConfigError);

    cfg = preset_gama_pgd<double>(0.1);
    cfg.loss = losses::LossKind::gama;
    CHECK_THROWS_AS(pgd_baseline(net, x, y, cfg), ConfigError);

    CHECK(!attack_from_name("autoattack").has_value());
}

TEST_CASE("trace records per-iteration losses and the best iterate") {
    auto net = trained_toy_net(98);
    auto x = toy_batch(3, 6, 99);
    auto y = toy_labels(3, 3, 100);
    auto cfg = preset_short(preset_gama_pgd_mnist<double>(0.1), 6);
    cfg.seed = 2;
    cfg.record_trace = true;
    auto res = gama_attack(net, x, y, cfg);
    REQUIRE(res.loss_trace.size() == 3);
    for (const auto& t : res.loss_trace) CHECK(t.size() == 6);
    for (std::size_t m = 0; m < 3; ++m) {
        CHECK(res.best_margin[m] >= res.final_margin[m]);
        CHECK(linf_distance(res.best_adversarial, x, m) <= 0.1 + BALL_TOL);
    }
}
