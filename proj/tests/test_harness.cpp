#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "advkit/cli.hpp"
#include "advkit/csv.hpp"
#include "advkit/dataset.hpp"
#include "advkit/evaluate.hpp"
#include "advkit/training.hpp"
#include "oracles.hpp"

using namespace advkit;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir() {
    auto p = fs::temp_directory_path() / "advkit_harness_tests";
    fs::create_directories(p);
    return p;
}

void write_be32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

// craft a minimal idx pair: `n` images of rows x cols with pixel value = label*20
void write_idx_pair(const fs::path& dir, const std::string& img_name, const std::string& lab_name,
                    std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                    std::uint32_t img_magic = 0x00000803u, std::uint32_t lab_magic = 0x00000801u,
                    int bad_label_at = -1) {
    std::ofstream imgs(dir / img_name, std::ios::binary);
    write_be32(imgs, img_magic);
    write_be32(imgs, n);
    write_be32(imgs, rows);
    write_be32(imgs, cols);
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t p = 0; p < rows * cols; ++p)
            imgs.put(static_cast<char>((i % 10) * 20 + (p % 5)));
    std::ofstream labs(dir / lab_name, std::ios::binary);
    write_be32(labs, lab_magic);
    write_be32(labs, n);
    for (std::uint32_t i = 0; i < n; ++i)
        labs.put(static_cast<char>(static_cast<int>(i) == bad_label_at ? 11 : i % 10));
}

data::Dataset<double> small_gauss(std::uint64_t seed) {
    return data::synth_gaussians<double>(3, 40, 4, 1.0, seed);
}

Network<double> quick_trained_net(const data::Dataset<double>& ds, std::uint64_t seed) {
    std::size_t dim = 1;
    for (auto v : ds.image_shape) dim *= v;
    auto net = make_mlp<double>(dim, {24}, ds.num_classes);
    init_params(net, seed);
    training::GatConfig<double> cfg;
    cfg.epsilon = 0.1;
    cfg.alpha = 0.05;
    cfg.epochs = 8;
    cfg.batch_size = 32;
    cfg.lr.initial = 0.1;
    cfg.seed = seed;
    training::standard_train(net, ds.train.images, ds.train.labels, ds.val.images, ds.val.labels,
                             cfg);
    return net;
}

} // namespace

TEST_CASE("idx loader accepts the canonical format and scales pixels") {
    auto dir = tmpdir();
    write_idx_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", 64, 28, 28);
    write_idx_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", 32, 28, 28);
    data::MnistOptions opt;
    opt.train_count = 40;
    opt.val_count = 10;
    opt.test_count = 20;
    auto ds = data::load_mnist_idx<double>(dir.string(), opt);
    CHECK(ds.train.count() == 40);
    CHECK(ds.test.count() == 20);
    CHECK(ds.image_shape == std::vector<std::size_t>{1, 14, 14});  // downsampled by default
    for (double v : ds.train.images.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    opt.downsample_2x = false;
    auto full = data::load_mnist_idx<double>(dir.string(), opt);
    CHECK(full.image_shape == std::vector<std::size_t>{1, 28, 28});
}

TEST_CASE("idx loader rejects bad magic, bad labels and truncation") {
    auto dir = tmpdir();
    write_idx_pair(dir, "bad-magic-img", "bad-magic-lab", 4, 6, 6, 0x00000802u);
    CHECK_THROWS_AS(data::read_idx_pair((dir / "bad-magic-img").string(),
                                        (dir / "bad-magic-lab").string()),
                    ParseError);

    write_idx_pair(dir, "ok-img", "bad-lab", 4, 6, 6, 0x00000803u, 0x00000801u, /*bad_label_at=*/2);
    CHECK_THROWS_AS(data::read_idx_pair((dir / "ok-img").string(), (dir / "bad-lab").string()),
                    ParseError);

    write_idx_pair(dir, "trunc-img", "trunc-lab", 4, 6, 6);
    fs::resize_file(dir / "trunc-img", 20);
    CHECK_THROWS_AS(data::read_idx_pair((dir / "trunc-img").string(), (dir / "trunc-lab").string()),
                    ParseError);
}

TEST_CASE("dataset cache round trip preserves pixels bitwise") {
    auto dir = tmpdir();
    auto ds = small_gauss(5);
    auto path = (dir / "cache.bin").string();
    data::save_dataset(path, ds);
    auto back = data::load_dataset<double>(path);
    CHECK(back.name == ds.name);
    CHECK(back.num_classes == ds.num_classes);
    CHECK(back.train.images.values == ds.train.images.values);
    CHECK(back.val.labels == ds.val.labels);
    CHECK(back.test.images.values == ds.test.images.values);
}

TEST_CASE("synthetic gaussians are deterministic and clipped") {
    auto a = small_gauss(9);
    auto b = small_gauss(9);
    CHECK(a.train.images.values == b.train.images.values);
    CHECK(a.test.labels == b.test.labels);
    for (double v : a.train.images.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    data::validate_batch(a.train, a.num_classes);
}

TEST_CASE("zero separation is a chance-level task") {
    double acc_sum = 0;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        auto ds = data::synth_gaussians<double>(4, 40, 3, 0.0, seed);
        auto net = quick_trained_net(ds, seed);
        auto probs = forward(net, ds.test.images).probs;
        acc_sum += accuracy(probs, std::span<const int>(ds.test.labels));
    }
    CHECK(std::abs(acc_sum / 3.0 - 0.25) < 0.05);
}

TEST_CASE("digit glyphs are learnable and deterministic") {
    data::DigitsOptions opt;
    opt.train_count = 100;
    opt.val_count = 40;
    opt.test_count = 40;
    opt.seed = 4;
    auto a = data::synth_digits<double>(opt);
    auto b = data::synth_digits<double>(opt);
    CHECK(a.train.images.values == b.train.images.values);
    data::validate_batch(a.train, 10);
    CHECK(a.image_shape == std::vector<std::size_t>{1, 14, 14});
}

TEST_CASE("csv round trips through the parser") {
    csv::Table t;
    t.header = {"name", "value", "note"};
    t.rows.push_back({"plain", "1.5", "nothing"});
    t.rows.push_back({"comma,inside", "-2", "quote\"inside"});
    t.rows.push_back({"newline\ninside", "nan", ""});
    auto text = csv::to_string(t);
    auto back = csv::parse(text);
    CHECK(back.header == t.header);
    REQUIRE(back.rows.size() == t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) CHECK(back.rows[i] == t.rows[i]);
    CHECK(csv::to_string(back) == text);

    CHECK_THROWS_AS(csv::parse("a,b\n1,2,3\n"), ParseError);
    CHECK_THROWS_AS(csv::parse("a,\"b\n"), ParseError);
}

TEST_CASE("evaluate with a zero-radius attack returns the clean accuracy") {
    auto ds = small_gauss(11);
    auto net = quick_trained_net(ds, 11);
    eval::NamedAttack<double> na{"fgsm", attacks::AttackKind::fgsm, {}};
    na.cfg.epsilon = 0.0;
    na.cfg.loss = losses::LossKind::cross_entropy;
    auto report = eval::evaluate(net, ds.test, {na});
    CHECK(report.attacks[0].robust_acc == doctest::Approx(report.clean_acc));
    CHECK(report.attacks[0].runtime_s >= 0.0);
    CHECK(report.runtime_s > 0.0);
}

TEST_CASE("evaluate leaves the network untouched and orders multi-step above single-step") {
    auto ds = small_gauss(13);
    auto net = quick_trained_net(ds, 13);
    auto params_before = net.layers[1].weight.values;

    eval::NamedAttack<double> fg{"fgsm", attacks::AttackKind::fgsm, {}};
    fg.cfg.epsilon = 0.1;
    fg.cfg.loss = losses::LossKind::cross_entropy;
    eval::NamedAttack<double> pg{"pgd-ce", attacks::AttackKind::pgd_ce,
                                 attacks::preset_pgd<double>(0.1, 7, losses::LossKind::cross_entropy)};
    pg.cfg.seed = 3;
    auto report = eval::evaluate(net, ds.test, {fg, pg});
    CHECK(net.layers[1].weight.values == params_before);
    CHECK(report.attacks[1].robust_acc <= report.attacks[0].robust_acc + 0.01);
    // distortion of successful linf adversaries stays inside the ball
    CHECK(report.attacks[1].mean_linf <= 0.1 + 1e-9);
}

TEST_CASE("transfer with source == target reproduces the white-box evaluation") {
    auto ds = small_gauss(17);
    auto net = quick_trained_net(ds, 17);
    eval::NamedAttack<double> pg{"pgd-ce", attacks::AttackKind::pgd_ce,
                                 attacks::preset_pgd<double>(0.1, 5, losses::LossKind::cross_entropy)};
    pg.cfg.seed = 23;
    pg.cfg.restarts = 2;
    auto white = eval::evaluate(net, ds.test, {pg});
    auto black = eval::transfer_eval(net, net, ds.test, {pg});
    CHECK(black.clean_acc == white.clean_acc);
    CHECK(black.attacks[0].robust_acc == white.attacks[0].robust_acc);
    CHECK(black.attacks[0].worst_case_acc == white.attacks[0].worst_case_acc);
}

TEST_CASE("loss surface: center cell, orthogonality, and a monotone linear slice") {
    auto ds = small_gauss(19);
    auto net = quick_trained_net(ds, 19);
    Tensor<double> x({1, 4});
    std::copy(ds.test.images.row(0), ds.test.images.row(0) + 4, x.row(0));
    int y = ds.test.labels[0];

    auto grid = eval::loss_surface(net, x, y, losses::LossKind::gama, 25.0, 0.1, 11, 7);
    // orthogonality after rescaling to ||g||
    double dot = 0, gn = 0, pn = 0;
    for (std::size_t i = 0; i < grid.g.size(); ++i) {
        dot += grid.g[i] * grid.g_perp[i];
        gn += grid.g[i] * grid.g[i];
        pn += grid.g_perp[i] * grid.g_perp[i];
    }
    CHECK(std::abs(dot) < 1e-9);
    CHECK(std::sqrt(pn) == doctest::Approx(std::sqrt(gn)).epsilon(1e-9));

    // the center cell equals the loss at x
    losses::LossSpec<double> spec;
    spec.kind = losses::LossKind::gama;
    spec.lambda = 25.0;
    spec.reference_probs = forward(net, x).probs;
    std::vector<double> at_x;
    auto fwd = forward_trace(net, x);
    losses::eval_loss(fwd.acts.back(), std::span<const int>(std::vector<int>{y}), spec, at_x,
                      static_cast<Tensor<double>*>(nullptr));
    CHECK(grid.values[5 * 11 + 5] == doctest::Approx(at_x[0]).epsilon(1e-12));

    // linear model: ce along +delta1 is nondecreasing while the clamp is inactive
    Network<double> lin;
    lin.num_classes = 2;
    add_affine(lin, 2, 2);
    lin.layers[0].weight.values = {1.0, 0.5, -1.0, -0.5};
    Tensor<double> x2({1, 2}, {0.5, 0.5});
    auto g2 = eval::loss_surface(lin, x2, 0, losses::LossKind::cross_entropy, 0.0, 0.2, 9, 3);
    for (int i = 4; i + 1 < 9; ++i)
        CHECK(g2.values[static_cast<std::size_t>(i + 1) * 9 + 4] >=
              g2.values[static_cast<std::size_t>(i) * 9 + 4] - 1e-12);
}

TEST_CASE("epsilon sweep starts at the clean point") {
    auto ds = small_gauss(23);
    auto net = quick_trained_net(ds, 23);
    auto curve = eval::sweep_epsilon(net, ds.test, std::vector<double>{0.0, 0.05, 0.1}, 7, 5);
    REQUIRE(curve.size() == 3);
    auto probs = forward(net, ds.test.images).probs;
    double clean_acc = accuracy(probs, std::span<const int>(ds.test.labels));
    double clean_ce = 0;
    for (std::size_t m = 0; m < ds.test.count(); ++m)
        clean_ce += losses::cross_entropy(std::span<const double>(probs.row(m), 3),
                                          ds.test.labels[m]);
    clean_ce /= static_cast<double>(ds.test.count());
    CHECK(curve[0].epsilon == 0.0);
    CHECK(curve[0].pgd_acc == doctest::Approx(clean_acc));
    CHECK(curve[0].fgsm_loss == doctest::Approx(clean_ce).epsilon(1e-9));
}

TEST_CASE("lipschitz: constant network has zero ratios") {
    Network<double> net;
    net.num_classes = 3;
    add_affine(net, 4, 3);  // zero weights and biases -> constant logits
    auto ds = small_gauss(29);
    data::LabeledBatch<double> few;
    few.images = Tensor<double>({5, 4});
    std::copy(ds.test.images.values.begin(), ds.test.images.values.begin() + 20,
              few.images.values.begin());
    few.labels.assign(ds.test.labels.begin(), ds.test.labels.begin() + 5);
    auto rep = eval::lipschitz_estimate(net, few, 0.2, 20, 3);
    CHECK(rep.mean == 0.0);
    CHECK(rep.max == 0.0);
}

TEST_CASE("lipschitz estimate respects the affine operator-norm bound") {
    Network<double> net;
    net.num_classes = 3;
    add_affine(net, 4, 3);
    init_params(net, 31);
    double sigma = oracles::operator_norm(net.layers[0].weight);

    auto ds = small_gauss(31);
    data::LabeledBatch<double> few;
    few.images = Tensor<double>({8, 4});
    std::copy(ds.test.images.values.begin(), ds.test.images.values.begin() + 32,
              few.images.values.begin());
    few.labels.assign(ds.test.labels.begin(), ds.test.labels.begin() + 8);

    auto cfg = attacks::preset_short(attacks::preset_gama_pgd_mnist<double>(0.2), 10);
    cfg.seed = 5;
    auto rep = eval::lipschitz_estimate(net, few, 0.2, 40, 7, &cfg);
    // softmax is 1-lipschitz, so the composite cannot exceed the weight operator norm
    CHECK(rep.max <= sigma + 1e-9);
    CHECK(rep.mean > 0.0);
}

TEST_CASE("lipschitz with zero samples but the adversary included yields one ratio") {
    auto ds = small_gauss(37);
    auto net = quick_trained_net(ds, 37);
    data::LabeledBatch<double> few;
    few.images = Tensor<double>({3, 4});
    std::copy(ds.test.images.values.begin(), ds.test.images.values.begin() + 12,
              few.images.values.begin());
    few.labels.assign(ds.test.labels.begin(), ds.test.labels.begin() + 3);
    auto cfg = attacks::preset_short(attacks::preset_gama_pgd_mnist<double>(0.2), 10);
    auto rep = eval::lipschitz_estimate(net, few, 0.2, 0, 9, &cfg);
    for (double v : rep.per_sample) CHECK(v >= 0.0);
    CHECK(rep.max > 0.0);
}

// ---- command line ---------------------------------------------------------------

TEST_CASE("cli: fixed seed produces byte-identical csv across runs") {
    auto dir = tmpdir();
    auto model = (dir / "cli_model.ckpt").string();
    int rc = cli::run({"train", "--regime", "standard", "--data", "gauss", "--per-class", "30",
                       "--dim", "4", "--classes", "3", "--epochs", "3", "--seed", "5", "--out",
                       model, "--report", (dir / "train.csv").string()});
    REQUIRE(rc == 0);

    auto out1 = (dir / "a1.csv").string(), out2 = (dir / "a2.csv").string();
    for (const auto& out : {out1, out2}) {
        rc = cli::run({"attack", "--model", model, "--data", "gauss", "--per-class", "30", "--dim",
                       "4", "--classes", "3", "--attack", "gama-pgd", "--epsilon", "0.1",
                       "--steps", "10", "--seed", "7", "--out", out});
        REQUIRE(rc == 0);
    }
    std::ifstream f1(out1, std::ios::binary), f2(out2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    CHECK(!s1.empty());

    // emitted csv is re-parseable by the tool's own reader
    auto table = csv::read_file(out1);
    CHECK(table.header == csv::Row{"sample_index", "clean_label", "predicted_label", "success",
                                   "final_margin", "linf_distortion"});
    CHECK(!table.rows.empty());
}

TEST_CASE("cli: unknown attack name exits 2 and lists valid names") {
    auto dir = tmpdir();
    auto model = (dir / "cli_model2.ckpt").string();
    REQUIRE(cli::run({"train", "--regime", "standard", "--data", "gauss", "--per-class", "20",
                      "--dim", "4", "--classes", "3", "--epochs", "2", "--seed", "5", "--out",
                      model, "--report", (dir / "t2.csv").string()}) == 0);
    int rc = cli::run({"eval", "--model", model, "--data", "gauss", "--per-class", "20", "--dim",
                       "4", "--classes", "3", "--attacks", "nosuch", "--out",
                       (dir / "e.csv").string()});
    CHECK(rc == 2);
}

TEST_CASE("cli: config file values are applied and flags override them") {
    auto dir = tmpdir();
    auto cfg_path = (dir / "attack.cfg").string();
    {
        std::ofstream os(cfg_path);
        os << "data=gauss\nper-class=20\ndim=4\nclasses=3\nepsilon=0.05\nsteps=5\nseed=11\n";
    }
    auto model = (dir / "cli_model3.ckpt").string();
    REQUIRE(cli::run({"train", "--regime", "standard", "--data", "gauss", "--per-class", "20",
                      "--dim", "4", "--classes", "3", "--epochs", "2", "--seed", "5", "--out",
                      model, "--report", (dir / "t3.csv").string()}) == 0);

    auto out1 = (dir / "c1.csv").string();
    REQUIRE(cli::run({"attack", "--model", model, "--attack", "fgsm", "--config", cfg_path,
                      "--out", out1}) == 0);
    auto t1 = csv::read_file(out1);
    CHECK(!t1.rows.empty());

    // flag overrides the config epsilon: radius 0 means the adversary equals the input
    auto out2 = (dir / "c2.csv").string();
    REQUIRE(cli::run({"attack", "--model", model, "--attack", "fgsm", "--config", cfg_path,
                      "--epsilon", "0", "--out", out2}) == 0);
    auto t2 = csv::read_file(out2);
    for (const auto& row : t2.rows) CHECK(std::stod(row[5]) == 0.0);
}

TEST_CASE("cli: missing subcommand or bad flags are usage errors") {
    CHECK(cli::run({}) == 2);
    CHECK(cli::run({"attack", "--no-such-flag"}) == 2);
    CHECK(cli::run({"eval"}) == 2);  // --model required
}
