#include "advkit/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "advkit/attacks.hpp"
#include "advkit/checkpoint.hpp"
#include "advkit/csv.hpp"
#include "advkit/dataset.hpp"
#include "advkit/evaluate.hpp"
#include "advkit/losses.hpp"
#include "advkit/network.hpp"
#include "advkit/training.hpp"

namespace advkit::cli {
namespace {

using D = double;

// ---- flat key=value config files ------------------------------------------------

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

std::vector<std::pair<std::string, std::string>> read_kv_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto pos = t.find('=');
        if (pos == std::string::npos)
            throw ParseError("config line " + std::to_string(lineno) + " is not key=value: " + t);
        std::string key = trim(t.substr(0, pos));
        std::string value = trim(t.substr(pos + 1));
        if (key.empty()) throw ParseError("config line " + std::to_string(lineno) + " has no key");
        if (key == "config") throw ParseError("config files cannot nest via a 'config' key");
        entries.emplace_back(std::move(key), std::move(value));
    }
    return entries;
}

// Pulls --config out of the raw args and splices the file's entries in right after
// the subcommand name, so explicit flags (later) override file values (earlier).
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 0; i < args.size();) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw ConfigError("--config needs a file path");
            path = args[i + 1];
            args.erase(args.begin() + i, args.begin() + i + 2);
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + i);
        } else {
            ++i;
        }
    }
    if (path.empty() || args.empty()) return args;
    std::vector<std::string> expanded;
    for (auto& [key, value] : read_kv_config(path)) expanded.push_back("--" + key + "=" + value);
    args.insert(args.begin() + 1, expanded.begin(), expanded.end());
    return args;
}

// later occurrences win, giving flags precedence over config entries
void make_overridable(CLI::App* cmd) {
    for (auto* opt : cmd->get_options()) {
        if (opt->get_expected_min() >= 1) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
}

// ---- option blocks -----------------------------------------------------------------

struct DataOpts {
    std::string kind = "digits";    // digits | gauss | mnist | cache
    std::string path;               // mnist dir or cache file
    std::size_t train_count = 2000, val_count = 500, test_count = 1000;
    int classes = 10, per_class = 200, dim = 8;
    double separation = 0.8;
    std::uint64_t seed = 0;
    bool no_downsample = false;
    std::string save_path;          // optional cache output
};

void add_data_opts(CLI::App* cmd, DataOpts& d) {
    cmd->add_option("--data", d.kind, "dataset kind: digits, gauss, mnist, cache")
        ->check(CLI::IsMember({"digits", "gauss", "mnist", "cache"}));
    cmd->add_option("--data-path", d.path, "mnist idx directory or cache file");
    cmd->add_option("--train-count", d.train_count, "training samples");
    cmd->add_option("--val-count", d.val_count, "validation samples");
    cmd->add_option("--test-count", d.test_count, "test samples");
    cmd->add_option("--classes", d.classes, "gauss: class count");
    cmd->add_option("--per-class", d.per_class, "gauss: training samples per class");
    cmd->add_option("--dim", d.dim, "gauss: input dimension");
    cmd->add_option("--separation", d.separation, "gauss: center separation");
    cmd->add_option("--data-seed", d.seed, "dataset generation seed");
    cmd->add_flag("--no-downsample", d.no_downsample, "mnist: keep 28x28 images");
    cmd->add_option("--save-data", d.save_path, "write the dataset to a cache file");
}

data::Dataset<D> build_dataset(const DataOpts& d) {
    data::Dataset<D> ds;
    if (d.kind == "digits") {
        data::DigitsOptions opt;
        opt.train_count = d.train_count;
        opt.val_count = d.val_count;
        opt.test_count = d.test_count;
        opt.seed = d.seed;
        ds = data::synth_digits<D>(opt);
    } else if (d.kind == "gauss") {
        ds = data::synth_gaussians<D>(d.classes, d.per_class, d.dim, d.separation, d.seed);
    } else if (d.kind == "mnist") {
        if (d.path.empty()) throw ConfigError("--data mnist needs --data-path <idx dir>");
        data::MnistOptions opt;
        opt.train_count = d.train_count;
        opt.val_count = d.val_count;
        opt.test_count = d.test_count;
        opt.downsample_2x = !d.no_downsample;
        opt.seed = d.seed;
        ds = data::load_mnist_idx<D>(d.path, opt);
    } else {
        if (d.path.empty()) throw ConfigError("--data cache needs --data-path <file>");
        ds = data::load_dataset<D>(d.path);
    }
    if (!d.save_path.empty()) data::save_dataset(d.save_path, ds);
    return ds;
}

const data::LabeledBatch<D>& pick_split(const data::Dataset<D>& ds, const std::string& split) {
    if (split == "train") return ds.train;
    if (split == "val") return ds.val;
    return ds.test;
}

struct AttackOpts {
    std::string preset = "mnist";   // schedule family for gama attacks
    double epsilon = 0.3;
    int steps = 0;                  // 0 = preset default
    double step_size = 0;
    double fw_gamma = 0;
    double lambda0 = -1;
    int tau = 0;
    std::string drop_steps;
    double drop_factor = 0;
    std::string init;
    std::string loss;
    int restarts = 1;
    int targets_k = 5;
    double alpha = 0;               // rfgsm noise
};

void add_attack_opts(CLI::App* cmd, AttackOpts& a) {
    cmd->add_option("--preset", a.preset, "gama schedule preset: mnist or cifar")
        ->check(CLI::IsMember({"mnist", "cifar"}));
    cmd->add_option("--epsilon", a.epsilon, "linf radius");
    cmd->add_option("--steps", a.steps, "attack iterations");
    cmd->add_option("--step-size", a.step_size, "pgd step size");
    cmd->add_option("--gamma", a.fw_gamma, "frank-wolfe convex parameter");
    cmd->add_option("--lambda0", a.lambda0, "initial relaxation weight");
    cmd->add_option("--tau", a.tau, "relaxation decay steps");
    cmd->add_option("--drop-steps", a.drop_steps, "comma list of step-drop iterations");
    cmd->add_option("--drop-factor", a.drop_factor, "step-size drop factor");
    cmd->add_option("--init", a.init, "init noise: bernoulli, uniform, zero")
        ->check(CLI::IsMember({"bernoulli", "uniform", "zero"}));
    cmd->add_option("--loss", a.loss, "loss for fgsm/rfgsm/pgd attacks");
    cmd->add_option("--restarts", a.restarts, "random restarts");
    cmd->add_option("--k", a.targets_k, "gama-mt target count");
    cmd->add_option("--alpha", a.alpha, "rfgsm noise magnitude");
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoi(item));
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    return out;
}

attacks::AttackConfig<D> build_attack_config(attacks::AttackKind kind, const AttackOpts& a,
                                             std::uint64_t seed) {
    const D eps = a.epsilon;
    attacks::AttackConfig<D> cfg;
    switch (kind) {
        case attacks::AttackKind::gama_pgd:
        case attacks::AttackKind::gama_mt:
            cfg = (a.preset == "mnist") ? attacks::preset_gama_pgd_mnist(eps)
                                        : attacks::preset_gama_pgd(eps);
            break;
        case attacks::AttackKind::gama_fw:
            cfg = (a.preset == "mnist") ? attacks::preset_gama_fw_mnist(eps)
                                        : attacks::preset_gama_fw(eps);
            break;
        case attacks::AttackKind::pgd_ce:
        case attacks::AttackKind::pgd_margin_prob:
        case attacks::AttackKind::pgd_margin_logit:
        case attacks::AttackKind::ifgsm:
            cfg = attacks::preset_pgd(eps, a.steps > 0 ? a.steps : 100,
                                      losses::LossKind::cross_entropy);
            break;
        default:
            cfg.epsilon = eps;
            cfg.steps = 1;
            break;
    }
    if (a.steps > 0) {
        cfg.steps = a.steps;
        if (cfg.tau > cfg.steps) cfg.tau = cfg.steps;
        std::erase_if(cfg.drop_steps, [&](int s) { return s >= cfg.steps; });
    }
    if (a.step_size > 0) cfg.step_size = a.step_size;
    if (a.fw_gamma > 0) cfg.fw_gamma = a.fw_gamma;
    if (a.lambda0 >= 0) cfg.lambda0 = a.lambda0;
    if (a.tau > 0) cfg.tau = a.tau;
    if (!a.drop_steps.empty()) cfg.drop_steps = parse_int_list(a.drop_steps);
    if (a.drop_factor > 1) cfg.drop_factor = a.drop_factor;
    if (!a.init.empty()) {
        cfg.init = a.init == "zero"      ? attacks::InitNoise::zero
                   : a.init == "uniform" ? attacks::InitNoise::uniform
                                         : attacks::InitNoise::bernoulli;
    }
    if (!a.loss.empty()) {
        auto lk = losses::loss_from_name(a.loss);
        if (!lk) throw ConfigError("unknown loss name: " + a.loss);
        cfg.loss = *lk;
    }
    cfg.restarts = a.restarts;
    cfg.targets_k = a.targets_k;
    if (a.alpha > 0) cfg.rfgsm_alpha = a.alpha;
    cfg.seed = seed;
    return cfg;
}

attacks::AttackKind parse_attack_kind(const std::string& name) {
    auto kind = attacks::attack_from_name(name);
    if (!kind) {
        std::string valid;
        for (auto k : attacks::all_attack_kinds()) {
            if (!valid.empty()) valid += ", ";
            valid += attacks::attack_name(k);
        }
        throw ConfigError("unknown attack '" + name + "'; valid names: " + valid);
    }
    return *kind;
}

Network<D> build_arch(const std::string& arch, const data::Dataset<D>& ds) {
    std::size_t input_dim = 1;
    for (std::size_t v : ds.image_shape) input_dim *= v;
    if (arch.rfind("mlp:", 0) == 0) {
        auto dims = parse_int_list(arch.substr(4));
        if (dims.empty()) throw ConfigError("mlp arch needs hidden sizes, e.g. mlp:64,32");
        std::vector<std::size_t> hidden(dims.begin(), dims.end());
        return make_mlp<D>(input_dim, hidden, ds.num_classes);
    }
    if (arch.rfind("conv:", 0) == 0) {
        auto dims = parse_int_list(arch.substr(5));
        if (dims.size() != 3) throw ConfigError("conv arch needs c1,c2,fc, e.g. conv:8,16,64");
        if (ds.image_shape.size() != 3) throw ConfigError("conv arch needs [c,h,w] images");
        return make_small_convnet<D>(ds.image_shape[0], ds.image_shape[1], ds.image_shape[2],
                                     dims[0], dims[1], dims[2], ds.num_classes);
    }
    throw ConfigError("unknown architecture '" + arch + "'; use mlp:... or conv:c1,c2,fc");
}

csv::Table report_table(const eval::EvalReport& report) {
    csv::Table t;
    t.header = {"attack", "robust_acc", "worst_case_acc", "mean_linf", "mean_l2", "runtime_s"};
    t.rows.push_back({"clean", csv::format_double(report.clean_acc),
                      csv::format_double(report.clean_acc), "0", "0", "0"});
    for (const auto& a : report.attacks)
        t.rows.push_back({a.name, csv::format_double(a.robust_acc),
                          csv::format_double(a.worst_case_acc), csv::format_double(a.mean_linf),
                          csv::format_double(a.mean_l2), csv::format_double(a.runtime_s)});
    return t;
}

template <typename NetT>
csv::Table per_sample_table(const NetT& net, const data::LabeledBatch<D>& split,
                            const attacks::AttackResult<D>& res) {
    auto probs = forward(net, res.adversarial).probs;
    csv::Table t;
    t.header = {"sample_index", "clean_label", "predicted_label", "success", "final_margin",
                "linf_distortion"};
    for (std::size_t m = 0; m < split.images.dim(0); ++m) {
        int pred = argmax_lowest(probs.row(m), probs.row_size());
        t.rows.push_back({std::to_string(m), std::to_string(split.labels[m]), std::to_string(pred),
                          res.success[m] ? "1" : "0", csv::format_double(res.final_margin[m]),
                          csv::format_double(linf_distance(res.adversarial, split.images, m))});
    }
    return t;
}

// ---- subcommand state --------------------------------------------------------------

struct TrainArgs {
    DataOpts data;
    std::string regime = "gat";
    std::string preset = "mnist";
    std::string arch = "mlp:128";
    std::string precision = "f32";
    double epsilon = 0.3, alpha = -1, lambda = -1, stepup_factor = -1;
    std::string stepup_epochs;
    int epochs = 0, batch_size = 0;
    double lr = 0, momentum = -1, weight_decay = -1;
    std::string lr_drops;
    bool no_alternate = false;
    std::uint64_t seed = 0;
    std::string out = "model.ckpt";
    std::string report = "train.csv";
};

template <typename T>
training::GatConfig<T> build_train_config(const TrainArgs& a) {
    training::GatConfig<T> cfg = (a.preset == "cifar")
                                     ? training::preset_gat_cifar<T>(static_cast<T>(a.epsilon),
                                                                     a.epochs > 0 ? a.epochs : 16, a.seed)
                                     : training::preset_gat_mnist<T>(static_cast<T>(a.epsilon),
                                                                     a.epochs > 0 ? a.epochs : 16, a.seed);
    if (a.alpha >= 0) cfg.alpha = static_cast<T>(a.alpha);
    if (a.lambda >= 0) cfg.lambda_init = static_cast<T>(a.lambda);
    if (a.stepup_factor >= 1) cfg.stepup_factor = static_cast<T>(a.stepup_factor);
    if (!a.stepup_epochs.empty()) cfg.stepup_epochs = parse_int_list(a.stepup_epochs);
    if (a.batch_size > 0) cfg.batch_size = a.batch_size;
    if (a.lr > 0) cfg.lr.initial = static_cast<T>(a.lr);
    if (!a.lr_drops.empty()) {
        cfg.lr.drops.clear();
        std::stringstream ss(a.lr_drops);
        std::string item;
        while (std::getline(ss, item, ',')) {
            auto pos = item.find(':');
            if (pos == std::string::npos) throw ConfigError("lr drops use epoch:factor,epoch:factor");
            cfg.lr.drops.emplace_back(std::stoi(item.substr(0, pos)),
                                      static_cast<T>(std::stod(item.substr(pos + 1))));
        }
    }
    if (a.momentum >= 0) cfg.momentum = static_cast<T>(a.momentum);
    if (a.weight_decay >= 0) cfg.weight_decay = static_cast<T>(a.weight_decay);
    cfg.alternate_lambda = !a.no_alternate;
    cfg.seed = a.seed;
    if (cfg.alpha > cfg.epsilon) cfg.allow_alpha_above_epsilon = true;
    return cfg;
}

template <typename T>
int do_train(const TrainArgs& a) {
    auto regime = training::regime_from_name(a.regime);
    if (!regime) throw ConfigError("unknown regime '" + a.regime +
                                   "'; valid: standard, fgsm-at, rfgsm-at, gat");
    auto ds64 = build_dataset(a.data);

    // datasets are built in double; narrow for 32-bit training
    Tensor<T> tx(ds64.train.images.shape), vx(ds64.val.images.shape);
    for (std::size_t i = 0; i < tx.size(); ++i) tx[i] = static_cast<T>(ds64.train.images[i]);
    for (std::size_t i = 0; i < vx.size(); ++i) vx[i] = static_cast<T>(ds64.val.images[i]);

    auto cfg = build_train_config<T>(a);
    auto net64 = build_arch(a.arch, ds64);
    Network<T> net;
    net.num_classes = net64.num_classes;
    for (auto& l64 : net64.layers) {
        Layer<T> l;
        l.spec = l64.spec;
        l.weight.shape = l64.weight.shape;
        l.weight.values.assign(l64.weight.values.begin(), l64.weight.values.end());
        l.bias.shape = l64.bias.shape;
        l.bias.values.assign(l64.bias.values.begin(), l64.bias.values.end());
        net.layers.push_back(std::move(l));
    }
    init_params(net, cfg.seed);

    auto report = training::train(net, tx, ds64.train.labels, vx, ds64.val.labels, cfg, *regime);

    CheckpointMeta meta;
    meta.regime = a.regime;
    meta.seed = cfg.seed;
    meta.epoch = cfg.epochs;
    save_checkpoint(a.out, net, meta);
    report.checkpoint_path = a.out;

    csv::Table t;
    t.header = {"epoch", "clean_acc", "fgsm_acc", "pgd7_acc", "ce_clean", "ce_adv", "lambda"};
    for (const auto& e : report.epochs)
        t.rows.push_back({std::to_string(e.epoch), csv::format_double(e.clean_acc),
                          csv::format_double(e.fgsm_acc), csv::format_double(e.pgd_acc),
                          csv::format_double(e.ce_clean), csv::format_double(e.ce_adv),
                          csv::format_double(e.lambda)});
    csv::write_file(a.report, t);

    const auto& last = report.epochs.back();
    std::cout << "ok train regime=" << a.regime << " epochs=" << cfg.epochs
              << " clean_acc=" << csv::format_double(last.clean_acc)
              << " pgd" << cfg.val_pgd_steps << "_acc=" << csv::format_double(last.pgd_acc)
              << " checkpoint=" << a.out << " report=" << a.report << "\n";
    return 0;
}

struct AttackArgs {
    DataOpts data;
    AttackOpts atk;
    std::string model;
    std::string split = "test";
    std::string attack = "gama-pgd";
    std::uint64_t seed = 0;
    std::string out = "attack.csv";
};

int do_attack(const AttackArgs& a) {
    auto [net, meta] = load_checkpoint<D>(a.model);
    auto ds = build_dataset(a.data);
    const auto& split = pick_split(ds, a.split);
    auto kind = parse_attack_kind(a.attack);
    auto cfg = build_attack_config(kind, a.atk, a.seed);

    attacks::AttackResult<D> res;
    if (cfg.restarts > 1) {
        res = attacks::worst_case_over_restarts(net, split.images,
                                                std::span<const int>(split.labels), kind, cfg,
                                                cfg.restarts)
                  .combined;
    } else {
        res = attacks::run_attack(net, split.images, std::span<const int>(split.labels), kind, cfg);
    }
    csv::write_file(a.out, per_sample_table(net, split, res));

    std::size_t ok = 0;
    for (auto s : res.success) ok += !s;
    std::cout << "ok attack kind=" << a.attack << " samples=" << split.count()
              << " robust_acc=" << csv::format_double(static_cast<double>(ok) / split.count())
              << " out=" << a.out << "\n";
    return 0;
}

struct EvalArgs {
    DataOpts data;
    AttackOpts atk;
    std::string model;
    std::string split = "test";
    std::string attack_names = "fgsm,pgd-ce,gama-pgd";
    std::uint64_t seed = 0;
    std::string out = "eval.csv";
};

std::vector<eval::NamedAttack<D>> build_attack_list(const std::string& names, const AttackOpts& atk,
                                                    std::uint64_t seed) {
    std::vector<eval::NamedAttack<D>> list;
    std::stringstream ss(names);
    std::string name;
    while (std::getline(ss, name, ',')) {
        if (name.empty()) continue;
        auto kind = parse_attack_kind(name);
        list.push_back({name, kind, build_attack_config(kind, atk, seed)});
    }
    if (list.empty()) throw ConfigError("no attacks given");
    return list;
}

int do_eval(const EvalArgs& a) {
    auto [net, meta] = load_checkpoint<D>(a.model);
    auto ds = build_dataset(a.data);
    const auto& split = pick_split(ds, a.split);
    auto list = build_attack_list(a.attack_names, a.atk, a.seed);
    auto report = eval::evaluate(net, split, list);
    csv::write_file(a.out, report_table(report));
    std::cout << "ok eval clean_acc=" << csv::format_double(report.clean_acc);
    for (const auto& s : report.attacks)
        std::cout << " " << s.name << "=" << csv::format_double(s.worst_case_acc);
    std::cout << " out=" << a.out << "\n";
    return 0;
}

struct TransferArgs {
    DataOpts data;
    AttackOpts atk;
    std::string source, target;
    std::string split = "test";
    std::string attack_names = "fgsm,pgd-ce";
    std::uint64_t seed = 0;
    std::string out = "transfer.csv";
};

int do_transfer(const TransferArgs& a) {
    auto [src, meta_s] = load_checkpoint<D>(a.source);
    auto [tgt, meta_t] = load_checkpoint<D>(a.target);
    auto ds = build_dataset(a.data);
    const auto& split = pick_split(ds, a.split);
    auto list = build_attack_list(a.attack_names, a.atk, a.seed);
    auto report = eval::transfer_eval(src, tgt, split, list);
    csv::write_file(a.out, report_table(report));
    std::cout << "ok transfer clean_acc=" << csv::format_double(report.clean_acc);
    for (const auto& s : report.attacks)
        std::cout << " " << s.name << "=" << csv::format_double(s.worst_case_acc);
    std::cout << " out=" << a.out << "\n";
    return 0;
}

struct SurfaceArgs {
    DataOpts data;
    std::string model;
    std::string split = "test";
    std::size_t index = 0;
    std::string loss = "gama";
    double lambda = 25;
    double range = 0.3;
    int resolution = 51;
    std::uint64_t seed = 0;
    std::string out = "surface.csv";
    std::string directions_out;
};

int do_surface(const SurfaceArgs& a) {
    auto [net, meta] = load_checkpoint<D>(a.model);
    auto ds = build_dataset(a.data);
    const auto& split = pick_split(ds, a.split);
    if (a.index >= split.count()) throw ConfigError("sample index out of range");
    auto lk = losses::loss_from_name(a.loss);
    if (!lk) throw ConfigError("unknown loss name: " + a.loss);

    std::vector<std::size_t> shape = split.images.shape;
    shape[0] = 1;
    Tensor<D> image(shape);
    std::copy(split.images.row(a.index), split.images.row(a.index) + split.images.row_size(),
              image.row(0));

    auto grid = eval::loss_surface(net, image, split.labels[a.index], *lk,
                                   static_cast<D>(a.lambda), static_cast<D>(a.range),
                                   a.resolution, a.seed);

    csv::Table t;
    t.header = {"delta1", "delta2", "loss"};
    for (int i = 0; i < a.resolution; ++i)
        for (int j = 0; j < a.resolution; ++j)
            t.rows.push_back({csv::format_double(grid.axis1[i]), csv::format_double(grid.axis2[j]),
                              csv::format_double(grid.values[static_cast<std::size_t>(i) * a.resolution + j])});
    csv::write_file(a.out, t);

    std::string dirs = a.directions_out.empty() ? a.out + ".dirs.csv" : a.directions_out;
    csv::Table td;
    td.header = {"coordinate", "g", "g_perp"};
    for (std::size_t i = 0; i < grid.g.size(); ++i)
        td.rows.push_back({std::to_string(i), csv::format_double(grid.g[i]),
                           csv::format_double(grid.g_perp[i])});
    csv::write_file(dirs, td);

    std::cout << "ok surface loss=" << a.loss << " sample=" << a.index
              << " resolution=" << a.resolution << " out=" << a.out << " directions=" << dirs << "\n";
    return 0;
}

struct SweepArgs {
    DataOpts data;
    std::string model;
    std::string split = "test";
    std::string epsilons = "0,0.05,0.1,0.2,0.3,0.4,0.5";
    int pgd_steps = 7;
    std::uint64_t seed = 0;
    std::string out = "sweep.csv";
};

int do_sweep(const SweepArgs& a) {
    auto [net, meta] = load_checkpoint<D>(a.model);
    auto ds = build_dataset(a.data);
    const auto& split = pick_split(ds, a.split);
    auto eps = parse_double_list(a.epsilons);
    if (eps.empty()) throw ConfigError("no epsilons given");
    auto curve = eval::sweep_epsilon(net, split, std::vector<D>(eps.begin(), eps.end()),
                                     a.pgd_steps, a.seed);
    csv::Table t;
    t.header = {"epsilon", "pgd_acc", "fgsm_loss"};
    for (const auto& p : curve)
        t.rows.push_back({csv::format_double(p.epsilon), csv::format_double(p.pgd_acc),
                          csv::format_double(p.fgsm_loss)});
    csv::write_file(a.out, t);
    std::cout << "ok sweep points=" << curve.size() << " out=" << a.out << "\n";
    return 0;
}

struct LipschitzArgs {
    DataOpts data;
    std::string model;
    std::string split = "test";
    int count = 100;
    int samples = 50;
    double epsilon = 0.3;
    bool no_attack = false;
    std::uint64_t seed = 0;
    std::string out = "lipschitz.csv";
};

int do_lipschitz(const LipschitzArgs& a) {
    auto [net, meta] = load_checkpoint<D>(a.model);
    auto ds = build_dataset(a.data);
    const auto& split = pick_split(ds, a.split);
    std::size_t n = std::min<std::size_t>(a.count, split.count());

    data::LabeledBatch<D> subset;
    std::vector<std::size_t> shape = split.images.shape;
    shape[0] = n;
    subset.images = Tensor<D>(shape);
    subset.labels.assign(split.labels.begin(), split.labels.begin() + n);
    std::copy(split.images.values.begin(), split.images.values.begin() + n * split.images.row_size(),
              subset.images.values.begin());

    auto cfg = attacks::preset_gama_pgd_mnist<D>(a.epsilon);
    cfg.seed = a.seed;
    auto report = eval::lipschitz_estimate(net, subset, static_cast<D>(a.epsilon), a.samples,
                                           a.seed, a.no_attack ? nullptr : &cfg);
    csv::Table t;
    t.header = {"sample_index", "max_ratio"};
    for (std::size_t m = 0; m < report.per_sample.size(); ++m)
        t.rows.push_back({std::to_string(m), csv::format_double(report.per_sample[m])});
    csv::write_file(a.out, t);
    std::cout << "ok lipschitz samples=" << n << " mean=" << csv::format_double(report.mean)
              << " max=" << csv::format_double(report.max) << " out=" << a.out << "\n";
    return 0;
}

} // namespace

int run(std::vector<std::string> args) {
    CLI::App app{"adversarial robustness toolkit"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* t = app.add_subcommand("train", "train a model");
    add_data_opts(t, train_args.data);
    t->add_option("--regime", train_args.regime, "standard, fgsm-at, rfgsm-at, gat");
    t->add_option("--train-preset", train_args.preset, "hyperparameter preset: mnist or cifar")
        ->check(CLI::IsMember({"mnist", "cifar"}));
    t->add_option("--arch", train_args.arch, "mlp:h1,h2,... or conv:c1,c2,fc");
    t->add_option("--precision", train_args.precision, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    t->add_option("--epsilon", train_args.epsilon, "training threat radius");
    t->add_option("--alpha", train_args.alpha, "initial noise magnitude");
    t->add_option("--lambda", train_args.lambda, "initial relaxation weight");
    t->add_option("--stepup-factor", train_args.stepup_factor, "lambda step-up factor");
    t->add_option("--stepup-epochs", train_args.stepup_epochs, "comma list of step-up epochs");
    t->add_option("--epochs", train_args.epochs, "training epochs");
    t->add_option("--batch-size", train_args.batch_size, "minibatch size");
    t->add_option("--lr", train_args.lr, "initial learning rate");
    t->add_option("--lr-drops", train_args.lr_drops, "epoch:factor,epoch:factor");
    t->add_option("--momentum", train_args.momentum, "sgd momentum");
    t->add_option("--weight-decay", train_args.weight_decay, "sgd weight decay");
    t->add_flag("--no-alternate", train_args.no_alternate, "disable lambda alternation");
    t->add_option("--seed", train_args.seed, "training seed");
    t->add_option("--out", train_args.out, "checkpoint output path");
    t->add_option("--report", train_args.report, "per-epoch csv output path");

    AttackArgs attack_args;
    auto* at = app.add_subcommand("attack", "run one attack, write per-sample csv");
    add_data_opts(at, attack_args.data);
    add_attack_opts(at, attack_args.atk);
    at->add_option("--model", attack_args.model, "checkpoint path")->required();
    at->add_option("--split", attack_args.split, "train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    at->add_option("--attack", attack_args.attack, "attack name");
    at->add_option("--seed", attack_args.seed, "attack seed");
    at->add_option("--out", attack_args.out, "csv output path");

    EvalArgs eval_args;
    auto* ev = app.add_subcommand("eval", "multi-attack robustness report");
    add_data_opts(ev, eval_args.data);
    add_attack_opts(ev, eval_args.atk);
    ev->add_option("--model", eval_args.model, "checkpoint path")->required();
    ev->add_option("--split", eval_args.split, "train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_option("--attacks", eval_args.attack_names, "comma list of attack names");
    ev->add_option("--seed", eval_args.seed, "attack seed");
    ev->add_option("--out", eval_args.out, "csv output path");

    TransferArgs transfer_args;
    auto* tr = app.add_subcommand("transfer", "black-box transfer evaluation");
    add_data_opts(tr, transfer_args.data);
    add_attack_opts(tr, transfer_args.atk);
    tr->add_option("--source", transfer_args.source, "source checkpoint")->required();
    tr->add_option("--target", transfer_args.target, "target checkpoint")->required();
    tr->add_option("--split", transfer_args.split, "train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    tr->add_option("--attacks", transfer_args.attack_names, "comma list of attack names");
    tr->add_option("--seed", transfer_args.seed, "attack seed");
    tr->add_option("--out", transfer_args.out, "csv output path");

    SurfaceArgs surface_args;
    auto* su = app.add_subcommand("surface", "loss surface grid around one sample");
    add_data_opts(su, surface_args.data);
    su->add_option("--model", surface_args.model, "checkpoint path")->required();
    su->add_option("--split", surface_args.split, "train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    su->add_option("--index", surface_args.index, "sample index");
    su->add_option("--loss", surface_args.loss, "surface loss kind");
    su->add_option("--lambda", surface_args.lambda, "relaxation weight for gama surfaces");
    su->add_option("--range", surface_args.range, "delta range");
    su->add_option("--resolution", surface_args.resolution, "grid resolution per axis");
    su->add_option("--seed", surface_args.seed, "direction seed");
    su->add_option("--out", surface_args.out, "csv output path");
    su->add_option("--directions-out", surface_args.directions_out, "directions csv path");

    SweepArgs sweep_args;
    auto* sw = app.add_subcommand("sweep", "accuracy and loss against epsilon");
    add_data_opts(sw, sweep_args.data);
    sw->add_option("--model", sweep_args.model, "checkpoint path")->required();
    sw->add_option("--split", sweep_args.split, "train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    sw->add_option("--epsilons", sweep_args.epsilons, "comma list of radii");
    sw->add_option("--pgd-steps", sweep_args.pgd_steps, "probe attack steps");
    sw->add_option("--seed", sweep_args.seed, "attack seed");
    sw->add_option("--out", sweep_args.out, "csv output path");

    LipschitzArgs lip_args;
    auto* li = app.add_subcommand("lipschitz", "local lipschitz estimates");
    add_data_opts(li, lip_args.data);
    li->add_option("--model", lip_args.model, "checkpoint path")->required();
    li->add_option("--split", lip_args.split, "train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    li->add_option("--count", lip_args.count, "number of samples to estimate on");
    li->add_option("--samples", lip_args.samples, "ball draws per sample");
    li->add_option("--epsilon", lip_args.epsilon, "ball radius");
    li->add_flag("--no-attack", lip_args.no_attack, "skip the attack-found neighbor");
    li->add_option("--seed", lip_args.seed, "sampling seed");
    li->add_option("--out", lip_args.out, "csv output path");

    std::string config_note;
    for (auto* cmd : {t, at, ev, tr, su, sw, li}) {
        cmd->add_option("--config", config_note,
                        "flat key=value file providing defaults; flags override it");
        make_overridable(cmd);
    }

    try {
        args = apply_config_file(std::move(args));
        std::reverse(args.begin(), args.end());  // CLI11's vector overload wants reversed args
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    // global seed override
    if (const char* env = std::getenv("ADVKIT_SEED")) {
        std::uint64_t s = std::strtoull(env, nullptr, 10);
        train_args.seed = attack_args.seed = eval_args.seed = s;
        transfer_args.seed = surface_args.seed = sweep_args.seed = lip_args.seed = s;
    }

    try {
        if (t->parsed()) {
            return train_args.precision == "f64" ? do_train<double>(train_args)
                                                 : do_train<float>(train_args);
        }
        if (at->parsed()) return do_attack(attack_args);
        if (ev->parsed()) return do_eval(eval_args);
        if (tr->parsed()) return do_transfer(transfer_args);
        if (su->parsed()) return do_surface(surface_args);
        if (sw->parsed()) return do_sweep(sweep_args);
        if (li->parsed()) return do_lipschitz(lip_args);
        std::cerr << "error: no subcommand given\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(std::move(args));
}

} // namespace advkit::cli
