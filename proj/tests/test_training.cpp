#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "pedcross/data.hpp"
#include "pedcross/gradcheck.hpp"
#include "pedcross/training.hpp"

using namespace pedcross;
namespace op = pedcross::ops;
namespace fs = std::filesystem;

namespace {

std::vector<ObservationWindow> small_dataset(int n_tracks, std::uint64_t seed, bool balanced) {
    auto tracks = generate_synthetic(ScenarioConfig::domain_a(n_tracks, seed));
    SliceOptions opt{16, 0.6, 30, 60, true};
    std::vector<ObservationWindow> windows;
    for (const auto& t : tracks) {
        auto sliced = slice_track(t, opt);
        windows.insert(windows.end(), sliced.begin(), sliced.end());
    }
    if (balanced) windows = balance_training_split(std::move(windows), seed);
    return windows;
}

ModelConfig tiny_config(Arch arch) {
    ModelConfig cfg;
    cfg.arch = arch;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.d_ffn = 32;
    cfg.pe_len = 80;
    return cfg;
}

std::string temp_path(const char* name) {
    return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("bce_loss closed forms") {
    CHECK(bce_loss(Tensor::scalar(0.5), 1).item() == doctest::Approx(std::log(2.0)));
    CHECK(bce_loss(Tensor::scalar(0.5), 0).item() == doctest::Approx(std::log(2.0)));
    CHECK(bce_loss(Tensor::scalar(1.0), 1).item() <= 1e-6);
    CHECK(bce_loss(Tensor::scalar(0.0), 0).item() <= 1e-6);

    // batch mean over {(0.9, 1), (0.2, 0)}
    const double mean =
        0.5 * (bce_loss(Tensor::scalar(0.9), 1).item() + bce_loss(Tensor::scalar(0.2), 0).item());
    CHECK(mean == doctest::Approx(0.5 * (-std::log(0.9) - std::log(0.8))));
    CHECK(mean == doctest::Approx(0.1643).epsilon(1e-3));

    CHECK_THROWS_AS(bce_loss(Tensor::scalar(0.5), 2), DataError);
}

TEST_CASE("bce_loss gradient matches the analytic derivative") {
    Tensor p = Tensor::scalar(0.3);
    const double err = grad_check(
        [](const Tensor& t, Tape* tape) { return bce_loss(t, 1, tape); }, p, 1e-7);
    CHECK(err <= 1e-6);
}

TEST_CASE("l2_traj_loss is the elementwise mean of squares") {
    Tensor pred({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor target({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(l2_traj_loss(pred, target).item() == 0.0);

    Tensor off({2, 4}, {2, 2, 3, 4, 5, 6, 7, 10});
    CHECK(l2_traj_loss(off, target).item() == doctest::Approx((1.0 + 4.0) / 8.0));
}

TEST_CASE("ted_loss composes the weighted terms") {
    std::mt19937_64 rng(3);
    Tensor pred = oracles::random_tensor({3, 4}, rng);
    Tensor target = oracles::random_tensor({3, 4}, rng);
    const Tensor p = Tensor::scalar(0.7);

    LossWeights no_reg{0.8, 0.0};
    CHECK(ted_loss(p, 1, pred, target, no_reg).item() ==
          doctest::Approx(0.8 * bce_loss(p, 1).item()));

    LossWeights no_cls{0.0, 1.8};
    CHECK(ted_loss(p, 1, target, target, no_cls).item() == 0.0);

    // defaults against an independently composed value
    LossWeights defaults;
    double mse = 0.0;
    for (int i = 0; i < pred.size(); ++i) {
        const double d = pred.at(i) - target.at(i);
        mse += d * d;
    }
    mse /= pred.size();
    const double expect = 0.8 * bce_loss(p, 1).item() + 1.8 * mse;
    CHECK(ted_loss(p, 1, pred, target, defaults).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ted_loss passes the gradient check end to end") {
    ModelConfig cfg = tiny_config(Arch::kTed);
    ModelParams m = init_model(cfg, 7);
    std::mt19937_64 rng(5);
    Tensor x = oracles::random_tensor({16, 4}, rng, 0.1, 0.7);
    Tensor y_in = oracles::random_tensor({6, 4}, rng, 0.1, 0.7);
    Tensor target = oracles::random_tensor({5, 4}, rng, 0.1, 0.7);
    const LossWeights lw;

    auto loss_fn = [&](const Tensor&, Tape* tape) -> Tensor {
        TedOutput out = forward_ted(m, x, y_in, tape);
        Tensor pred = op::slice_rows(out.trajectory, 0, 5, tape);
        return ted_loss(out.probability, 1, pred, target, lw, tape);
    };

    const auto params = m.named_parameters();
    for (const auto& [name, t] : params) t.zero_grad();
    Tape tape;
    tape.backward(loss_fn(x, &tape));
    double worst = 0.0;
    for (const auto& [name, t] : params) {
        const std::vector<double> analytic = t.grad();
        t.zero_grad();
        worst = std::max(worst, grad_check_coords(loss_fn, t, 1e-5, analytic, 2, 17));
    }
    CHECK(worst <= 1e-3);
}

TEST_CASE("adam closed-form first step and zero-grad behavior") {
    AdamConfig cfg;

    // no gradient buffer allocated: parameters unchanged
    {
        Tensor w({1}, {1.0});
        AdamState adam({w}, cfg);
        adam.step();
        CHECK(w.at(0) == 1.0);
    }

    // constant unit gradient: first bias-corrected step is ~ -lr
    {
        Tensor w({1}, {1.0});
        AdamState adam({w}, cfg);
        w.grad()[0] = 1.0;
        adam.step();
        CHECK(w.at(0) == doctest::Approx(1.0 - cfg.lr).epsilon(1e-6));
        CHECK(adam.step_count() == 1);
    }

    // zero gradient on a fresh state leaves parameters alone
    {
        Tensor w({1}, {2.0});
        AdamState adam({w}, cfg);
        w.grad()[0] = 0.0;
        adam.step();
        CHECK(w.at(0) == 2.0);
    }
}

TEST_CASE("clip_global_norm scales only above the threshold") {
    Tensor a({2}, {0, 0});
    Tensor b({2}, {0, 0});
    a.grad() = {3.0, 0.0};
    b.grad() = {0.0, 4.0};
    const double norm = clip_global_norm({a, b}, 1.0);
    CHECK(norm == doctest::Approx(5.0));
    CHECK(a.grad()[0] == doctest::Approx(0.6));
    CHECK(b.grad()[1] == doctest::Approx(0.8));

    a.grad() = {0.1, 0.0};
    b.grad() = {0.0, 0.1};
    clip_global_norm({a, b}, 1.0);
    CHECK(a.grad()[0] == doctest::Approx(0.1));
}

TEST_CASE("training is deterministic given seed, config, and data") {
    auto windows = small_dataset(60, 3, true);
    auto val = small_dataset(20, 4, false);

    TrainOptions opt;
    opt.epochs = 2;
    opt.batch_size = 16;
    opt.seed = 42;

    ModelParams m1 = init_model(tiny_config(Arch::kTeo), 42);
    ModelParams m2 = init_model(tiny_config(Arch::kTeo), 42);
    TrainResult r1 = train(m1, windows, val, opt);
    TrainResult r2 = train(m2, windows, val, opt);

    const auto p1 = m1.named_parameters();
    const auto p2 = m2.named_parameters();
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(std::memcmp(p1[i].second.data(), p2[i].second.data(),
                          p1[i].second.values().size() * sizeof(double)) == 0);
    }
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].loss == r2.log[i].loss);
        CHECK(r1.log[i].accuracy == r2.log[i].accuracy);
        CHECK(r1.log[i].f1 == r2.log[i].f1);
    }
}

TEST_CASE("TED training consumes targets and reduces the joint loss") {
    auto windows = small_dataset(80, 9, true);
    auto val = small_dataset(30, 10, false);
    TrainOptions opt;
    opt.epochs = 3;
    opt.batch_size = 16;
    opt.seed = 5;
    opt.adam.lr = 1e-3;

    ModelParams m = init_model(tiny_config(Arch::kTed), 5);
    TrainResult r = train(m, windows, val, opt);
    REQUIRE(!r.log.empty());
    double first_loss = 0, last_loss = 0;
    for (const auto& e : r.log) {
        if (e.split == "train") {
            if (e.epoch == 1) first_loss = e.loss;
            last_loss = e.loss;
        }
    }
    CHECK(last_loss < first_loss);
}

TEST_CASE("checkpoint round-trip preserves forward outputs bit-for-bit") {
    ModelConfig cfg = tiny_config(Arch::kTed);
    ModelParams m = init_model(cfg, 123);
    const std::string path = temp_path("pedcross_ckpt_test.bin");
    save_checkpoint(path, m, nullptr, 123, 77);

    LoadedCheckpoint loaded = load_checkpoint(path);
    CHECK(loaded.seed == 123);
    CHECK(loaded.step == 77);
    CHECK(loaded.model.config.arch == Arch::kTed);

    std::mt19937_64 rng(6);
    Tensor x = oracles::random_tensor({16, 4}, rng, 0.1, 0.8);
    const double before = forward_probability(m, x).item();
    const double after = forward_probability(loaded.model, x).item();
    CHECK(std::memcmp(&before, &after, sizeof(double)) == 0);

    // byte-identical re-save
    const std::string path2 = temp_path("pedcross_ckpt_test2.bin");
    save_checkpoint(path2, loaded.model, nullptr, 123, 77);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    fs::remove(path);
    fs::remove(path2);
}

TEST_CASE("checkpoint stores optimizer moments on request") {
    ModelParams m = init_model(tiny_config(Arch::kTeo), 3);
    std::vector<Tensor> params;
    for (auto& [name, t] : m.named_parameters()) params.push_back(t);
    AdamState adam(params, AdamConfig{});
    params[0].grad()[0] = 1.0;
    adam.step();

    const std::string path = temp_path("pedcross_ckpt_opt.bin");
    save_checkpoint(path, m, &adam, 3, 1);
    LoadedCheckpoint loaded = load_checkpoint(path);
    CHECK(loaded.has_optimizer);
    CHECK(loaded.optimizer_step == 1);
    REQUIRE(loaded.optimizer_moments.size() == params.size());
    CHECK(loaded.optimizer_moments[0].m[0] == doctest::Approx(0.1));
    fs::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
    const std::string path = temp_path("pedcross_ckpt_bad.bin");
    {
        std::ofstream out(path, std::ios::binary);
        out << "JUNKJUNKJUNK";
    }
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), CheckpointError);
    fs::remove(path);
}

TEST_CASE("fine_tune with zero epochs reproduces the source outputs exactly") {
    ModelConfig cfg = tiny_config(Arch::kTeo);
    ModelParams m = init_model(cfg, 55);
    const std::string path = temp_path("pedcross_ckpt_ft.bin");
    save_checkpoint(path, m, nullptr, 55, 0);
    LoadedCheckpoint loaded = load_checkpoint(path);

    TrainOptions opt;
    opt.epochs = 0;
    opt.seed = 99;
    FineTuneResult ft = fine_tune(loaded, {}, {}, opt);

    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor x = oracles::random_tensor({16, 4}, rng, 0.1, 0.8);
        const double src = forward_probability(m, x).item();
        const double dst = forward_probability(ft.model, x).item();
        CHECK(std::memcmp(&src, &dst, sizeof(double)) == 0);
    }
    fs::remove(path);
}

TEST_CASE("transplant rejects architecture mismatches beyond the head") {
    ModelParams teo = init_model(tiny_config(Arch::kTeo), 1);

    ModelConfig deeper = tiny_config(Arch::kTeo);
    deeper.n_layers = 3;
    CHECK_THROWS_WITH_AS(transplant_parameters(teo, deeper, 2), doctest::Contains("enc.2"),
                         CheckpointError);

    ModelConfig wider = tiny_config(Arch::kTeo);
    wider.d_model = 32;
    CHECK_THROWS_AS(transplant_parameters(teo, wider, 2), CheckpointError);

    // a different classification head width is allowed: head stays fresh
    ModelConfig new_head = tiny_config(Arch::kTeo);
    new_head.d_cls = 8;
    ModelParams adapted = transplant_parameters(teo, new_head, 2);
    CHECK(adapted.head.w1.cols() == 8);
    const auto src = teo.named_parameters();
    const auto dst = adapted.named_parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i].first.rfind("head.", 0) == 0) continue;
        const auto& sv = src[i].second.values();
        // find matching name in dst
        for (const auto& [dname, dt] : dst) {
            if (dname == src[i].first) {
                CHECK(dt.values() == sv);
                break;
            }
        }
    }
}

TEST_CASE("freezing encoder layers keeps them untouched during training") {
    auto windows = small_dataset(40, 13, true);
    ModelConfig cfg = tiny_config(Arch::kTeo);
    ModelParams m = init_model(cfg, 31);
    const auto before = snapshot_values(m);

    TrainOptions opt;
    opt.epochs = 1;
    opt.batch_size = 8;
    opt.seed = 3;
    opt.freeze_first_k = 1;
    opt.adam.lr = 1e-2;
    train(m, windows, {}, opt);

    const auto params = m.named_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const bool frozen = params[i].first.rfind("enc.0.", 0) == 0;
        bool changed = params[i].second.values() != before[i];
        if (frozen) {
            CHECK(!changed);
        }
    }
    // something else must have moved
    bool any_changed = false;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].second.values() != before[i]) any_changed = true;
    }
    CHECK(any_changed);

    TrainOptions bad = opt;
    bad.freeze_first_k = 5;
    ModelParams m2 = init_model(cfg, 31);
    CHECK_THROWS_AS(train(m2, windows, {}, bad), ConfigError);
}

TEST_CASE("training log writer emits one record per entry plus header") {
    std::vector<TrainLogEntry> entries;
    TrainLogEntry e;
    e.epoch = 1;
    e.split = "train";
    e.loss = 0.5;
    e.accuracy = 0.75;
    e.f1 = 0.6;
    e.auc = 0.8;
    e.wall_ms = 123;
    entries.push_back(e);
    e.split = "val";
    e.auc.reset();
    entries.push_back(e);

    const std::string path = temp_path("pedcross_log_test.jsonl");
    write_training_log(path, "{\"type\":\"header\"}", entries);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "{\"type\":\"header\"}");
    std::getline(in, line);
    CHECK(line.find("\"split\":\"train\"") != std::string::npos);
    CHECK(line.find("\"auc\":0.800000") != std::string::npos);
    std::getline(in, line);
    CHECK(line.find("\"auc\":null") != std::string::npos);
    fs::remove(path);
}
