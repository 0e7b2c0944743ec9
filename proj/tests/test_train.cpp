#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "duoseg/eval/ablation.hpp"
#include "duoseg/train/trainer.hpp"

using namespace duoseg;
namespace fs = std::filesystem;
using Tf = Tensor<float>;

namespace {

fs::path fresh_dir(const std::string& tag) {
    static int counter = 0;
    fs::path p = fs::temp_directory_path() / ("duoseg_train_" + tag + "_" + std::to_string(counter++));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

ModelConfig tiny_model(Variant v, int size) {
    ModelConfig cfg;
    cfg.variant = v;
    cfg.num_classes = 5;
    cfg.height = size;
    cfg.width = size;
    cfg.widths = {4, 8, 8, 16};
    cfg.decoder_width = 16;
    cfg.low_proj_width = 8;
    cfg.compress_hidden = 8;
    return cfg;
}

// One scalar parameter with a preset gradient.
ParamList<float> single_param(float w, float g) {
    Tf p = Tf::scalar(w);
    p.set_requires_grad(true);
    p.grad()[0] = g;
    return {{"w", p}};
}

Dataset tiny_dataset(std::uint64_t seed, int n = 16, int size = 32) {
    GenConfig gen;
    gen.n = n;
    gen.size = size;
    gen.seed = seed;
    gen.max_shift = 2;
    auto dir = fresh_dir("data");
    generate_dataset(gen, dir.string());
    return load_dataset(dir.string());
}

}  // namespace

TEST_CASE("sgd step: vanilla descent") {
    SgdConfig cfg;
    cfg.momentum = 0;
    cfg.weight_decay = 0;
    auto params = single_param(1.f, 1.f);
    SgdOptimizer<float> opt(params, cfg);
    opt.step(params, 0.1);
    CHECK(params[0].second.values()[0] == doctest::Approx(0.9f).epsilon(1e-7));
}

TEST_CASE("sgd step: two-step momentum recursion") {
    SgdConfig cfg;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0;
    auto params = single_param(1.f, 1.f);
    SgdOptimizer<float> opt(params, cfg);
    opt.step(params, 0.1);  // v=1, w=0.9
    CHECK(params[0].second.values()[0] == doctest::Approx(0.9f).epsilon(1e-7));
    params[0].second.zero_grad();
    params[0].second.grad()[0] = 1.f;
    opt.step(params, 0.1);  // v=1.9, w=0.71
    CHECK(params[0].second.values()[0] == doctest::Approx(0.71f).epsilon(1e-6));
}

TEST_CASE("sgd step: pure weight decay") {
    SgdConfig cfg;
    cfg.momentum = 0;
    cfg.weight_decay = 0.0005;
    auto params = single_param(1.f, 0.f);
    SgdOptimizer<float> opt(params, cfg);
    opt.step(params, 0.01);
    CHECK(params[0].second.values()[0] == doctest::Approx(0.999995f).epsilon(1e-9));
}

TEST_CASE("sgd step: norm affine decay is configurable off") {
    SgdConfig cfg;
    cfg.momentum = 0;
    cfg.weight_decay = 0.1;
    cfg.decay_norm_affine = false;
    Tf gamma = Tf::scalar(1.f);
    gamma.set_requires_grad(true);
    gamma.grad()[0] = 0.f;
    Tf weight = Tf::scalar(1.f);
    weight.set_requires_grad(true);
    weight.grad()[0] = 0.f;
    ParamList<float> params{{"enc.norm.gamma", gamma}, {"enc.conv.weight", weight}};
    SgdOptimizer<float> opt(params, cfg);
    opt.step(params, 1.0);
    CHECK(params[0].second.values()[0] == 1.f);    // gamma untouched
    CHECK(params[1].second.values()[0] == 0.9f);   // weight decayed
}

TEST_CASE("sgd step: missing gradient names the parameter") {
    SgdConfig cfg;
    Tf p = Tf::scalar(1.f);
    p.set_requires_grad(true);
    ParamList<float> params{{"enc.w", p}};
    SgdOptimizer<float> opt(params, cfg);
    try {
        opt.step(params, 0.01);
        FAIL("expected missing-gradient error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("enc.w") != std::string::npos);
    }
}

TEST_CASE("learning rate schedule") {
    SgdConfig cfg;
    CHECK(lr_at_epoch(cfg, 0) == 0.01);
    CHECK(lr_at_epoch(cfg, 1) == doctest::Approx(0.0095).epsilon(1e-12));
    CHECK(lr_at_epoch(cfg, 10) == doctest::Approx(0.01 * std::pow(0.95, 10)).epsilon(1e-12));
    for (int e = 0; e < 50; ++e)
        CHECK(lr_at_epoch(cfg, e + 1) / lr_at_epoch(cfg, e) == doctest::Approx(0.95).epsilon(1e-12));
    CHECK_THROWS_AS((void)lr_at_epoch(cfg, -1), std::invalid_argument);
}

TEST_CASE("one epoch over 8 samples at batch 8 is exactly one step") {
    Dataset data = tiny_dataset(100, 16, 32);  // 8 train samples
    REQUIRE(data.indices_of(Split::train).size() == 8);
    ModelConfig mcfg = tiny_model(Variant::unweighted, 32);
    Net<float> net(mcfg, 1);
    TrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.batch_size = 8;
    SgdOptimizer<float> opt(net.params(), tcfg.sgd);
    EpochStats st = train_epoch(net, data, opt, 0, tcfg);
    CHECK(st.steps == 1);
    CHECK(std::isfinite(st.loss_total));
}

TEST_CASE("fixed seed reproduces the loss trajectory") {
    Dataset data = tiny_dataset(101, 16, 32);
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.batch_size = 4;
    tcfg.seed = 9;
    ModelConfig mcfg = tiny_model(Variant::full, 32);

    std::vector<double> first, second;
    for (auto* sink : {&first, &second}) {
        Net<float> net(mcfg, 5);
        SgdOptimizer<float> opt(net.params(), tcfg.sgd);
        for (int e = 0; e < tcfg.epochs; ++e) sink->push_back(train_epoch(net, data, opt, e, tcfg).loss_total);
    }
    CHECK(first == second);
}

TEST_CASE("checkpoint round trip is bit-exact, errors are explicit") {
    ModelConfig mcfg = tiny_model(Variant::full, 32);
    Net<float> net(mcfg, 77);
    SgdOptimizer<float> opt(net.params(), SgdConfig{});
    // Give the buffers non-trivial content.
    for (auto& b : opt.buffers()) b.setConstant(0.25f);

    auto dir = fresh_dir("ckpt");
    const std::string path = (dir / "m.ddlf").string();
    save_checkpoint(path, checkpoint_from_model(net, {{"epoch", "3"}}, &opt));

    Checkpoint back = load_checkpoint(path);
    CHECK(back.value("epoch") == "3");
    CHECK(back.value("variant") == "full");

    Net<float> net2(mcfg, 1234);  // different init, fully overwritten by load
    SgdOptimizer<float> opt2(net2.params(), SgdConfig{});
    load_model_state(back, net2, &opt2);
    for (size_t i = 0; i < net.params().size(); ++i) {
        const auto& a = net.params()[i].second;
        const auto& b = net2.params()[i].second;
        REQUIRE(a.shape() == b.shape());
        for (Index j = 0; j < a.numel(); ++j) CHECK(a.values()[j] == b.values()[j]);
    }
    for (const auto& b : opt2.buffers())
        for (Index j = 0; j < b.size(); ++j) CHECK(b[j] == 0.25f);

    SUBCASE("corrupted magic") {
        auto bytes = file_bytes(path);
        bytes[0] = 'X';
        std::ofstream f(path, std::ios::binary);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        f.close();
        CHECK_THROWS_AS((void)load_checkpoint(path), CheckpointError);
    }

    SUBCASE("truncated file") {
        auto bytes = file_bytes(path);
        bytes.resize(bytes.size() / 2);
        std::ofstream f(path, std::ios::binary);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        f.close();
        CHECK_THROWS_AS((void)load_checkpoint(path), CheckpointError);
    }

    SUBCASE("shape mismatch names the offending tensor") {
        ModelConfig other = tiny_model(Variant::full, 32);
        other.widths = {8, 8, 8, 16};
        Net<float> wrong(other, 1);
        try {
            load_model_state(back, wrong);
            FAIL("expected shape mismatch");
        } catch (const CheckpointError& e) {
            CHECK(std::string(e.what()).find("enc_c.s1.b1.conv.weight") != std::string::npos);
        }
    }

    SUBCASE("unknown tensor name rejected on strict load") {
        Checkpoint tampered = back;
        tampered.tensors.emplace_back("not.a.param", Tf::zeros(Shape{2}));
        Net<float> target(mcfg, 1);
        CHECK_THROWS_AS(load_model_state(tampered, target), CheckpointError);
    }
}

TEST_CASE("fit: determinism, best-checkpoint consistency, resume") {
    Dataset data = tiny_dataset(102, 16, 32);
    ModelConfig mcfg = tiny_model(Variant::conf_only, 32);

    auto run_fit = [&](const fs::path& dir, int epochs, std::uint64_t seed) {
        TrainConfig tcfg;
        tcfg.epochs = epochs;
        tcfg.batch_size = 8;
        tcfg.seed = seed;
        tcfg.out_checkpoint = (dir / "m.ddlf").string();
        Net<float> net(mcfg, seed);
        return fit(net, data, tcfg);
    };

    auto d1 = fresh_dir("fit1"), d2 = fresh_dir("fit2");
    FitResult r1 = run_fit(d1, 3, 4);
    FitResult r2 = run_fit(d2, 3, 4);
    CHECK(file_bytes(d1 / "m.ddlf") == file_bytes(d2 / "m.ddlf"));
    CHECK(file_bytes(d1 / "m.best.ddlf") == file_bytes(d2 / "m.best.ddlf"));
    CHECK(file_bytes(d1 / "m.log.csv") == file_bytes(d2 / "m.log.csv"));

    // The best checkpoint's recorded mIoU matches re-evaluation.
    Checkpoint best = load_checkpoint((d1 / "m.best.ddlf").string());
    Net<float> best_net = model_from_checkpoint(best);
    MetricsReport val = evaluate_split(best_net, data, Split::val, "all", 8);
    CHECK(val.miou == doctest::Approx(std::stod(best.value("val_miou"))).epsilon(1e-6));
    CHECK(r1.best_val_miou == doctest::Approx(val.miou).epsilon(1e-6));

    // Interrupt/resume reproduces the straight-through trajectory.
    auto d3 = fresh_dir("fit3");
    FitResult full_run = run_fit(d3, 4, 4);
    auto d4 = fresh_dir("fit4");
    FitResult half = run_fit(d4, 2, 4);
    Checkpoint mid = load_checkpoint((d4 / "m.ddlf").string());
    Net<float> resumed = model_from_checkpoint(mid);
    SgdOptimizer<float> opt(resumed.params(), SgdConfig{});
    load_model_state(mid, resumed, &opt);
    TrainConfig tcfg;
    tcfg.epochs = 4;
    tcfg.batch_size = 8;
    tcfg.seed = 4;
    tcfg.out_checkpoint = (d4 / "resumed.ddlf").string();
    fit(resumed, data, tcfg, &opt, std::stoi(mid.value("epoch")));
    auto a = file_bytes(d3 / "m.ddlf");
    auto b = file_bytes(d4 / "resumed.ddlf");
    CHECK(a == b);
    CHECK(full_run.epochs.size() == 4);
    CHECK(half.epochs.size() == 2);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    Dataset data = tiny_dataset(103, 16, 32);
    ModelConfig mcfg = tiny_model(Variant::rgb, 32);
    Net<float> net(mcfg, 2);
    net.param("dec.cls.bias").values().setConstant(std::numeric_limits<float>::infinity());
    TrainConfig tcfg;
    tcfg.batch_size = 8;
    SgdOptimizer<float> opt(net.params(), tcfg.sgd);
    try {
        train_epoch(net, data, opt, 0, tcfg);
        FAIL("expected non-finite loss error");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("non-finite") != std::string::npos);
        CHECK(msg.find("epoch 0") != std::string::npos);
    }
}
