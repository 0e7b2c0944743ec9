// Acceptance suite: executes every acceptance criterion at its stated
// tolerance and prints one PASS/FAIL line per criterion. Exit code is the
// number of failed criteria.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "duoseg/cli/commands.hpp"
#include "duoseg/eval/ablation.hpp"
#include "duoseg/eval/visualize.hpp"
#include "duoseg/train/trainer.hpp"
#include "oracles.hpp"

using namespace duoseg;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int id, const std::string& label, bool pass, const std::string& detail) {
    std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << id << ": " << label;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << std::endl;
    if (!pass) ++g_failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("missing file " + p.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// --- criterion 1: gradient checks --------------------------------------

void criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst_op = 0.0;
    std::string worst_name;
    bool ops_ok = true;
    for (const auto& r : gradcheck_battery(17)) {
        if (r.max_rel_err > worst_op) {
            worst_op = r.max_rel_err;
            worst_name = r.name;
        }
        ops_ok = ops_ok && r.ok(1e-4);
    }
    const auto model = model_grad_check(10, 5);
    const bool model_ok = model.max_rel_err < 1e-3;
    const double secs = seconds_since(t0);
    report(1, "gradient checks (ops < 1e-4, full tiny model < 1e-3, 64-bit)",
           ops_ok && model_ok && secs < 120.0,
           "worst op " + worst_name + " " + fmt(worst_op) + ", model " + fmt(model.max_rel_err) +
               ", " + fmt(secs) + " s");
}

// --- criterion 2: metric oracle -----------------------------------------

void criterion_metric_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Pcg32 rng = derive_rng(55, 0);
    bool exact = true;
    for (int trial = 0; trial < 100 && exact; ++trial) {
        const int k = 5, n = 16 * 16;
        std::vector<std::int32_t> pred(n), truth(n);
        for (int i = 0; i < n; ++i) {
            pred[static_cast<size_t>(i)] = static_cast<std::int32_t>(rng.uniform_int(k));
            truth[static_cast<size_t>(i)] = static_cast<std::int32_t>(rng.uniform_int(k));
        }
        ConfusionMatrix cm(k);
        cm.update(pred, truth);
        const MetricsReport r = metrics_from_confusion(cm);
        const auto sets = oracles::count_sets(pred, truth, k);
        for (int c = 0; c < k; ++c) {
            const auto& s = sets[static_cast<size_t>(c)];
            const auto& m = r.per_class[static_cast<size_t>(c)];
            if (s.target > 0)
                exact = exact && m.acc_defined &&
                        m.acc == static_cast<double>(s.true_pos) / static_cast<double>(s.target);
            else
                exact = exact && !m.acc_defined;
            const std::int64_t uni = s.target + s.predicted - s.true_pos;
            if (uni > 0)
                exact = exact && m.iou_defined &&
                        m.iou == static_cast<double>(s.true_pos) / static_cast<double>(uni);
            else
                exact = exact && !m.iou_defined;
        }
    }
    const double secs = seconds_since(t0);
    report(2, "confusion-matrix metrics equal set-counting oracle exactly (100 pairs)",
           exact && secs < 10.0, fmt(secs) + " s");
}

// --- criterion 3: confidence properties ---------------------------------

void criterion_confidence() {
    bool ok = true;
    std::string detail;

    // 1000 random logit vectors, k = 5.
    Pcg32 rng = derive_rng(77, 0);
    const int k = 5;
    for (int i = 0; i < 1000 && ok; ++i) {
        Tensor<float> logits = Tensor<float>::uniform(Shape{1, k, 1, 1}, rng, -5.f, 5.f);
        const float c = confidence_map(logits).item();
        ok = c >= 1.0f / k && c < 1.0f;
        if (!ok) detail = "bound violated: C = " + fmt(c);
    }

    // Uniform logits give exactly 1/k.
    if (ok) {
        Tensor<float> u = Tensor<float>::zeros(Shape{1, k, 1, 1});
        ok = confidence_map(u).item() == 1.0f / k;
        if (!ok) detail = "uniform logits not exactly 1/k";
    }

    // Gating limit: unit confidence and correlation collapse the full
    // variant onto the unweighted one bit-identically.
    if (ok) {
        ModelConfig cfg;
        cfg.num_classes = 3;
        cfg.height = cfg.width = 32;
        cfg.widths = {4, 8, 8, 16};
        cfg.decoder_width = 16;
        cfg.low_proj_width = 8;
        cfg.compress_hidden = 8;
        cfg.variant = Variant::full;
        Net<float> full(cfg, 21);
        cfg.variant = Variant::unweighted;
        Net<float> unweighted(cfg, 21);
        Pcg32 drng = derive_rng(12, 0);
        Tensor<float> color = Tensor<float>::uniform(Shape{2, 3, 32, 32}, drng, 0.f, 1.f);
        Tensor<float> thermal = Tensor<float>::uniform(Shape{2, 1, 32, 32}, drng, 0.f, 1.f);
        NoGradGuard ng;
        ForwardOptions forced;
        forced.force_unit_confidence = true;
        forced.force_unit_correlation = true;
        const auto a = full.forward(color, thermal, forced).y_final;
        const auto b = unweighted.forward(color, thermal).y_final;
        ok = a.shape() == b.shape();
        for (Index i = 0; ok && i < a.numel(); ++i) ok = a.values()[i] == b.values()[i];
        if (!ok) detail = "gating limit not bit-identical";
    }
    report(3, "confidence bounds, exact uniform limit, unit-gate collapse", ok, detail);
}

// --- criterion 4: correlation layer --------------------------------------

void criterion_correlation() {
    bool ok = true;
    std::string detail;
    using Tf = Tensor<float>;

    // Unit norm of every non-zero pre-compression match vector.
    Pcg32 rng = derive_rng(10, 0);
    Tf yc = Tf::uniform(Shape{2, 5, 4, 4}, rng, -1.f, 1.f);
    Tf yt = Tf::uniform(Shape{2, 5, 4, 4}, rng, -1.f, 1.f);
    Tf corr = correlation_features(yc, yt);
    const int n = 16;
    for (int b = 0; b < 2 && ok; ++b)
        for (int p = 0; p < n && ok; ++p) {
            double norm = 0;
            for (int i = 0; i < n; ++i) {
                const float v = corr.at({b, i, p / 4, p % 4});
                if (v < 0.f) {
                    ok = false;
                    detail = "negative entry after ReLU";
                }
                norm += static_cast<double>(v) * v;
            }
            if (ok && norm > 0 && std::abs(std::sqrt(norm) - 1.0) > 1e-5) {
                ok = false;
                detail = "match vector norm off by " + fmt(std::abs(std::sqrt(norm) - 1.0));
            }
        }

    // Identity / swapped hand matrices, bit-exact.
    if (ok) {
        Tf c2 = Tf::from(Shape{1, 2, 1, 2}, {1.f, 0.f, 0.f, 1.f});
        Tf ident = correlation_features(c2, c2);
        Tf swapped_t = Tf::from(Shape{1, 2, 1, 2}, {0.f, 1.f, 1.f, 0.f});
        Tf anti = correlation_features(c2, swapped_t);
        const float id_expect[4] = {1.f, 0.f, 0.f, 1.f};
        const float an_expect[4] = {0.f, 1.f, 1.f, 0.f};
        for (int i = 0; i < 4 && ok; ++i) {
            ok = ident.values()[i] == id_expect[i] && anti.values()[i] == an_expect[i];
            if (!ok) detail = "hand-computed matrices not reproduced exactly";
        }
    }

    // Translation permutes the match channels correspondingly.
    if (ok) {
        const int m = 4;
        Tf a = Tf::zeros(Shape{1, 4, 1, m});
        Tf b = Tf::zeros(Shape{1, 4, 1, m});
        for (int j = 0; j < m; ++j) {
            a.set({0, j, 0, j}, 1.f);
            b.set({0, j, 0, (j + 1) % m}, 1.f);
        }
        Tf c = correlation_features(a, b);
        for (int i = 0; i < m && ok; ++i)
            for (int j = 0; j < m && ok; ++j) {
                const float expected = (j == (i + m - 1) % m) ? 1.f : 0.f;
                ok = c.at({0, i, 0, j}) == expected;
                if (!ok) detail = "translation did not permute channels";
            }
    }
    report(4, "correlation match vectors unit-norm; identity/shift matrices exact", ok, detail);
}

// --- criteria 5 and 6: training runs -------------------------------------

struct ToyDataset {
    fs::path dir;
    Dataset data;
};

ToyDataset make_toy_dataset(const fs::path& root, int n, const std::string& name) {
    GenConfig gen;
    gen.n = n;
    gen.size = 64;
    gen.num_classes = 5;
    gen.max_shift = 3;
    gen.seed = 42;
    const fs::path dir = root / name;
    generate_dataset(gen, dir.string());
    return {dir, load_dataset(dir.string())};
}

void criterion_convergence(const ToyDataset& toy, const fs::path& root) {
    const auto t0 = std::chrono::steady_clock::now();
    ModelConfig mcfg;
    mcfg.variant = Variant::full;
    mcfg.num_classes = 5;
    mcfg.height = mcfg.width = 64;
    Net<float> net(mcfg, 0);
    TrainConfig tcfg;  // hyperparameters at their defaults: lr 0.01, momentum
    tcfg.epochs = 30;  // 0.9, weight decay 5e-4, gamma 0.95, batch 8
    tcfg.batch_size = 8;
    tcfg.seed = 0;
    tcfg.out_checkpoint = (root / "toy.ddlf").string();
    FitResult res = fit(net, toy.data, tcfg);

    const double initial = res.epochs.front().loss_total;
    const double final_loss = res.epochs.back().loss_total;
    Net<float> best = model_from_checkpoint(load_checkpoint(res.best_path));
    const MetricsReport test = evaluate_split(best, toy.data, Split::test, "all");
    const double secs = seconds_since(t0);

    const bool loss_ok = final_loss < 0.30 * initial;
    const bool miou_ok = test.miou > 0.55;
    const bool time_ok = secs < 900.0;
    report(5, "toy convergence (loss ratio < 0.30, test mIoU > 0.55, < 15 min)",
           loss_ok && miou_ok && time_ok,
           "loss " + fmt(final_loss) + "/" + fmt(initial) + " = " + fmt(final_loss / initial) +
               ", test mIoU " + fmt(test.miou) + ", " + fmt(secs) + " s");
}

void criterion_ablation(const ToyDataset& toy, const fs::path& root) {
    const auto t0 = std::chrono::steady_clock::now();
    AblationConfig cfg;
    cfg.model.num_classes = 5;
    cfg.model.height = cfg.model.width = 64;
    cfg.train.epochs = 45;
    cfg.train.batch_size = 8;
    cfg.seeds = {0, 1, 2};
    AblationResult res = run_ablation(toy.data, cfg, (root / "ablation.csv").string());

    const double full = res.median_miou(Variant::full, "all");
    const double conf = res.median_miou(Variant::conf_only, "all");
    const double unw = res.median_miou(Variant::unweighted, "all");
    const double stacked = res.median_miou(Variant::stacked, "all");
    const double rgb = res.median_miou(Variant::rgb, "all");
    const double thermal = res.median_miou(Variant::thermal, "all");
    const double best_single = std::max(rgb, thermal);
    const double rgb_night = res.median_miou(Variant::rgb, "night");
    const double th_night = res.median_miou(Variant::thermal, "night");
    const double rgb_day = res.median_miou(Variant::rgb, "day");
    const double th_day = res.median_miou(Variant::thermal, "day");

    const bool a_ok = full >= conf - 0.01 && full >= unw - 0.01;
    const bool b_ok = full >= best_single - 0.01 && conf >= best_single - 0.01 &&
                      unw >= best_single - 0.01;
    const bool c_ok = th_night > rgb_night && rgb_day > th_day;
    const double secs = seconds_since(t0);
    const bool time_ok = secs < 7200.0;

    std::ostringstream detail;
    detail << "mIoU both: rgb " << fmt(rgb) << ", thermal " << fmt(thermal) << ", stacked "
           << fmt(stacked) << ", unweighted " << fmt(unw) << ", conf_only " << fmt(conf)
           << ", full " << fmt(full) << "; night rgb/thermal " << fmt(rgb_night) << "/"
           << fmt(th_night) << "; day rgb/thermal " << fmt(rgb_day) << "/" << fmt(th_day) << "; "
           << fmt(secs) << " s";
    report(6, "ablation ordering analog (median over 3 seeds)", a_ok && b_ok && c_ok && time_ok,
           detail.str());
}

// --- criterion 7: determinism --------------------------------------------

void criterion_determinism(const fs::path& root) {
    bool ok = true;
    std::string detail;
    const fs::path dir = root / "determinism";
    fs::create_directories(dir);
    const std::string data = (dir / "d").string();
    if (dispatch({"gen-data", "--out", data, "--n", "24", "--size", "32", "--seed", "11"}) != 0) {
        report(7, "byte-identical repeated training", false, "gen-data failed");
        return;
    }
    auto train_once = [&](const std::string& tag) {
        const std::string out = (dir / (tag + ".ddlf")).string();
        return dispatch({"train", "--data", data, "--out", out, "--variant", "full", "--epochs",
                         "2", "--widths", "4,8,8,16", "--seed", "3"});
    };
    if (train_once("a") != 0 || train_once("b") != 0) {
        report(7, "byte-identical repeated training", false, "train failed");
        return;
    }
    ok = file_bytes(dir / "a.ddlf") == file_bytes(dir / "b.ddlf") &&
         file_bytes(dir / "a.best.ddlf") == file_bytes(dir / "b.best.ddlf") &&
         file_bytes(dir / "a.log.csv") == file_bytes(dir / "b.log.csv");
    if (!ok) detail = "checkpoint or log bytes differ";

    if (ok) {
        const std::string csv_a = (dir / "ma.csv").string(), csv_b = (dir / "mb.csv").string();
        if (dispatch({"eval", "--data", data, "--checkpoint", (dir / "a.ddlf").string(), "--out",
                      csv_a}) != 0 ||
            dispatch({"eval", "--data", data, "--checkpoint", (dir / "b.ddlf").string(), "--out",
                      csv_b}) != 0) {
            ok = false;
            detail = "eval failed";
        } else {
            ok = file_bytes(csv_a) == file_bytes(csv_b);
            if (!ok) detail = "metrics CSVs differ";
        }
    }
    report(7, "byte-identical repeated training and metrics", ok, detail);
}

// --- criterion 8: I/O round trips and smoke pipeline ----------------------

void criterion_io(const fs::path& root) {
    bool ok = true;
    std::string detail;
    const fs::path dir = root / "io";
    fs::create_directories(dir);

    // PPM/PGM: labels exact, images within one quantization step.
    GenConfig gen;
    gen.n = 3;
    gen.size = 32;
    gen.seed = 77;
    const std::string ddir = (dir / "d").string();
    generate_dataset(gen, ddir);
    Dataset data = load_dataset(ddir);
    for (int i = 0; i < gen.n && ok; ++i) {
        const SegSample truth = synthesize_sample(gen, i);
        const SegSample& loaded = data.samples[static_cast<size_t>(i)];
        ok = loaded.labels == truth.labels;
        if (!ok) {
            detail = "label round trip not exact";
            break;
        }
        for (size_t p = 0; p < truth.color.size() && ok; ++p)
            ok = std::abs(loaded.color[p] - truth.color[p]) <= 0.5f / 255.f + 1e-6f;
        for (size_t p = 0; p < truth.thermal.size() && ok; ++p)
            ok = std::abs(loaded.thermal[p] - truth.thermal[p]) <= 0.5f / 255.f + 1e-6f;
        if (!ok) detail = "image round trip beyond 1/255";
    }

    // Checkpoint: bit-exact parameters.
    if (ok) {
        ModelConfig cfg;
        cfg.num_classes = 3;
        cfg.height = cfg.width = 32;
        cfg.widths = {4, 8, 8, 16};
        cfg.decoder_width = 16;
        cfg.low_proj_width = 8;
        cfg.compress_hidden = 8;
        cfg.variant = Variant::full;
        Net<float> net(cfg, 99);
        const std::string path = (dir / "c.ddlf").string();
        save_checkpoint(path, checkpoint_from_model(net, {}));
        Net<float> back = model_from_checkpoint(load_checkpoint(path));
        for (size_t i = 0; i < net.params().size() && ok; ++i) {
            const auto& a = net.params()[i].second;
            const auto& b = back.params()[i].second;
            ok = a.shape() == b.shape();
            for (Index j = 0; ok && j < a.numel(); ++j) ok = a.values()[j] == b.values()[j];
        }
        if (!ok) detail = "checkpoint round trip not bit-exact";
    }

    // Smoke pipeline under two minutes.
    double secs = 0;
    if (ok) {
        const auto t0 = std::chrono::steady_clock::now();
        SmokeReport smoke = smoke_pipeline((dir / "smoke").string());
        secs = seconds_since(t0);
        ok = smoke.ok && secs < 120.0;
        if (!smoke.ok) detail = "smoke stage '" + smoke.failed_stage + "': " + smoke.message;
        else if (!ok) detail = "smoke too slow";
    }
    report(8, "PPM/PGM + checkpoint round trips; smoke pipeline < 2 min", ok,
           detail.empty() ? ("smoke " + fmt(secs) + " s") : detail);
}

}  // namespace

int main() {
    const fs::path root = fs::temp_directory_path() / "duoseg_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);

    try {
        criterion_gradients();
        criterion_metric_oracle();
        criterion_confidence();
        criterion_correlation();
        const ToyDataset toy = make_toy_dataset(root, 200, "d200");
        criterion_convergence(toy, root);
        const ToyDataset ablation_data = make_toy_dataset(root, 400, "d400");
        criterion_ablation(ablation_data, root);
        criterion_determinism(root);
        criterion_io(root);
    } catch (const std::exception& e) {
        std::cout << "[FAIL] acceptance suite aborted: " << e.what() << std::endl;
        return 99;
    }
    std::cout << (g_failures == 0 ? "ACCEPTANCE: all criteria passed"
                                  : "ACCEPTANCE: " + std::to_string(g_failures) + " criteria failed")
              << std::endl;
    return g_failures;
}
