#include "duoseg/cli/commands.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "duoseg/eval/ablation.hpp"
#include "duoseg/eval/visualize.hpp"
#include "duoseg/train/trainer.hpp"

namespace fs = std::filesystem;

namespace duoseg {

namespace {

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

struct TrainFlags {
    std::string data, out, variant = "full", widths = "16,32,64,128", resume;
    int epochs = 50, batch = 8, crop = 0;
    double lr = 0.01, momentum = 0.9, weight_decay = 0.0005, gamma = 0.95;
    double lambda_aux = 0.5;
    std::uint64_t seed = 0;
    bool no_optimizer_state = false;
    bool no_decay_norm = false;
    bool softmax_correlation = false;
};

void add_sgd_flags(CLI::App* cmd, TrainFlags& f) {
    cmd->add_option("--epochs", f.epochs, "Training epochs");
    cmd->add_option("--batch", f.batch, "Batch size");
    cmd->add_option("--lr", f.lr, "Initial learning rate");
    cmd->add_option("--momentum", f.momentum, "SGD momentum");
    cmd->add_option("--weight-decay", f.weight_decay, "L2 weight decay");
    cmd->add_option("--gamma", f.gamma, "Exponential LR decay per epoch");
    cmd->add_option("--lambda-aux", f.lambda_aux, "Auxiliary loss weight");
    cmd->add_option("--crop", f.crop, "Training crop (0 = full size)");
    cmd->add_option("--widths", f.widths, "Encoder stage widths, comma separated");
    cmd->add_option("--seed", f.seed, "Run seed");
    cmd->add_flag("--no-decay-norm", f.no_decay_norm, "Exclude norm gamma/beta from weight decay");
    cmd->add_flag("--softmax-correlation", f.softmax_correlation,
                  "Correlate softmax outputs instead of raw logits");
}

ModelConfig model_config_for(const TrainFlags& f, const Dataset& data) {
    ModelConfig cfg;
    cfg.variant = parse_variant(f.variant);
    cfg.num_classes = data.manifest.gen.num_classes;
    const int size = f.crop > 0 ? f.crop : data.manifest.gen.size;
    cfg.height = cfg.width = size;
    const auto widths = parse_int_list(f.widths);
    if (widths.size() != 4) throw CLI::ValidationError("--widths", "expected four comma-separated values");
    for (int i = 0; i < 4; ++i) cfg.widths[static_cast<size_t>(i)] = widths[static_cast<size_t>(i)];
    cfg.lambda_aux = static_cast<float>(f.lambda_aux);
    cfg.softmax_correlation = f.softmax_correlation;
    cfg.validate();
    return cfg;
}

TrainConfig train_config_for(const TrainFlags& f) {
    TrainConfig cfg;
    cfg.epochs = f.epochs;
    cfg.batch_size = f.batch;
    cfg.sgd.lr0 = f.lr;
    cfg.sgd.momentum = f.momentum;
    cfg.sgd.weight_decay = f.weight_decay;
    cfg.sgd.gamma = f.gamma;
    cfg.sgd.decay_norm_affine = !f.no_decay_norm;
    cfg.crop = f.crop;
    cfg.seed = f.seed;
    cfg.out_checkpoint = f.out;
    cfg.save_optimizer_state = !f.no_optimizer_state;
    return cfg;
}

std::vector<std::pair<std::string, std::string>> train_flags_kv(const TrainFlags& f) {
    return {{"command", "train"},
            {"data", f.data},
            {"out", f.out},
            {"variant", f.variant},
            {"epochs", std::to_string(f.epochs)},
            {"batch", std::to_string(f.batch)},
            {"lr", fmt(f.lr)},
            {"momentum", fmt(f.momentum)},
            {"weight_decay", fmt(f.weight_decay)},
            {"gamma", fmt(f.gamma)},
            {"lambda_aux", fmt(f.lambda_aux)},
            {"crop", std::to_string(f.crop)},
            {"widths", f.widths},
            {"seed", std::to_string(f.seed)},
            {"decay_norm_affine", f.no_decay_norm ? "0" : "1"},
            {"softmax_correlation", f.softmax_correlation ? "1" : "0"},
            {"resume", f.resume}};
}

int cmd_gen_data(const GenConfig& gen, const std::string& out) {
    generate_dataset(gen, out);
    std::cout << "wrote " << gen.n << " samples to " << out << "\n";
    return 0;
}

int cmd_train(const TrainFlags& f) {
    Dataset data = load_dataset(f.data);
    FitResult res;
    if (!f.resume.empty()) {
        Checkpoint ckpt = load_checkpoint(f.resume);
        Net<float> net = model_from_checkpoint(ckpt);
        SgdOptimizer<float> opt(net.params(), train_config_for(f).sgd);
        load_model_state(ckpt, net, &opt);
        const int start_epoch = std::stoi(ckpt.value("epoch"));
        res = fit(net, data, train_config_for(f), &opt, start_epoch);
    } else {
        Net<float> net(model_config_for(f, data), f.seed);
        res = fit(net, data, train_config_for(f));
    }
    write_run_config(derive_path(f.out, ".run_config.txt"), train_flags_kv(f));
    std::cout << "final checkpoint: " << res.final_path << "\n"
              << "best val mIoU " << fmt(res.best_val_miou) << " at epoch " << res.best_epoch
              << "\n";
    return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt_path, const std::string& split,
             const std::string& subset, const std::string& out, int batch) {
    Dataset data = load_dataset(data_dir);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    Net<float> net = model_from_checkpoint(ckpt);
    MetricsReport r = evaluate_split(net, data, parse_split(split), subset, batch);
    const std::string seed = ckpt.value("seed").empty() ? "0" : ckpt.value("seed");
    std::ofstream csv(out, std::ios::binary);
    if (!csv) throw std::runtime_error("eval: cannot write " + out);
    write_metrics_csv_header(csv);
    append_metrics_rows(csv, variant_name(net.config().variant), seed, r);
    csv.close();
    write_run_config(out + ".run_config.txt", {{"command", "eval"},
                                               {"data", data_dir},
                                               {"checkpoint", ckpt_path},
                                               {"split", split},
                                               {"subset", subset},
                                               {"out", out}});
    if (r.has_data)
        std::cout << split << "/" << subset << ": mAcc " << fmt(r.macc) << " mIoU " << fmt(r.miou)
                  << " over " << r.sample_count << " samples\n";
    else
        std::cout << split << "/" << subset << ": no data\n";
    return 0;
}

int cmd_ablate(const TrainFlags& f, const std::string& seeds_csv, const std::string& variants_csv,
               const std::string& out) {
    Dataset data = load_dataset(f.data);
    AblationConfig cfg;
    cfg.model = model_config_for(f, data);
    cfg.train = train_config_for(f);
    cfg.train.out_checkpoint.clear();
    cfg.seeds.clear();
    {
        std::istringstream is(seeds_csv);
        std::string tok;
        while (std::getline(is, tok, ',')) cfg.seeds.push_back(std::stoull(tok));
    }
    if (!variants_csv.empty()) {
        cfg.variants.clear();
        std::istringstream is(variants_csv);
        std::string tok;
        while (std::getline(is, tok, ',')) cfg.variants.push_back(parse_variant(tok));
    }
    AblationResult res = run_ablation(data, cfg, out);
    auto kv = train_flags_kv(f);
    kv[0].second = "ablate";
    kv.emplace_back("seeds", seeds_csv);
    kv.emplace_back("variants", variants_csv.empty() ? "all" : variants_csv);
    write_run_config(out + ".run_config.txt", kv);
    for (Variant v : cfg.variants) {
        std::cout << variant_name(v) << ": median test mIoU " << fmt(res.median_miou(v, "all"))
                  << " (day " << fmt(res.median_miou(v, "day")) << ", night "
                  << fmt(res.median_miou(v, "night")) << ")\n";
    }
    return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
    bool all_ok = true;
    for (const auto& r : gradcheck_battery(seed)) {
        const bool ok = r.ok(1e-4);
        all_ok = all_ok && ok;
        std::cout << r.name << " max_rel_err " << fmt(r.max_rel_err) << (ok ? " PASS" : " FAIL")
                  << "\n";
    }
    const auto model_report = model_grad_check(10, seed);
    const bool model_ok = model_report.max_rel_err < 1e-3;
    all_ok = all_ok && model_ok;
    std::cout << model_report.name << " max_rel_err " << fmt(model_report.max_rel_err)
              << (model_ok ? " PASS" : " FAIL") << "\n";
    return all_ok ? 0 : 2;
}

const SegSample* find_sample(const Dataset& data, const std::string& id) {
    if (id.empty()) {
        const auto test = data.indices_of(Split::test);
        if (test.empty()) throw std::runtime_error("dataset has no test samples");
        return &data.samples[static_cast<size_t>(test.front())];
    }
    for (size_t i = 0; i < data.manifest.records.size(); ++i)
        if (data.manifest.records[i].id == id) return &data.samples[i];
    throw std::runtime_error("no sample with id '" + id + "'");
}

int cmd_viz_features(const std::string& data_dir, const std::string& ckpt_path,
                     const std::string& id, const std::string& out_dir) {
    Dataset data = load_dataset(data_dir);
    Net<float> net = model_from_checkpoint(load_checkpoint(ckpt_path));
    fs::create_directories(out_dir);
    const SegSample* sample = find_sample(data, id);
    for (const auto& path : export_mean_feature_maps(net, *sample, out_dir))
        std::cout << path << "\n";
    return 0;
}

int cmd_overlay(const std::string& data_dir, const std::string& ckpt_path, const std::string& id,
                const std::string& out) {
    Dataset data = load_dataset(data_dir);
    Net<float> net = model_from_checkpoint(load_checkpoint(ckpt_path));
    export_overlay(net, *find_sample(data, id), out);
    std::cout << out << "\n";
    return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"Dual-modality (color + thermal) semantic segmentation workbench"};
    app.require_subcommand(1);

    GenConfig gen;
    std::string gen_out;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic paired-modality dataset");
    gen_cmd->add_option("--out", gen_out, "Output directory")->required();
    gen_cmd->add_option("--n", gen.n, "Number of samples");
    gen_cmd->add_option("--size", gen.size, "Image size (multiple of 16)");
    gen_cmd->add_option("--classes", gen.num_classes, "Class count including background");
    gen_cmd->add_option("--max-shift", gen.max_shift, "Max thermal misalignment in pixels");
    gen_cmd->add_option("--day-fraction", gen.day_fraction, "Fraction of day samples");
    gen_cmd->add_option("--seed", gen.seed, "Generation seed");
    gen_cmd->add_option("--workers", gen.workers, "Parallel generation workers");

    TrainFlags tf;
    auto* train_cmd = app.add_subcommand("train", "Train a model variant");
    train_cmd->add_option("--data", tf.data, "Dataset directory")->required();
    train_cmd->add_option("--out", tf.out, "Output checkpoint path")->required();
    train_cmd->add_option("--variant", tf.variant,
                          "rgb|thermal|stacked|unweighted|conf_only|full");
    train_cmd->add_option("--resume", tf.resume, "Checkpoint to resume from");
    train_cmd->add_flag("--no-optimizer-state", tf.no_optimizer_state,
                        "Skip optimizer buffers in the final checkpoint");
    add_sgd_flags(train_cmd, tf);

    std::string eval_data, eval_ckpt, eval_split = "test", eval_subset = "all", eval_out;
    int eval_batch = 8;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required();
    eval_cmd->add_option("--split", eval_split, "train|val|test");
    eval_cmd->add_option("--subset", eval_subset, "all|day|night");
    eval_cmd->add_option("--out", eval_out, "Metrics CSV path")->required();
    eval_cmd->add_option("--batch", eval_batch, "Batch size");

    TrainFlags af;
    std::string ablate_seeds = "0,1,2", ablate_variants, ablate_out;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train and compare every model variant");
    ablate_cmd->add_option("--data", af.data, "Dataset directory")->required();
    ablate_cmd->add_option("--out", ablate_out, "Ablation CSV path")->required();
    ablate_cmd->add_option("--seeds", ablate_seeds, "Comma-separated run seeds");
    ablate_cmd->add_option("--variants", ablate_variants, "Comma-separated variant subset");
    add_sgd_flags(ablate_cmd, af);

    std::uint64_t gc_seed = 17;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Central-difference checks for every op");
    gc_cmd->add_option("--seed", gc_seed, "Check seed");

    std::string vf_data, vf_ckpt, vf_id, vf_out;
    auto* vf_cmd = app.add_subcommand("viz-features", "Export mean encoder activations");
    vf_cmd->add_option("--data", vf_data, "Dataset directory")->required();
    vf_cmd->add_option("--checkpoint", vf_ckpt, "Checkpoint path")->required();
    vf_cmd->add_option("--id", vf_id, "Sample id (default: first test sample)");
    vf_cmd->add_option("--out", vf_out, "Output directory")->required();

    std::string ov_data, ov_ckpt, ov_id, ov_out;
    auto* ov_cmd = app.add_subcommand("overlay", "Render the prediction over the color image");
    ov_cmd->add_option("--data", ov_data, "Dataset directory")->required();
    ov_cmd->add_option("--checkpoint", ov_ckpt, "Checkpoint path")->required();
    ov_cmd->add_option("--id", ov_id, "Sample id (default: first test sample)");
    ov_cmd->add_option("--out", ov_out, "Output pixmap path")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 1;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen_data(gen, gen_out);
        if (train_cmd->parsed()) return cmd_train(tf);
        if (eval_cmd->parsed())
            return cmd_eval(eval_data, eval_ckpt, eval_split, eval_subset, eval_out, eval_batch);
        if (ablate_cmd->parsed()) return cmd_ablate(af, ablate_seeds, ablate_variants, ablate_out);
        if (gc_cmd->parsed()) return cmd_gradcheck(gc_seed);
        if (vf_cmd->parsed()) return cmd_viz_features(vf_data, vf_ckpt, vf_id, vf_out);
        if (ov_cmd->parsed()) return cmd_overlay(ov_data, ov_ckpt, ov_id, ov_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

int dispatch(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return dispatch(args);
}

SmokeReport smoke_pipeline(const std::string& tmp_dir) {
    SmokeReport report;
    const fs::path root(tmp_dir);
    const std::string data_dir = (root / "data").string();
    const std::string ckpt = (root / "model.ddlf").string();
    const std::string metrics = (root / "metrics.csv").string();
    const std::string viz_dir = (root / "viz").string();
    const std::string overlay = (root / "overlay.ppm").string();

    auto fail = [&](const std::string& stage, const std::string& msg) {
        report.ok = false;
        report.failed_stage = stage;
        report.message = msg;
        return report;
    };

    fs::create_directories(root);
    if (dispatch({"gen-data", "--out", data_dir, "--n", "24", "--size", "64", "--classes", "5",
                  "--max-shift", "3", "--seed", "7"}) != 0)
        return fail("gen-data", "generation command failed");
    if (!fs::exists(fs::path(data_dir) / "manifest.tsv"))
        return fail("gen-data", "manifest missing");

    if (dispatch({"train", "--data", data_dir, "--out", ckpt, "--variant", "full", "--epochs", "2",
                  "--seed", "0"}) != 0)
        return fail("train", "training command failed");
    if (!fs::exists(ckpt)) return fail("train", "final checkpoint missing");

    if (dispatch({"eval", "--data", data_dir, "--checkpoint", ckpt, "--split", "test", "--subset",
                  "all", "--out", metrics}) != 0)
        return fail("eval", "evaluation command failed");
    try {
        std::ifstream csv(metrics);
        std::string header;
        if (!std::getline(csv, header) || header != "variant,seed,subset,class,acc,iou,macc,miou")
            return fail("eval", "metrics CSV header mismatch");
        std::string line;
        bool mean_seen = false;
        while (std::getline(csv, line)) {
            if (line.find("__mean__") == std::string::npos) continue;
            mean_seen = true;
            std::istringstream ls(line);
            std::string field;
            for (int i = 0; i < 7; ++i) std::getline(ls, field, ',');
            std::getline(ls, field, ',');
            const double miou = std::stod(field);
            if (!(miou >= 0.0 && miou <= 1.0)) return fail("eval", "mIoU out of range");
        }
        if (!mean_seen) return fail("eval", "metrics CSV missing __mean__ row");
    } catch (const std::exception& e) {
        return fail("eval", e.what());
    }

    if (dispatch({"viz-features", "--data", data_dir, "--checkpoint", ckpt, "--out", viz_dir}) != 0)
        return fail("viz-features", "export command failed");
    try {
        int count = 0;
        for (const auto& entry : fs::directory_iterator(viz_dir)) {
            (void)read_pnm(entry.path().string());
            ++count;
        }
        if (count != 4) return fail("viz-features", "expected 4 tap exports, found " + std::to_string(count));
    } catch (const std::exception& e) {
        return fail("viz-features", e.what());
    }

    if (dispatch({"overlay", "--data", data_dir, "--checkpoint", ckpt, "--out", overlay}) != 0)
        return fail("overlay", "overlay command failed");
    try {
        const PnmImage img = read_pnm(overlay);
        if (img.channels != 3) return fail("overlay", "overlay is not a P6 pixmap");
    } catch (const std::exception& e) {
        return fail("overlay", e.what());
    }

    report.ok = true;
    report.message = "pipeline complete";
    return report;
}

}  // namespace duoseg
