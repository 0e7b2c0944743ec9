#include "duoseg/eval/ablation.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>

namespace duoseg {

ConfusionMatrix confusion_for_split(const Net<float>& net, const Dataset& data, Split split,
                                    const std::string& subset, int batch_size) {
    std::optional<Regime> regime;
    if (subset == "day") regime = Regime::day;
    else if (subset == "night") regime = Regime::night;
    else if (subset != "all") throw std::invalid_argument("evaluate_split: unknown subset '" + subset + "'");

    const ModelConfig& cfg = net.config();
    if (cfg.height != data.manifest.gen.size || cfg.width != data.manifest.gen.size)
        throw std::invalid_argument("evaluate_split: model resolution does not match dataset size");

    const std::vector<int> idx = data.indices_of(split, regime);
    ConfusionMatrix cm(cfg.num_classes);
    NoGradGuard ng;
    for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(batch_size)) {
        const size_t count = std::min(static_cast<size_t>(batch_size), idx.size() - start);
        std::vector<const SegSample*> ptrs;
        for (size_t j = 0; j < count; ++j)
            ptrs.push_back(&data.samples[static_cast<size_t>(idx[start + j])]);
        Batch batch = make_batch(ptrs);
        const LabelMap pred = argmax_channels(net.forward(batch.color, batch.thermal).y_final);
        cm.update(pred.v, batch.labels.v);
    }
    return cm;
}

MetricsReport evaluate_split(const Net<float>& net, const Dataset& data, Split split,
                             const std::string& subset, int batch_size) {
    std::optional<Regime> regime;
    if (subset == "day") regime = Regime::day;
    else if (subset == "night") regime = Regime::night;
    const ConfusionMatrix cm = confusion_for_split(net, data, split, subset, batch_size);
    const std::int64_t samples = static_cast<std::int64_t>(data.indices_of(split, regime).size());
    return metrics_from_confusion(cm, subset, samples, net.config().digest());
}

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Elementwise median report across seeds for one (variant, subset).
MetricsReport median_report(const std::vector<const MetricsReport*>& reports) {
    MetricsReport out;
    if (reports.empty()) return out;
    out = *reports.front();
    std::vector<double> macc, miou;
    for (const auto* r : reports) {
        if (!r->has_data) continue;
        macc.push_back(r->macc);
        miou.push_back(r->miou);
    }
    out.has_data = !macc.empty();
    if (!out.has_data) return out;
    out.macc = median_of(macc);
    out.miou = median_of(miou);
    for (int c = 0; c < out.num_classes; ++c) {
        std::vector<double> acc, iou;
        for (const auto* r : reports) {
            if (!r->has_data) continue;
            const auto& m = r->per_class[static_cast<size_t>(c)];
            if (m.acc_defined) acc.push_back(m.acc);
            if (m.iou_defined) iou.push_back(m.iou);
        }
        auto& m = out.per_class[static_cast<size_t>(c)];
        m.acc_defined = !acc.empty();
        m.acc = m.acc_defined ? median_of(acc) : 0.0;
        m.iou_defined = !iou.empty();
        m.iou = m.iou_defined ? median_of(iou) : 0.0;
    }
    return out;
}

const MetricsReport& subset_report(const AblationRun& run, const std::string& subset) {
    if (subset == "day") return run.day;
    if (subset == "night") return run.night;
    return run.both;
}

}  // namespace

double AblationResult::median_miou(Variant v, const std::string& subset) const {
    std::vector<double> vals;
    for (const auto& run : runs)
        if (run.variant == v && !run.failed && subset_report(run, subset).has_data)
            vals.push_back(subset_report(run, subset).miou);
    if (vals.empty()) throw std::runtime_error("median_miou: no successful runs for variant");
    return median_of(vals);
}

double AblationResult::median_macc(Variant v, const std::string& subset) const {
    std::vector<double> vals;
    for (const auto& run : runs)
        if (run.variant == v && !run.failed && subset_report(run, subset).has_data)
            vals.push_back(subset_report(run, subset).macc);
    if (vals.empty()) throw std::runtime_error("median_macc: no successful runs for variant");
    return median_of(vals);
}

AblationResult run_ablation(const Dataset& data, const AblationConfig& cfg,
                            const std::string& out_csv) {
    if (cfg.seeds.empty()) throw std::invalid_argument("run_ablation: need at least one seed");
    AblationResult result;

    for (Variant v : cfg.variants) {
        for (std::uint64_t seed : cfg.seeds) {
            AblationRun run;
            run.variant = v;
            run.seed = seed;
            try {
                ModelConfig mcfg = cfg.model;
                mcfg.variant = v;
                Net<float> net(mcfg, seed);
                TrainConfig tcfg = cfg.train;  // identical hyperparameters per variant
                tcfg.seed = seed;
                tcfg.out_checkpoint.clear();
                fit(net, data, tcfg);
                run.both = evaluate_split(net, data, Split::test, "all", tcfg.batch_size);
                run.day = evaluate_split(net, data, Split::test, "day", tcfg.batch_size);
                run.night = evaluate_split(net, data, Split::test, "night", tcfg.batch_size);
            } catch (const std::exception& e) {
                run.failed = true;
                run.error = e.what();
                std::cerr << "ablation: " << variant_name(v) << " seed " << seed
                          << " failed: " << e.what() << "\n";
            }
            result.runs.push_back(std::move(run));
        }
    }

    if (!out_csv.empty()) {
        std::ofstream f(out_csv, std::ios::binary);
        if (!f) throw std::runtime_error("run_ablation: cannot write " + out_csv);
        write_metrics_csv_header(f);
        for (const auto& run : result.runs) {
            const std::string seed = std::to_string(run.seed);
            if (run.failed) {
                f << variant_name(run.variant) << "," << seed << ",all,__error__,nan,nan,nan,nan\n";
                continue;
            }
            append_metrics_rows(f, variant_name(run.variant), seed, run.both);
            append_metrics_rows(f, variant_name(run.variant), seed, run.day);
            append_metrics_rows(f, variant_name(run.variant), seed, run.night);
        }
        for (Variant v : cfg.variants) {
            for (const std::string subset : {"all", "day", "night"}) {
                std::vector<const MetricsReport*> reports;
                for (const auto& run : result.runs)
                    if (run.variant == v && !run.failed)
                        reports.push_back(&subset_report(run, subset));
                if (reports.empty()) continue;
                append_metrics_rows(f, variant_name(v), "__median__", median_report(reports));
            }
        }
    }
    return result;
}

}  // namespace duoseg
