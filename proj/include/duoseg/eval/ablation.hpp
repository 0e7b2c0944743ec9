#pragma once

#include "duoseg/train/trainer.hpp"

namespace duoseg {

// Trains every variant with identical hyperparameters and evaluates the test
// split on the day / night / both subsets.
struct AblationConfig {
    std::vector<Variant> variants{Variant::rgb,        Variant::thermal,  Variant::stacked,
                                  Variant::unweighted, Variant::conf_only, Variant::full};
    std::vector<std::uint64_t> seeds{0, 1, 2};
    ModelConfig model;  // variant field is overridden per run
    TrainConfig train;  // out_checkpoint is ignored; runs stay in memory
};

struct AblationRun {
    Variant variant = Variant::full;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    MetricsReport both, day, night;
};

struct AblationResult {
    std::vector<AblationRun> runs;

    // Per-variant medians over seeds (failed runs excluded).
    double median_miou(Variant v, const std::string& subset) const;
    double median_macc(Variant v, const std::string& subset) const;
};

// Writes one CSV row block per (variant, seed, subset) plus per-variant
// `__median__` rows; a failed run is annotated with a `__error__` row rather
// than aborting the table. Pass an empty path to skip the file.
AblationResult run_ablation(const Dataset& data, const AblationConfig& cfg,
                            const std::string& out_csv);

}  // namespace duoseg
