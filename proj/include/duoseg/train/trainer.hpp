#pragma once

#include "duoseg/data/dataset.hpp"
#include "duoseg/eval/evaluator.hpp"
#include "duoseg/train/checkpoint.hpp"
#include "duoseg/train/sgd.hpp"

namespace duoseg {

struct TrainConfig {
    int epochs = 50;
    int batch_size = 8;
    SgdConfig sgd;
    int crop = 0;  // 0 = train at full sample size (flips still apply)
    std::uint64_t seed = 0;
    std::string out_checkpoint;  // empty: keep results in memory only
    bool save_optimizer_state = true;
};

struct EpochStats {
    double loss_total = 0, loss_final = 0, loss_aux_color = 0, loss_aux_thermal = 0;
    int steps = 0;
};

struct FitResult {
    std::vector<EpochStats> epochs;
    std::vector<double> val_miou;
    double best_val_miou = -1.0;
    int best_epoch = -1;
    std::string final_path, best_path, log_path;
};

// One pass over the shuffled train split: augment, forward, backward, SGD
// step at lr(epoch). Throws with a diagnostic if the loss goes non-finite.
EpochStats train_epoch(Net<float>& net, const Dataset& data, SgdOptimizer<float>& opt, int epoch,
                       const TrainConfig& cfg);

// Full training run with per-epoch validation mIoU, best-val and final
// checkpoints plus a metrics log. Pass `resume_opt`/`start_epoch` to
// continue from a loaded state.
FitResult fit(Net<float>& net, const Dataset& data, const TrainConfig& cfg,
              SgdOptimizer<float>* resume_opt = nullptr, int start_epoch = 0);

// Checkpoint bridging. Optimizer buffers are stored as "opt.<param>.v"
// entries; loading tolerates their absence (and ignores them when no
// optimizer is supplied).
Checkpoint checkpoint_from_model(const Net<float>& net,
                                 const std::vector<std::pair<std::string, std::string>>& extra,
                                 const SgdOptimizer<float>* opt = nullptr);
void load_model_state(const Checkpoint& ckpt, Net<float>& net, SgdOptimizer<float>* opt = nullptr);
Net<float> model_from_checkpoint(const Checkpoint& ckpt);

// Sibling artifact path: "m.ddlf" + ".log.csv" -> "m.log.csv"; names without
// the .ddlf extension get the suffix appended.
std::string derive_path(const std::string& out, const std::string& suffix);

}  // namespace duoseg
