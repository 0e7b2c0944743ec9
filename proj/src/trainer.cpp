#include "duoseg/train/trainer.hpp"

#include <cstdio>
#include <fstream>

namespace duoseg {

namespace {

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

std::string derive_path(const std::string& out, const std::string& suffix) {
    const std::string ext = ".ddlf";
    if (out.size() > ext.size() && out.compare(out.size() - ext.size(), ext.size(), ext) == 0)
        return out.substr(0, out.size() - ext.size()) + suffix;
    return out + suffix;
}

EpochStats train_epoch(Net<float>& net, const Dataset& data, SgdOptimizer<float>& opt, int epoch,
                       const TrainConfig& cfg) {
    if (cfg.batch_size < 1) throw std::invalid_argument("train_epoch: batch_size must be >= 1");
    std::vector<int> idx = data.indices_of(Split::train);
    if (idx.empty()) throw std::runtime_error("train_epoch: train split is empty");
    const int crop = cfg.crop > 0 ? cfg.crop : data.manifest.gen.size;
    const ModelConfig& mcfg = net.config();
    if (mcfg.height != crop || mcfg.width != crop)
        throw std::invalid_argument("train_epoch: model resolution " + std::to_string(mcfg.height) +
                                    " does not match training crop " + std::to_string(crop));

    Pcg32 shuffle_rng = derive_rng(cfg.seed, static_cast<std::uint64_t>(epoch), 0x53485546ULL);
    for (size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[shuffle_rng.uniform_int(static_cast<std::uint32_t>(i))]);

    const double lr = lr_at_epoch(cfg.sgd, epoch);
    EpochStats stats;
    for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(cfg.batch_size)) {
        const size_t count = std::min(static_cast<size_t>(cfg.batch_size), idx.size() - start);
        std::vector<SegSample> augmented;
        augmented.reserve(count);
        for (size_t j = 0; j < count; ++j) {
            const int di = idx[start + j];
            Pcg32 arng = derive_rng(cfg.seed,
                                    (static_cast<std::uint64_t>(epoch) << 32) |
                                        static_cast<std::uint64_t>(static_cast<std::uint32_t>(di)),
                                    0x41554721ULL);
            augmented.push_back(augment(data.samples[static_cast<size_t>(di)], arng, crop));
        }
        std::vector<const SegSample*> ptrs;
        for (const auto& s : augmented) ptrs.push_back(&s);
        Batch batch = make_batch(ptrs);

        auto out = net.forward(batch.color, batch.thermal);
        auto terms = training_loss(mcfg, out, batch.labels);
        const double total = static_cast<double>(terms.total.item());
        if (!std::isfinite(total))
            throw std::runtime_error("train_epoch: non-finite loss at epoch " +
                                     std::to_string(epoch) + ", batch " +
                                     std::to_string(start / static_cast<size_t>(cfg.batch_size)) +
                                     " (final=" + fmt(terms.final_term) +
                                     ", aux_c=" + fmt(terms.aux_color) +
                                     ", aux_t=" + fmt(terms.aux_thermal) + ")");
        backward(terms.total);
        opt.step(net.params(), lr);
        opt.zero_grad(net.params());

        stats.loss_total += total;
        stats.loss_final += terms.final_term;
        stats.loss_aux_color += terms.aux_color;
        stats.loss_aux_thermal += terms.aux_thermal;
        stats.steps++;
    }
    stats.loss_total /= stats.steps;
    stats.loss_final /= stats.steps;
    stats.loss_aux_color /= stats.steps;
    stats.loss_aux_thermal /= stats.steps;
    return stats;
}

Checkpoint checkpoint_from_model(const Net<float>& net,
                                 const std::vector<std::pair<std::string, std::string>>& extra,
                                 const SgdOptimizer<float>* opt) {
    Checkpoint c;
    c.metadata = net.config().serialize();
    for (const auto& [k, v] : extra) c.metadata += k + "=" + v + "\n";
    for (const auto& [name, p] : net.params()) c.tensors.emplace_back(name, p.clone_detached());
    if (opt) {
        const auto& params = net.params();
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor<float> buf = Tensor<float>::uninit(params[i].second.shape());
            buf.values() = opt->buffers()[i];
            c.tensors.emplace_back("opt." + params[i].first + ".v", std::move(buf));
        }
    }
    return c;
}

void load_model_state(const Checkpoint& ckpt, Net<float>& net, SgdOptimizer<float>* opt) {
    auto& params = net.params();
    std::vector<bool> filled(params.size(), false);
    auto find_param = [&](const std::string& name) -> int {
        for (size_t i = 0; i < params.size(); ++i)
            if (params[i].first == name) return static_cast<int>(i);
        return -1;
    };

    for (const auto& [name, t] : ckpt.tensors) {
        if (name.rfind("opt.", 0) == 0) {
            if (!opt) continue;
            if (name.size() < 7 || name.compare(name.size() - 2, 2, ".v") != 0)
                throw CheckpointError("checkpoint: malformed optimizer entry '" + name + "'");
            const std::string pname = name.substr(4, name.size() - 6);
            const int i = find_param(pname);
            if (i < 0) throw CheckpointError("checkpoint: unknown tensor name '" + name + "'");
            if (t.shape() != params[static_cast<size_t>(i)].second.shape())
                throw CheckpointError("checkpoint: shape mismatch for tensor '" + name + "' (" +
                                      t.shape().str() + " vs " +
                                      params[static_cast<size_t>(i)].second.shape().str() + ")");
            opt->buffers()[static_cast<size_t>(i)] = t.values();
            continue;
        }
        const int i = find_param(name);
        if (i < 0) throw CheckpointError("checkpoint: unknown tensor name '" + name + "'");
        auto& p = params[static_cast<size_t>(i)].second;
        if (t.shape() != p.shape())
            throw CheckpointError("checkpoint: shape mismatch for tensor '" + name + "' (" +
                                  t.shape().str() + " vs " + p.shape().str() + ")");
        p.values() = t.values();
        filled[static_cast<size_t>(i)] = true;
    }
    for (size_t i = 0; i < params.size(); ++i)
        if (!filled[i])
            throw CheckpointError("checkpoint: missing tensor '" + params[i].first + "'");
}

Net<float> model_from_checkpoint(const Checkpoint& ckpt) {
    const ModelConfig cfg = ModelConfig::deserialize(ckpt.metadata);
    Net<float> net(cfg, 0);
    load_model_state(ckpt, net);
    return net;
}

FitResult fit(Net<float>& net, const Dataset& data, const TrainConfig& cfg,
              SgdOptimizer<float>* resume_opt, int start_epoch) {
    if (data.indices_of(Split::train).empty() || data.indices_of(Split::val).empty())
        throw std::runtime_error("fit: dataset needs non-empty train and val splits");
    SgdOptimizer<float> local(net.params(), cfg.sgd);
    SgdOptimizer<float>* opt = resume_opt ? resume_opt : &local;

    FitResult res;
    if (!cfg.out_checkpoint.empty()) {
        res.final_path = cfg.out_checkpoint;
        res.best_path = derive_path(cfg.out_checkpoint, ".best.ddlf");
        res.log_path = derive_path(cfg.out_checkpoint, ".log.csv");
    }

    auto hyper_kv = [&](int epoch) {
        std::vector<std::pair<std::string, std::string>> kv{
            {"epoch", std::to_string(epoch)},
            {"seed", std::to_string(cfg.seed)},
            {"epochs", std::to_string(cfg.epochs)},
            {"batch_size", std::to_string(cfg.batch_size)},
            {"crop", std::to_string(cfg.crop)},
            {"lr0", fmt(cfg.sgd.lr0)},
            {"momentum", fmt(cfg.sgd.momentum)},
            {"weight_decay", fmt(cfg.sgd.weight_decay)},
            {"gamma", fmt(cfg.sgd.gamma)},
        };
        return kv;
    };

    for (int e = start_epoch; e < cfg.epochs; ++e) {
        EpochStats st = train_epoch(net, data, *opt, e, cfg);
        MetricsReport val = evaluate_split(net, data, Split::val, "all", cfg.batch_size);
        res.epochs.push_back(st);
        res.val_miou.push_back(val.miou);
        if (val.miou > res.best_val_miou) {
            res.best_val_miou = val.miou;
            res.best_epoch = e;
            if (!res.best_path.empty()) {
                auto kv = hyper_kv(e);
                kv.emplace_back("val_miou", fmt(val.miou));
                save_checkpoint(res.best_path, checkpoint_from_model(net, kv));
            }
        }
    }

    if (!cfg.out_checkpoint.empty()) {
        auto kv = hyper_kv(cfg.epochs);
        kv.emplace_back("best_epoch", std::to_string(res.best_epoch));
        kv.emplace_back("best_val_miou", fmt(res.best_val_miou));
        save_checkpoint(res.final_path,
                        checkpoint_from_model(net, kv, cfg.save_optimizer_state ? opt : nullptr));

        std::ofstream log(res.log_path, std::ios::binary);
        if (!log) throw std::runtime_error("fit: cannot write " + res.log_path);
        log << "# variant=" << variant_name(net.config().variant) << "\n";
        for (const auto& [k, v] : hyper_kv(cfg.epochs)) log << "# " << k << "=" << v << "\n";
        log << "# lambda_aux=" << fmt(net.config().lambda_aux) << "\n";
        log << "epoch,lr,loss_total,loss_final,loss_aux_color,loss_aux_thermal,val_miou\n";
        for (size_t i = 0; i < res.epochs.size(); ++i) {
            const int e = start_epoch + static_cast<int>(i);
            const auto& st = res.epochs[i];
            log << e << "," << fmt(lr_at_epoch(cfg.sgd, e)) << "," << fmt(st.loss_total) << ","
                << fmt(st.loss_final) << "," << fmt(st.loss_aux_color) << ","
                << fmt(st.loss_aux_thermal) << "," << fmt(res.val_miou[i]) << "\n";
        }
    }
    return res;
}

}  // namespace duoseg
