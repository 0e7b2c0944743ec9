#pragma once

#include <optional>

#include "duoseg/core/gradcheck.hpp"
#include "duoseg/model/layers.hpp"

namespace duoseg {

// Per-pixel confidence: the winning class probability of a modality's
// preliminary logits. BxKxHxW -> Bx1xHxW, gradients flow through.
template <class S>
Tensor<S> confidence_map(const Tensor<S>& logits) {
    return reduce_max(softmax(logits, 1), 1);
}

// Pairwise prediction correlation between the thermal and color decoder
// outputs, before compression. For each sample the flattened predictions
// (k x N, N = h*w) form R = yt^T yc, so channel i of the result is thermal
// position i's match map over color positions. Entries are rectified and
// each position's match vector is L2-normalized across the N channels.
template <class S>
Tensor<S> correlation_features(const Tensor<S>& y_color, const Tensor<S>& y_thermal,
                               bool softmax_inputs = false) {
    detail::check(y_color.shape() == y_thermal.shape(),
                  "correlation_features: prediction shapes differ");
    detail::check(y_color.rank() == 4, "correlation_features: predictions must be BxKxHxW");
    const int B = y_color.shape()[0], K = y_color.shape()[1], h = y_color.shape()[2],
              w = y_color.shape()[3];
    const int n = h * w;
    Tensor<S> yc = softmax_inputs ? softmax(y_color, 1) : y_color;
    Tensor<S> yt = softmax_inputs ? softmax(y_thermal, 1) : y_thermal;
    std::vector<Tensor<S>> per_sample;
    per_sample.reserve(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
        Tensor<S> cb = reshape(slice(yc, 0, b, 1), Shape{K, n});
        Tensor<S> tb = reshape(slice(yt, 0, b, 1), Shape{K, n});
        Tensor<S> r = relu(matmul(transpose(tb), cb));  // N x N
        per_sample.push_back(reshape(r, Shape{1, n, h, w}));
    }
    Tensor<S> corr = B == 1 ? per_sample[0] : concat(per_sample, 0);
    return l2_normalize(corr, 1);
}

// Confidence-weighted concatenation: each modality's features are gated by
// its own confidence map (resized to the tap resolution, broadcast over
// channels), color block first.
template <class S>
Tensor<S> confidence_weighted_fusion(const Tensor<S>& f_color, const Tensor<S>& f_thermal,
                                     const Tensor<S>& conf_color, const Tensor<S>& conf_thermal) {
    const int th = f_color.shape()[2], tw = f_color.shape()[3];
    Tensor<S> fc = hadamard(f_color, bilinear_resize(conf_color, th, tw));
    Tensor<S> ft = hadamard(f_thermal, bilinear_resize(conf_thermal, th, tw));
    return concat<S>({fc, ft}, 1);
}

// Correlation gate applied over all channels of an already-fused tap.
template <class S>
Tensor<S> correlation_reweight(const Tensor<S>& fused, const Tensor<S>& gate) {
    return hadamard(fused, bilinear_resize(gate, fused.shape()[2], fused.shape()[3]));
}

template <class S>
struct ForwardOutput {
    Tensor<S> y_final;                   // BxKxHxW logits at input resolution
    Tensor<S> y_color, y_thermal;        // BxKx(H/4)x(W/4), fusion variants only
    Tensor<S> conf_color, conf_thermal;  // Bx1x(H/4)x(W/4), conf_only and full
    Tensor<S> corr_map;                  // Bx1x(H/4)x(W/4), full only
    Tensor<S> tap_color_a, tap_color_b;  // encoder taps, retained on request
    Tensor<S> tap_thermal_a, tap_thermal_b;
};

struct ForwardOptions {
    bool retain_taps = false;
    // Test hooks: replace the learned gates with exact ones so weighted
    // variants collapse onto plain concatenation.
    bool force_unit_confidence = false;
    bool force_unit_correlation = false;
};

template <class S>
class Net {
public:
    Net(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Pcg32 rng = derive_rng(seed, 0x6d6f64656cULL);
        const auto& w = cfg_.widths;
        if (is_fusion_variant(cfg_.variant)) {
            enc_color_ = Encoder<S>::create(3, w, rng);
            dec_color_ = make_head(w, rng);
            enc_thermal_ = Encoder<S>::create(1, w, rng);
            dec_thermal_ = make_head(w, rng);
            // Shared decoder consumes concatenated per-modality taps.
            shared_ = DecoderHead<S>::create(2 * w[1], 2 * w[3], cfg_.decoder_width,
                                             cfg_.low_proj_width, cfg_.num_classes,
                                             cfg_.aspp_rates, rng);
            if (cfg_.variant == Variant::full)
                compress_ = CompressBlock<S>::create(cfg_.corr_n(), cfg_.compress_hidden, rng);
        } else {
            const int cin = cfg_.variant == Variant::rgb ? 3 : cfg_.variant == Variant::thermal ? 1 : 4;
            enc_single_ = Encoder<S>::create(cin, w, rng);
            dec_single_ = make_head(w, rng);
        }
        collect_params();
    }

    const ModelConfig& config() const { return cfg_; }

    ParamList<S>& params() { return params_; }
    const ParamList<S>& params() const { return params_; }

    Tensor<S> param(const std::string& name) const {
        for (const auto& [n, t] : params_)
            if (n == name) return t;
        throw std::invalid_argument("Net: no parameter named " + name);
    }

    ForwardOutput<S> forward(const Tensor<S>& color, const Tensor<S>& thermal,
                             const ForwardOptions& opt = {}) const {
        check_input(color, 3, "color");
        check_input(thermal, 1, "thermal");
        ForwardOutput<S> out;
        switch (cfg_.variant) {
            case Variant::rgb: return single_forward(color, opt);
            case Variant::thermal: return single_forward(thermal, opt);
            case Variant::stacked: return single_forward(concat<S>({color, thermal}, 1), opt);
            default: break;
        }

        auto tc = (*enc_color_)(color);
        auto tt = (*enc_thermal_)(thermal);
        out.y_color = (*dec_color_)(tc.tap_a, tc.tap_b);
        out.y_thermal = (*dec_thermal_)(tt.tap_a, tt.tap_b);

        Tensor<S> conf_c, conf_t, gate;
        if (cfg_.variant == Variant::conf_only || cfg_.variant == Variant::full) {
            const Shape conf_shape{color.shape()[0], 1, cfg_.corr_h(), cfg_.corr_w()};
            conf_c = opt.force_unit_confidence ? Tensor<S>::ones(conf_shape)
                                               : confidence_map(out.y_color);
            conf_t = opt.force_unit_confidence ? Tensor<S>::ones(conf_shape)
                                               : confidence_map(out.y_thermal);
            out.conf_color = conf_c;
            out.conf_thermal = conf_t;
        }
        if (cfg_.variant == Variant::full) {
            if (out.y_color.shape()[2] != cfg_.corr_h() || out.y_color.shape()[3] != cfg_.corr_w())
                throw std::invalid_argument(
                    "Net: prediction resolution differs from the configured correlation resolution");
            gate = opt.force_unit_correlation
                       ? Tensor<S>::ones(Shape{color.shape()[0], 1, cfg_.corr_h(), cfg_.corr_w()})
                       : (*compress_)(correlation_features(out.y_color, out.y_thermal,
                                                           cfg_.softmax_correlation));
            out.corr_map = gate;
        }

        Tensor<S> fused_a = fuse_tap(tc.tap_a, tt.tap_a, conf_c, conf_t, gate);
        Tensor<S> fused_b = fuse_tap(tc.tap_b, tt.tap_b, conf_c, conf_t, gate);
        Tensor<S> y4 = (*shared_)(fused_a, fused_b);
        out.y_final = bilinear_resize(y4, cfg_.height, cfg_.width);

        if (opt.retain_taps) {
            out.tap_color_a = tc.tap_a;
            out.tap_color_b = tc.tap_b;
            out.tap_thermal_a = tt.tap_a;
            out.tap_thermal_b = tt.tap_b;
        }
        return out;
    }

private:
    DecoderHead<S> make_head(const std::array<int, 4>& w, Pcg32& rng) const {
        return DecoderHead<S>::create(w[1], w[3], cfg_.decoder_width, cfg_.low_proj_width,
                                      cfg_.num_classes, cfg_.aspp_rates, rng);
    }

    void check_input(const Tensor<S>& x, int channels, const char* what) const {
        if (x.rank() != 4 || x.shape()[1] != channels || x.shape()[2] != cfg_.height ||
            x.shape()[3] != cfg_.width)
            throw std::invalid_argument(std::string("Net: ") + what + " input must be Bx" +
                                        std::to_string(channels) + "x" + std::to_string(cfg_.height) +
                                        "x" + std::to_string(cfg_.width) + ", got " +
                                        x.shape().str());
    }

    ForwardOutput<S> single_forward(const Tensor<S>& x, const ForwardOptions& opt) const {
        auto taps = (*enc_single_)(x);
        Tensor<S> y = (*dec_single_)(taps.tap_a, taps.tap_b);
        ForwardOutput<S> out;
        out.y_final = bilinear_resize(y, cfg_.height, cfg_.width);
        if (opt.retain_taps) {
            if (cfg_.variant == Variant::thermal) {
                out.tap_thermal_a = taps.tap_a;
                out.tap_thermal_b = taps.tap_b;
            } else {
                out.tap_color_a = taps.tap_a;
                out.tap_color_b = taps.tap_b;
            }
        }
        return out;
    }

    Tensor<S> fuse_tap(const Tensor<S>& f_color, const Tensor<S>& f_thermal, const Tensor<S>& conf_c,
                       const Tensor<S>& conf_t, const Tensor<S>& gate) const {
        Tensor<S> fused = conf_c.defined()
                              ? confidence_weighted_fusion(f_color, f_thermal, conf_c, conf_t)
                              : concat<S>({f_color, f_thermal}, 1);
        if (gate.defined()) fused = correlation_reweight(fused, gate);
        return fused;
    }

    void collect_params() {
        params_.clear();
        if (is_fusion_variant(cfg_.variant)) {
            enc_color_->collect("enc_c", params_);
            dec_color_->collect("dec_c", params_);
            enc_thermal_->collect("enc_t", params_);
            dec_thermal_->collect("dec_t", params_);
            shared_->collect("shared", params_);
            if (compress_) compress_->collect("corr", params_);
        } else {
            enc_single_->collect("enc", params_);
            dec_single_->collect("dec", params_);
        }
    }

    ModelConfig cfg_;
    std::optional<Encoder<S>> enc_color_, enc_thermal_, enc_single_;
    std::optional<DecoderHead<S>> dec_color_, dec_thermal_, dec_single_;
    std::optional<DecoderHead<S>> shared_;
    std::optional<CompressBlock<S>> compress_;
    ParamList<S> params_;
};

// Total training objective: CE on the shared prediction plus, for fusion
// variants, lambda_aux-weighted CE on each upsampled modality prediction.
template <class S>
struct LossTerms {
    Tensor<S> total;
    double final_term = 0, aux_color = 0, aux_thermal = 0;
};

template <class S>
LossTerms<S> training_loss(const ModelConfig& cfg, const ForwardOutput<S>& out,
                           const LabelMap& labels) {
    LossTerms<S> terms;
    Tensor<S> ce_final = cross_entropy(out.y_final, labels);
    terms.final_term = static_cast<double>(ce_final.item());
    if (!is_fusion_variant(cfg.variant)) {
        terms.total = ce_final;
        return terms;
    }
    Tensor<S> ce_c = cross_entropy(bilinear_resize(out.y_color, cfg.height, cfg.width), labels);
    Tensor<S> ce_t = cross_entropy(bilinear_resize(out.y_thermal, cfg.height, cfg.width), labels);
    terms.aux_color = static_cast<double>(ce_c.item());
    terms.aux_thermal = static_cast<double>(ce_t.item());
    terms.total = add(ce_final, scale(add(ce_c, ce_t), static_cast<S>(cfg.lambda_aux)));
    return terms;
}

// Central-difference check of the full model's training loss with respect to
// `sampled` randomly chosen parameter entries, on a tiny configuration.
// Runs in 64-bit.
inline GradCheckReport model_grad_check(int sampled = 10, std::uint64_t seed = 5) {
    ModelConfig cfg;
    cfg.variant = Variant::full;
    cfg.num_classes = 2;
    cfg.height = 16;
    cfg.width = 16;
    cfg.widths = {4, 8, 12, 16};
    cfg.decoder_width = 16;
    cfg.low_proj_width = 8;
    cfg.compress_hidden = 8;
    Net<double> net(cfg, seed);

    Pcg32 rng = derive_rng(seed, 0x676331ULL);
    const int batch = 2;
    Tensor<double> color = Tensor<double>::uniform(Shape{batch, 3, 16, 16}, rng, 0.0, 1.0);
    Tensor<double> thermal = Tensor<double>::uniform(Shape{batch, 1, 16, 16}, rng, 0.0, 1.0);
    LabelMap labels = LabelMap::zeros(Shape{batch, 16, 16});
    for (auto& v : labels.v) v = static_cast<std::int32_t>(rng.uniform_int(2));

    auto loss_fn = [&] {
        return training_loss(cfg, net.forward(color, thermal), labels).total.item();
    };

    for (auto& [name, p] : net.params()) p.zero_grad();
    auto out = net.forward(color, thermal);
    backward(training_loss(cfg, out, labels).total);

    GradCheckReport report{"full_model", 0.0};
    NoGradGuard ng;
    auto& params = net.params();
    for (int s = 0; s < sampled; ++s) {
        auto& p = params[rng.uniform_int(static_cast<std::uint32_t>(params.size()))].second;
        const Index i = static_cast<Index>(rng.uniform_int(static_cast<std::uint32_t>(p.numel())));
        const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
        const double v = p.values()[i];
        const double h = 1e-5 * std::max(1.0, std::abs(v));
        p.values()[i] = v + h;
        const double lp = loss_fn();
        p.values()[i] = v - h;
        const double lm = loss_fn();
        p.values()[i] = v;
        report.max_rel_err =
            std::max(report.max_rel_err, detail::rel_err(analytic, (lp - lm) / (2.0 * h)));
    }
    return report;
}

}  // namespace duoseg
