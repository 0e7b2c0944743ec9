#pragma once

#include <string>
#include <utility>
#include <vector>

#include "duoseg/core/ops.hpp"
#include "duoseg/model/config.hpp"

namespace duoseg {

template <class S>
using ParamList = std::vector<std::pair<std::string, Tensor<S>>>;

// Group count: min(8, C), falling back to the largest divisor of C below
// that when C is not a multiple of 8 (only reachable with non-default widths).
inline int norm_groups(int channels) {
    int g = std::min(8, channels);
    while (channels % g != 0) --g;
    return g;
}

template <class S>
struct Conv2dLayer {
    Tensor<S> weight, bias;
    int stride = 1, padding = 0, dilation = 1;

    // Centered uniform fan-in init for both weight and bias.
    static Conv2dLayer create(int cin, int cout, int k, int stride, int padding, int dilation,
                              Pcg32& rng) {
        Conv2dLayer l;
        const S bound = S(1) / std::sqrt(static_cast<S>(cin) * k * k);
        l.weight = Tensor<S>::uniform(Shape{cout, cin, k, k}, rng, -bound, bound);
        l.bias = Tensor<S>::uniform(Shape{cout}, rng, -bound, bound);
        l.weight.set_requires_grad(true);
        l.bias.set_requires_grad(true);
        l.stride = stride;
        l.padding = padding;
        l.dilation = dilation;
        return l;
    }

    Tensor<S> operator()(const Tensor<S>& x) const {
        return conv2d(x, weight, bias, stride, padding, dilation);
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

template <class S>
struct GroupNormLayer {
    Tensor<S> gamma, beta;
    int groups = 1;

    static GroupNormLayer create(int channels) {
        GroupNormLayer l;
        l.gamma = Tensor<S>::ones(Shape{channels});
        l.beta = Tensor<S>::zeros(Shape{channels});
        l.gamma.set_requires_grad(true);
        l.beta.set_requires_grad(true);
        l.groups = norm_groups(channels);
        return l;
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return group_norm(x, groups, gamma, beta); }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        out.emplace_back(prefix + ".gamma", gamma);
        out.emplace_back(prefix + ".beta", beta);
    }
};

// conv -> group norm -> relu
template <class S>
struct ConvBlock {
    Conv2dLayer<S> conv;
    GroupNormLayer<S> norm;

    static ConvBlock create(int cin, int cout, int k, int stride, int dilation, Pcg32& rng) {
        ConvBlock b;
        const int pad = dilation * (k - 1) / 2;  // size-preserving at stride 1
        b.conv = Conv2dLayer<S>::create(cin, cout, k, stride, pad, dilation, rng);
        b.norm = GroupNormLayer<S>::create(cout);
        return b;
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return relu(norm(conv(x))); }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        conv.collect(prefix + ".conv", out);
        norm.collect(prefix + ".norm", out);
    }
};

// Four stages, each halving resolution: taps at 1/4 (stage 2) and 1/16
// (stage 4) of the input scale.
template <class S>
struct Encoder {
    std::vector<ConvBlock<S>> blocks;  // 2 per stage: stride-2 then stride-1

    static Encoder create(int cin, const std::array<int, 4>& widths, Pcg32& rng) {
        Encoder e;
        int c = cin;
        for (int s = 0; s < 4; ++s) {
            e.blocks.push_back(ConvBlock<S>::create(c, widths[static_cast<size_t>(s)], 3, 2, 1, rng));
            e.blocks.push_back(
                ConvBlock<S>::create(widths[static_cast<size_t>(s)], widths[static_cast<size_t>(s)], 3, 1, 1, rng));
            c = widths[static_cast<size_t>(s)];
        }
        return e;
    }

    struct Taps {
        Tensor<S> tap_a;  // 1/4 scale
        Tensor<S> tap_b;  // 1/16 scale
    };

    Taps operator()(const Tensor<S>& x) const {
        Tensor<S> h = x;
        Taps t;
        for (int s = 0; s < 4; ++s) {
            h = blocks[static_cast<size_t>(2 * s + 1)](blocks[static_cast<size_t>(2 * s)](h));
            if (s == 1) t.tap_a = h;
        }
        t.tap_b = h;
        return t;
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect(prefix + ".s" + std::to_string(i / 2 + 1) + ".b" +
                                  std::to_string(i % 2 + 1),
                              out);
    }
};

// Parallel 3x3 dilated branches (one per rate), a 1x1 branch and a pooled
// global branch, concatenated and projected back to `width` channels.
template <class S>
struct Aspp {
    ConvBlock<S> branch_1x1;
    std::vector<ConvBlock<S>> branch_rates;
    Conv2dLayer<S> global_proj;  // applied to the 1x1 pooled map; no norm there
    ConvBlock<S> project;
    std::vector<int> rates;

    static Aspp create(int cin, int width, const std::vector<int>& rates, Pcg32& rng) {
        Aspp a;
        a.rates = rates;
        a.branch_1x1 = ConvBlock<S>::create(cin, width, 1, 1, 1, rng);
        for (int r : rates) a.branch_rates.push_back(ConvBlock<S>::create(cin, width, 3, 1, r, rng));
        a.global_proj = Conv2dLayer<S>::create(cin, width, 1, 1, 0, 1, rng);
        a.project = ConvBlock<S>::create(width * (static_cast<int>(rates.size()) + 2), width, 1, 1, 1, rng);
        return a;
    }

    Tensor<S> operator()(const Tensor<S>& x) const {
        const int h = x.shape()[2], w = x.shape()[3];
        std::vector<Tensor<S>> branches;
        branches.push_back(branch_1x1(x));
        for (const auto& b : branch_rates) branches.push_back(b(x));
        branches.push_back(bilinear_resize(relu(global_proj(mean_spatial(x))), h, w));
        return project(concat(branches, 1));
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        branch_1x1.collect(prefix + ".b1x1", out);
        for (size_t i = 0; i < branch_rates.size(); ++i)
            branch_rates[i].collect(prefix + ".r" + std::to_string(rates[i]), out);
        global_proj.collect(prefix + ".gap", out);
        project.collect(prefix + ".proj", out);
    }
};

// DeepLab-style decoder head: ASPP over the deep tap, x4 upsample, concat
// with the projected shallow tap, two 3x3 blocks, 1x1 classifier. Emits
// logits at the shallow tap's resolution.
template <class S>
struct DecoderHead {
    Aspp<S> aspp;
    ConvBlock<S> low_proj;
    ConvBlock<S> fuse1, fuse2;
    Conv2dLayer<S> classifier;

    static DecoderHead create(int low_ch, int deep_ch, int width, int low_width, int num_classes,
                              const std::vector<int>& rates, Pcg32& rng) {
        DecoderHead d;
        d.aspp = Aspp<S>::create(deep_ch, width, rates, rng);
        d.low_proj = ConvBlock<S>::create(low_ch, low_width, 1, 1, 1, rng);
        d.fuse1 = ConvBlock<S>::create(width + low_width, width, 3, 1, 1, rng);
        d.fuse2 = ConvBlock<S>::create(width, width, 3, 1, 1, rng);
        d.classifier = Conv2dLayer<S>::create(width, num_classes, 1, 1, 0, 1, rng);
        return d;
    }

    Tensor<S> operator()(const Tensor<S>& low, const Tensor<S>& deep) const {
        Tensor<S> d = bilinear_resize(aspp(deep), low.shape()[2], low.shape()[3]);
        Tensor<S> f = concat<S>({d, low_proj(low)}, 1);
        return classifier(fuse2(fuse1(f)));
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        aspp.collect(prefix + ".aspp", out);
        low_proj.collect(prefix + ".low", out);
        fuse1.collect(prefix + ".fuse1", out);
        fuse2.collect(prefix + ".fuse2", out);
        classifier.collect(prefix + ".cls", out);
    }
};

// Correlation compression: 1x1 conv N->d, ReLU, 1x1 conv d->1, sigmoid.
// The gate bias starts at +2 so initial gates sit near pass-through.
template <class S>
struct CompressBlock {
    Conv2dLayer<S> reduce;
    Conv2dLayer<S> gate;

    static CompressBlock create(int n, int hidden, Pcg32& rng) {
        CompressBlock c;
        c.reduce = Conv2dLayer<S>::create(n, hidden, 1, 1, 0, 1, rng);
        c.gate = Conv2dLayer<S>::create(hidden, 1, 1, 1, 0, 1, rng);
        c.gate.bias.values()[0] = S(2);
        return c;
    }

    Tensor<S> operator()(const Tensor<S>& corr) const {
        return sigmoid(gate(relu(reduce(corr))));
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        reduce.collect(prefix + ".reduce", out);
        gate.collect(prefix + ".gate", out);
    }
};

}  // namespace duoseg
