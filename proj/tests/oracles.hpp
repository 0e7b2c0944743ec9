#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive (nested loops, direct set counting) so they cannot share
// bugs with the library's optimized paths.

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracles {

// Direct nested-loop cross-correlation.
template <class S>
std::vector<S> naive_conv2d(const std::vector<S>& x, int B, int C, int H, int W,
                            const std::vector<S>& w, int Cout, int kh, int kw,
                            const std::vector<S>& bias, int stride, int pad, int dil, int& OH,
                            int& OW) {
    OH = (H + 2 * pad - dil * (kh - 1) - 1) / stride + 1;
    OW = (W + 2 * pad - dil * (kw - 1) - 1) / stride + 1;
    std::vector<S> out(static_cast<size_t>(B) * Cout * OH * OW, S(0));
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Cout; ++co)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    S acc = bias[static_cast<size_t>(co)];
                    for (int c = 0; c < C; ++c)
                        for (int ki = 0; ki < kh; ++ki)
                            for (int kj = 0; kj < kw; ++kj) {
                                const int iy = oy * stride - pad + ki * dil;
                                const int ix = ox * stride - pad + kj * dil;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x[((static_cast<size_t>(b) * C + c) * H + iy) * W + ix] *
                                       w[((static_cast<size_t>(co) * C + c) * kh + ki) * kw + kj];
                            }
                    out[((static_cast<size_t>(b) * Cout + co) * OH + oy) * OW + ox] = acc;
                }
    return out;
}

// Mean of -log p[target] computed per pixel with plain double arithmetic.
template <class S>
double naive_cross_entropy(const std::vector<S>& logits, int B, int K, int H, int W,
                           const std::vector<std::int32_t>& targets) {
    double total = 0.0;
    const size_t hw = static_cast<size_t>(H) * W;
    for (int b = 0; b < B; ++b)
        for (size_t p = 0; p < hw; ++p) {
            double denom = 0.0;
            for (int k = 0; k < K; ++k)
                denom += std::exp(static_cast<double>(logits[(static_cast<size_t>(b) * K + k) * hw + p]));
            const int t = targets[static_cast<size_t>(b) * hw + p];
            const double pt =
                std::exp(static_cast<double>(logits[(static_cast<size_t>(b) * K + t) * hw + p])) / denom;
            total += -std::log(pt);
        }
    return total / (static_cast<double>(B) * static_cast<double>(hw));
}

// Per-class accuracy (recall) and IoU by direct set counting over label maps.
struct ClassSets {
    std::int64_t true_pos = 0, target = 0, predicted = 0;
};

inline std::vector<ClassSets> count_sets(const std::vector<std::int32_t>& pred,
                                         const std::vector<std::int32_t>& truth, int k) {
    std::vector<ClassSets> s(static_cast<size_t>(k));
    for (size_t i = 0; i < pred.size(); ++i) {
        s[static_cast<size_t>(truth[i])].target++;
        s[static_cast<size_t>(pred[i])].predicted++;
        if (pred[i] == truth[i]) s[static_cast<size_t>(pred[i])].true_pos++;
    }
    return s;
}

}  // namespace oracles
