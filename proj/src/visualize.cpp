#include "duoseg/eval/visualize.hpp"

namespace duoseg {

std::array<std::uint8_t, 3> overlay_color(int cls) {
    static constexpr std::array<std::array<std::uint8_t, 3>, 4> palette{{
        {230, 64, 64},
        {64, 96, 235},
        {235, 220, 64},
        {64, 220, 96},
    }};
    if (cls <= 0) return {0, 0, 0};
    return palette[static_cast<size_t>((cls - 1) % 4)];
}

namespace {

Batch single_batch(const SegSample& sample) {
    std::vector<const SegSample*> one{&sample};
    return make_batch(one);
}

void write_mean_map(const Tensor<float>& tap, const std::string& path) {
    const int c = tap.shape()[1], h = tap.shape()[2], w = tap.shape()[3];
    const size_t hw = static_cast<size_t>(h) * w;
    std::vector<float> mean(hw, 0.f);
    for (int ch = 0; ch < c; ++ch)
        for (size_t p = 0; p < hw; ++p) mean[p] += tap.data()[static_cast<size_t>(ch) * hw + p];
    float lo = mean[0], hi = mean[0];
    for (float v : mean) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    PnmImage img;
    img.width = w;
    img.height = h;
    img.channels = 1;
    img.pixels.resize(hw);
    const float span = hi - lo;
    for (size_t p = 0; p < hw; ++p)
        img.pixels[p] = span > 0.f
                            ? static_cast<std::uint8_t>(std::lround((mean[p] - lo) / span * 255.f))
                            : 0;
    write_pnm(path, img);
}

}  // namespace

std::vector<std::string> export_mean_feature_maps(const Net<float>& net, const SegSample& sample,
                                                  const std::string& out_dir) {
    Batch batch = single_batch(sample);
    NoGradGuard ng;
    ForwardOptions opt;
    opt.retain_taps = true;
    auto out = net.forward(batch.color, batch.thermal, opt);

    std::vector<std::string> written;
    const std::pair<const Tensor<float>*, std::string> taps[] = {
        {&out.tap_color_a, "color_tapa"},
        {&out.tap_color_b, "color_tapb"},
        {&out.tap_thermal_a, "thermal_tapa"},
        {&out.tap_thermal_b, "thermal_tapb"},
    };
    for (const auto& [tap, tag] : taps) {
        if (!tap->defined()) continue;
        const std::string path = out_dir + "/" + sample.id + "_" + tag + ".pgm";
        write_mean_map(*tap, path);
        written.push_back(path);
    }
    return written;
}

void export_overlay(const Net<float>& net, const SegSample& sample, const std::string& out_path) {
    Batch batch = single_batch(sample);
    NoGradGuard ng;
    const LabelMap pred = argmax_channels(net.forward(batch.color, batch.thermal).y_final);

    const int h = sample.height, w = sample.width;
    const size_t hw = static_cast<size_t>(h) * w;
    PnmImage img;
    img.width = w;
    img.height = h;
    img.channels = 3;
    img.pixels.resize(3 * hw);
    for (size_t p = 0; p < hw; ++p) {
        const int cls = pred.v[p];
        const auto color = overlay_color(cls);
        for (int ch = 0; ch < 3; ++ch) {
            const float base = sample.color[static_cast<size_t>(ch) * hw + p] * 255.f;
            const float value = cls == 0 ? base : 0.5f * base + 0.5f * static_cast<float>(color[static_cast<size_t>(ch)]);
            img.pixels[3 * p + static_cast<size_t>(ch)] =
                static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
        }
    }
    write_pnm(out_path, img);
}

}  // namespace duoseg
