#pragma once

#include <array>

#include "duoseg/data/dataset.hpp"
#include "duoseg/model/network.hpp"

namespace duoseg {

// Fixed overlay palette; class 0 is transparent, classes cycle through four
// saturated colors.
std::array<std::uint8_t, 3> overlay_color(int cls);

// Channel-mean activation of each available encoder tap (1/4 and 1/16
// scale), min-max rescaled to [0,255] and written as P5 graymaps named
// <id>_<modality>_tap{a,b}.pgm. Returns the written paths.
std::vector<std::string> export_mean_feature_maps(const Net<float>& net, const SegSample& sample,
                                                  const std::string& out_dir);

// Argmax prediction rendered as a class-colored overlay at 50% alpha on the
// color image; background predictions leave the image untouched.
void export_overlay(const Net<float>& net, const SegSample& sample, const std::string& out_path);

}  // namespace duoseg
