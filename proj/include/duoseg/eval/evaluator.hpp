#pragma once

#include "duoseg/data/dataset.hpp"
#include "duoseg/eval/metrics.hpp"
#include "duoseg/model/network.hpp"

namespace duoseg {

// Aggregates one confusion matrix over a split (optionally filtered to one
// regime: subset in {"all", "day", "night"}), no augmentation.
ConfusionMatrix confusion_for_split(const Net<float>& net, const Dataset& data, Split split,
                                    const std::string& subset = "all", int batch_size = 8);

// Report over the aggregated matrix; an empty subset yields a report with
// has_data == false.
MetricsReport evaluate_split(const Net<float>& net, const Dataset& data, Split split,
                             const std::string& subset = "all", int batch_size = 8);

}  // namespace duoseg
