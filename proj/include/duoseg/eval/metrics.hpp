#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace duoseg {

// KxK pixel counts; entry (t, p) counts pixels of true class t predicted as
// p. Merging is elementwise addition, so evaluation order never matters.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);

    int num_classes() const { return k_; }
    std::int64_t at(int truth, int pred) const;
    std::int64_t total() const;

    void update(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& truth);
    void merge(const ConfusionMatrix& other);

private:
    int k_;
    std::vector<std::int64_t> counts_;
};

struct ClassMetrics {
    double acc = 0.0;  // recall: diagonal over row sum
    double iou = 0.0;
    bool acc_defined = false;
    bool iou_defined = false;
};

struct MetricsReport {
    int num_classes = 0;
    std::vector<ClassMetrics> per_class;
    double macc = 0.0;  // means over defined classes, class 0 included
    double miou = 0.0;
    bool has_data = false;
    std::string subset = "all";
    std::int64_t sample_count = 0;
    std::string config_digest;
};

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm, const std::string& subset = "all",
                                     std::int64_t sample_count = 0,
                                     const std::string& config_digest = "");

// CSV layout: header `variant,seed,subset,class,acc,iou,macc,miou`, one row
// per class plus a `__mean__` summary row per (variant, seed, subset).
// Undefined values render as "nan".
void write_metrics_csv_header(std::ostream& os);
void append_metrics_rows(std::ostream& os, const std::string& variant, const std::string& seed,
                         const MetricsReport& report);

}  // namespace duoseg
