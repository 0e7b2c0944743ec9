#include "duoseg/eval/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace duoseg {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
    if (num_classes < 1) throw std::invalid_argument("ConfusionMatrix: need at least one class");
    counts_.assign(static_cast<size_t>(k_) * k_, 0);
}

std::int64_t ConfusionMatrix::at(int truth, int pred) const {
    if (truth < 0 || truth >= k_ || pred < 0 || pred >= k_)
        throw std::out_of_range("ConfusionMatrix::at: class out of range");
    return counts_[static_cast<size_t>(truth) * k_ + pred];
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

void ConfusionMatrix::update(const std::vector<std::int32_t>& pred,
                             const std::vector<std::int32_t>& truth) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("ConfusionMatrix::update: size mismatch");
    for (size_t i = 0; i < pred.size(); ++i) {
        const std::int32_t t = truth[i], p = pred[i];
        if (t < 0 || t >= k_ || p < 0 || p >= k_)
            throw std::out_of_range("ConfusionMatrix::update: label out of range");
        counts_[static_cast<size_t>(t) * k_ + p]++;
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw std::invalid_argument("ConfusionMatrix::merge: class count mismatch");
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm, const std::string& subset,
                                     std::int64_t sample_count, const std::string& config_digest) {
    MetricsReport r;
    r.num_classes = cm.num_classes();
    r.subset = subset;
    r.sample_count = sample_count;
    r.config_digest = config_digest;
    r.per_class.resize(static_cast<size_t>(r.num_classes));
    r.has_data = cm.total() > 0;
    if (!r.has_data) return r;  // explicit "no data" report

    double acc_sum = 0, iou_sum = 0;
    int acc_n = 0, iou_n = 0;
    for (int c = 0; c < r.num_classes; ++c) {
        std::int64_t row = 0, col = 0;
        for (int j = 0; j < r.num_classes; ++j) {
            row += cm.at(c, j);
            col += cm.at(j, c);
        }
        const std::int64_t diag = cm.at(c, c);
        ClassMetrics& m = r.per_class[static_cast<size_t>(c)];
        if (row > 0) {
            m.acc = static_cast<double>(diag) / static_cast<double>(row);
            m.acc_defined = true;
            acc_sum += m.acc;
            ++acc_n;
        }
        const std::int64_t uni = row + col - diag;
        if (uni > 0) {
            m.iou = static_cast<double>(diag) / static_cast<double>(uni);
            m.iou_defined = true;
            iou_sum += m.iou;
            ++iou_n;
        }
    }
    r.macc = acc_n > 0 ? acc_sum / acc_n : 0.0;
    r.miou = iou_n > 0 ? iou_sum / iou_n : 0.0;
    return r;
}

namespace {

std::string fmt(double v, bool defined) {
    if (!defined) return "nan";
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

void write_metrics_csv_header(std::ostream& os) {
    os << "variant,seed,subset,class,acc,iou,macc,miou\n";
}

void append_metrics_rows(std::ostream& os, const std::string& variant, const std::string& seed,
                         const MetricsReport& r) {
    for (int c = 0; c < r.num_classes; ++c) {
        const auto& m = r.per_class[static_cast<size_t>(c)];
        os << variant << "," << seed << "," << r.subset << "," << c << ","
           << fmt(m.acc, r.has_data && m.acc_defined) << ","
           << fmt(m.iou, r.has_data && m.iou_defined) << "," << fmt(r.macc, r.has_data) << ","
           << fmt(r.miou, r.has_data) << "\n";
    }
    os << variant << "," << seed << "," << r.subset << ",__mean__," << fmt(r.macc, r.has_data)
       << "," << fmt(r.miou, r.has_data) << "," << fmt(r.macc, r.has_data) << ","
       << fmt(r.miou, r.has_data) << "\n";
}

}  // namespace duoseg
