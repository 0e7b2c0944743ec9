#pragma once

#include <optional>
#include <string>
#include <vector>

#include "duoseg/core/ops.hpp"
#include "duoseg/data/netpbm.hpp"

namespace duoseg {

enum class Regime { day, night };
enum class Split { train, val, test };

inline const char* regime_name(Regime r) { return r == Regime::day ? "day" : "night"; }
inline const char* split_name(Split s) {
    return s == Split::train ? "train" : s == Split::val ? "val" : "test";
}
Regime parse_regime(const std::string& s);
Split parse_split(const std::string& s);

// One paired sample. Labels are aligned to the color modality; the thermal
// image carries the misalignment shift.
struct SegSample {
    std::string id;
    int height = 0, width = 0;
    std::vector<float> color;         // 3*H*W in [0,1], channel-major
    std::vector<float> thermal;       // H*W in [0,1]
    std::vector<std::int32_t> labels; // H*W class indices
    Regime regime = Regime::day;
    int dx = 0, dy = 0;               // thermal shift in pixels
};

struct ManifestRecord {
    std::string id;
    Regime regime = Regime::day;
    int dx = 0, dy = 0;
    Split split = Split::train;
};

struct GenConfig {
    int n = 200;
    int size = 64;
    int num_classes = 5;
    int max_shift = 3;
    double day_fraction = 0.52;
    std::uint64_t seed = 0;
    int workers = 1;

    void validate() const;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    GenConfig gen;
};

// Class layout of a scene before appearance rendering: 1-4 objects drawn on
// a background of class 0.
struct Scene {
    int size = 0;
    int num_classes = 0;
    std::vector<std::int32_t> labels;
};

// Lower class indices are the thermally salient ("warm") ones.
inline bool is_warm_class(int cls, int num_classes) { return cls >= 1 && 2 * cls <= num_classes; }

// Exact interleaved regime assignment: ceil counting puts round(n*f) day
// samples in every prefix.
inline Regime regime_at(int index, double day_fraction) {
    const auto steps = [&](int i) { return static_cast<long>(i * day_fraction + 1e-9); };
    return steps(index + 1) - steps(index) == 1 ? Regime::day : Regime::night;
}

Scene sample_scene(int size, int num_classes, Pcg32& rng);
void render_modalities(const Scene& scene, Regime regime, Pcg32& rng, std::vector<float>& color,
                       std::vector<float>& thermal);

// Integer translation with edge replication; labels stay untouched.
std::vector<float> apply_misalignment(const std::vector<float>& thermal, int height, int width,
                                      int dx, int dy, int max_shift);

// Builds sample `index` of the dataset (files not touched); depends only on
// (gen.seed, index).
SegSample synthesize_sample(const GenConfig& gen, int index);
ManifestRecord record_at(const GenConfig& gen, int index);

// Random crop + horizontal flip, identical across color/thermal/labels.
SegSample augment(const SegSample& sample, Pcg32& rng, int crop);

DatasetManifest generate_dataset(const GenConfig& gen, const std::string& out_dir);
void save_sample(const std::string& dir, const SegSample& sample);
SegSample load_sample(const std::string& dir, const ManifestRecord& rec, int size, int num_classes);
DatasetManifest load_manifest(const std::string& dir);

// Manifest plus all samples preloaded (desk-scale datasets fit in memory).
struct Dataset {
    std::string dir;
    DatasetManifest manifest;
    std::vector<SegSample> samples;  // aligned with manifest.records

    std::vector<int> indices_of(Split split, std::optional<Regime> regime = std::nullopt) const;
};

Dataset load_dataset(const std::string& dir);

// Stacks samples (all the same size) into model inputs.
struct Batch {
    Tensor<float> color;    // Bx3xHxW
    Tensor<float> thermal;  // Bx1xHxW
    LabelMap labels;        // BxHxW
};

Batch make_batch(const std::vector<const SegSample*>& samples);

// key=value provenance sidecar written next to every produced artifact.
void write_run_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& kv);
std::vector<std::pair<std::string, std::string>> read_run_config(const std::string& path);

}  // namespace duoseg
