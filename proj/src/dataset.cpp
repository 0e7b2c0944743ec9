#include "duoseg/data/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace duoseg {

Regime parse_regime(const std::string& s) {
    if (s == "day") return Regime::day;
    if (s == "night") return Regime::night;
    throw std::invalid_argument("unknown regime '" + s + "'");
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split '" + s + "'");
}

void GenConfig::validate() const {
    if (n < 1) throw std::invalid_argument("GenConfig: n must be >= 1");
    if (size < 16 || size % 16 != 0)
        throw std::invalid_argument("GenConfig: size must be a positive multiple of 16");
    if (num_classes < 2 || num_classes > 256)
        throw std::invalid_argument("GenConfig: num_classes must be in [2, 256]");
    if (max_shift < 0 || max_shift >= size / 4)
        throw std::invalid_argument("GenConfig: max_shift must be in [0, size/4)");
    if (day_fraction < 0.0 || day_fraction > 1.0)
        throw std::invalid_argument("GenConfig: day_fraction must be in [0, 1]");
    if (workers < 1) throw std::invalid_argument("GenConfig: workers must be >= 1");
}

namespace {

struct Rgb {
    float r, g, b;
};

// Background and per-shape colors chosen so every class clears a 0.4 mean
// channel contrast against the background in daylight without any single
// channel dominating (a lone saturated channel would survive the night
// attenuation too well).
constexpr Rgb kBackground{0.15f, 0.16f, 0.18f};
constexpr Rgb kPalette[4] = {
    {0.78f, 0.48f, 0.52f},  // disc
    {0.50f, 0.62f, 0.82f},  // rectangle
    {0.72f, 0.66f, 0.38f},  // triangle
    {0.38f, 0.72f, 0.62f},  // bar
};
constexpr float kThermalBackground = 0.15f;
constexpr float kNightAttenuation = 0.15f;
constexpr float kDayColorNoise = 0.05f;
constexpr float kNightColorNoise = 0.10f;
constexpr float kThermalNoise = 0.05f;

int shape_kind(int cls) { return (cls - 1) % 4; }

float thermal_intensity(int cls) { return shape_kind(cls) % 2 == 0 ? 0.95f : 0.68f; }

// Smooth zero-mean random field (coarse grid, bilinear interpolation); night
// scenes use it for uneven visibility and stray illumination.
std::vector<float> smooth_field(Pcg32& rng, int size, int cells, float amplitude) {
    const int g = cells + 1;
    std::vector<float> grid(static_cast<size_t>(g) * g);
    for (auto& v : grid) v = amplitude * rng.normal();
    std::vector<float> field(static_cast<size_t>(size) * size);
    const float step = static_cast<float>(cells) / size;
    for (int y = 0; y < size; ++y) {
        const float fy = y * step;
        const int y0 = std::min(static_cast<int>(fy), cells - 1);
        const float wy = fy - y0;
        for (int x = 0; x < size; ++x) {
            const float fx = x * step;
            const int x0 = std::min(static_cast<int>(fx), cells - 1);
            const float wx = fx - x0;
            const float top = grid[static_cast<size_t>(y0) * g + x0] * (1 - wx) +
                              grid[static_cast<size_t>(y0) * g + x0 + 1] * wx;
            const float bot = grid[static_cast<size_t>(y0 + 1) * g + x0] * (1 - wx) +
                              grid[static_cast<size_t>(y0 + 1) * g + x0 + 1] * wx;
            field[static_cast<size_t>(y) * size + x] = top * (1 - wy) + bot * wy;
        }
    }
    return field;
}

void paint_disc(std::vector<std::int32_t>& labels, int size, int cls, int cx, int cy, int r) {
    for (int y = std::max(0, cy - r); y <= std::min(size - 1, cy + r); ++y)
        for (int x = std::max(0, cx - r); x <= std::min(size - 1, cx + r); ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
                labels[static_cast<size_t>(y) * size + x] = cls;
}

void paint_rect(std::vector<std::int32_t>& labels, int size, int cls, int x0, int y0, int w, int h) {
    for (int y = std::max(0, y0); y < std::min(size, y0 + h); ++y)
        for (int x = std::max(0, x0); x < std::min(size, x0 + w); ++x)
            labels[static_cast<size_t>(y) * size + x] = cls;
}

void paint_triangle(std::vector<std::int32_t>& labels, int size, int cls, int cx, int top, int h,
                    int half_base) {
    for (int y = std::max(0, top); y <= std::min(size - 1, top + h); ++y) {
        const int half = static_cast<int>(static_cast<float>(half_base) * (y - top) / h);
        for (int x = std::max(0, cx - half); x <= std::min(size - 1, cx + half); ++x)
            labels[static_cast<size_t>(y) * size + x] = cls;
    }
}

// Thick segment between two points; covers horizontal, vertical and diagonal
// bars.
void paint_bar(std::vector<std::int32_t>& labels, int size, int cls, float x0, float y0, float x1,
               float y1, float thickness) {
    const float dx = x1 - x0, dy = y1 - y0;
    const float len2 = dx * dx + dy * dy;
    const int minx = std::max(0, static_cast<int>(std::min(x0, x1) - thickness - 1));
    const int maxx = std::min(size - 1, static_cast<int>(std::max(x0, x1) + thickness + 1));
    const int miny = std::max(0, static_cast<int>(std::min(y0, y1) - thickness - 1));
    const int maxy = std::min(size - 1, static_cast<int>(std::max(y0, y1) + thickness + 1));
    for (int y = miny; y <= maxy; ++y)
        for (int x = minx; x <= maxx; ++x) {
            const float t = len2 > 0 ? std::clamp(((x - x0) * dx + (y - y0) * dy) / len2, 0.f, 1.f) : 0.f;
            const float px = x0 + t * dx, py = y0 + t * dy;
            const float d2 = (x - px) * (x - px) + (y - py) * (y - py);
            if (d2 <= thickness * thickness) labels[static_cast<size_t>(y) * size + x] = cls;
        }
}

float clamp01(float v) { return std::clamp(v, 0.f, 1.f); }

}  // namespace

Scene sample_scene(int size, int num_classes, Pcg32& rng) {
    Scene scene;
    scene.size = size;
    scene.num_classes = num_classes;
    scene.labels.assign(static_cast<size_t>(size) * size, 0);
    const int objects = 1 + static_cast<int>(rng.uniform_int(4));
    const float s = static_cast<float>(size);
    for (int o = 0; o < objects; ++o) {
        const int cls = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(num_classes - 1)));
        switch (shape_kind(cls)) {
            case 0: {
                const int r = static_cast<int>(s * rng.uniform(0.12f, 0.20f));
                const int cx = rng.uniform_range(r, size - 1 - r);
                const int cy = rng.uniform_range(r, size - 1 - r);
                paint_disc(scene.labels, size, cls, cx, cy, r);
                break;
            }
            case 1: {
                const int w = static_cast<int>(s * rng.uniform(0.17f, 0.33f));
                const int h = static_cast<int>(s * rng.uniform(0.17f, 0.33f));
                const int x0 = rng.uniform_range(0, size - w - 1);
                const int y0 = rng.uniform_range(0, size - h - 1);
                paint_rect(scene.labels, size, cls, x0, y0, w, h);
                break;
            }
            case 2: {
                const int h = static_cast<int>(s * rng.uniform(0.20f, 0.34f));
                const int half = static_cast<int>(s * rng.uniform(0.12f, 0.20f));
                const int cx = rng.uniform_range(half, size - 1 - half);
                const int top = rng.uniform_range(0, size - h - 1);
                paint_triangle(scene.labels, size, cls, cx, top, h, half);
                break;
            }
            default: {
                const float len = s * rng.uniform(0.35f, 0.65f);
                const float thick = std::max(2.5f, s * rng.uniform(0.055f, 0.085f));
                const int orient = static_cast<int>(rng.uniform_int(4));
                const float margin = thick + 2.f;
                const float cx = rng.uniform(margin + len * 0.5f, s - 1 - margin - len * 0.5f);
                const float cy = rng.uniform(margin + len * 0.5f, s - 1 - margin - len * 0.5f);
                const float half = len * 0.5f;
                float x0 = cx - half, x1 = cx + half, y0 = cy, y1 = cy;
                if (orient == 1) {
                    x0 = x1 = cx;
                    y0 = cy - half;
                    y1 = cy + half;
                } else if (orient == 2) {
                    x0 = cx - half * 0.7071f; x1 = cx + half * 0.7071f;
                    y0 = cy - half * 0.7071f; y1 = cy + half * 0.7071f;
                } else if (orient == 3) {
                    x0 = cx - half * 0.7071f; x1 = cx + half * 0.7071f;
                    y0 = cy + half * 0.7071f; y1 = cy - half * 0.7071f;
                }
                paint_bar(scene.labels, size, cls, x0, y0, x1, y1, thick);
                break;
            }
        }
    }
    return scene;
}

void render_modalities(const Scene& scene, Regime regime, Pcg32& rng, std::vector<float>& color,
                       std::vector<float>& thermal) {
    const int size = scene.size;
    const size_t hw = static_cast<size_t>(size) * size;
    color.assign(3 * hw, 0.f);
    thermal.assign(hw, 0.f);
    const float color_noise = regime == Regime::day ? kDayColorNoise : kNightColorNoise;

    // Night visibility varies smoothly across the frame (mean 1, so contrast
    // stays attenuated by 0.15 on average) and stray light shifts the
    // luminance; both make low-light color unreliable where it is dark.
    std::vector<float> visibility, stray;
    if (regime == Regime::night) {
        visibility = smooth_field(rng, size, 4, 0.75f);
        stray = smooth_field(rng, size, 4, 0.12f);
    }

    // Night scenes also carry a few saturated glare blobs (headlights,
    // street lamps): they wash out whatever sits beneath them in color while
    // the thermal channel is unaffected.
    std::vector<float> glare;
    if (regime == Regime::night) {
        glare.assign(hw, 0.f);
        const int blobs = 1 + static_cast<int>(rng.uniform_int(3));
        for (int i = 0; i < blobs; ++i) {
            const float r = rng.uniform(0.08f, 0.20f) * static_cast<float>(size);
            const float cx = rng.uniform(0.f, static_cast<float>(size - 1));
            const float cy = rng.uniform(0.f, static_cast<float>(size - 1));
            const float strength = rng.uniform(0.5f, 0.9f);
            const int x0 = std::max(0, static_cast<int>(cx - r)), x1 = std::min(size - 1, static_cast<int>(cx + r));
            const int y0 = std::max(0, static_cast<int>(cy - r)), y1 = std::min(size - 1, static_cast<int>(cy + r));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const float d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (r * r);
                    if (d2 < 1.f) {
                        float& g = glare[static_cast<size_t>(y) * size + x];
                        g = std::max(g, strength * (1.f - d2));
                    }
                }
        }
    }

    for (size_t p = 0; p < hw; ++p) {
        const int cls = scene.labels[p];
        Rgb c = kBackground;
        float t = kThermalBackground;
        if (cls > 0) {
            const Rgb obj = kPalette[shape_kind(cls)];
            if (regime == Regime::day) {
                c = obj;
            } else {
                const float att =
                    kNightAttenuation * std::clamp(1.f + visibility[p], 0.15f, 1.85f);
                c = {kBackground.r + att * (obj.r - kBackground.r),
                     kBackground.g + att * (obj.g - kBackground.g),
                     kBackground.b + att * (obj.b - kBackground.b)};
            }
            if (is_warm_class(cls, scene.num_classes)) t = thermal_intensity(cls);
        }
        float lum = 0.f;
        float glare_mix = 0.f;
        if (regime == Regime::night) {
            lum = stray[p];
            glare_mix = glare[p];
        }
        auto shade = [&](float v) {
            const float lit = v + glare_mix * (1.f - v);  // screen blend toward white
            return clamp01(lit + lum + color_noise * rng.normal());
        };
        color[p] = shade(c.r);
        color[hw + p] = shade(c.g);
        color[2 * hw + p] = shade(c.b);
        thermal[p] = clamp01(t + kThermalNoise * rng.normal());
    }
}

std::vector<float> apply_misalignment(const std::vector<float>& thermal, int height, int width,
                                      int dx, int dy, int max_shift) {
    if (std::abs(dx) > max_shift || std::abs(dy) > max_shift)
        throw std::invalid_argument("apply_misalignment: shift beyond bound");
    std::vector<float> out(thermal.size());
    for (int y = 0; y < height; ++y) {
        const int sy = std::clamp(y - dy, 0, height - 1);
        for (int x = 0; x < width; ++x) {
            const int sx = std::clamp(x - dx, 0, width - 1);
            out[static_cast<size_t>(y) * width + x] = thermal[static_cast<size_t>(sy) * width + sx];
        }
    }
    return out;
}

ManifestRecord record_at(const GenConfig& gen, int index) {
    ManifestRecord rec;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%05d", index);
    rec.id = buf;
    rec.regime = regime_at(index, gen.day_fraction);
    Pcg32 rng = derive_rng(gen.seed, static_cast<std::uint64_t>(index), 1);
    rec.dx = rng.uniform_range(-gen.max_shift, gen.max_shift);
    rec.dy = rng.uniform_range(-gen.max_shift, gen.max_shift);
    const int n_train = gen.n / 2, n_val = gen.n / 4;
    rec.split = index < n_train ? Split::train : index < n_train + n_val ? Split::val : Split::test;
    return rec;
}

SegSample synthesize_sample(const GenConfig& gen, int index) {
    const ManifestRecord rec = record_at(gen, index);
    Pcg32 rng = derive_rng(gen.seed, static_cast<std::uint64_t>(index), 2);
    const Scene scene = sample_scene(gen.size, gen.num_classes, rng);
    SegSample s;
    s.id = rec.id;
    s.height = s.width = gen.size;
    s.regime = rec.regime;
    s.dx = rec.dx;
    s.dy = rec.dy;
    s.labels = scene.labels;
    render_modalities(scene, rec.regime, rng, s.color, s.thermal);
    s.thermal = apply_misalignment(s.thermal, gen.size, gen.size, rec.dx, rec.dy, gen.max_shift);
    return s;
}

SegSample augment(const SegSample& sample, Pcg32& rng, int crop) {
    if (crop > sample.width || crop > sample.height)
        throw std::invalid_argument("augment: crop larger than sample");
    if (crop < 16 || crop % 16 != 0)
        throw std::invalid_argument("augment: crop must be a positive multiple of 16");
    SegSample out;
    out.id = sample.id;
    out.regime = sample.regime;
    out.dx = sample.dx;
    out.dy = sample.dy;
    out.height = out.width = crop;
    const int ox = sample.width == crop ? 0 : rng.uniform_range(0, sample.width - crop);
    const int oy = sample.height == crop ? 0 : rng.uniform_range(0, sample.height - crop);
    const bool flip = rng.bernoulli(0.5f);

    const size_t shw = static_cast<size_t>(sample.height) * sample.width;
    const size_t chw = static_cast<size_t>(crop) * crop;
    out.color.resize(3 * chw);
    out.thermal.resize(chw);
    out.labels.resize(chw);
    for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x) {
            const int sx = ox + (flip ? crop - 1 - x : x);
            const size_t src = static_cast<size_t>(oy + y) * sample.width + sx;
            const size_t dst = static_cast<size_t>(y) * crop + x;
            for (int ch = 0; ch < 3; ++ch) out.color[ch * chw + dst] = sample.color[ch * shw + src];
            out.thermal[dst] = sample.thermal[src];
            out.labels[dst] = sample.labels[src];
        }
    return out;
}

namespace {

std::uint8_t to_u8(float v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.f), 0L, 255L));
}

std::string fmt_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

void save_sample(const std::string& dir, const SegSample& s) {
    const size_t hw = static_cast<size_t>(s.height) * s.width;
    PnmImage color;
    color.width = s.width;
    color.height = s.height;
    color.channels = 3;
    color.pixels.resize(3 * hw);
    for (size_t p = 0; p < hw; ++p)
        for (int ch = 0; ch < 3; ++ch) color.pixels[3 * p + ch] = to_u8(s.color[ch * hw + p]);
    write_pnm(dir + "/color/" + s.id + ".ppm", color);

    PnmImage thermal;
    thermal.width = s.width;
    thermal.height = s.height;
    thermal.channels = 1;
    thermal.pixels.resize(hw);
    for (size_t p = 0; p < hw; ++p) thermal.pixels[p] = to_u8(s.thermal[p]);
    write_pnm(dir + "/thermal/" + s.id + ".pgm", thermal);

    PnmImage labels;
    labels.width = s.width;
    labels.height = s.height;
    labels.channels = 1;
    labels.pixels.resize(hw);
    for (size_t p = 0; p < hw; ++p) labels.pixels[p] = static_cast<std::uint8_t>(s.labels[p]);
    write_pnm(dir + "/labels/" + s.id + ".pgm", labels);
}

SegSample load_sample(const std::string& dir, const ManifestRecord& rec, int size, int num_classes) {
    SegSample s;
    s.id = rec.id;
    s.regime = rec.regime;
    s.dx = rec.dx;
    s.dy = rec.dy;

    const PnmImage color = read_pnm(dir + "/color/" + rec.id + ".ppm");
    const PnmImage thermal = read_pnm(dir + "/thermal/" + rec.id + ".pgm");
    const PnmImage labels = read_pnm(dir + "/labels/" + rec.id + ".pgm");
    if (color.channels != 3 || thermal.channels != 1 || labels.channels != 1)
        throw PnmError("load_sample: unexpected channel layout for " + rec.id);
    if (color.width != size || color.height != size || thermal.width != size ||
        thermal.height != size || labels.width != size || labels.height != size)
        throw PnmError("load_sample: size mismatch vs manifest for " + rec.id);

    s.height = s.width = size;
    const size_t hw = static_cast<size_t>(size) * size;
    s.color.resize(3 * hw);
    s.thermal.resize(hw);
    s.labels.resize(hw);
    for (size_t p = 0; p < hw; ++p) {
        for (int ch = 0; ch < 3; ++ch)
            s.color[ch * hw + p] = static_cast<float>(color.pixels[3 * p + ch]) / 255.f;
        s.thermal[p] = static_cast<float>(thermal.pixels[p]) / 255.f;
        const std::int32_t cls = labels.pixels[p];
        if (cls >= num_classes)
            throw PnmError("load_sample: label out of range in " + rec.id);
        s.labels[p] = cls;
    }
    return s;
}

void write_run_config(const std::string& path,
                      const std::vector<std::pair<std::string, std::string>>& kv) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_run_config: cannot open " + path);
    for (const auto& [k, v] : kv) f << k << "=" << v << "\n";
}

std::vector<std::pair<std::string, std::string>> read_run_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_run_config: cannot open " + path);
    std::vector<std::pair<std::string, std::string>> kv;
    std::string line;
    while (std::getline(f, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return kv;
}

DatasetManifest generate_dataset(const GenConfig& gen, const std::string& out_dir) {
    gen.validate();
    fs::create_directories(fs::path(out_dir) / "color");
    fs::create_directories(fs::path(out_dir) / "thermal");
    fs::create_directories(fs::path(out_dir) / "labels");

    DatasetManifest manifest;
    manifest.gen = gen;
    manifest.records.reserve(static_cast<size_t>(gen.n));
    for (int i = 0; i < gen.n; ++i) manifest.records.push_back(record_at(gen, i));

    const int workers = std::min(gen.workers, gen.n);
    auto worker = [&](int w) {
        for (int i = w; i < gen.n; i += workers) save_sample(out_dir, synthesize_sample(gen, i));
    };
    if (workers == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker, w);
        for (auto& t : pool) t.join();
    }

    std::ofstream mf(out_dir + "/manifest.tsv", std::ios::binary);
    if (!mf) throw std::runtime_error("generate_dataset: cannot write manifest");
    mf << "id\tregime\tdx\tdy\tsplit\n";
    for (const auto& r : manifest.records)
        mf << r.id << "\t" << regime_name(r.regime) << "\t" << r.dx << "\t" << r.dy << "\t"
           << split_name(r.split) << "\n";
    mf.close();

    write_run_config(out_dir + "/run_config.txt",
                     {{"command", "gen-data"},
                      {"n", std::to_string(gen.n)},
                      {"size", std::to_string(gen.size)},
                      {"classes", std::to_string(gen.num_classes)},
                      {"max_shift", std::to_string(gen.max_shift)},
                      {"day_fraction", fmt_double(gen.day_fraction)},
                      {"seed", std::to_string(gen.seed)},
                      {"workers", std::to_string(gen.workers)}});
    return manifest;
}

DatasetManifest load_manifest(const std::string& dir) {
    DatasetManifest manifest;
    for (const auto& [k, v] : read_run_config(dir + "/run_config.txt")) {
        if (k == "n") manifest.gen.n = std::stoi(v);
        else if (k == "size") manifest.gen.size = std::stoi(v);
        else if (k == "classes") manifest.gen.num_classes = std::stoi(v);
        else if (k == "max_shift") manifest.gen.max_shift = std::stoi(v);
        else if (k == "day_fraction") manifest.gen.day_fraction = std::stod(v);
        else if (k == "seed") manifest.gen.seed = std::stoull(v);
    }

    std::ifstream mf(dir + "/manifest.tsv", std::ios::binary);
    if (!mf) throw std::runtime_error("load_manifest: cannot open " + dir + "/manifest.tsv");
    std::string line;
    if (!std::getline(mf, line) || line != "id\tregime\tdx\tdy\tsplit")
        throw std::runtime_error("load_manifest: unexpected header");
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, regime, dx, dy, split;
        if (!std::getline(ls, id, '\t') || !std::getline(ls, regime, '\t') ||
            !std::getline(ls, dx, '\t') || !std::getline(ls, dy, '\t') || !std::getline(ls, split))
            throw std::runtime_error("load_manifest: malformed record '" + line + "'");
        ManifestRecord rec;
        rec.id = id;
        rec.regime = parse_regime(regime);
        rec.dx = std::stoi(dx);
        rec.dy = std::stoi(dy);
        rec.split = parse_split(split);
        manifest.records.push_back(rec);
    }
    return manifest;
}

std::vector<int> Dataset::indices_of(Split split, std::optional<Regime> regime) const {
    std::vector<int> out;
    for (size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& r = manifest.records[i];
        if (r.split != split) continue;
        if (regime && r.regime != *regime) continue;
        out.push_back(static_cast<int>(i));
    }
    return out;
}

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    ds.dir = dir;
    ds.manifest = load_manifest(dir);
    ds.samples.reserve(ds.manifest.records.size());
    for (const auto& rec : ds.manifest.records)
        ds.samples.push_back(load_sample(dir, rec, ds.manifest.gen.size, ds.manifest.gen.num_classes));
    return ds;
}

Batch make_batch(const std::vector<const SegSample*>& samples) {
    if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
    const int b = static_cast<int>(samples.size());
    const int h = samples[0]->height, w = samples[0]->width;
    Batch batch;
    batch.color = Tensor<float>::uninit(Shape{b, 3, h, w});
    batch.thermal = Tensor<float>::uninit(Shape{b, 1, h, w});
    batch.labels = LabelMap::zeros(Shape{b, h, w});
    const size_t hw = static_cast<size_t>(h) * w;
    for (int i = 0; i < b; ++i) {
        const SegSample& s = *samples[static_cast<size_t>(i)];
        if (s.height != h || s.width != w)
            throw std::invalid_argument("make_batch: mixed sample sizes");
        std::copy(s.color.begin(), s.color.end(), batch.color.data() + static_cast<size_t>(i) * 3 * hw);
        std::copy(s.thermal.begin(), s.thermal.end(), batch.thermal.data() + static_cast<size_t>(i) * hw);
        std::copy(s.labels.begin(), s.labels.end(), batch.labels.v.begin() + static_cast<Index>(i) * static_cast<Index>(hw));
    }
    return batch;
}

}  // namespace duoseg
