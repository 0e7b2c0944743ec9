#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "duoseg/core/shape.hpp"

namespace duoseg {

// The six model variants exercised by the ablation harness.
enum class Variant { rgb, thermal, stacked, unweighted, conf_only, full };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::rgb: return "rgb";
        case Variant::thermal: return "thermal";
        case Variant::stacked: return "stacked";
        case Variant::unweighted: return "unweighted";
        case Variant::conf_only: return "conf_only";
        case Variant::full: return "full";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    for (Variant v : {Variant::rgb, Variant::thermal, Variant::stacked, Variant::unweighted,
                      Variant::conf_only, Variant::full})
        if (s == variant_name(v)) return v;
    throw std::invalid_argument("unknown variant '" + s + "'");
}

// Variants with two modality paths, weighted fusion and a shared decoder.
inline bool is_fusion_variant(Variant v) {
    return v == Variant::unweighted || v == Variant::conf_only || v == Variant::full;
}

struct ModelConfig {
    Variant variant = Variant::full;
    int num_classes = 5;
    int height = 64;
    int width = 64;
    std::array<int, 4> widths{16, 32, 64, 128};  // encoder stage channels
    std::vector<int> aspp_rates{1, 2, 4};
    int decoder_width = 64;
    int low_proj_width = 16;
    int compress_hidden = 16;  // hidden width of the correlation compression block
    float lambda_aux = 0.5f;   // weight of the per-modality auxiliary losses
    bool softmax_correlation = false;  // correlate softmax outputs instead of raw logits

    // Modality decoders emit logits at 1/4 scale; the correlation map is
    // computed there, so its compression block sees a fixed N = (H/4)*(W/4).
    int corr_h() const { return height / 4; }
    int corr_w() const { return width / 4; }
    int corr_n() const { return corr_h() * corr_w(); }

    void validate() const {
        if (num_classes < 2) throw std::invalid_argument("ModelConfig: num_classes must be >= 2");
        if (height < 16 || width < 16 || height % 16 != 0 || width % 16 != 0)
            throw std::invalid_argument("ModelConfig: height/width must be positive multiples of 16");
        for (int w : widths)
            if (w < 1) throw std::invalid_argument("ModelConfig: encoder widths must be positive");
        if (aspp_rates.empty()) throw std::invalid_argument("ModelConfig: aspp_rates must be non-empty");
        for (int r : aspp_rates)
            if (r < 1) throw std::invalid_argument("ModelConfig: aspp rates must be >= 1");
        if (decoder_width < 1 || low_proj_width < 1 || compress_hidden < 1)
            throw std::invalid_argument("ModelConfig: decoder widths must be positive");
        if (lambda_aux < 0.f) throw std::invalid_argument("ModelConfig: lambda_aux must be >= 0");
    }

    std::string serialize() const {
        std::ostringstream os;
        os << "variant=" << variant_name(variant) << "\n";
        os << "num_classes=" << num_classes << "\n";
        os << "height=" << height << "\n";
        os << "width=" << width << "\n";
        os << "widths=" << widths[0] << "," << widths[1] << "," << widths[2] << "," << widths[3]
           << "\n";
        os << "aspp_rates=";
        for (size_t i = 0; i < aspp_rates.size(); ++i) os << (i ? "," : "") << aspp_rates[i];
        os << "\n";
        os << "decoder_width=" << decoder_width << "\n";
        os << "low_proj_width=" << low_proj_width << "\n";
        os << "compress_hidden=" << compress_hidden << "\n";
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(lambda_aux));
        os << "lambda_aux=" << buf << "\n";
        os << "softmax_correlation=" << (softmax_correlation ? 1 : 0) << "\n";
        return os.str();
    }

    static ModelConfig deserialize(const std::string& text) {
        ModelConfig cfg;
        std::istringstream is(text);
        std::string line;
        auto parse_ints = [](const std::string& s) {
            std::vector<int> out;
            std::istringstream ls(s);
            std::string tok;
            while (std::getline(ls, tok, ',')) out.push_back(std::stoi(tok));
            return out;
        };
        while (std::getline(is, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
            if (key == "variant") cfg.variant = parse_variant(val);
            else if (key == "num_classes") cfg.num_classes = std::stoi(val);
            else if (key == "height") cfg.height = std::stoi(val);
            else if (key == "width") cfg.width = std::stoi(val);
            else if (key == "widths") {
                auto v = parse_ints(val);
                if (v.size() != 4) throw std::invalid_argument("ModelConfig: widths needs 4 entries");
                for (int i = 0; i < 4; ++i) cfg.widths[static_cast<size_t>(i)] = v[static_cast<size_t>(i)];
            } else if (key == "aspp_rates") cfg.aspp_rates = parse_ints(val);
            else if (key == "decoder_width") cfg.decoder_width = std::stoi(val);
            else if (key == "low_proj_width") cfg.low_proj_width = std::stoi(val);
            else if (key == "compress_hidden") cfg.compress_hidden = std::stoi(val);
            else if (key == "lambda_aux") cfg.lambda_aux = std::stof(val);
            else if (key == "softmax_correlation") cfg.softmax_correlation = (val != "0");
            // Unknown keys are provenance metadata; ignore.
        }
        cfg.validate();
        return cfg;
    }

    std::string digest() const {
        const std::string s = serialize();
        std::uint64_t h = 1469598103934665603ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        return std::string(buf);
    }
};

}  // namespace duoseg
