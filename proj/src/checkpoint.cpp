#include "duoseg/train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace duoseg {

namespace {

constexpr char kMagic[4] = {'D', 'D', 'L', 'F'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_le(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_le(std::ifstream& f, const std::string& what) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw CheckpointError("checkpoint: truncated while reading " + what);
    return v;
}

}  // namespace

std::string Checkpoint::value(const std::string& key) const {
    size_t pos = 0;
    while (pos < metadata.size()) {
        size_t end = metadata.find('\n', pos);
        if (end == std::string::npos) end = metadata.size();
        const std::string line = metadata.substr(pos, end - pos);
        const auto eq = line.find('=');
        if (eq != std::string::npos && line.substr(0, eq) == key) return line.substr(eq + 1);
        pos = end + 1;
    }
    return "";
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
    f.write(kMagic, 4);
    write_le(f, kVersion);
    write_le(f, static_cast<std::uint32_t>(ckpt.metadata.size()));
    f.write(ckpt.metadata.data(), static_cast<std::streamsize>(ckpt.metadata.size()));
    write_le(f, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.size() > 0xFFFF) throw CheckpointError("checkpoint: tensor name too long");
        write_le(f, static_cast<std::uint16_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_le(f, static_cast<std::uint8_t>(0));  // dtype f32
        write_le(f, static_cast<std::uint8_t>(t.rank()));
        for (int d = 0; d < t.rank(); ++d) write_le(f, static_cast<std::uint32_t>(t.shape()[d]));
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * static_cast<Index>(sizeof(float))));
    }
    if (!f) throw CheckpointError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("checkpoint: cannot open " + path);
    char magic[4] = {};
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("checkpoint: bad magic in " + path);
    const auto version = read_le<std::uint32_t>(f, "version");
    if (version != kVersion)
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    const auto meta_len = read_le<std::uint32_t>(f, "metadata length");
    Checkpoint ckpt;
    ckpt.metadata.resize(meta_len);
    f.read(ckpt.metadata.data(), meta_len);
    if (!f) throw CheckpointError("checkpoint: truncated metadata in " + path);
    const auto count = read_le<std::uint32_t>(f, "tensor count");
    ckpt.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_le<std::uint16_t>(f, "tensor name length");
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        if (!f) throw CheckpointError("checkpoint: truncated tensor name in " + path);
        const auto dtype = read_le<std::uint8_t>(f, "dtype");
        if (dtype != 0) throw CheckpointError("checkpoint: unsupported dtype for " + name);
        const auto rank = read_le<std::uint8_t>(f, "rank");
        if (rank > Shape::kMaxRank) throw CheckpointError("checkpoint: rank too large for " + name);
        std::vector<int> dims;
        for (int d = 0; d < rank; ++d) {
            const auto e = read_le<std::uint32_t>(f, "extent");
            if (e == 0 || e > (1u << 30)) throw CheckpointError("checkpoint: bad extent for " + name);
            dims.push_back(static_cast<int>(e));
        }
        Tensor<float> t = Tensor<float>::uninit(Shape(dims));
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * static_cast<Index>(sizeof(float))));
        if (!f) throw CheckpointError("checkpoint: truncated payload for " + name);
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

}  // namespace duoseg
