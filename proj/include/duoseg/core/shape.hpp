#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace duoseg {

using Index = std::int64_t;

// Extent list for tensors of rank 0..4. Rank-0 is the scalar shape.
class Shape {
public:
    static constexpr int kMaxRank = 4;

    Shape() = default;
    Shape(std::initializer_list<int> dims) { assign(dims.begin(), dims.end()); }
    explicit Shape(const std::vector<int>& dims) { assign(dims.begin(), dims.end()); }

    int rank() const { return rank_; }
    int operator[](int axis) const { return dims_[static_cast<size_t>(axis)]; }

    Index numel() const {
        Index n = 1;
        for (int i = 0; i < rank_; ++i) n *= dims_[static_cast<size_t>(i)];
        return n;
    }

    bool operator==(const Shape& o) const {
        if (rank_ != o.rank_) return false;
        for (int i = 0; i < rank_; ++i)
            if (dims_[static_cast<size_t>(i)] != o.dims_[static_cast<size_t>(i)]) return false;
        return true;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        if (rank_ == 0) return "scalar";
        std::string s;
        for (int i = 0; i < rank_; ++i) {
            if (i) s += "x";
            s += std::to_string(dims_[static_cast<size_t>(i)]);
        }
        return s;
    }

private:
    template <class It>
    void assign(It first, It last) {
        rank_ = 0;
        for (It it = first; it != last; ++it) {
            if (rank_ >= kMaxRank) throw std::invalid_argument("Shape: rank exceeds 4");
            if (*it < 1) throw std::invalid_argument("Shape: extents must be positive");
            dims_[static_cast<size_t>(rank_++)] = *it;
        }
    }

    std::array<int, kMaxRank> dims_{};
    int rank_ = 0;
};

}  // namespace duoseg
