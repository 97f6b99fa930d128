#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pipetteloc::nn {

// 64-byte-aligned storage so vectorized kernels always take the same code
// path; bitwise reproducibility of training runs depends on it.
template <typename T, size_t Align>
struct AlignedAllocator {
    using value_type = T;
    template <typename U>
    struct rebind {
        using other = AlignedAllocator<U, Align>;
    };
    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U, Align>&) {}

    T* allocate(size_t n) {
        const size_t bytes = (n * sizeof(T) + Align - 1) / Align * Align;
        void* p = std::aligned_alloc(Align, bytes);
        if (!p) throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, size_t) { std::free(p); }

    template <typename U>
    bool operator==(const AlignedAllocator<U, Align>&) const {
        return true;
    }
    template <typename U>
    bool operator!=(const AlignedAllocator<U, Align>&) const {
        return false;
    }
};

using AlignedFloats = std::vector<float, AlignedAllocator<float, 64>>;

// Dense row-major float tensor. All shapes are explicit; there is no
// broadcasting. Training math runs in float; spec-level metrics run in
// double outside this class.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape) { resize(std::move(shape)); }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    void resize(std::vector<int> shape) {
        int64_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
            n *= d;
        }
        shape_ = std::move(shape);
        data_.assign(static_cast<size_t>(n), 0.0f);
    }

    bool empty() const { return data_.empty(); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(0.0f); }

    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape_.size(); ++i)
            s += std::to_string(shape_[i]) + (i + 1 < shape_.size() ? "," : "");
        return s + ")";
    }

private:
    std::vector<int> shape_;
    AlignedFloats data_;
};

inline void check_shape(const Tensor& t, const std::vector<int>& want, const char* where) {
    if (t.shape() != want) {
        std::string msg = std::string(where) + ": unexpected tensor shape " + t.shape_str();
        throw std::invalid_argument(msg);
    }
}

}  // namespace pipetteloc::nn
