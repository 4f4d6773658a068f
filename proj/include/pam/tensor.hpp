#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pam {

// std::allocator that default-initializes on plain resize, so buffers that
// are fully overwritten right away skip the zero fill.
template <typename T>
struct NoInitAllocator : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = NoInitAllocator<U>;
    };
    template <typename U>
    void construct(U* p) noexcept(noexcept(::new (static_cast<void*>(p)) U)) {
        ::new (static_cast<void*>(p)) U;
    }
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

// Dense row-major tensor of doubles. Rank is dynamic; image features use
// CHW order, matrices (rows, cols), vectors (n).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> dims, double fill = 0.0)
        : dims_(std::move(dims)), data_(static_cast<std::size_t>(checked_numel(dims_)), fill) {}
    Tensor(std::vector<int> dims, const std::vector<double>& data)
        : dims_(std::move(dims)), data_(data.begin(), data.end()) {
        if (static_cast<std::size_t>(checked_numel(dims_)) != data_.size())
            throw std::invalid_argument("Tensor: data size does not match dims");
    }

    // Allocation without the zero fill, for outputs written in full.
    static Tensor uninit(std::vector<int> dims) {
        Tensor t;
        t.dims_ = std::move(dims);
        t.data_.resize(static_cast<std::size_t>(checked_numel(t.dims_)));
        return t;
    }

    const std::vector<int>& dims() const { return dims_; }
    int dim(int i) const { return dims_.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(dims_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // CHW accessors.
    double& at(int c, int h, int w) {
        return data_[static_cast<std::size_t>((static_cast<std::int64_t>(c) * dims_[1] + h) * dims_[2] + w)];
    }
    double at(int c, int h, int w) const {
        return data_[static_cast<std::size_t>((static_cast<std::int64_t>(c) * dims_[1] + h) * dims_[2] + w)];
    }
    double& at(int r, int c) {
        return data_[static_cast<std::size_t>(static_cast<std::int64_t>(r) * dims_[1] + c)];
    }
    double at(int r, int c) const {
        return data_[static_cast<std::size_t>(static_cast<std::int64_t>(r) * dims_[1] + c)];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

    static std::int64_t checked_numel(const std::vector<int>& dims) {
        std::int64_t n = 1;
        for (int d : dims) {
            if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension");
            n *= d;
        }
        return n;
    }

private:
    std::vector<int> dims_;
    std::vector<double, NoInitAllocator<double>> data_;
};

inline std::string shape_string(const std::vector<int>& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

}  // namespace pam
