#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <new>
#include <string>
#include <vector>

#include "apl/rng.hpp"

namespace apl {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// 64-byte aligned storage. Eigen's vectorized reductions peel a different number of
/// leading elements depending on the buffer address, so unaligned buffers would make
/// float sums (and therefore training) vary from run to run.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor of rank 1 or 2. Rank-1 tensors view as a single row.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    AlignedVector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims, T fill = T(0));
    static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) { return Tensor({rows, cols}, fill); }
    static Tensor vector(std::size_t n, T fill = T(0)) { return Tensor({n}, fill); }

    std::size_t rank() const { return shape.size(); }
    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
    std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    T operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
    T& operator[](std::size_t i) { return data[i]; }
    T operator[](std::size_t i) const { return data[i]; }

    MatrixMap<T> mat() { return {data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())}; }
    ConstMatrixMap<T> mat() const {
        return {data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
    }

    void fill(T value);
    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    std::string shape_string() const;

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    bool operator==(const Tensor&) const = default;
};

/// Named trainable tensor with its gradient accumulator and initialization fan-in.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    std::size_t d_in = 1;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v, std::size_t fan_in)
        : name(std::move(n)), value(std::move(v)), grad(value.shape), d_in(fan_in) {}

    void zero_grad() { grad.fill(T(0)); }
    bool is_matrix() const { return value.rank() == 2; }
};

/// Standard deviation (1/d_in)^gamma.
double init_stddev(std::size_t d_in, double gamma);

/// i.i.d. Normal(0, init_stddev(d_in, gamma)^2) entries.
template <typename T>
Tensor<T> init_normal(std::vector<std::size_t> shape, std::size_t d_in, double gamma, Rng& rng);

}  // namespace apl
