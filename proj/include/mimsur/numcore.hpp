#pragma once

// Dense numerics shared by the whole pipeline: activations, losses, dB
// conversion, the splitmix64 generator, and matrix products.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mimsur {

/// Raised when a caller breaks a documented precondition (shape mismatch,
/// empty input, invalid count).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Raised when a numeric argument is outside the function's domain.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Row-major matrix of doubles.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    DenseMatrix transposed() const;

    bool operator==(const DenseMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// splitmix64 stream. Uniform doubles use the top 53 bits: u = (x >> 11) * 2^-53.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1).
    double uniform() noexcept;
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) noexcept;
    /// Uniform integer in [0, n), computed as floor(uniform() * n). n must be > 0.
    std::size_t below(std::size_t n) noexcept;

private:
    std::uint64_t state_;
};

/// Seed for an independent stream identified by (base, a, b).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) noexcept;

double softplus(double x) noexcept;
double mish(double x) noexcept;
double mish_grad(double x) noexcept;

/// Mish and its derivative from a single exponential; used by the network's hot loop.
void mish_with_grad(double x, double& value, double& grad) noexcept;

constexpr double kSmoothL1Beta = 1.0;

/// Mean SmoothL1 over elements.
double smooth_l1(std::span<const double> pred, std::span<const double> target, double beta = kSmoothL1Beta);

/// d/d(pred) of the per-element SmoothL1 term (not divided by the element count).
double smooth_l1_derivative(double diff, double beta = kSmoothL1Beta) noexcept;

/// 10 * log10(loss). Throws DomainError for loss <= 0.
double loss_db(double loss);

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
/// a * b^T
DenseMatrix matmul_bt(const DenseMatrix& a, const DenseMatrix& b);
/// a^T * b
DenseMatrix matmul_at(const DenseMatrix& a, const DenseMatrix& b);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
std::vector<double> finite_diff_grad(const ScalarFunction& f, std::span<const double> x, double h);

}  // namespace mimsur
