#include "mimsur/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace mimsur {

namespace {

constexpr double kSoftplusCutoff = 20.0;

// Eight doubles; lowered to one AVX-512 register or split by the compiler.
typedef double Lane8 __attribute__((vector_size(64)));

Lane8 load8(const double* p) noexcept {
    Lane8 v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

void store8(double* p, const Lane8& v) noexcept {
    std::memcpy(p, &v, sizeof v);
}

// C (m x n) = A (m x k) * B (k x n), all row-major, C overwritten.
// Every output element is a plain left-to-right sum over p = 0..k-1 (no fused
// multiply-add, see the build flags), so all tile paths agree to the bit.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    constexpr std::size_t kTileRows = 8;
    constexpr std::size_t kTileCols = 16;

    const std::size_t m_main = m - m % kTileRows;
    const std::size_t n_main = n - n % kTileCols;

    for (std::size_t i0 = 0; i0 < m_main; i0 += kTileRows) {
        for (std::size_t j0 = 0; j0 < n_main; j0 += kTileCols) {
            Lane8 acc[kTileRows][2] = {};
            for (std::size_t p = 0; p < k; ++p) {
                const Lane8 b0 = load8(b + p * n + j0);
                const Lane8 b1 = load8(b + p * n + j0 + 8);
                for (std::size_t r = 0; r < kTileRows; ++r) {
                    const double av = a[(i0 + r) * k + p];
                    acc[r][0] += av * b0;
                    acc[r][1] += av * b1;
                }
            }
            for (std::size_t r = 0; r < kTileRows; ++r) {
                store8(c + (i0 + r) * n + j0, acc[r][0]);
                store8(c + (i0 + r) * n + j0 + 8, acc[r][1]);
            }
        }
    }

    for (std::size_t i = m_main; i < m; ++i) {
        for (std::size_t j0 = 0; j0 < n_main; j0 += kTileCols) {
            Lane8 acc0 = {};
            Lane8 acc1 = {};
            for (std::size_t p = 0; p < k; ++p) {
                const double av = a[i * k + p];
                acc0 += av * load8(b + p * n + j0);
                acc1 += av * load8(b + p * n + j0 + 8);
            }
            store8(c + i * n + j0, acc0);
            store8(c + i * n + j0 + 8, acc1);
        }
    }

    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = n_main; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = s;
        }
    }
}

std::string shape_of(const DenseMatrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ContractViolation("DenseMatrix: data length " + std::to_string(data_.size()) +
                                " does not match " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
}

DenseMatrix DenseMatrix::transposed() const {
    DenseMatrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    }
    return t;
}

std::uint64_t Rng::next_u64() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double Rng::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) noexcept {
    const double v = lo + (hi - lo) * uniform();
    // lo + (hi - lo) * u can round up to hi for u close to 1.
    return v < hi ? v : std::nextafter(hi, lo);
}

std::size_t Rng::below(std::size_t n) noexcept {
    const auto idx = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return std::min(idx, n - 1);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) noexcept {
    Rng outer(base);
    Rng mid(outer.next_u64() ^ (a * 0xD1B54A32D192ED03ULL));
    Rng inner(mid.next_u64() ^ (b * 0x8CB92BA72F3D8DD7ULL));
    return inner.next_u64();
}

double softplus(double x) noexcept {
    if (x > kSoftplusCutoff) return x;
    if (x < -kSoftplusCutoff) return std::exp(x);
    return std::log1p(std::exp(x));
}

double mish(double x) noexcept {
    double value = 0.0;
    double grad = 0.0;
    mish_with_grad(x, value, grad);
    return value;
}

double mish_grad(double x) noexcept {
    double value = 0.0;
    double grad = 0.0;
    mish_with_grad(x, value, grad);
    return grad;
}

void mish_with_grad(double x, double& value, double& grad) noexcept {
    // tanh(softplus(x)) and the logistic sigmoid (= softplus') both follow from e = exp(x):
    //   tanh(ln(1 + e)) = e(e + 2) / (e(e + 2) + 2),  sigmoid = e / (1 + e).
    double t = 0.0;
    double sig = 0.0;
    if (x > kSoftplusCutoff) {
        t = std::tanh(x);
        sig = 1.0 / (1.0 + std::exp(-x));
    } else if (x < -kSoftplusCutoff) {
        const double e = std::exp(x);
        t = std::tanh(e);
        sig = e / (1.0 + e);
    } else {
        const double e = std::exp(x);
        const double n = e * (e + 2.0);
        t = n / (n + 2.0);
        sig = e / (1.0 + e);
    }
    value = x * t;
    grad = t + x * (1.0 - t * t) * sig;
}

double smooth_l1(std::span<const double> pred, std::span<const double> target, double beta) {
    if (pred.size() != target.size()) {
        throw ContractViolation("smooth_l1: length mismatch (" + std::to_string(pred.size()) + " vs " +
                                std::to_string(target.size()) + ")");
    }
    if (pred.empty()) throw ContractViolation("smooth_l1: empty input");
    if (!(beta > 0.0)) throw ContractViolation("smooth_l1: beta must be positive");

    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = std::abs(pred[i] - target[i]);
        sum += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
    }
    return sum / static_cast<double>(pred.size());
}

double smooth_l1_derivative(double diff, double beta) noexcept {
    if (std::abs(diff) < beta) return diff / beta;
    return diff > 0.0 ? 1.0 : -1.0;
}

double loss_db(double loss) {
    if (!(loss > 0.0)) throw DomainError("loss_db: loss must be positive, got " + std::to_string(loss));
    return 10.0 * std::log10(loss);
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows()) {
        throw ContractViolation("matmul: shape mismatch " + shape_of(a) + " * " + shape_of(b));
    }
    DenseMatrix c(a.rows(), b.cols());
    gemm_nn(a.values().data(), b.values().data(), c.values().data(), a.rows(), a.cols(), b.cols());
    return c;
}

DenseMatrix matmul_bt(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.cols()) {
        throw ContractViolation("matmul_bt: shape mismatch " + shape_of(a) + " * (" + shape_of(b) + ")^T");
    }
    return matmul(a, b.transposed());
}

DenseMatrix matmul_at(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows() != b.rows()) {
        throw ContractViolation("matmul_at: shape mismatch (" + shape_of(a) + ")^T * " + shape_of(b));
    }
    return matmul(a.transposed(), b);
}

std::vector<double> finite_diff_grad(const ScalarFunction& f, std::span<const double> x, double h) {
    if (!(h > 0.0)) throw ContractViolation("finite_diff_grad: step must be positive");
    std::vector<double> probe(x.begin(), x.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double up = f(probe);
        probe[i] = orig - h;
        const double down = f(probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

}  // namespace mimsur
