#pragma once

// Small dense numerics: a row-major double matrix, seeded Gaussian sampling,
// products and norms, one-sided Jacobi SVD, and spectral entropy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "soldfl/error.hpp"
#include "soldfl/rng.hpp"

namespace soldfl {

using Vector = std::vector<double>;

class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {
        if (rows == 0 || cols == 0) throw DimensionError("matrix dimensions must be >= 1");
    }

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (rows == 0 || cols == 0) throw DimensionError("matrix dimensions must be >= 1");
        if (data_.size() != rows * cols) throw DimensionError("entry count != rows * cols");
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix diagonal(std::span<const double> values) {
        Matrix m(values.size(), values.size());
        for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool operator==(const Matrix&) const = default;

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Entries i.i.d. N(0,1) drawn from Rng(seed) in row-major order.
inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Matrix m(rows, cols);
    Rng rng(seed);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                             " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out = c.row(i);
        for (std::size_t p = 0; p < a.cols(); ++p) {
            const double aip = a(i, p);
            if (aip == 0.0) continue;
            auto brow = b.row(p);
            for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aip * brow[j];
        }
    }
    return c;
}

/// y = A x
inline Vector matvec(const Matrix& a, std::span<const double> x) {
    if (a.cols() != x.size()) throw DimensionError("matvec: column count != vector length");
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto r = a.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * x[j];
        y[i] = s;
    }
    return y;
}

/// y += A^T x
inline void matvec_transposed_add(const Matrix& a, std::span<const double> x, std::span<double> y) {
    if (a.rows() != x.size() || a.cols() != y.size())
        throw DimensionError("matvec_transposed_add: shape mismatch");
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        auto r = a.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) y[j] += r[j] * xi;
    }
}

/// A += scale * u v^T
inline void add_outer(Matrix& a, std::span<const double> u, std::span<const double> v,
                      double scale = 1.0) {
    if (a.rows() != u.size() || a.cols() != v.size())
        throw DimensionError("add_outer: shape mismatch");
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double s = scale * u[i];
        if (s == 0.0) continue;
        auto r = a.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += s * v[j];
    }
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("add: shape mismatch");
    Matrix c = a;
    auto cd = c.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < cd.size(); ++i) cd[i] += bd[i];
    return c;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("sub: shape mismatch");
    Matrix c = a;
    auto cd = c.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < cd.size(); ++i) cd[i] -= bd[i];
    return c;
}

inline Matrix operator*(double s, const Matrix& a) {
    Matrix c = a;
    for (double& v : c.data()) v *= s;
    return c;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("hadamard: shape mismatch");
    Matrix c = a;
    auto cd = c.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < cd.size(); ++i) cd[i] *= bd[i];
    return c;
}

inline double frobenius_inner(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("frobenius_inner: shape mismatch");
    auto ad = a.data();
    auto bd = b.data();
    return std::inner_product(ad.begin(), ad.end(), bd.begin(), 0.0);
}

inline double frobenius_norm(const Matrix& a) { return std::sqrt(frobenius_inner(a, a)); }

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// |<X,Y>_F| / (|X|_F |Y|_F), 0 when either side vanishes.
inline double normalized_inner(const Matrix& a, const Matrix& b) {
    const double na = frobenius_norm(a);
    const double nb = frobenius_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return frobenius_inner(a, b) / (na * nb);
}

struct SvdResult {
    Vector singular_values;  // descending, >= 0
    Matrix left_vectors;     // m x p, orthonormal columns, p = min(m, n)
    Matrix right_vectors;    // n x p, orthonormal columns

    /// Count of singular values above rel_tol * sigma_max.
    std::size_t rank(double rel_tol = 1e-12) const {
        if (singular_values.empty() || singular_values.front() <= 0.0) return 0;
        const double cut = rel_tol * singular_values.front();
        return static_cast<std::size_t>(std::count_if(singular_values.begin(), singular_values.end(),
                                                      [cut](double s) { return s > cut; }));
    }

    Matrix reconstruct() const {
        Matrix us = left_vectors;
        for (std::size_t i = 0; i < us.rows(); ++i)
            for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= singular_values[j];
        return matmul(us, transpose(right_vectors));
    }
};

struct SvdOptions {
    int max_sweeps = 100;
    double tolerance = 1e-12;
};

namespace detail {

// Fill columns of q flagged in `missing` with unit vectors orthogonal to the
// rest (modified Gram-Schmidt against the standard basis).
inline void complete_orthonormal(Matrix& q, const std::vector<bool>& missing) {
    const std::size_t m = q.rows();
    std::size_t basis = 0;
    for (std::size_t c = 0; c < q.cols(); ++c) {
        if (!missing[c]) continue;
        for (; basis < m; ++basis) {
            Vector v(m, 0.0);
            v[basis] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t o = 0; o < q.cols(); ++o) {
                    if (o == c || (missing[o] && o > c)) continue;
                    double proj = 0.0;
                    for (std::size_t i = 0; i < m; ++i) proj += q(i, o) * v[i];
                    for (std::size_t i = 0; i < m; ++i) v[i] -= proj * q(i, o);
                }
            }
            const double n = norm2(v);
            if (n > 1e-8) {
                for (std::size_t i = 0; i < m; ++i) q(i, c) = v[i] / n;
                ++basis;
                break;
            }
        }
    }
}

// One-sided Jacobi on the columns of `work` (m x n, n <= m).
inline SvdResult jacobi_tall(Matrix work, const SvdOptions& opt) {
    const std::size_t m = work.rows();
    const std::size_t n = work.cols();
    Matrix v = Matrix::identity(n);

    bool converged = false;
    for (int sweep = 0; sweep < opt.max_sweeps && !converged; ++sweep) {
        converged = true;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = work(i, p), wq = work(i, q);
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if (gamma == 0.0 || std::abs(gamma) <= opt.tolerance * std::sqrt(alpha * beta))
                    continue;
                converged = false;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = work(i, p), wq = work(i, q);
                    work(i, p) = c * wp - s * wq;
                    work(i, q) = s * wp + c * wq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
    }
    if (!converged) throw NumericFailure("svd: Jacobi sweeps did not converge");

    Vector sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += work(i, j) * work(i, j);
        sigma[j] = std::sqrt(s);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

    SvdResult out{Vector(n), Matrix(m, n), Matrix(n, n)};
    const double smax = sigma[order.front()];
    std::vector<bool> missing(n, false);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        out.singular_values[k] = sigma[j];
        for (std::size_t i = 0; i < n; ++i) out.right_vectors(i, k) = v(i, j);
        if (sigma[j] > 1e-300 && sigma[j] > 1e-14 * smax) {
            for (std::size_t i = 0; i < m; ++i) out.left_vectors(i, k) = work(i, j) / sigma[j];
        } else {
            missing[k] = true;
        }
    }
    complete_orthonormal(out.left_vectors, missing);
    return out;
}

}  // namespace detail

/// Thin SVD by one-sided Jacobi on the smaller dimension.
/// Throws NumericFailure on non-finite input or when the sweep cap is hit.
inline SvdResult svd(const Matrix& x, const SvdOptions& opt = {}) {
    if (!x.all_finite()) throw NumericFailure("svd: input has non-finite entries");
    if (x.cols() <= x.rows()) return detail::jacobi_tall(x, opt);
    SvdResult t = detail::jacobi_tall(transpose(x), opt);
    std::swap(t.left_vectors, t.right_vectors);
    return t;
}

/// Logarithm base used by spectral_entropy. Zero or negative means natural log.
struct EntropyOptions {
    double log_base = 0.0;
};

/// Shannon entropy of the normalized spectrum p_j = sigma_j / sum(sigma).
inline double spectral_entropy(std::span<const double> sigma, const EntropyOptions& opt = {}) {
    double total = 0.0;
    for (double s : sigma) {
        if (!(s >= 0.0) || !std::isfinite(s)) throw DomainError("spectral_entropy: values must be finite and >= 0");
        total += s;
    }
    if (total <= 0.0) throw DomainError("spectral_entropy: all singular values are zero");
    double h = 0.0;
    for (double s : sigma) {
        if (s <= 0.0) continue;
        const double p = s / total;
        h -= p * std::log(p);
    }
    if (opt.log_base > 0.0) h /= std::log(opt.log_base);
    return std::max(h, 0.0);
}

}  // namespace soldfl
