#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace occlab {

using Vector = std::vector<double>;

/// Small dense row-major matrix. Sized for desk-scale state spaces
/// (a handful of states), not for large linear algebra.
class Matrix {
   public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    Matrix& operator+=(const Matrix& other) {
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += other.data_[k];
        return *this;
    }
    Matrix& operator-=(const Matrix& other) {
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= other.data_[k];
        return *this;
    }
    Matrix& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
    friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
    friend Matrix operator*(Matrix a, double s) { return a *= s; }
    friend Matrix operator*(double s, Matrix a) { return a *= s; }

    friend Matrix operator*(const Matrix& a, const Matrix& b) {
        Matrix c(a.rows_, b.cols_);
        for (std::size_t i = 0; i < a.rows_; ++i)
            for (std::size_t k = 0; k < a.cols_; ++k) {
                const double aik = a(i, k);
                if (aik == 0.0) continue;
                for (std::size_t j = 0; j < b.cols_; ++j) c(i, j) += aik * b(k, j);
            }
        return c;
    }

    friend Vector operator*(const Matrix& a, const Vector& x) {
        Vector y(a.rows_, 0.0);
        for (std::size_t i = 0; i < a.rows_; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < a.cols_; ++j) s += a(i, j) * x[j];
            y[i] = s;
        }
        return y;
    }

    /// Maximum absolute column sum.
    double one_norm() const {
        double best = 0.0;
        for (std::size_t j = 0; j < cols_; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < rows_; ++i) s += std::abs((*this)(i, j));
            best = std::max(best, s);
        }
        return best;
    }

   private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

inline double dot(const Vector& a, const Vector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// LU factorization with partial pivoting. Throws on a numerically
/// singular pivot; callers that need a verdict instead should test the
/// matrix (e.g. via leading minors) before solving.
class LuFactorization {
   public:
    explicit LuFactorization(Matrix a) : lu_(std::move(a)), perm_(lu_.rows()) {
        const std::size_t n = lu_.rows();
        if (lu_.cols() != n) throw std::invalid_argument("LU requires a square matrix");
        for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
        for (std::size_t k = 0; k < n; ++k) {
            std::size_t piv = k;
            double best = std::abs(lu_(k, k));
            for (std::size_t i = k + 1; i < n; ++i) {
                if (std::abs(lu_(i, k)) > best) {
                    best = std::abs(lu_(i, k));
                    piv = i;
                }
            }
            if (best == 0.0) throw std::runtime_error("singular matrix in LU solve");
            if (piv != k) {
                for (std::size_t j = 0; j < n; ++j) std::swap(lu_(k, j), lu_(piv, j));
                std::swap(perm_[k], perm_[piv]);
                sign_ = -sign_;
            }
            for (std::size_t i = k + 1; i < n; ++i) {
                lu_(i, k) /= lu_(k, k);
                const double lik = lu_(i, k);
                for (std::size_t j = k + 1; j < n; ++j) lu_(i, j) -= lik * lu_(k, j);
            }
        }
    }

    Vector solve(const Vector& b) const {
        const std::size_t n = lu_.rows();
        Vector x(n);
        for (std::size_t i = 0; i < n; ++i) x[i] = b[perm_[i]];
        for (std::size_t i = 1; i < n; ++i)
            for (std::size_t j = 0; j < i; ++j) x[i] -= lu_(i, j) * x[j];
        for (std::size_t i = n; i-- > 0;) {
            for (std::size_t j = i + 1; j < n; ++j) x[i] -= lu_(i, j) * x[j];
            x[i] /= lu_(i, i);
        }
        return x;
    }

    Matrix solve(const Matrix& b) const {
        Matrix x(b.rows(), b.cols());
        Vector col(b.rows());
        for (std::size_t j = 0; j < b.cols(); ++j) {
            for (std::size_t i = 0; i < b.rows(); ++i) col[i] = b(i, j);
            Vector y = solve(col);
            for (std::size_t i = 0; i < b.rows(); ++i) x(i, j) = y[i];
        }
        return x;
    }

    double determinant() const {
        double d = sign_;
        for (std::size_t i = 0; i < lu_.rows(); ++i) d *= lu_(i, i);
        return d;
    }

   private:
    Matrix lu_;
    std::vector<std::size_t> perm_;
    double sign_ = 1.0;
};

inline Vector solve(const Matrix& a, const Vector& b) { return LuFactorization(a).solve(b); }

/// Determinant of the leading k-by-k block, by Gaussian elimination with
/// partial pivoting on a copy. Returns 0 for an exactly singular block.
inline double leading_principal_minor(const Matrix& a, std::size_t k) {
    Matrix m(k, k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) m(i, j) = a(i, j);
    double det = 1.0;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t piv = c;
        for (std::size_t i = c + 1; i < k; ++i)
            if (std::abs(m(i, c)) > std::abs(m(piv, c))) piv = i;
        if (m(piv, c) == 0.0) return 0.0;
        if (piv != c) {
            for (std::size_t j = 0; j < k; ++j) std::swap(m(c, j), m(piv, j));
            det = -det;
        }
        det *= m(c, c);
        for (std::size_t i = c + 1; i < k; ++i) {
            const double f = m(i, c) / m(c, c);
            for (std::size_t j = c; j < k; ++j) m(i, j) -= f * m(c, j);
        }
    }
    return det;
}

namespace detail {

inline void expm_pade3(const Matrix& a, Matrix& u, Matrix& v) {
    static const double b[] = {120., 60., 12., 1.};
    const Matrix i = Matrix::identity(a.rows());
    const Matrix a2 = a * a;
    u = a * (b[3] * a2 + b[1] * i);
    v = b[2] * a2 + b[0] * i;
}

inline void expm_pade5(const Matrix& a, Matrix& u, Matrix& v) {
    static const double b[] = {30240., 15120., 3360., 420., 30., 1.};
    const Matrix i = Matrix::identity(a.rows());
    const Matrix a2 = a * a;
    const Matrix a4 = a2 * a2;
    u = a * (b[5] * a4 + b[3] * a2 + b[1] * i);
    v = b[4] * a4 + b[2] * a2 + b[0] * i;
}

inline void expm_pade7(const Matrix& a, Matrix& u, Matrix& v) {
    static const double b[] = {17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.};
    const Matrix i = Matrix::identity(a.rows());
    const Matrix a2 = a * a;
    const Matrix a4 = a2 * a2;
    const Matrix a6 = a4 * a2;
    u = a * (b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * i);
    v = b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * i;
}

inline void expm_pade9(const Matrix& a, Matrix& u, Matrix& v) {
    static const double b[] = {17643225600., 8821612800., 2075673600., 302702400.,
                               30270240.,   2162160.,    110880.,     3960.,
                               90.,         1.};
    const Matrix i = Matrix::identity(a.rows());
    const Matrix a2 = a * a;
    const Matrix a4 = a2 * a2;
    const Matrix a6 = a4 * a2;
    const Matrix a8 = a6 * a2;
    u = a * (b[9] * a8 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * i);
    v = b[8] * a8 + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * i;
}

inline void expm_pade13(const Matrix& a, Matrix& u, Matrix& v) {
    static const double b[] = {64764752532480000., 32382376266240000., 7771770303897600.,
                               1187353796428800.,  129060195264000.,   10559470521600.,
                               670442572800.,      33522128640.,       1323241920.,
                               40840800.,          960960.,            16380.,
                               182.,               1.};
    const Matrix i = Matrix::identity(a.rows());
    const Matrix a2 = a * a;
    const Matrix a4 = a2 * a2;
    const Matrix a6 = a4 * a2;
    Matrix tmp = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2);
    tmp += b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * i;
    u = a * tmp;
    v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2);
    v += b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * i;
}

}  // namespace detail

/// Matrix exponential by scaling-and-squaring with a Pade core.
/// Order thresholds follow the standard double-precision ladder.
inline Matrix expm(const Matrix& a) {
    const std::size_t n = a.rows();
    if (a.cols() != n) throw std::invalid_argument("expm requires a square matrix");
    Matrix u, v;
    int squarings = 0;
    const double norm = a.one_norm();
    if (norm < 1.495585217958292e-2) {
        detail::expm_pade3(a, u, v);
    } else if (norm < 2.539398330063230e-1) {
        detail::expm_pade5(a, u, v);
    } else if (norm < 9.504178996162932e-1) {
        detail::expm_pade7(a, u, v);
    } else if (norm < 2.097847961257068e0) {
        detail::expm_pade9(a, u, v);
    } else {
        const double theta13 = 5.371920351148152e0;
        if (norm > theta13) {
            std::frexp(norm / theta13, &squarings);
            if (squarings < 0) squarings = 0;
        }
        Matrix scaled = a * std::ldexp(1.0, -squarings);
        detail::expm_pade13(scaled, u, v);
    }
    Matrix result = LuFactorization(v - u).solve(v + u);
    for (int s = 0; s < squarings; ++s) result = result * result;
    return result;
}

}  // namespace occlab
