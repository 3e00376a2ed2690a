#include "mola/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mola/error.hpp"

namespace mola {

namespace {

std::string shape_str(const Mat& a) {
    return std::to_string(a.rows()) + "x" + std::to_string(a.cols());
}

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
}

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("Mat: " + std::to_string(data_.size()) + " values for a " + std::to_string(rows_) +
                         "x" + std::to_string(cols_) + " matrix");
    }
    if (!all_finite()) {
        throw DataError("Mat: non-finite entry");
    }
}

Mat Mat::identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("Mat::from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Mat(r, c, std::move(data));
}

Mat Mat::column(std::span<const double> values) {
    return Mat(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

bool Mat::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_str(a) + " * " + shape_str(b));
    }
    Mat out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out_row = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            auto b_row = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
        }
    }
    return out;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn: " + shape_str(a) + "^T * " + shape_str(b));
    }
    Mat out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        auto a_row = a.row(k);
        auto b_row = b.row(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a_row[i];
            if (aki == 0.0) continue;
            auto out_row = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aki * b_row[j];
        }
    }
    return out;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: " + shape_str(a) + " * " + shape_str(b) + "^T");
    }
    Mat out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto a_row = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            auto b_row = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a_row[k] * b_row[k];
            out(i, j) = acc;
        }
    }
    return out;
}

Mat transpose(const Mat& a) {
    Mat out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

Mat add(const Mat& a, const Mat& b) {
    require_same_shape(a, b, "add");
    Mat out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

Mat sub(const Mat& a, const Mat& b) {
    require_same_shape(a, b, "sub");
    Mat out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

Mat scale(const Mat& a, double s) {
    Mat out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

void axpy(double alpha, const Mat& x, Mat& y) {
    require_same_shape(x, y, "axpy");
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += alpha * x.data()[i];
}

double frobenius_sq(const Mat& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v * v;
    return acc;
}

double frobenius(const Mat& a) { return std::sqrt(frobenius_sq(a)); }

double dot(const Mat& a, const Mat& b) {
    require_same_shape(a, b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
    return acc;
}

Mat append_column(const Mat& w, const Mat& b) {
    if (b.cols() != 1 || b.rows() != w.rows()) {
        throw ShapeError("append_column: " + shape_str(w) + " with " + shape_str(b));
    }
    Mat out(w.rows(), w.cols() + 1);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) out(i, j) = w(i, j);
        out(i, w.cols()) = b(i, 0);
    }
    return out;
}

Mat column_of(const Mat& a, std::size_t c) {
    if (c >= a.cols()) throw ShapeError("column_of: column out of range");
    Mat out(a.rows(), 1);
    for (std::size_t i = 0; i < a.rows(); ++i) out(i, 0) = a(i, c);
    return out;
}

Mat slice_rows(const Mat& a, std::size_t first, std::size_t count) {
    if (first + count > a.rows()) throw ShapeError("slice_rows: range out of bounds");
    Mat out(count, a.cols());
    std::copy(a.data().begin() + static_cast<std::ptrdiff_t>(first * a.cols()),
              a.data().begin() + static_cast<std::ptrdiff_t>((first + count) * a.cols()), out.data().begin());
    return out;
}

double rank_tolerance(std::size_t m, std::size_t n, double sigma_max) {
    return static_cast<double>(std::max(m, n)) * sigma_max * 1e-12;
}

namespace {

// One-sided Jacobi on the columns of `work` (m x n, m >= n). On return the
// columns are mutually orthogonal and `v` holds the accumulated rotations.
void jacobi_orthogonalize(Mat& work, Mat& v) {
    const std::size_t m = work.rows();
    const std::size_t n = work.cols();
    // Columns this small are rounding noise left behind by exactly dependent
    // columns. They never become relatively orthogonal, and they sit far
    // below the rank tolerance, so they are not rotated.
    const double negligible = std::pow(1e-14 * frobenius(work), 2);
    for (int sweep = 0; sweep < kJacobiMaxSweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t r = 0; r < m; ++r) {
                    const double ai = work(r, i);
                    const double aj = work(r, j);
                    alpha += ai * ai;
                    beta += aj * aj;
                    gamma += ai * aj;
                }
                if (gamma == 0.0 || std::min(alpha, beta) <= negligible) continue;
                const double measure = std::abs(gamma) / std::sqrt(alpha * beta);
                off = std::max(off, measure);
                if (measure < kJacobiTolerance) continue;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t r = 0; r < m; ++r) {
                    const double ai = work(r, i);
                    const double aj = work(r, j);
                    work(r, i) = c * ai - s * aj;
                    work(r, j) = s * ai + c * aj;
                }
                for (std::size_t r = 0; r < n; ++r) {
                    const double vi = v(r, i);
                    const double vj = v(r, j);
                    v(r, i) = c * vi - s * vj;
                    v(r, j) = s * vi + c * vj;
                }
            }
        }
        if (off < kJacobiTolerance) return;
    }
    throw ConvergenceError("svd: one-sided Jacobi did not converge within " + std::to_string(kJacobiMaxSweeps) +
                           " sweeps");
}

// Fill the columns of `u` not flagged in `filled` with an orthonormal
// completion, using twice-orthogonalized standard basis vectors.
void complete_basis(Mat& u, std::vector<bool>& filled) {
    const std::size_t m = u.rows();
    std::vector<double> cand(m);
    for (std::size_t slot = 0; slot < m; ++slot) {
        if (filled[slot]) continue;
        double best_norm = -1.0;
        std::vector<double> best;
        for (std::size_t e = 0; e < m; ++e) {
            std::fill(cand.begin(), cand.end(), 0.0);
            cand[e] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t c = 0; c < m; ++c) {
                    if (!filled[c]) continue;
                    double proj = 0.0;
                    for (std::size_t r = 0; r < m; ++r) proj += u(r, c) * cand[r];
                    for (std::size_t r = 0; r < m; ++r) cand[r] -= proj * u(r, c);
                }
            }
            double norm = 0.0;
            for (double x : cand) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > best_norm) {
                best_norm = norm;
                best = cand;
            }
            if (norm > 0.7) break;
        }
        for (std::size_t r = 0; r < m; ++r) u(r, slot) = best[r] / best_norm;
        filled[slot] = true;
    }
}

SvdResult svd_tall(const Mat& a) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    Mat work = a;
    Mat v = Mat::identity(n);
    jacobi_orthogonalize(work, v);

    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t r = 0; r < m; ++r) acc += work(r, j) * work(r, j);
        norms[j] = std::sqrt(acc);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    SvdResult out;
    out.sigma.resize(n);
    for (std::size_t k = 0; k < n; ++k) out.sigma[k] = norms[order[k]];
    const double smax = n > 0 ? out.sigma[0] : 0.0;
    out.tolerance = rank_tolerance(m, n, smax);
    out.rank = static_cast<std::size_t>(
        std::count_if(out.sigma.begin(), out.sigma.end(), [&](double s) { return s > out.tolerance; }));

    out.u = Mat(m, m);
    std::vector<bool> filled(m, false);
    for (std::size_t k = 0; k < out.rank; ++k) {
        const std::size_t j = order[k];
        for (std::size_t r = 0; r < m; ++r) out.u(r, k) = work(r, j) / norms[j];
        filled[k] = true;
    }
    complete_basis(out.u, filled);

    out.vt = Mat(n, n);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t r = 0; r < n; ++r) out.vt(k, r) = v(r, order[k]);
    return out;
}

}  // namespace

SvdResult svd(const Mat& a) {
    if (!a.all_finite()) throw DataError("svd: non-finite input");
    if (a.rows() >= a.cols()) return svd_tall(a);
    // A^T = U' S V'^T  =>  A = V' S U'^T
    SvdResult t = svd_tall(transpose(a));
    SvdResult out;
    out.u = transpose(t.vt);
    out.vt = transpose(t.u);
    out.sigma = std::move(t.sigma);
    out.rank = t.rank;
    out.tolerance = t.tolerance;
    return out;
}

Mat least_squares(const Mat& a, const Mat& y) {
    if (a.rows() == 0) throw ShapeError("least_squares: empty system");
    if (a.rows() != y.rows()) {
        throw ShapeError("least_squares: A is " + shape_str(a) + " but Y is " + shape_str(y));
    }
    const SvdResult s = svd(a);
    // X = V diag(1/sigma) U^T Y over the numerical range
    Mat x(a.cols(), y.cols());
    for (std::size_t k = 0; k < s.rank; ++k) {
        const double inv = 1.0 / s.sigma[k];
        for (std::size_t c = 0; c < y.cols(); ++c) {
            double proj = 0.0;
            for (std::size_t r = 0; r < a.rows(); ++r) proj += s.u(r, k) * y(r, c);
            proj *= inv;
            for (std::size_t r = 0; r < a.cols(); ++r) x(r, c) += s.vt(k, r) * proj;
        }
    }
    return x;
}

}  // namespace mola
