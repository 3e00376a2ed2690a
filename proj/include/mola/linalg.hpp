#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace mola {

// Dense row-major matrix of doubles.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
    // Throws ShapeError if data.size() != rows * cols and DataError on
    // non-finite entries.
    Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Mat identity(std::size_t n);
    static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Mat column(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool all_finite() const noexcept;
    bool same_shape(const Mat& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    friend bool operator==(const Mat&, const Mat&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Mat matmul(const Mat& a, const Mat& b);
// a^T * b
Mat matmul_tn(const Mat& a, const Mat& b);
// a * b^T
Mat matmul_nt(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);
Mat add(const Mat& a, const Mat& b);
Mat sub(const Mat& a, const Mat& b);
Mat scale(const Mat& a, double s);
// y += alpha * x
void axpy(double alpha, const Mat& x, Mat& y);
double frobenius(const Mat& a);
double frobenius_sq(const Mat& a);
// Frobenius inner product <a, b>.
double dot(const Mat& a, const Mat& b);
// [w b] for w (m x n) and b (m x 1).
Mat append_column(const Mat& w, const Mat& b);
Mat column_of(const Mat& a, std::size_t c);
Mat slice_rows(const Mat& a, std::size_t first, std::size_t count);

struct SvdResult {
    Mat u;                      // m x m, orthogonal
    std::vector<double> sigma;  // min(m, n) values, descending
    Mat vt;                     // n x n, rows are right singular vectors
    std::size_t rank = 0;
    double tolerance = 0.0;     // threshold used for rank
};

inline constexpr int kJacobiMaxSweeps = 60;
inline constexpr double kJacobiTolerance = 1e-14;

// Full SVD via one-sided Jacobi. Throws ConvergenceError if the
// off-diagonal measure does not drop below kJacobiTolerance within
// kJacobiMaxSweeps sweeps.
SvdResult svd(const Mat& a);

// rank tolerance max(m, n) * sigma_1 * 1e-12
double rank_tolerance(std::size_t m, std::size_t n, double sigma_max);

// Minimum-norm minimizer of ||y - a x||_F via the SVD pseudoinverse.
Mat least_squares(const Mat& a, const Mat& y);

}  // namespace mola
