#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "mola/linalg.hpp"

namespace testing {

inline mola::Mat random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    mola::Mat m(r, c);
    for (double& v : m.data()) v = g(rng);
    return m;
}

inline double max_abs_diff(const mola::Mat& a, const mola::Mat& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

// Plain triple loop, kept apart from the library kernels.
inline mola::Mat naive_matmul(const mola::Mat& a, const mola::Mat& b) {
    mola::Mat out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

}  // namespace testing

#include <functional>
#include <vector>

#include "mola/model.hpp"

namespace testing {

inline mola::WindowSet random_windows(std::size_t count, std::size_t lookback, std::size_t horizon,
                                      std::size_t channels, std::mt19937_64& rng) {
    mola::WindowSet out;
    for (std::size_t i = 0; i < count; ++i)
        out.push_back({random_mat(lookback, channels, rng), random_mat(horizon, channels, rng), i});
    return out;
}

// Central differences over every entry of every matrix in `params` that has
// an analytic gradient; returns ||g - fd|| / max(||g||, ||fd||).
inline double fd_relative_error(mola::ParamStore& params, const mola::GradStore& grads,
                                const std::function<double()>& loss, double h = 1e-5) {
    double num = 0.0, g_sq = 0.0, fd_sq = 0.0;
    for (auto& e : params.entries()) {
        auto it = grads.find(e.name);
        if (it == grads.end()) continue;
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            double& v = e.value.data()[i];
            const double keep = v;
            v = keep + h;
            const double up = loss();
            v = keep - h;
            const double down = loss();
            v = keep;
            const double fd = (up - down) / (2.0 * h);
            const double g = it->second.data()[i];
            num += (g - fd) * (g - fd);
            g_sq += g * g;
            fd_sq += fd * fd;
        }
    }
    const double den = std::sqrt(std::max(g_sq, fd_sq));
    return den == 0.0 ? 0.0 : std::sqrt(num) / den;
}

}  // namespace testing

namespace testing {

// Orthonormal basis of col(a) by modified Gram-Schmidt with one
// re-orthogonalization pass; columns whose remainder falls below
// `drop * ||a||_F` are treated as dependent.
inline mola::Mat column_basis(const mola::Mat& a, double drop = 1e-10) {
    const double scale_a = std::max(mola::frobenius(a), 1e-300);
    std::vector<std::vector<double>> basis;
    for (std::size_t j = 0; j < a.cols(); ++j) {
        std::vector<double> v(a.rows());
        for (std::size_t i = 0; i < a.rows(); ++i) v[i] = a(i, j);
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& q : basis) {
                double d = 0.0;
                for (std::size_t i = 0; i < v.size(); ++i) d += q[i] * v[i];
                for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * q[i];
            }
        }
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n <= drop * scale_a) continue;
        for (double& x : v) x /= n;
        basis.push_back(std::move(v));
    }
    mola::Mat q(a.rows(), basis.size());
    for (std::size_t j = 0; j < basis.size(); ++j)
        for (std::size_t i = 0; i < a.rows(); ++i) q(i, j) = basis[j][i];
    return q;
}

// ||Y - P Y||^2 with P the projector onto col(a).
inline double projection_residual_sq(const mola::Mat& a, const mola::Mat& y) {
    const mola::Mat q = column_basis(a);
    mola::Mat r = y;
    for (std::size_t k = 0; k < q.cols(); ++k)
        for (std::size_t c = 0; c < y.cols(); ++c) {
            double d = 0.0;
            for (std::size_t i = 0; i < y.rows(); ++i) d += q(i, k) * y(i, c);
            for (std::size_t i = 0; i < y.rows(); ++i) r(i, c) -= d * q(i, k);
        }
    return mola::frobenius_sq(r);
}

}  // namespace testing
