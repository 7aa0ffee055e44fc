#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace arhmm {

/// Malformed input: unreadable files, shape mismatches, violated model
/// invariants, bad argument ranges. Maps to CLI exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure: singular systems, non-finite intermediate values,
/// decoding dead ends. Maps to CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLogTwoPi = 1.8378770664093454836;

/// Dense row-major matrix of doubles. Value type, no views.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline double log_sum_exp(std::span<const double> xs) {
    double mx = kNegInf;
    for (double x : xs) mx = std::max(mx, x);
    if (mx == kNegInf) return kNegInf;
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - mx);
    return mx + std::log(acc);
}

inline double log_sum_exp(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double mx = std::max(a, b);
    return mx + std::log(std::exp(a - mx) + std::exp(b - mx));
}

inline double gaussian_logpdf(double x, double mean, double variance) {
    const double d = x - mean;
    return -0.5 * (kLogTwoPi + std::log(variance) + d * d / variance);
}

/// Inverse standard normal CDF (Acklam's rational approximation,
/// relative error < 1.2e-9 over (0,1)).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DataError("normal_quantile: p must lie in (0,1)");

    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - p_low) {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

/// Shortest decimal string that reads back to the exact same double.
inline std::string format_double(double value) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

}  // namespace arhmm
