#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "arhmm/common.hpp"
#include "arhmm/model.hpp"
#include "arhmm/solve.hpp"

namespace arhmm {

/// Mean-centered sample autocovariance at lag k, divisor T (biased; keeps the
/// Yule-Walker Toeplitz matrix positive semidefinite).
inline double autocovariance(std::span<const double> series, std::size_t k) {
    const std::size_t t = series.size();
    if (t <= k) throw DataError("autocovariance: series length must exceed the lag");
    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= static_cast<double>(t);
    double acc = 0.0;
    for (std::size_t s = k; s < t; ++s) acc += (series[s] - mean) * (series[s - k] - mean);
    return acc / static_cast<double>(t);
}

/// rho_k = zeta_k / zeta_0. A constant series has no defined correlation.
inline double autocorrelation(std::span<const double> series, std::size_t k) {
    const double zeta0 = autocovariance(series, 0);
    if (!(zeta0 > 0.0)) throw DataError("autocorrelation: series is constant");
    if (k == 0) return 1.0;
    return autocovariance(series, k) / zeta0;
}

/// Partial correlogram Phi(1..kmax): for each k, solve the k x k Yule-Walker
/// Toeplitz system in the sample autocorrelations and keep the last
/// coefficient phi_kk.
inline std::vector<double> pacf(std::span<const double> series, std::size_t kmax) {
    if (kmax < 1) throw DataError("pacf: kmax must be at least 1");
    std::vector<double> rho(kmax + 1);
    for (std::size_t k = 0; k <= kmax; ++k) rho[k] = autocorrelation(series, k);

    std::vector<double> phi(kmax);
    for (std::size_t k = 1; k <= kmax; ++k) {
        Matrix r(k, k);
        std::vector<double> rhs(k);
        for (std::size_t a = 0; a < k; ++a) {
            rhs[a] = rho[a + 1];
            for (std::size_t b = 0; b < k; ++b)
                r(a, b) = rho[static_cast<std::size_t>(a > b ? a - b : b - a)];
        }
        auto sol = gauss_jordan_solve(std::move(r), std::move(rhs));
        if (!sol)
            throw NumericError("pacf: Yule-Walker system singular at lag " + std::to_string(k));
        phi[k - 1] = sol->back();
    }
    return phi;
}

/// Levinson-Durbin recursion over the same autocorrelations; the reflection
/// coefficients equal the Yule-Walker phi_kk. Kept as an independent route
/// for cross-checking the Toeplitz solves.
inline std::vector<double> pacf_levinson(std::span<const double> series, std::size_t kmax) {
    if (kmax < 1) throw DataError("pacf_levinson: kmax must be at least 1");
    std::vector<double> rho(kmax + 1);
    for (std::size_t k = 0; k <= kmax; ++k) rho[k] = autocorrelation(series, k);

    std::vector<double> phi(kmax);
    std::vector<double> a(kmax + 1, 0.0);
    double err = 1.0;  // rho_0 after normalization
    for (std::size_t k = 1; k <= kmax; ++k) {
        if (!(err > 0.0))
            throw NumericError("pacf_levinson: degenerate prediction error at lag " +
                               std::to_string(k));
        double acc = rho[k];
        for (std::size_t j = 1; j < k; ++j) acc -= a[j] * rho[k - j];
        const double refl = acc / err;
        std::vector<double> next(a);
        next[k] = refl;
        for (std::size_t j = 1; j < k; ++j) next[j] = a[j] - refl * a[k - j];
        a = std::move(next);
        err *= 1.0 - refl * refl;
        phi[k - 1] = refl;
    }
    return phi;
}

/// Correlogram, partial correlogram, the N(0, 1/T) critical value, and the
/// selected AR order for one series.
struct PacfReport {
    std::vector<double> rho;     // rho_1 .. rho_kmax
    std::vector<double> phi_kk;  // Phi(1) .. Phi(kmax)
    double critical = 0.0;       // z_{1-alpha/2} * T^{-1/2}
    std::size_t order = 0;       // largest significant lag, 0 if none
};

inline PacfReport analyze_lags(std::span<const double> series, std::size_t kmax, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DataError("alpha must lie in (0,1)");
    PacfReport report;
    report.rho.resize(kmax);
    for (std::size_t k = 1; k <= kmax; ++k) report.rho[k - 1] = autocorrelation(series, k);
    report.phi_kk = pacf(series, kmax);
    report.critical =
        normal_quantile(1.0 - alpha / 2.0) / std::sqrt(static_cast<double>(series.size()));
    for (std::size_t k = kmax; k >= 1; --k) {
        if (std::abs(report.phi_kk[k - 1]) > report.critical) {
            report.order = k;
            break;
        }
    }
    return report;
}

/// Largest k in [1, kmax] whose |Phi(k)| exceeds the white-noise critical
/// value; 0 when none does.
inline std::size_t select_order(std::span<const double> series, std::size_t kmax, double alpha) {
    return analyze_lags(series, kmax, alpha).order;
}

/// p* = max_m p*_m over the dataset's columns.
inline std::size_t select_model_max_lag(const Dataset& data, std::size_t kmax, double alpha) {
    std::size_t p_star = 0;
    for (std::size_t m = 0; m < data.n_vars(); ++m) {
        const std::vector<double> col = data.column(m);
        p_star = std::max(p_star, select_order(col, kmax, alpha));
    }
    return p_star;
}

}  // namespace arhmm
