#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "arhmm/common.hpp"
#include "arhmm/inference.hpp"
#include "arhmm/model.hpp"
#include "arhmm/solve.hpp"

namespace arhmm {

struct EmReport {
    std::vector<double> ll_trace;  // LL(lambda^(0)), LL(lambda^(1)), ...
    std::size_t iterations = 0;
    bool converged = false;
    bool used_ridge = false;
    std::vector<std::string> warnings;
};

struct EmFit {
    Model model;
    EmReport report;
};

struct WlsSolution {
    std::vector<double> coeffs;
    bool used_ridge = false;
};

/// pi*_i = gamma^{p*}(i).
inline std::vector<double> update_initial(const PosteriorTables& post) {
    std::vector<double> pi(post.gamma.cols());
    for (std::size_t i = 0; i < pi.size(); ++i) pi[i] = post.gamma(0, i);
    return pi;
}

/// a*_ij = sum_t xi^t(i,j) / sum_t gamma^t(i) over t in [p*, T-1]. A starved
/// state (zero posterior mass) gets a uniform row and a warning.
inline Matrix update_transition(const PosteriorTables& post,
                                std::vector<std::string>* warnings = nullptr) {
    const std::size_t n = post.gamma.cols();
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double denom = 0.0;
        for (std::size_t r = 0; r < post.xi.size(); ++r) denom += post.gamma(r, i);
        if (!(denom > 1e-12)) {
            for (std::size_t j = 0; j < n; ++j) a(i, j) = 1.0 / static_cast<double>(n);
            if (warnings)
                warnings->push_back("state " + std::to_string(i + 1) +
                                    " starved: transition row reset to uniform");
            continue;
        }
        double row_sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double num = 0.0;
            for (std::size_t r = 0; r < post.xi.size(); ++r) num += post.xi[r](i, j);
            a(i, j) = num / denom;
            row_sum += a(i, j);
        }
        for (std::size_t j = 0; j < n; ++j) a(i, j) /= row_sum;
    }
    return a;
}

/// Regressor rows [1, u_im1..u_imk, x_m^{t-1}..x_m^{t-p_im}] for t in [p*, T].
inline Matrix regressor_matrix(const Dataset& data, const StateStructure& s, std::size_t m,
                               std::size_t max_lag) {
    if (data.length() <= max_lag) throw DataError("series shorter than the p* window");
    const std::size_t t_eff = data.length() - max_lag;
    const std::size_t k = s.parents[m].size();
    const std::size_t dim = 1 + k + s.lags[m];
    Matrix reg(t_eff, dim);
    for (std::size_t r = 0; r < t_eff; ++r) {
        const std::size_t t = max_lag + r;
        reg(r, 0) = 1.0;
        for (std::size_t j = 0; j < k; ++j) reg(r, 1 + j) = data.values(t, s.parents[m][j]);
        for (std::size_t lag = 1; lag <= s.lags[m]; ++lag) reg(r, k + lag) = data.values(t - lag, m);
    }
    return reg;
}

/// Solve the weighted normal equations (R' W R) c = R' W y by Gauss-Jordan.
/// A singular system is retried once with ridge 1e-8 * trace/dim on the
/// diagonal; failure after that raises NumericError.
inline WlsSolution solve_weighted_normal_equations(std::span<const double> weights,
                                                   std::span<const double> responses,
                                                   const Matrix& regressors) {
    const std::size_t rows = regressors.rows();
    const std::size_t dim = regressors.cols();
    if (weights.size() != rows || responses.size() != rows)
        throw DataError("weighted normal equations: row count mismatch");
    double wsum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw DataError("weighted normal equations: negative weight");
        wsum += w;
    }
    if (!(wsum > 0.0)) throw DataError("weighted normal equations: weights are all zero");

    Matrix a(dim, dim);
    std::vector<double> b(dim, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double w = weights[r];
        if (w == 0.0) continue;
        for (std::size_t p = 0; p < dim; ++p) {
            const double wrp = w * regressors(r, p);
            b[p] += wrp * responses[r];
            for (std::size_t q = p; q < dim; ++q) a(p, q) += wrp * regressors(r, q);
        }
    }
    for (std::size_t p = 0; p < dim; ++p)
        for (std::size_t q = 0; q < p; ++q) a(p, q) = a(q, p);

    WlsSolution sol;
    if (auto x = gauss_jordan_solve(a, b)) {
        sol.coeffs = std::move(*x);
        return sol;
    }
    double trace = 0.0;
    for (std::size_t p = 0; p < dim; ++p) trace += a(p, p);
    const double ridge = 1e-8 * std::max(trace / static_cast<double>(dim), 1.0);
    for (std::size_t p = 0; p < dim; ++p) a(p, p) += ridge;
    if (auto x = gauss_jordan_solve(a, b)) {
        sol.coeffs = std::move(*x);
        sol.used_ridge = true;
        return sol;
    }
    throw NumericError("weighted normal equations singular even after ridge regularization");
}

/// (sigma^2)* = sum_t w_t (y_t - f_t)^2 / sum_t w_t, floored from below.
inline double update_variance(std::span<const double> weights, std::span<const double> responses,
                              std::span<const double> fitted, double floor = kMinVariance) {
    if (weights.size() != responses.size() || weights.size() != fitted.size())
        throw DataError("update_variance: length mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t r = 0; r < weights.size(); ++r) {
        const double d = responses[r] - fitted[r];
        num += weights[r] * d * d;
        den += weights[r];
    }
    if (!(den > 0.0)) throw DataError("update_variance: weights are all zero");
    return std::max(num / den, floor);
}

/// Per-column variance floor: max(1e-9, 1e-12 * sample variance of X_m).
inline std::vector<double> variance_floors(const Dataset& data) {
    std::vector<double> floors(data.n_vars());
    const double t = static_cast<double>(data.length());
    for (std::size_t m = 0; m < data.n_vars(); ++m) {
        double mean = 0.0;
        for (std::size_t r = 0; r < data.length(); ++r) mean += data.values(r, m);
        mean /= t;
        double var = 0.0;
        for (std::size_t r = 0; r < data.length(); ++r) {
            const double d = data.values(r, m) - mean;
            var += d * d;
        }
        var /= t;
        floors[m] = std::max(kMinVariance, 1e-12 * var);
    }
    return floors;
}

namespace detail {

inline Model em_update(const Model& model, const Dataset& data, const PosteriorTables& post,
                       const std::vector<double>& floors, EmReport* report) {
    Model next = model;
    next.initial = update_initial(post);
    next.transition = update_transition(post, report ? &report->warnings : nullptr);

    const std::size_t t_eff = post.gamma.rows();
    std::vector<double> weights(t_eff), responses(t_eff), fitted(t_eff);
    for (std::size_t i = 0; i < model.n_states; ++i) {
        for (std::size_t r = 0; r < t_eff; ++r) weights[r] = post.gamma(r, i);
        double wsum = 0.0;
        for (double w : weights) wsum += w;
        if (!(wsum > 1e-12)) {
            if (report)
                report->warnings.push_back("state " + std::to_string(i + 1) +
                                           " starved: emission parameters kept");
            continue;
        }
        for (std::size_t m = 0; m < model.n_vars; ++m) {
            for (std::size_t r = 0; r < t_eff; ++r)
                responses[r] = data.values(model.max_lag + r, m);
            const Matrix reg = regressor_matrix(data, model.structures[i], m, model.max_lag);
            WlsSolution sol;
            try {
                sol = solve_weighted_normal_equations(weights, responses, reg);
            } catch (const NumericError& e) {
                throw NumericError("state " + std::to_string(i + 1) + ", variable " +
                                   std::to_string(m + 1) + ": " + e.what());
            }
            if (sol.used_ridge && report) {
                report->used_ridge = true;
                report->warnings.push_back("state " + std::to_string(i + 1) + ", variable " +
                                           std::to_string(m + 1) +
                                           ": singular normal equations, ridge applied");
            }
            for (std::size_t r = 0; r < t_eff; ++r) {
                double f = 0.0;
                for (std::size_t p = 0; p < reg.cols(); ++p) f += reg(r, p) * sol.coeffs[p];
                fitted[r] = f;
            }
            next.coeffs[i][m] = std::move(sol.coeffs);
            next.variances[i][m] = update_variance(weights, responses, fitted, floors[m]);
        }
    }
    return next;
}

}  // namespace detail

/// One EM iteration (E step + full M step) with the structure held fixed.
inline Model em_step(const Model& model, const Dataset& data) {
    const Matrix log_b = emission_log_table(model, data);
    TrellisTables trellis = forward_from_emissions(model, log_b);
    trellis.log_beta = backward_from_emissions(model, log_b);
    const PosteriorTables post = posteriors_from(model, log_b, trellis);
    return detail::em_update(model, data, post, variance_floors(data), nullptr);
}

/// Iterate EM until |dLL| < rel_tol * |LL| or max_iter. A non-finite
/// log-likelihood aborts the run and returns the last good model.
inline EmFit fit_em(const Model& model, const Dataset& data, double rel_tol = 1e-6,
                    std::size_t max_iter = 200) {
    if (!(rel_tol > 0.0)) throw DataError("fit_em: rel_tol must be positive");
    const std::vector<double> floors = variance_floors(data);

    EmFit fit{model, {}};
    Matrix log_b = emission_log_table(fit.model, data);
    TrellisTables trellis = forward_from_emissions(fit.model, log_b);
    trellis.log_beta = backward_from_emissions(fit.model, log_b);
    double ll_prev = trellis.loglik;
    fit.report.ll_trace.push_back(ll_prev);
    if (!std::isfinite(ll_prev))
        throw NumericError("fit_em: initial log-likelihood is not finite");

    for (std::size_t s = 1; s <= max_iter; ++s) {
        const PosteriorTables post = posteriors_from(fit.model, log_b, trellis);
        Model next = detail::em_update(fit.model, data, post, floors, &fit.report);

        log_b = emission_log_table(next, data);
        trellis = forward_from_emissions(next, log_b);
        trellis.log_beta = backward_from_emissions(next, log_b);
        const double ll = trellis.loglik;
        if (!std::isfinite(ll)) {
            fit.report.warnings.push_back("non-finite log-likelihood at iteration " +
                                          std::to_string(s) + "; keeping previous model");
            return fit;
        }
        fit.model = std::move(next);
        fit.report.ll_trace.push_back(ll);
        fit.report.iterations = s;
        if (std::abs(ll - ll_prev) < rel_tol * std::abs(ll)) {
            fit.report.converged = true;
            break;
        }
        ll_prev = ll;
    }
    return fit;
}

}  // namespace arhmm
