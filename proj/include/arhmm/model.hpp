#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "arhmm/common.hpp"

namespace arhmm {

/// One hidden state's context-specific structure: a DAG over the observed
/// variables plus a per-variable autoregressive order.
struct StateStructure {
    std::vector<std::vector<std::size_t>> parents;  // parents[m]: ordered parent indices of X_m
    std::vector<std::size_t> lags;                  // lags[m]: own-lag count p_im

    static StateStructure naive(std::size_t n_vars) {
        StateStructure s;
        s.parents.assign(n_vars, {});
        s.lags.assign(n_vars, 0);
        return s;
    }
};

/// Kahn's method over the parent graph {u -> m : u in parents[m]}; ties
/// resolved toward the lowest variable index. Nullopt when cyclic.
inline std::optional<std::vector<std::size_t>> try_topological_order(const StateStructure& s) {
    const std::size_t n = s.parents.size();
    std::vector<std::size_t> indegree(n);
    for (std::size_t m = 0; m < n; ++m) indegree[m] = s.parents[m].size();

    std::vector<std::size_t> order;
    std::vector<bool> emitted(n, false);
    order.reserve(n);
    while (order.size() < n) {
        std::size_t next = n;
        for (std::size_t m = 0; m < n; ++m) {
            if (!emitted[m] && indegree[m] == 0) {
                next = m;
                break;
            }
        }
        if (next == n) return std::nullopt;
        emitted[next] = true;
        order.push_back(next);
        for (std::size_t m = 0; m < n; ++m) {
            if (emitted[m]) continue;
            for (std::size_t u : s.parents[m]) {
                if (u == next) --indegree[m];
            }
        }
    }
    return order;
}

inline std::vector<std::size_t> topological_order(const StateStructure& s) {
    auto order = try_topological_order(s);
    if (!order) throw DataError("state structure contains a cycle");
    return *order;
}

inline bool is_acyclic(const StateStructure& s) { return try_topological_order(s).has_value(); }

/// Multivariate time series x^{0:T}: a (T+1) x M value matrix plus column labels.
struct Dataset {
    Matrix values;
    std::vector<std::string> names;

    std::size_t length() const { return values.rows(); }  // T + 1
    std::size_t n_vars() const { return values.cols(); }

    bool has_missing() const {
        for (double v : values.data()) {
            if (std::isnan(v)) return true;
        }
        return false;
    }

    std::vector<double> column(std::size_t m) const {
        std::vector<double> col(values.rows());
        for (std::size_t t = 0; t < values.rows(); ++t) col[t] = values(t, m);
        return col;
    }
};

/// Full AR-AsLG-HMM parameter set: chain parameters (A, pi), per-state
/// context-specific structures, and per-(state, variable) regression
/// coefficients [beta_0, beta_1..beta_k, eta_1..eta_p] with variance.
struct Model {
    std::size_t n_states = 0;
    std::size_t n_vars = 0;
    std::size_t max_lag = 0;  // p*: emissions at t condition on x^{t-p*:t-1}

    Matrix transition;            // N x N row-stochastic
    std::vector<double> initial;  // distribution of Q^{p*}

    std::vector<StateStructure> structures;                // N entries
    std::vector<std::vector<std::vector<double>>> coeffs;  // [state][var]
    std::vector<std::vector<double>> variances;            // [state][var]

    friend bool operator==(const Model&, const Model&) = default;
};

inline constexpr double kMinVariance = 1e-9;

inline void validate_model(const Model& model) {
    const std::size_t n = model.n_states;
    const std::size_t m_vars = model.n_vars;
    if (n == 0 || m_vars == 0) throw DataError("model: n_states and n_vars must be positive");
    if (model.transition.rows() != n || model.transition.cols() != n)
        throw DataError("model: transition matrix must be N x N");
    if (model.initial.size() != n) throw DataError("model: initial vector must have N entries");
    if (model.structures.size() != n || model.coeffs.size() != n || model.variances.size() != n)
        throw DataError("model: per-state containers must have N entries");

    constexpr double tol = 1e-12;
    for (std::size_t i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double a = model.transition(i, j);
            if (!(a >= 0.0)) throw DataError("model: negative transition probability");
            row_sum += a;
        }
        if (std::abs(row_sum - 1.0) > tol) throw DataError("model: transition row does not sum to 1");
    }
    double pi_sum = 0.0;
    for (double p : model.initial) {
        if (!(p >= 0.0)) throw DataError("model: negative initial probability");
        pi_sum += p;
    }
    if (std::abs(pi_sum - 1.0) > tol) throw DataError("model: initial distribution does not sum to 1");

    for (std::size_t i = 0; i < n; ++i) {
        const StateStructure& s = model.structures[i];
        if (s.parents.size() != m_vars || s.lags.size() != m_vars)
            throw DataError("model: structure size mismatch");
        if (model.coeffs[i].size() != m_vars || model.variances[i].size() != m_vars)
            throw DataError("model: coefficient container size mismatch");
        for (std::size_t m = 0; m < m_vars; ++m) {
            if (s.lags[m] > model.max_lag) throw DataError("model: p_im exceeds max_lag");
            std::vector<bool> seen(m_vars, false);
            for (std::size_t u : s.parents[m]) {
                if (u >= m_vars) throw DataError("model: parent index out of range");
                if (u == m) throw DataError("model: variable listed as its own parent");
                if (seen[u]) throw DataError("model: duplicate parent");
                seen[u] = true;
            }
            if (model.coeffs[i][m].size() != 1 + s.parents[m].size() + s.lags[m])
                throw DataError("model: coefficient vector length mismatch");
            if (!(model.variances[i][m] >= kMinVariance))
                throw DataError("model: variance below floor");
        }
        if (!is_acyclic(s)) throw DataError("model: context-specific graph is cyclic");
    }
}

namespace detail {

inline void check_window(const Model& model, const Dataset& data, std::size_t t) {
    if (t < model.max_lag) throw DataError("time index precedes the p* conditioning window");
    if (t >= data.length()) throw DataError("time index past the end of the series");
}

}  // namespace detail

/// Linear-Gaussian mean f_im^t = beta . pa_im^t + eta . d_im^t.
inline double emission_mean(const Model& model, std::size_t state, std::size_t m,
                            const Dataset& data, std::size_t t) {
    const StateStructure& s = model.structures[state];
    const std::vector<double>& c = model.coeffs[state][m];
    const std::size_t k = s.parents[m].size();
    double f = c[0];
    for (std::size_t j = 0; j < k; ++j) f += c[1 + j] * data.values(t, s.parents[m][j]);
    for (std::size_t r = 1; r <= s.lags[m]; ++r) f += c[k + r] * data.values(t - r, m);
    return f;
}

/// Log density of one variable under one state's structural equation.
inline double emission_var_logpdf(const Model& model, std::size_t state, std::size_t m,
                                  const Dataset& data, std::size_t t) {
    detail::check_window(model, data, t);
    return gaussian_logpdf(data.values(t, m), emission_mean(model, state, m, data, t),
                           model.variances[state][m]);
}

/// ln b_i^{p*}(x^t): sum of the per-variable linear-Gaussian log densities.
inline double emission_logpdf(const Model& model, std::size_t state, const Dataset& data,
                              std::size_t t) {
    detail::check_window(model, data, t);
    if (state >= model.n_states) throw DataError("state index out of range");
    double acc = 0.0;
    for (std::size_t m = 0; m < model.n_vars; ++m) {
        acc += gaussian_logpdf(data.values(t, m), emission_mean(model, state, m, data, t),
                               model.variances[state][m]);
    }
    return acc;
}

/// Total number of free parameters: full A, full pi, and per (state, variable)
/// one intercept, k_im parent weights, p_im lag weights, one variance.
inline std::size_t count_parameters(const Model& model) {
    std::size_t count = model.n_states * model.n_states + model.n_states;
    for (std::size_t i = 0; i < model.n_states; ++i) {
        for (std::size_t m = 0; m < model.n_vars; ++m) {
            count += 2 + model.structures[i].parents[m].size() + model.structures[i].lags[m];
        }
    }
    return count;
}

/// ln P(q^{p*:T}, x^{p*:T} | x^{0:p*-1}, lambda) for a fixed state path over
/// [p*, T]. Zero-probability transitions yield -inf rather than an error.
inline double complete_data_loglik(const Model& model, const Dataset& data,
                                   std::span<const std::size_t> path) {
    if (data.length() <= model.max_lag) throw DataError("series shorter than the p* window");
    const std::size_t t_eff = data.length() - model.max_lag;
    if (path.size() != t_eff) throw DataError("state path length must be T - p* + 1");

    double acc = std::log(model.initial[path[0]]);
    for (std::size_t s = 0; s + 1 < path.size(); ++s) {
        acc += std::log(model.transition(path[s], path[s + 1]));
    }
    for (std::size_t s = 0; s < path.size(); ++s) {
        acc += emission_logpdf(model, path[s], data, model.max_lag + s);
    }
    return acc;
}

}  // namespace arhmm
