#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "arhmm/common.hpp"
#include "arhmm/model.hpp"

namespace arhmm {

/// Log-space trellis over the effective window [p*, T]. Row r of each table
/// corresponds to t = p* + r.
struct TrellisTables {
    Matrix log_alpha;
    Matrix log_beta;
    double loglik = kNegInf;
};

/// gamma: (T-p*+1) x N smoothing posteriors; xi[r]: N x N pairwise posteriors
/// for the transition t = p*+r -> p*+r+1.
struct PosteriorTables {
    Matrix gamma;
    std::vector<Matrix> xi;
};

struct ViterbiResult {
    std::vector<std::size_t> path;  // states over [p*, T]
    double log_score = kNegInf;
};

namespace detail {

inline std::size_t effective_length(const Model& model, const Dataset& data) {
    if (data.n_vars() != model.n_vars) throw DataError("dataset/model variable count mismatch");
    if (data.length() <= model.max_lag)
        throw DataError("series too short: need more than p* = " + std::to_string(model.max_lag) +
                        " observations");
    return data.length() - model.max_lag;
}

inline Matrix log_transition(const Model& model) {
    Matrix la(model.n_states, model.n_states);
    for (std::size_t i = 0; i < model.n_states; ++i)
        for (std::size_t j = 0; j < model.n_states; ++j) la(i, j) = std::log(model.transition(i, j));
    return la;
}

}  // namespace detail

/// (T-p*+1) x N table of ln b_i^{p*}(x^t). Per-variable constants are hoisted
/// out of the time loop.
inline Matrix emission_log_table(const Model& model, const Dataset& data) {
    const std::size_t t_eff = detail::effective_length(model, data);
    Matrix lb(t_eff, model.n_states, 0.0);
    for (std::size_t i = 0; i < model.n_states; ++i) {
        const StateStructure& s = model.structures[i];
        for (std::size_t m = 0; m < model.n_vars; ++m) {
            const std::vector<double>& c = model.coeffs[i][m];
            const std::size_t k = s.parents[m].size();
            const double var = model.variances[i][m];
            const double base = -0.5 * (kLogTwoPi + std::log(var));
            const double inv2 = 0.5 / var;
            for (std::size_t r = 0; r < t_eff; ++r) {
                const std::size_t t = model.max_lag + r;
                double f = c[0];
                for (std::size_t j = 0; j < k; ++j) f += c[1 + j] * data.values(t, s.parents[m][j]);
                for (std::size_t lag = 1; lag <= s.lags[m]; ++lag)
                    f += c[k + lag] * data.values(t - lag, m);
                const double d = data.values(t, m) - f;
                lb(r, i) += base - d * d * inv2;
            }
        }
    }
    return lb;
}

/// Forward recursion on a precomputed emission table.
/// log_alpha[0][i] = ln pi_i + ln b_i(x^{p*}); loglik = logsumexp_i log_alpha[T][i].
inline TrellisTables forward_from_emissions(const Model& model, const Matrix& log_b) {
    const std::size_t t_eff = log_b.rows();
    const std::size_t n = model.n_states;
    const Matrix log_a = detail::log_transition(model);

    TrellisTables out;
    out.log_alpha = Matrix(t_eff, n);
    for (std::size_t i = 0; i < n; ++i)
        out.log_alpha(0, i) = std::log(model.initial[i]) + log_b(0, i);

    std::vector<double> tmp(n);
    for (std::size_t r = 1; r < t_eff; ++r) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) tmp[j] = out.log_alpha(r - 1, j) + log_a(j, i);
            out.log_alpha(r, i) = log_sum_exp(tmp) + log_b(r, i);
        }
    }
    out.loglik = log_sum_exp(out.log_alpha.row(t_eff - 1));
    return out;
}

/// Backward recursion on a precomputed emission table; log_beta[T][.] = 0.
inline Matrix backward_from_emissions(const Model& model, const Matrix& log_b) {
    const std::size_t t_eff = log_b.rows();
    const std::size_t n = model.n_states;
    const Matrix log_a = detail::log_transition(model);

    Matrix log_beta(t_eff, n, 0.0);
    std::vector<double> tmp(n);
    for (std::size_t r = t_eff - 1; r-- > 0;) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j)
                tmp[j] = log_beta(r + 1, j) + log_b(r + 1, j) + log_a(i, j);
            log_beta(r, i) = log_sum_exp(tmp);
        }
    }
    return log_beta;
}

inline TrellisTables forward(const Model& model, const Dataset& data) {
    return forward_from_emissions(model, emission_log_table(model, data));
}

inline Matrix backward(const Model& model, const Dataset& data) {
    return backward_from_emissions(model, emission_log_table(model, data));
}

inline TrellisTables trellis_tables(const Model& model, const Dataset& data) {
    const Matrix log_b = emission_log_table(model, data);
    TrellisTables out = forward_from_emissions(model, log_b);
    out.log_beta = backward_from_emissions(model, log_b);
    return out;
}

/// LL(lambda) = ln P(x^{p*:T} | x^{0:p*-1}, lambda).
inline double loglikelihood(const Model& model, const Dataset& data) {
    return forward(model, data).loglik;
}

/// E-step tables from an existing trellis. gamma rows are normalized by their
/// own logsumexp; each xi slice by its own, so both renormalizations absorb
/// the same rounding.
inline PosteriorTables posteriors_from(const Model& model, const Matrix& log_b,
                                       const TrellisTables& trellis) {
    const std::size_t t_eff = log_b.rows();
    const std::size_t n = model.n_states;
    const Matrix log_a = detail::log_transition(model);

    PosteriorTables post;
    post.gamma = Matrix(t_eff, n);
    std::vector<double> tmp(n);
    for (std::size_t r = 0; r < t_eff; ++r) {
        for (std::size_t i = 0; i < n; ++i) tmp[i] = trellis.log_alpha(r, i) + trellis.log_beta(r, i);
        const double norm = log_sum_exp(tmp);
        for (std::size_t i = 0; i < n; ++i) post.gamma(r, i) = std::exp(tmp[i] - norm);
    }

    post.xi.reserve(t_eff == 0 ? 0 : t_eff - 1);
    std::vector<double> flat(n * n);
    for (std::size_t r = 0; r + 1 < t_eff; ++r) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                flat[i * n + j] = trellis.log_alpha(r, i) + log_a(i, j) + log_b(r + 1, j) +
                                  trellis.log_beta(r + 1, j);
            }
        }
        const double norm = log_sum_exp(flat);
        Matrix slice(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) slice(i, j) = std::exp(flat[i * n + j] - norm);
        post.xi.push_back(std::move(slice));
    }
    return post;
}

inline PosteriorTables posteriors(const Model& model, const Dataset& data) {
    const Matrix log_b = emission_log_table(model, data);
    TrellisTables trellis = forward_from_emissions(model, log_b);
    trellis.log_beta = backward_from_emissions(model, log_b);
    return posteriors_from(model, log_b, trellis);
}

/// Max-product decoding on a precomputed emission table. Ties resolve toward
/// the lowest state index, both in psi and in the terminal argmax.
inline ViterbiResult viterbi_from_emissions(const Model& model, const Matrix& log_b) {
    const std::size_t t_eff = log_b.rows();
    const std::size_t n = model.n_states;
    const Matrix log_a = detail::log_transition(model);

    Matrix delta(t_eff, n);
    std::vector<std::vector<std::size_t>> psi(t_eff, std::vector<std::size_t>(n, 0));
    for (std::size_t i = 0; i < n; ++i) delta(0, i) = std::log(model.initial[i]) + log_b(0, i);

    for (std::size_t r = 1; r < t_eff; ++r) {
        bool any_finite = false;
        for (std::size_t i = 0; i < n; ++i) {
            double best = kNegInf;
            std::size_t arg = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const double v = delta(r - 1, j) + log_a(j, i);
                if (v > best) {
                    best = v;
                    arg = j;
                }
            }
            delta(r, i) = best + log_b(r, i);
            psi[r][i] = arg;
            any_finite = any_finite || std::isfinite(delta(r, i));
        }
        if (!any_finite)
            throw NumericError("viterbi: no reachable state at t = " +
                               std::to_string(model.max_lag + r));
    }

    ViterbiResult out;
    out.path.resize(t_eff);
    double best = kNegInf;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (delta(t_eff - 1, i) > best) {
            best = delta(t_eff - 1, i);
            arg = i;
        }
    }
    if (best == kNegInf) throw NumericError("viterbi: no reachable state at t = " +
                                            std::to_string(model.max_lag + t_eff - 1));
    out.log_score = best;
    out.path[t_eff - 1] = arg;
    for (std::size_t r = t_eff - 1; r-- > 0;) out.path[r] = psi[r + 1][out.path[r + 1]];
    return out;
}

inline ViterbiResult viterbi(const Model& model, const Dataset& data) {
    return viterbi_from_emissions(model, emission_log_table(model, data));
}

}  // namespace arhmm
