#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "arhmm/common.hpp"
#include "arhmm/model.hpp"

namespace arhmm {

/// Starting model for training: uniform A and pi, naive per-state graphs with
/// no AR terms, intercepts spread evenly over each column's observed range
/// (beta_im0 = i (max-min)/(N+1) + min, i = 1..N) and wide variances
/// sigma^2 = 2 (max-min). A constant column falls back to the variance floor.
inline Model init_model(const Dataset& data, std::size_t n_states, std::size_t max_lag,
                        std::vector<std::string>* warnings = nullptr) {
    if (n_states == 0) throw DataError("init_model: need at least one hidden state");
    if (data.length() <= max_lag) throw DataError("init_model: series shorter than the p* window");

    Model model;
    model.n_states = n_states;
    model.n_vars = data.n_vars();
    model.max_lag = max_lag;
    model.transition = Matrix(n_states, n_states, 1.0 / static_cast<double>(n_states));
    model.initial.assign(n_states, 1.0 / static_cast<double>(n_states));
    model.structures.assign(n_states, StateStructure::naive(data.n_vars()));
    model.coeffs.assign(n_states, std::vector<std::vector<double>>(data.n_vars()));
    model.variances.assign(n_states, std::vector<double>(data.n_vars()));

    for (std::size_t m = 0; m < data.n_vars(); ++m) {
        double lo = data.values(0, m), hi = data.values(0, m);
        for (std::size_t t = 1; t < data.length(); ++t) {
            lo = std::min(lo, data.values(t, m));
            hi = std::max(hi, data.values(t, m));
        }
        const double range = hi - lo;
        double variance = 2.0 * range;
        if (!(variance >= kMinVariance)) {
            variance = kMinVariance;
            if (warnings)
                warnings->push_back("column " + (m < data.names.size() ? data.names[m]
                                                                       : std::to_string(m + 1)) +
                                    " is constant: variance floored");
        }
        for (std::size_t i = 0; i < n_states; ++i) {
            const double intercept =
                static_cast<double>(i + 1) * range / static_cast<double>(n_states + 1) + lo;
            model.coeffs[i][m] = {intercept};
            model.variances[i][m] = variance;
        }
    }
    validate_model(model);
    return model;
}

}  // namespace arhmm
