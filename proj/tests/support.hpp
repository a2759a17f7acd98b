#pragma once

#include "medimux/simulation.hpp"

#include <cmath>
#include <vector>

namespace medimux::test {

// Observed sample of n rows drawn from a freshly generated table of `rows`.
inline Dataset sample_from(const SimulationModelSpec& spec, std::size_t n, std::uint64_t seed,
                           std::size_t rows = 0) {
    const CounterfactualTable table = generate_counterfactual_table(spec, rows ? rows : n, seed);
    return extract_observed(table, n, seed + 1);
}

inline double sample_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_sd(const std::vector<double>& v) {
    const double m = sample_mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace medimux::test
