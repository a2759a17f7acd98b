#pragma once

#include "medimux/dataset.hpp"
#include "medimux/regression.hpp"
#include "medimux/rng.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace medimux {

struct EffectSummary {
    double estimate = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double p_value = 1.0;

    bool covers(double value) const { return ci_low <= value && value <= ci_high; }
};

struct NamedEffect {
    std::string name;
    EffectSummary summary;
};

// Effect names, with k the 1-based mediator id and t in {0, 1}:
//   delta_k(t), delta_k, delta_Z(t), delta_Z, zeta(t), zeta, tau, PM_k, PM_Z
// Unsuffixed delta/zeta are the averages over t.
struct EffectEstimates {
    std::vector<NamedEffect> effects;
    std::vector<int> mediator_ids;
    std::size_t n_draws = 0;
    std::size_t n_sims = 0;
    double ci_level = 0.95;
    std::uint64_t seed = 0;
    Family family = Family::Linear;
    // Set when the tau draws do not all share a sign; PM intervals are then
    // not meaningful.
    bool degenerate_total_effect = false;
    bool outcome_converged = true;

    const EffectSummary& at(std::string_view name) const;
    bool contains(std::string_view name) const;
};

std::string delta_name(int mediator_id, int t);
std::string delta_name(int mediator_id);
std::string pm_name(int mediator_id);

// Per-replication effect values, one entry per parameter draw.
struct DrawEffects {
    std::array<Eigen::MatrixXd, 2> delta;  // [t] is R x K
    std::array<Eigen::MatrixXd, 2> eta;    // [t] is R x K
    std::array<Eigen::VectorXd, 2> delta_joint;
    std::array<Eigen::VectorXd, 2> zeta;
    Eigen::VectorXd tau;

    void resize(Eigen::Index n_draws, Eigen::Index n_mediators);
    Eigen::Index n_draws() const { return tau.size(); }
    Eigen::Index n_mediators() const { return delta[0].cols(); }
};

// Largest absolute violation, over all draws, of
//   tau - delta_Z(1) - zeta(0), tau - delta_Z(0) - zeta(1) and
//   delta_Z(t) - (1/K) sum_k (delta_k(t) + eta_k(t)).
double max_identity_residual(const DrawEffects& draws);

// Potential mediators for I simulated individuals. Each individual gets one
// residual vector, shared by both treatment arms.
struct MediatorBlock {
    Eigen::MatrixXd z0;  // I x K, Z(0)
    Eigen::MatrixXd z1;  // I x K, Z(1)

    // (M^k(t_k), W^k(t_rest)): column k from arm t_k, the others from t_rest.
    Eigen::MatrixXd mixed(Eigen::Index k, int t_k, int t_rest) const;
    const Eigen::MatrixXd& arm(int t) const { return t == 0 ? z0 : z1; }
};

MediatorBlock simulate_potential_mediators(const ParameterDraw& draw,
                                           const Eigen::MatrixXd& covariate_rows,
                                           CounterStream& rng);

// Model-implied expected outcome for each row under treatment t. No Bernoulli
// noise is added for binary families.
Eigen::VectorXd simulate_potential_outcomes(const ParameterDraw& draw, int t,
                                            const Eigen::MatrixXd& mediators,
                                            const Eigen::MatrixXd& covariate_rows);

struct EstimateOptions {
    std::size_t n_draws = 1000;
    std::size_t n_sims = 1000;
    double ci_level = 0.95;
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

struct MediationResult {
    EffectEstimates estimates;
    DrawEffects draws;
    MediatorSystemFit mediator_fit;
    OutcomeFit outcome_fit;
};

// Quasi-Bayesian estimation: fit both models, draw R parameter sets, simulate
// I individuals per draw and average the effect contrasts, then summarize.
// Output is identical for any thread count.
MediationResult estimate_effects(const Dataset& data, Family family,
                                 const EstimateOptions& options);

// Effects for already sampled draws (step 3 only). Draw r resamples its
// covariate rows and residuals from substream r of `seed`.
DrawEffects compute_draw_effects(const Dataset& data, std::span<const ParameterDraw> draws,
                                 std::size_t n_sims, std::uint64_t seed, unsigned threads);

// Empirical quantile with linear interpolation between order statistics at
// position p * (n - 1) (0-based). `sorted` must be ascending.
double interpolated_quantile(std::span<const double> sorted, double p);

// Two-sided p-value 2 * min(#{<= 0}, #{>= 0}) / R, floored at 2 / R.
double empirical_p_value(std::span<const double> values);

EffectSummary summarize_values(std::span<const double> values, double ci_level);

EffectEstimates summarize(const DrawEffects& draws, double ci_level,
                          std::span<const int> mediator_ids = {});

}  // namespace medimux
