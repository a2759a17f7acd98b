#pragma once

#include "medimux/closed_form.hpp"
#include "medimux/dataset.hpp"
#include "medimux/engine.hpp"
#include "medimux/regression.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace medimux {

// Pretreatment variable of a simulation model. An unobserved covariate with
// mediator loadings is the latent common cause U of the mediators.
struct CovariateSpec {
    enum class Distribution { Normal, Bernoulli };

    std::string name;
    Distribution distribution = Distribution::Normal;
    double mean = 0.0;  // Normal mean, or Bernoulli success probability
    double sd = 1.0;    // Normal only
    Eigen::VectorXd mediator_loadings;  // K
    double outcome_loading = 0.0;
    bool observed = true;

    double variance() const;
    double expectation() const;
};

// Generative model for counterfactual tables:
//   M^k(t) = a_k + b_k t + sum_p L_kp X_p + eps_k,   eps ~ N(0, residual_cov)
//   Y(t, z) = alpha3 + beta3 t + gamma^T z + xi3^T X + eps3   (linear)
//   P(Y(t, z) = 1) = logistic(alpha3 + beta3 t + gamma^T z + xi3^T X)   (logit)
struct SimulationModelSpec {
    std::string name = "custom";
    double p_treat = 0.5;
    Eigen::VectorXd mediator_intercepts;
    Eigen::VectorXd mediator_slopes;
    Eigen::MatrixXd residual_cov;
    Family family = Family::Linear;
    double outcome_intercept = 0.0;
    double outcome_treatment = 0.0;
    Eigen::VectorXd outcome_mediators;
    double outcome_noise_sd = 1.0;
    std::vector<CovariateSpec> covariates;

    Eigen::Index n_mediators() const { return mediator_intercepts.size(); }
    Eigen::Index n_observed_covariates() const;
    void validate() const;

    // Copy with residual correlation rho between every mediator pair, keeping
    // the residual variances.
    SimulationModelSpec with_correlation(double rho) const;

    // FNV-1a over every numeric field; stable across runs and platforms with
    // IEEE doubles.
    std::uint64_t fingerprint() const;
};

namespace models {

// Continuous outcome: T ~ B(0.3), M ~ N((1 + 4t, 2 + 6t), Sigma),
// Y = 1 + 10t + 5 M1 + 4 M2 + N(0, 1). Sigma has unit variances.
SimulationModelSpec continuous(double correlation);

// Logit outcome: T ~ B(0.3), M ~ N((0.1 + 0.6t, 0.2 + 0.8t), Sigma),
// logit P(Y = 1) = -2 + 0.4t + 0.6 M1 + 0.8 M2.
SimulationModelSpec logistic(double correlation);

// Mediators driven by a common cause U ~ N(0, 1) with loadings (2, 3) and
// unit residual noise; outcome as in `continuous`. U is exported as a
// covariate only when u_observed is set.
SimulationModelSpec latent_common_cause(bool u_observed);

}  // namespace models

// Counterfactual data: every potential mediator plus the stored outcome noise
// needed to evaluate Y(t, M^1(t_1), ..., M^K(t_K)) for any combination.
struct CounterfactualTable {
    Family family = Family::Linear;
    double alpha3 = 0.0;
    double beta3 = 0.0;
    Eigen::VectorXd gamma;              // K
    Eigen::VectorXd covariate_outcome;  // P_all
    std::vector<bool> covariate_observed;
    std::vector<std::string> covariate_names;

    Eigen::VectorXd t;
    Eigen::MatrixXd m0;  // n x K
    Eigen::MatrixXd m1;  // n x K
    Eigen::MatrixXd covariates;  // n x P_all, latent ones included
    // eps3 for the linear family, a U(0, 1) draw for the logit family.
    Eigen::VectorXd noise;

    Eigen::Index n_rows() const { return t.size(); }
    Eigen::Index n_mediators() const { return m0.cols(); }

    // Y(t, M^1(arms[0]), ..., M^K(arms[K-1])) for one row.
    double outcome(Eigen::Index row, int t, std::span<const int> arms) const;
    // Y(t, M^k(t_k), W^k(t_rest)).
    double outcome_mixed(Eigen::Index row, int t, Eigen::Index k, int t_k, int t_rest) const;
    // Y(t, Z(t_all)).
    double outcome_joint(Eigen::Index row, int t, int t_all) const;

private:
    double latent_index(Eigen::Index row, int t, Eigen::Index k, int t_k, int t_rest) const;
    double realize(Eigen::Index row, double eta) const;
};

CounterfactualTable generate_counterfactual_table(const SimulationModelSpec& spec,
                                                  std::size_t n_rows, std::uint64_t seed);

// True effects as plain means of the defining contrasts, with Monte-Carlo
// standard errors (sd of the per-row contrast / sqrt(n)).
struct TruthEffects {
    std::array<Eigen::VectorXd, 2> delta;
    std::array<Eigen::VectorXd, 2> eta;
    std::array<double, 2> delta_joint{};
    std::array<double, 2> zeta{};
    double tau = 0.0;

    std::array<Eigen::VectorXd, 2> delta_se;
    std::array<Eigen::VectorXd, 2> eta_se;
    std::array<double, 2> delta_joint_se{};
    std::array<double, 2> zeta_se{};
    double tau_se = 0.0;
    Eigen::Index n_rows = 0;

    double delta_average(Eigen::Index k) const { return 0.5 * (delta[0](k) + delta[1](k)); }
    double delta_joint_average() const { return 0.5 * (delta_joint[0] + delta_joint[1]); }
    double zeta_average() const { return 0.5 * (zeta[0] + zeta[1]); }
};

TruthEffects monte_carlo_truth(const CounterfactualTable& table);

// Samples n rows without replacement and keeps (T, Z(T), Y(T, Z(T))) plus the
// observed covariates.
Dataset extract_observed(const CounterfactualTable& table, std::size_t n, std::uint64_t seed);

// Single-mediator analysis on mediator k (1-based): the other mediators are
// dropped from both models. Effects are named with id k.
MediationResult simple_analysis(const Dataset& data, int mediator_id, Family family,
                                const EstimateOptions& options);

// Parameters of the spec in the form the closed-form module takes. Latent
// covariates are folded into the mediator intercepts and residual covariance;
// observed covariate rows are drawn from the generator.
ClosedFormInputs closed_form_from_spec(const SimulationModelSpec& spec,
                                       std::size_t covariate_rows, std::uint64_t seed);

// Binary truth-table cache ("MDXT1" header, native little-endian doubles).
std::filesystem::path truth_cache_path(const std::filesystem::path& dir,
                                       const SimulationModelSpec& spec, std::size_t n_rows,
                                       std::uint64_t seed);
void write_table_cache(const std::filesystem::path& path, const CounterfactualTable& table,
                       std::uint64_t spec_fingerprint, std::uint64_t seed);
std::optional<CounterfactualTable> read_table_cache(const std::filesystem::path& path,
                                                    std::uint64_t spec_fingerprint,
                                                    std::size_t n_rows, std::uint64_t seed);

// Generates the table, going through the cache directory when one is given.
CounterfactualTable cached_counterfactual_table(const SimulationModelSpec& spec,
                                                std::size_t n_rows, std::uint64_t seed,
                                                const std::optional<std::filesystem::path>& cache_dir);

struct StudyConfig {
    SimulationModelSpec spec;
    std::vector<std::size_t> sample_sizes{1000};
    std::vector<double> correlations{0.0};
    std::size_t runs_per_cell = 200;
    EstimateOptions estimate;  // n_draws, n_sims, ci_level; seed is per run
    std::uint64_t master_seed = 1;
    std::size_t truth_rows = 1'000'000;
    bool include_simple = true;
    unsigned threads = 1;
    std::optional<std::filesystem::path> cache_dir;
};

// Metrics of one estimator for one effect in one (sample size, correlation)
// cell. bias = truth - mean estimate; variance uses divisor `runs`, so
// mse = bias^2 + variance.
struct StudyMetrics {
    std::string estimator;  // "multiple" or "simple_k"
    std::string effect;
    std::size_t sample_size = 0;
    double correlation = 0.0;
    double truth = 0.0;
    double mean_estimate = 0.0;
    double bias = 0.0;
    double coverage = 0.0;
    double variance = 0.0;
    double mse = 0.0;
    std::size_t runs = 0;
    std::size_t failures = 0;
};

struct StudyResult {
    std::vector<StudyMetrics> metrics;
    double max_identity_residual = 0.0;

    const StudyMetrics& find(std::string_view estimator, std::string_view effect,
                             std::size_t sample_size, double correlation) const;
};

// Per-run seeds are derive_seed(master_seed, cell, run) with cells numbered
// correlation-major; results do not depend on the thread count.
StudyResult run_study(const StudyConfig& config);

}  // namespace medimux
