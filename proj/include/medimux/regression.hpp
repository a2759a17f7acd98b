#pragma once

#include "medimux/dataset.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string_view>
#include <vector>

namespace medimux {

enum class Family { Linear, Logit, Probit };

std::string_view to_string(Family family);
Family parse_family(std::string_view text);
inline bool is_binary(Family family) { return family != Family::Linear; }

// Inverse link: identity, inverse-logit or standard normal CDF.
double inverse_link(Family family, double eta);
double normal_cdf(double z);

struct LinearFit {
    Eigen::VectorXd coefficients;
    Eigen::MatrixXd coef_cov;
    double residual_variance = 0.0;
    Eigen::VectorXd residuals;
    Eigen::MatrixXd xtx_inverse;  // (design^T design)^-1
};

// Ordinary least squares. The design must include its own intercept column.
// Throws InsufficientRows when n <= q and RankDeficient (with the first
// dependent column) when the design loses rank.
LinearFit fit_ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& response);

// Mediator system Z = alpha2 + beta2 T + xi2 X + Upsilon, fitted equation by
// equation on the shared design (1, T, X).
struct MediatorSystemFit {
    Eigen::VectorXd alpha2;  // K
    Eigen::VectorXd beta2;   // K
    Eigen::MatrixXd xi2;     // K x P
    Eigen::MatrixXd sigma2;  // K x K residual covariance, divisor n - 2 - P
    // Sampling covariance of the mediator-major stack
    // (alpha_1, beta_1, xi_1., alpha_2, ...): sigma2 kron (D^T D)^-1.
    Eigen::MatrixXd coef_cov;
    Eigen::MatrixXd design_xtx_inverse;
    Eigen::Index n_used = 0;

    Eigen::Index n_mediators() const { return alpha2.size(); }
    Eigen::Index n_covariates() const { return xi2.cols(); }
    Eigen::VectorXd stacked() const;
};

Eigen::MatrixXd mediator_design(const Dataset& data);
MediatorSystemFit fit_mediator_system(const Dataset& data);

struct OutcomeFit {
    double alpha3 = 0.0;
    double beta3 = 0.0;
    Eigen::VectorXd gamma;  // K
    Eigen::VectorXd xi3;    // P
    Family family = Family::Linear;
    // Residual sd for the linear family; 1 for the latent probit/logit scales.
    double sigma3 = 1.0;
    Eigen::MatrixXd coef_cov;  // over (alpha3, beta3, gamma, xi3)
    bool converged = true;
    int n_iter = 0;

    Eigen::VectorXd stacked() const;
};

// Design (1, T, M^1..M^K, X) for the outcome model.
Eigen::MatrixXd outcome_design(const Dataset& data);

// Linear family by OLS; logit/probit by IRLS with step-halving. A fit that
// does not converge in 100 iterations is returned with converged == false.
OutcomeFit fit_outcome(const Dataset& data, Family family);

// Bernoulli log-likelihood of a logit/probit model at the given coefficients.
double glm_log_likelihood(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& coefficients, Family family);

struct MediatorParams {
    Eigen::VectorXd alpha2;
    Eigen::VectorXd beta2;
    Eigen::MatrixXd xi2;
};

struct OutcomeParams {
    double alpha3 = 0.0;
    double beta3 = 0.0;
    Eigen::VectorXd gamma;
    Eigen::VectorXd xi3;
};

// One quasi-Bayesian parameter draw. sigma2 is the fitted residual covariance
// and is the same in every draw taken from one fit.
struct ParameterDraw {
    MediatorParams mediator;
    OutcomeParams outcome;
    Eigen::MatrixXd sigma2;
    double sigma3 = 1.0;
    Family family = Family::Linear;
};

MediatorParams unstack_mediator(const Eigen::VectorXd& stacked, Eigen::Index n_mediators,
                                Eigen::Index n_covariates);
OutcomeParams unstack_outcome(const Eigen::VectorXd& stacked, Eigen::Index n_mediators);

// The draw sitting exactly at the point estimates.
ParameterDraw point_draw(const MediatorSystemFit& med, const OutcomeFit& out);

// Lower Cholesky factor of a PSD matrix. Adds diagonal jitter in decades from
// 1e-14 up to 1e-8 when the plain factorization fails, then throws
// CholeskyFailure. An all-zero matrix factors to zero.
Eigen::MatrixXd psd_cholesky(const Eigen::MatrixXd& cov);

// Draw r is computed from its own counter-based substream of `seed`, so the
// sequence is reproducible and any single draw can be regenerated alone.
ParameterDraw sample_parameter_draw(const MediatorSystemFit& med, const OutcomeFit& out,
                                    const Eigen::MatrixXd& med_chol,
                                    const Eigen::MatrixXd& out_chol, std::uint64_t seed,
                                    std::size_t draw_index);

std::vector<ParameterDraw> sample_parameters(const MediatorSystemFit& med, const OutcomeFit& out,
                                             std::size_t n_draws, std::uint64_t seed);

}  // namespace medimux
