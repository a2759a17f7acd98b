#pragma once

#include "medimux/regression.hpp"

#include <Eigen/Dense>

namespace medimux {

// Model parameters for the analytic effect formulas. covariate_rows is the
// empirical covariate distribution averaged over; it may have zero rows when
// the model has no covariates.
struct ClosedFormInputs {
    Eigen::VectorXd alpha2;
    Eigen::VectorXd beta2;
    Eigen::MatrixXd xi2;     // K x P
    Eigen::MatrixXd sigma2;  // K x K
    double alpha3 = 0.0;
    double beta3 = 0.0;
    Eigen::VectorXd gamma;
    Eigen::VectorXd xi3;
    double sigma3 = 1.0;
    Family family = Family::Linear;
    Eigen::MatrixXd covariate_rows;  // rows x P

    void validate() const;
};

ClosedFormInputs closed_form_inputs(const ParameterDraw& params,
                                    const Eigen::MatrixXd& covariate_rows);

struct LsemEffects {
    Eigen::VectorXd delta;  // delta_k, identical for t = 0 and t = 1
    double delta_joint = 0.0;
    double zeta = 0.0;
    double tau = 0.0;
};

// Linear structural model: delta_k = gamma_k beta2_k, delta_Z = sum_k delta_k,
// zeta = beta3.
LsemEffects lsem_effects(const ClosedFormInputs& in);

// gamma^T sigma2 gamma, the variance the mediator residuals add to the latent
// outcome scale.
double mediator_noise_variance(const Eigen::VectorXd& gamma, const Eigen::MatrixXd& sigma2);

// CDF of gamma^T Upsilon + eps3 with eps3 ~ N(0, sigma3^2).
double f_u_probit(double z, const Eigen::VectorXd& gamma, const Eigen::MatrixXd& sigma2,
                  double sigma3);

// CDF of gamma^T Upsilon + eps3 with eps3 standard logistic.
double f_u_logit(double z, const Eigen::VectorXd& gamma, const Eigen::MatrixXd& sigma2);

// Same convolution for a given normal scale s >= 0: the integral of
// Phi((z - y) / s) against the logistic density, taken over u = logistic(y)
// in (0, 1). Absolute tolerance 1e-9; throws QuadratureNotConverged.
double f_u_logit_scale(double z, double s);

struct BinaryEffects {
    Eigen::VectorXd delta;  // delta_k(t)
    double delta_joint = 0.0;
    double zeta = 0.0;
    double tau = 0.0;
};

// Binary-outcome effects at treatment level t, averaged over covariate rows.
BinaryEffects binary_effects(const ClosedFormInputs& in, int t);

}  // namespace medimux
