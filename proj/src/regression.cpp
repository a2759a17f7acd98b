#include "medimux/regression.hpp"

#include "medimux/error.hpp"
#include "medimux/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace medimux {

std::string_view to_string(Family family) {
    switch (family) {
    case Family::Linear: return "linear";
    case Family::Logit: return "logit";
    case Family::Probit: return "probit";
    }
    return "linear";
}

Family parse_family(std::string_view text) {
    if (text == "linear") return Family::Linear;
    if (text == "logit") return Family::Logit;
    if (text == "probit") return Family::Probit;
    throw Error(ErrorCode::InvalidArgument, "unknown outcome family '" + std::string(text) + "'");
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z * std::numbers::sqrt2 / 2.0); }

namespace {

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

double logistic(double eta) {
    if (eta >= 0.0) {
        return 1.0 / (1.0 + std::exp(-eta));
    }
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

constexpr double kRankTolerance = 1e-10;
constexpr double kPsdTolerance = 1e-10;
constexpr double kIrlsTolerance = 1e-8;
constexpr int kIrlsMaxIter = 100;
constexpr double kSeparationEdge = 1e-10;
constexpr double kSeparationShare = 0.99;

struct DesignFactor {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
    Eigen::MatrixXd xtx_inverse;
};

DesignFactor factor_design(const Eigen::MatrixXd& design) {
    const Eigen::Index n = design.rows();
    const Eigen::Index q = design.cols();
    if (n <= q) {
        throw Error(ErrorCode::InsufficientRows, "need more rows (" + std::to_string(n) +
                                                     ") than coefficients (" +
                                                     std::to_string(q) + ")");
    }
    DesignFactor f{Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(design), {}};
    f.qr.setThreshold(kRankTolerance);
    if (f.qr.rank() < q) {
        const Eigen::Index column = f.qr.colsPermutation().indices()(f.qr.rank());
        throw IndexedError(ErrorCode::RankDeficient, column,
                           "design matrix is rank deficient at column " + std::to_string(column));
    }
    // (X^T X)^-1 = P R^-1 R^-T P^T with X P = Q R.
    const Eigen::MatrixXd r = f.qr.matrixR().topLeftCorner(q, q).triangularView<Eigen::Upper>();
    const Eigen::MatrixXd r_inv =
        r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(q, q));
    const Eigen::MatrixXd inner = r_inv * r_inv.transpose();
    const auto& perm = f.qr.colsPermutation();
    Eigen::MatrixXd inv = perm * inner * perm.transpose();
    f.xtx_inverse = 0.5 * (inv + inv.transpose());
    return f;
}

Eigen::VectorXd link_mean(Family family, const Eigen::VectorXd& eta) {
    return eta.unaryExpr([family](double e) { return inverse_link(family, e); });
}

}  // namespace

double inverse_link(Family family, double eta) {
    switch (family) {
    case Family::Linear: return eta;
    case Family::Logit: return logistic(eta);
    case Family::Probit: return normal_cdf(eta);
    }
    return eta;
}

LinearFit fit_ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& response) {
    if (design.rows() != response.size()) {
        throw Error(ErrorCode::InvalidArgument, "design and response lengths differ");
    }
    DesignFactor f = factor_design(design);
    LinearFit fit;
    fit.coefficients = f.qr.solve(response);
    fit.residuals = response - design * fit.coefficients;
    const auto dof = static_cast<double>(design.rows() - design.cols());
    fit.residual_variance = fit.residuals.squaredNorm() / dof;
    fit.coef_cov = fit.residual_variance * f.xtx_inverse;
    fit.xtx_inverse = std::move(f.xtx_inverse);
    return fit;
}

Eigen::VectorXd MediatorSystemFit::stacked() const {
    const Eigen::Index k = n_mediators();
    const Eigen::Index p = n_covariates();
    const Eigen::Index q = 2 + p;
    Eigen::VectorXd out(k * q);
    for (Eigen::Index i = 0; i < k; ++i) {
        out(i * q) = alpha2(i);
        out(i * q + 1) = beta2(i);
        out.segment(i * q + 2, p) = xi2.row(i).transpose();
    }
    return out;
}

Eigen::MatrixXd mediator_design(const Dataset& data) {
    const Eigen::Index n = data.n_rows();
    Eigen::MatrixXd d(n, 2 + data.n_covariates());
    d.col(0).setOnes();
    d.col(1) = data.t;
    d.rightCols(data.n_covariates()) = data.x;
    return d;
}

MediatorSystemFit fit_mediator_system(const Dataset& data) {
    const Eigen::Index n = data.n_rows();
    const Eigen::Index k = data.n_mediators();
    const Eigen::Index p = data.n_covariates();
    const Eigen::Index q = 2 + p;
    if (n <= q + k) {
        throw Error(ErrorCode::InsufficientRows,
                    "mediator system needs more than 2 + P + K rows");
    }
    const Eigen::MatrixXd design = mediator_design(data);
    DesignFactor f = factor_design(design);

    const Eigen::MatrixXd coef = f.qr.solve(data.m);  // q x K
    const Eigen::MatrixXd resid = data.m - design * coef;

    MediatorSystemFit fit;
    fit.n_used = n;
    fit.alpha2 = coef.row(0).transpose();
    fit.beta2 = coef.row(1).transpose();
    fit.xi2 = coef.bottomRows(p).transpose();
    Eigen::MatrixXd sigma = resid.transpose() * resid / static_cast<double>(n - q);
    fit.sigma2 = 0.5 * (sigma + sigma.transpose());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(fit.sigma2, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() < -kPsdTolerance) {
        throw Error(ErrorCode::SingularResidualCovariance,
                    "mediator residual covariance is not positive semi-definite");
    }

    fit.coef_cov.resize(k * q, k * q);
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) {
            fit.coef_cov.block(i * q, j * q, q, q) = fit.sigma2(i, j) * f.xtx_inverse;
        }
    }
    fit.design_xtx_inverse = std::move(f.xtx_inverse);
    return fit;
}

Eigen::VectorXd OutcomeFit::stacked() const {
    const Eigen::Index k = gamma.size();
    Eigen::VectorXd out(2 + k + xi3.size());
    out(0) = alpha3;
    out(1) = beta3;
    out.segment(2, k) = gamma;
    out.tail(xi3.size()) = xi3;
    return out;
}

Eigen::MatrixXd outcome_design(const Dataset& data) {
    const Eigen::Index n = data.n_rows();
    const Eigen::Index k = data.n_mediators();
    Eigen::MatrixXd d(n, 2 + k + data.n_covariates());
    d.col(0).setOnes();
    d.col(1) = data.t;
    d.middleCols(2, k) = data.m;
    d.rightCols(data.n_covariates()) = data.x;
    return d;
}

double glm_log_likelihood(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& coefficients, Family family) {
    const Eigen::VectorXd eta = design * coefficients;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double e = eta(i);
        if (family == Family::Logit) {
            // log(1 + exp(e)) computed without overflow.
            const double softplus = std::max(e, 0.0) + std::log1p(std::exp(-std::abs(e)));
            ll += y(i) * e - softplus;
        } else {
            const double p1 = normal_cdf(e);
            const double p0 = normal_cdf(-e);
            ll += y(i) > 0.5 ? std::log(p1) : std::log(p0);
        }
    }
    return ll;
}

namespace {

struct IrlsStep {
    Eigen::MatrixXd information;  // X^T W X
    Eigen::VectorXd score;        // X^T u
};

IrlsStep irls_terms(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                    const Eigen::VectorXd& beta, Family family) {
    const Eigen::VectorXd eta = design * beta;
    Eigen::VectorXd weight(eta.size());
    Eigen::VectorXd u(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        if (family == Family::Logit) {
            const double mu = logistic(eta(i));
            weight(i) = mu * (1.0 - mu);
            u(i) = y(i) - mu;
        } else {
            // Beyond |eta| = 30 the row carries no information in double precision.
            const double e = std::clamp(eta(i), -30.0, 30.0);
            const double mu = normal_cdf(e);
            const double var = std::max(mu * (1.0 - mu), 1e-300);
            const double dmu = normal_pdf(e);
            weight(i) = dmu * dmu / var;
            u(i) = dmu * (y(i) - mu) / var;
        }
    }
    return {design.transpose() * weight.asDiagonal() * design, design.transpose() * u};
}

// Negative Hessian of the log-likelihood. Equals X^T W X for the canonical logit
// link; for probit the per-row weight is lambda (lambda + eta) with lambda the
// inverse Mills ratio of the observed side.
Eigen::MatrixXd observed_information(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& beta, Family family) {
    if (family == Family::Logit) {
        return irls_terms(design, y, beta, family).information;
    }
    const Eigen::VectorXd eta = design * beta;
    Eigen::VectorXd weight(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double e = std::clamp(y(i) > 0.5 ? eta(i) : -eta(i), -30.0, 30.0);
        const double lambda = normal_pdf(e) / std::max(normal_cdf(e), 1e-300);
        weight(i) = lambda * (lambda + e);
    }
    return design.transpose() * weight.asDiagonal() * design;
}

}  // namespace

OutcomeFit fit_outcome(const Dataset& data, Family family) {
    data.validate(is_binary(family));
    const Eigen::Index k = data.n_mediators();
    const Eigen::Index p = data.n_covariates();
    const Eigen::MatrixXd design = outcome_design(data);

    OutcomeFit fit;
    fit.family = family;
    Eigen::VectorXd beta;

    if (family == Family::Linear) {
        LinearFit ols = fit_ols(design, data.y);
        beta = ols.coefficients;
        fit.coef_cov = ols.coef_cov;
        fit.sigma3 = std::sqrt(ols.residual_variance);
        fit.converged = true;
        fit.n_iter = 1;
    } else {
        // Rank and row-count checks are shared with OLS.
        (void)factor_design(design);
        beta = Eigen::VectorXd::Zero(design.cols());
        double ll = glm_log_likelihood(design, data.y, beta, family);
        fit.converged = false;
        int iter = 0;
        while (iter < kIrlsMaxIter) {
            ++iter;
            const IrlsStep step = irls_terms(design, data.y, beta, family);
            Eigen::VectorXd delta = step.information.ldlt().solve(step.score);
            if (!delta.allFinite()) {
                break;
            }
            Eigen::VectorXd candidate = beta + delta;
            double ll_new = glm_log_likelihood(design, data.y, candidate, family);
            for (int halving = 0; halving < 30 && !(ll_new >= ll); ++halving) {
                delta *= 0.5;
                candidate = beta + delta;
                ll_new = glm_log_likelihood(design, data.y, candidate, family);
            }
            const double change = delta.cwiseAbs().maxCoeff();
            beta = candidate;
            ll = ll_new;
            if (change < kIrlsTolerance) {
                fit.converged = true;
                break;
            }
        }
        fit.n_iter = iter;

        const Eigen::VectorXd fitted = link_mean(family, design * beta);
        const auto extreme = (fitted.array() < kSeparationEdge ||
                              fitted.array() > 1.0 - kSeparationEdge).count();
        if (static_cast<double>(extreme) >= kSeparationShare * static_cast<double>(fitted.size())) {
            throw Error(ErrorCode::SeparationDetected,
                        "fitted probabilities collapsed to 0/1: the outcome is separated");
        }
        Eigen::MatrixXd cov = observed_information(design, data.y, beta, family).ldlt().solve(
            Eigen::MatrixXd::Identity(design.cols(), design.cols()));
        fit.coef_cov = 0.5 * (cov + cov.transpose());
        fit.sigma3 = 1.0;
    }

    fit.alpha3 = beta(0);
    fit.beta3 = beta(1);
    fit.gamma = beta.segment(2, k);
    fit.xi3 = beta.tail(p);
    return fit;
}

MediatorParams unstack_mediator(const Eigen::VectorXd& stacked, Eigen::Index n_mediators,
                                Eigen::Index n_covariates) {
    const Eigen::Index q = 2 + n_covariates;
    MediatorParams out;
    out.alpha2.resize(n_mediators);
    out.beta2.resize(n_mediators);
    out.xi2.resize(n_mediators, n_covariates);
    for (Eigen::Index i = 0; i < n_mediators; ++i) {
        out.alpha2(i) = stacked(i * q);
        out.beta2(i) = stacked(i * q + 1);
        out.xi2.row(i) = stacked.segment(i * q + 2, n_covariates).transpose();
    }
    return out;
}

OutcomeParams unstack_outcome(const Eigen::VectorXd& stacked, Eigen::Index n_mediators) {
    OutcomeParams out;
    out.alpha3 = stacked(0);
    out.beta3 = stacked(1);
    out.gamma = stacked.segment(2, n_mediators);
    out.xi3 = stacked.tail(stacked.size() - 2 - n_mediators);
    return out;
}

ParameterDraw point_draw(const MediatorSystemFit& med, const OutcomeFit& out) {
    ParameterDraw d;
    d.mediator = {med.alpha2, med.beta2, med.xi2};
    d.outcome = {out.alpha3, out.beta3, out.gamma, out.xi3};
    d.sigma2 = med.sigma2;
    d.sigma3 = out.sigma3;
    d.family = out.family;
    return d;
}

Eigen::MatrixXd psd_cholesky(const Eigen::MatrixXd& cov) {
    const Eigen::Index n = cov.rows();
    if (cov.isZero(0.0)) {
        return Eigen::MatrixXd::Zero(n, n);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) {
        return llt.matrixL();
    }
    for (double jitter = 1e-14; jitter <= 1e-8 * 1.0001; jitter *= 10.0) {
        llt.compute(cov + jitter * Eigen::MatrixXd::Identity(n, n));
        if (llt.info() == Eigen::Success) {
            return llt.matrixL();
        }
    }
    throw Error(ErrorCode::CholeskyFailure,
                "covariance matrix is not positive semi-definite (Cholesky failed after jitter)");
}

ParameterDraw sample_parameter_draw(const MediatorSystemFit& med, const OutcomeFit& out,
                                    const Eigen::MatrixXd& med_chol,
                                    const Eigen::MatrixXd& out_chol, std::uint64_t seed,
                                    std::size_t draw_index) {
    CounterStream rng(seed, StreamDomain::Parameters, draw_index);
    Eigen::VectorXd z_med(med_chol.rows());
    for (Eigen::Index i = 0; i < z_med.size(); ++i) z_med(i) = rng.normal();
    Eigen::VectorXd z_out(out_chol.rows());
    for (Eigen::Index i = 0; i < z_out.size(); ++i) z_out(i) = rng.normal();

    const Eigen::VectorXd med_draw = med.stacked() + med_chol * z_med;
    const Eigen::VectorXd out_draw = out.stacked() + out_chol * z_out;

    ParameterDraw d;
    d.mediator = unstack_mediator(med_draw, med.n_mediators(), med.n_covariates());
    d.outcome = unstack_outcome(out_draw, out.gamma.size());
    d.sigma2 = med.sigma2;
    d.sigma3 = out.sigma3;
    d.family = out.family;
    return d;
}

std::vector<ParameterDraw> sample_parameters(const MediatorSystemFit& med, const OutcomeFit& out,
                                             std::size_t n_draws, std::uint64_t seed) {
    if (n_draws < 1) {
        throw Error(ErrorCode::InvalidArgument, "n_draws must be at least 1");
    }
    const Eigen::MatrixXd med_chol = psd_cholesky(med.coef_cov);
    const Eigen::MatrixXd out_chol = psd_cholesky(out.coef_cov);
    std::vector<ParameterDraw> draws;
    draws.reserve(n_draws);
    for (std::size_t r = 0; r < n_draws; ++r) {
        draws.push_back(sample_parameter_draw(med, out, med_chol, out_chol, seed, r));
    }
    return draws;
}

}  // namespace medimux
