#include "medimux/closed_form.hpp"

#include "medimux/error.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <functional>
#include <limits>

namespace medimux {

namespace {

constexpr double kQuadratureTolerance = 1e-9;
constexpr unsigned kQuadratureMaxDepth = 15;

}  // namespace

void ClosedFormInputs::validate() const {
    const Eigen::Index k = alpha2.size();
    const Eigen::Index p = xi3.size();
    if (k < 1 || beta2.size() != k || gamma.size() != k || sigma2.rows() != k ||
        sigma2.cols() != k || xi2.rows() != k || xi2.cols() != p ||
        (covariate_rows.rows() > 0 && covariate_rows.cols() != p)) {
        throw Error(ErrorCode::InvalidArgument, "closed-form inputs have inconsistent dimensions");
    }
}

ClosedFormInputs closed_form_inputs(const ParameterDraw& params,
                                    const Eigen::MatrixXd& covariate_rows) {
    ClosedFormInputs in;
    in.alpha2 = params.mediator.alpha2;
    in.beta2 = params.mediator.beta2;
    in.xi2 = params.mediator.xi2;
    in.sigma2 = params.sigma2;
    in.alpha3 = params.outcome.alpha3;
    in.beta3 = params.outcome.beta3;
    in.gamma = params.outcome.gamma;
    in.xi3 = params.outcome.xi3;
    in.sigma3 = params.sigma3;
    in.family = params.family;
    in.covariate_rows = covariate_rows;
    return in;
}

LsemEffects lsem_effects(const ClosedFormInputs& in) {
    in.validate();
    if (in.family != Family::Linear) {
        throw Error(ErrorCode::InvalidArgument, "lsem_effects requires the linear family");
    }
    LsemEffects out;
    out.delta = in.gamma.cwiseProduct(in.beta2);
    out.delta_joint = out.delta.sum();
    out.zeta = in.beta3;
    out.tau = out.delta_joint + out.zeta;
    return out;
}

double mediator_noise_variance(const Eigen::VectorXd& gamma, const Eigen::MatrixXd& sigma2) {
    return gamma.dot(sigma2 * gamma);
}

double f_u_probit(double z, const Eigen::VectorXd& gamma, const Eigen::MatrixXd& sigma2,
                  double sigma3) {
    const double variance = sigma3 * sigma3 + mediator_noise_variance(gamma, sigma2);
    if (!(variance > 0.0)) {
        throw Error(ErrorCode::NonPositiveScale, "probit latent variance is not positive");
    }
    return normal_cdf(z / std::sqrt(variance));
}

double f_u_logit(double z, const Eigen::VectorXd& gamma, const Eigen::MatrixXd& sigma2) {
    const double variance = mediator_noise_variance(gamma, sigma2);
    if (variance < -1e-12) {
        throw Error(ErrorCode::NonPositiveScale, "mediator noise variance is negative");
    }
    return f_u_logit_scale(z, std::sqrt(std::max(variance, 0.0)));
}

double f_u_logit_scale(double z, double s) {
    if (s == 0.0) {
        return inverse_link(Family::Logit, z);
    }
    if (!(s > 0.0) || !std::isfinite(s)) {
        throw Error(ErrorCode::NonPositiveScale, "logit convolution scale must be positive");
    }
    // Integrate against the logistic density on the whole line. The (0,1)
    // substitution has endpoint behaviour that bisection cannot resolve once s > 1.
    const auto integrand = [z, s](double y) {
        const double e = std::exp(-std::abs(y));
        return normal_cdf((z - y) / s) * e / ((1.0 + e) * (1.0 + e));
    };
    constexpr double inf = std::numeric_limits<double>::infinity();
    double error = 0.0;
    const double value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        integrand, -inf, inf, kQuadratureMaxDepth, 1e-13, &error);
    if (!(error <= kQuadratureTolerance)) {
        throw Error(ErrorCode::QuadratureNotConverged,
                    "logit F_U quadrature missed its tolerance");
    }
    return value;
}

BinaryEffects binary_effects(const ClosedFormInputs& in, int t) {
    in.validate();
    if (!is_binary(in.family)) {
        throw Error(ErrorCode::InvalidArgument, "binary_effects requires a logit or probit family");
    }
    const Eigen::Index k = in.gamma.size();
    std::function<double(double)> f_u;
    if (in.family == Family::Probit) {
        f_u = [&](double z) { return f_u_probit(z, in.gamma, in.sigma2, in.sigma3); };
    } else {
        const double variance = mediator_noise_variance(in.gamma, in.sigma2);
        if (variance < -1e-12) {
            throw Error(ErrorCode::NonPositiveScale, "mediator noise variance is negative");
        }
        const double s = std::sqrt(std::max(variance, 0.0));
        f_u = [s](double z) { return f_u_logit_scale(z, s); };
    }

    const Eigen::VectorXd path = in.gamma.cwiseProduct(in.beta2);  // gamma_k beta2_k
    const double path_total = path.sum();
    const double intercept = in.alpha3 + in.gamma.dot(in.alpha2);
    const Eigen::VectorXd slope = in.xi3 + in.xi2.transpose() * in.gamma;
    const double tt = static_cast<double>(t);

    const Eigen::Index rows = std::max<Eigen::Index>(in.covariate_rows.rows(), 1);
    BinaryEffects out;
    out.delta.setZero(k);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double base = intercept + (in.covariate_rows.rows() > 0
                                             ? slope.dot(in.covariate_rows.row(i).transpose())
                                             : 0.0);
        for (Eigen::Index j = 0; j < k; ++j) {
            const double held = base + (in.beta3 + path_total - path(j)) * tt;
            out.delta(j) += f_u(held + path(j)) - f_u(held);
        }
        const double at_t = base + in.beta3 * tt;
        out.delta_joint += f_u(at_t + path_total) - f_u(at_t);
        const double mediated = base + path_total * tt;
        out.zeta += f_u(mediated + in.beta3) - f_u(mediated);
        out.tau += f_u(base + in.beta3 + path_total) - f_u(base);
    }
    const auto n = static_cast<double>(rows);
    out.delta /= n;
    out.delta_joint /= n;
    out.zeta /= n;
    out.tau /= n;
    return out;
}

}  // namespace medimux
