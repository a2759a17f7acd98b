#include "medimux/closed_form.hpp"
#include "medimux/error.hpp"
#include "medimux/rng.hpp"
#include "medimux/simulation.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace medimux;
using Catch::Approx;

namespace {

ClosedFormInputs model1_inputs() {
    return closed_form_from_spec(models::continuous(0.3), 0, 1);
}

ClosedFormInputs binary_inputs(Family family, double rho) {
    ClosedFormInputs in = closed_form_from_spec(models::logistic(rho), 0, 1);
    in.family = family;
    return in;
}

}  // namespace

TEST_CASE("LSEM products and sums are exact", "[closed_form]") {
    const LsemEffects e = lsem_effects(model1_inputs());
    CHECK(e.delta(0) == 20.0);
    CHECK(e.delta(1) == 24.0);
    CHECK(e.delta_joint == 44.0);
    CHECK(e.zeta == 10.0);
    CHECK(e.tau == 54.0);

    ClosedFormInputs none = model1_inputs();
    none.gamma.setZero();
    const LsemEffects z = lsem_effects(none);
    CHECK(z.delta.isZero(0.0));
    CHECK(z.delta_joint == 0.0);
}

TEST_CASE("single-mediator LSEM is beta2 gamma", "[closed_form]") {
    ClosedFormInputs in;
    in.alpha2 = Eigen::VectorXd::Constant(1, 0.5);
    in.beta2 = Eigen::VectorXd::Constant(1, 0.8);
    in.xi2.resize(1, 0);
    in.sigma2 = Eigen::MatrixXd::Identity(1, 1);
    in.gamma = Eigen::VectorXd::Constant(1, 0.6);
    in.xi3.resize(0);
    in.beta3 = 0.4;
    const LsemEffects e = lsem_effects(in);
    CHECK(e.delta(0) == 0.8 * 0.6);
    CHECK(e.zeta == 0.4);
}

TEST_CASE("probit F_U values", "[closed_form]") {
    Eigen::MatrixXd s2(2, 2);
    s2 << 1.0, 0.4, 0.4, 2.0;
    const Eigen::Vector2d g(0.6, -0.8);
    CHECK(f_u_probit(0.0, g, s2, 1.3) == 0.5);
    CHECK(f_u_probit(0.7, Eigen::Vector2d::Zero(), s2, 1.0) == normal_cdf(0.7));
    const Eigen::VectorXd g1 = Eigen::VectorXd::Constant(1, 2.0);
    CHECK(f_u_probit(std::sqrt(5.0), g1, Eigen::MatrixXd::Identity(1, 1), 1.0) == Approx(0.841344746).epsilon(1e-9));

    // Diagonal Sigma: sqrt(sigma3^2 + sum gamma_k^2 sigma_k^2).
    Eigen::Matrix2d diag = Eigen::Matrix2d::Zero();
    diag(0, 0) = 0.5;
    diag(1, 1) = 1.7;
    for (double z : {-2.0, -0.3, 0.9, 2.5}) {
        const double scale = std::sqrt(1.1 * 1.1 + 0.36 * 0.5 + 0.64 * 1.7);
        CHECK(std::abs(f_u_probit(z, g, diag, 1.1) - normal_cdf(z / scale)) < 1e-12);
    }
    try {
        f_u_probit(0.3, Eigen::Vector2d::Zero(), s2, 0.0);
        FAIL("expected NonPositiveScale");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonPositiveScale);
    }
}

TEST_CASE("logit F_U limits and symmetry", "[closed_form]") {
    CHECK(f_u_logit_scale(0.0, 1.0) == Approx(0.5).margin(1e-12));
    CHECK(f_u_logit_scale(2.0, 0.0) == Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-14));
    CHECK(f_u_logit_scale(2.0, 0.0) == Approx(0.8808).margin(1e-4));
    for (double s : {0.3, 1.0, 2.5}) {
        double prev = 0.0;
        for (double z = -6.0; z <= 6.0; z += 0.5) {
            const double f = f_u_logit_scale(z, s);
            CHECK(f > 0.0);
            CHECK(f < 1.0);
            CHECK(f >= prev);
            CHECK(std::abs(f + f_u_logit_scale(-z, s) - 1.0) < 1e-9);
            prev = f;
        }
    }
}

TEST_CASE("logit F_U against a Monte-Carlo convolution", "[closed_form]") {
    CounterStream rng(2024, StreamDomain::Test, 9);
    const int n = 2'000'000;
    int hits = 0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        const double l = std::log(u / (1.0 - u));
        hits += (l + rng.normal() <= 1.0) ? 1 : 0;
    }
    const double p = static_cast<double>(hits) / n;
    const double se = std::sqrt(p * (1.0 - p) / n);
    CHECK(std::abs(f_u_logit_scale(1.0, 1.0) - p) < 3.0 * se);
}

TEST_CASE("logit F_U uses gamma^T Sigma gamma as the normal scale", "[closed_form]") {
    Eigen::MatrixXd s2(2, 2);
    s2 << 1.0, 0.5, 0.5, 1.0;
    const Eigen::Vector2d g(0.6, 0.8);
    const double s = std::sqrt(mediator_noise_variance(g, s2));
    CHECK(s * s == Approx(0.36 + 0.64 + 2.0 * 0.5 * 0.48));
    CHECK(f_u_logit(0.4, g, s2) == f_u_logit_scale(0.4, s));
}

TEST_CASE("binary effects special cases", "[closed_form]") {
    for (Family family : {Family::Logit, Family::Probit}) {
        ClosedFormInputs in = binary_inputs(family, 0.4);
        in.gamma.setZero();
        const BinaryEffects e0 = binary_effects(in, 0);
        const BinaryEffects e1 = binary_effects(in, 1);
        CHECK(e0.delta.cwiseAbs().maxCoeff() < 1e-15);
        CHECK(e0.zeta == Approx(e1.zeta).margin(1e-12));
        const auto F = [&](double z) {
            return family == Family::Probit ? normal_cdf(z) : 1.0 / (1.0 + std::exp(-z));
        };
        CHECK(e0.zeta == Approx(F(in.alpha3 + in.beta3) - F(in.alpha3)).margin(1e-9));

        ClosedFormInputs flat = binary_inputs(family, 0.4);
        flat.beta2.setZero();
        const BinaryEffects f = binary_effects(flat, 1);
        CHECK(f.delta.cwiseAbs().maxCoeff() < 1e-15);
        CHECK(f.delta_joint == Approx(0.0).margin(1e-15));
    }
}

TEST_CASE("binary effects decompose the total effect", "[closed_form]") {
    for (Family family : {Family::Logit, Family::Probit}) {
        for (double rho : {0.0, 0.7}) {
            const ClosedFormInputs in = binary_inputs(family, rho);
            const BinaryEffects e0 = binary_effects(in, 0);
            const BinaryEffects e1 = binary_effects(in, 1);
            CHECK(std::abs(e1.delta_joint + e0.zeta - (e0.delta_joint + e1.zeta)) < 1e-9);
            CHECK(std::abs(e1.delta_joint + e0.zeta - e0.tau) < 1e-9);
            CHECK(e0.tau == e1.tau);
        }
    }
}

TEST_CASE("binary effects average over covariate rows", "[closed_form]") {
    SimulationModelSpec spec = models::logistic(0.2);
    CovariateSpec x;
    x.name = "X";
    x.distribution = CovariateSpec::Distribution::Bernoulli;
    x.mean = 0.5;
    x.mediator_loadings = Eigen::Vector2d(0.2, 0.1);
    x.outcome_loading = 0.5;
    spec.covariates.push_back(x);
    ClosedFormInputs in = closed_form_from_spec(spec, 0, 1);
    in.covariate_rows.resize(2, 1);
    in.covariate_rows << 0.0, 1.0;
    ClosedFormInputs at0 = in;
    at0.covariate_rows = Eigen::MatrixXd::Zero(1, 1);
    ClosedFormInputs at1 = in;
    at1.covariate_rows = Eigen::MatrixXd::Ones(1, 1);
    const double both = binary_effects(in, 1).zeta;
    CHECK(both == Approx(0.5 * (binary_effects(at0, 1).zeta + binary_effects(at1, 1).zeta)).epsilon(1e-12));
}

TEST_CASE("closed-form inputs fold a latent common cause into Sigma", "[closed_form]") {
    const ClosedFormInputs in = closed_form_from_spec(models::latent_common_cause(false), 0, 1);
    CHECK(in.sigma2(0, 0) == 5.0);
    CHECK(in.sigma2(1, 1) == 10.0);
    CHECK(in.sigma2(0, 1) == 6.0);
    CHECK(in.xi2.cols() == 0);
    const ClosedFormInputs obs = closed_form_from_spec(models::latent_common_cause(true), 100, 1);
    CHECK(obs.xi2.cols() == 1);
    CHECK(obs.covariate_rows.rows() == 100);
    CHECK(lsem_effects(obs).delta_joint == 44.0);
}
