#include "medimux/closed_form.hpp"
#include "medimux/error.hpp"
#include "medimux/regression.hpp"
#include "medimux/simulation.hpp"

#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <set>

using namespace medimux;
using Catch::Approx;

namespace {

// The four printed counterfactual rows: M(1) - M(0) = 0.8, W(1) - W(0) = 0.9,
// outcome slopes 0.6 and 0.7 on the mediators and 0.4 on treatment.
CounterfactualTable printed_table() {
    CounterfactualTable t;
    t.family = Family::Linear;
    t.alpha3 = 0.0;
    t.beta3 = 0.4;
    t.gamma = Eigen::Vector2d(0.6, 0.7);
    t.covariate_outcome.resize(0);
    t.t = Eigen::Vector4d(0, 0, 1, 1);
    t.m0.resize(4, 2);
    t.m0 << 0.28, 0.53, 0.42, -1.80, 0.63, 0.03, 0.75, 2.24;
    t.m1 = t.m0;
    t.m1.col(0).array() += 0.8;
    t.m1.col(1).array() += 0.9;
    t.covariates.resize(4, 0);
    const Eigen::Vector4d y00(0.91, -0.09, 0.36, 1.44);  // Y(0, M(0), W(0))
    t.noise = y00 - t.m0 * t.gamma;
    return t;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("medimux-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("printed counterfactual rows and the extraction rule", "[simulation]") {
    const CounterfactualTable t = printed_table();
    // Y(1, M(1), W(1)), Y(1, M(1), W(0)), Y(1, M(0), W(1)) and Y(0, M(1), W(1)).
    const double y111[] = {2.42, 1.41, 1.87, 2.95};
    const double y110[] = {1.79, 0.78, 1.24, 2.32};
    const double y101[] = {1.94, 0.93, 1.39, 2.47};
    const double y011[] = {2.02, 1.01, 1.47, 2.55};
    for (Eigen::Index i = 0; i < 4; ++i) {
        const int a11[] = {1, 1}, a10[] = {1, 0}, a01[] = {0, 1};
        CHECK(t.outcome(i, 1, a11) == Approx(y111[i]).margin(0.011));
        CHECK(t.outcome(i, 1, a10) == Approx(y110[i]).margin(0.011));
        CHECK(t.outcome(i, 1, a01) == Approx(y101[i]).margin(0.011));
        CHECK(t.outcome(i, 0, a11) == Approx(y011[i]).margin(0.011));
    }
    const Dataset d = extract_observed(t, 4, 1);
    std::set<double> seen;
    for (Eigen::Index i = 0; i < 4; ++i) {
        // Locate the source row by its untreated mediator value.
        Eigen::Index src = -1;
        for (Eigen::Index r = 0; r < 4; ++r) {
            const double m = d.t(i) == 0.0 ? t.m0(r, 0) : t.m1(r, 0);
            if (m == d.m(i, 0) && t.t(r) == d.t(i)) src = r;
        }
        REQUIRE(src >= 0);
        seen.insert(d.m(i, 0));
        const auto& z = d.t(i) == 0.0 ? t.m0 : t.m1;
        CHECK(d.m(i, 1) == z(src, 1));
        CHECK(d.y(i) == t.outcome_joint(src, static_cast<int>(d.t(i)), static_cast<int>(d.t(i))));
    }
    CHECK(seen.size() == 4);
}

TEST_CASE("generated tables couple arms through one residual", "[simulation]") {
    const CounterfactualTable t = generate_counterfactual_table(models::continuous(0.5), 5000, 3);
    const Eigen::MatrixXd shift = t.m1 - t.m0;
    CHECK((shift.col(0).array() - 4.0).abs().maxCoeff() < 1e-12);
    CHECK((shift.col(1).array() - 6.0).abs().maxCoeff() < 1e-12);
    const int arms[] = {0, 1};
    for (Eigen::Index i = 0; i < 100; ++i) {
        CHECK(t.outcome(i, 1, arms) == t.outcome(i, 1, arms));
        CHECK(t.outcome_mixed(i, 1, 0, 0, 1) == t.outcome(i, 1, arms));
    }
    CHECK(t.t.mean() == Approx(0.3).margin(0.02));
}

TEST_CASE("noiseless model has a constant total effect per row", "[simulation]") {
    SimulationModelSpec spec = models::continuous(0.0);
    spec.residual_cov.setZero();
    spec.outcome_noise_sd = 0.0;
    const CounterfactualTable t = generate_counterfactual_table(spec, 200, 8);
    for (Eigen::Index i = 0; i < 200; ++i) {
        CHECK(t.outcome_joint(i, 1, 1) - t.outcome_joint(i, 0, 0) == Approx(54.0).epsilon(1e-14));
    }
}

TEST_CASE("truth identities on a binary table", "[simulation]") {
    const CounterfactualTable t = generate_counterfactual_table(models::logistic(0.7), 200000, 12);
    const TruthEffects e = monte_carlo_truth(t);
    CHECK(std::abs(e.tau - e.delta_joint[1] - e.zeta[0]) < 1e-12);
    CHECK(std::abs(e.tau - e.delta_joint[0] - e.zeta[1]) < 1e-12);
    for (int s = 0; s < 2; ++s) {
        const double avg = (e.delta[s] + e.eta[s]).sum() / 2.0;
        CHECK(std::abs(e.delta_joint[s] - avg) < 1e-10);
    }
}

TEST_CASE("linear truth matches the closed form", "[simulation]") {
    SimulationModelSpec spec = models::latent_common_cause(false);
    CovariateSpec x;
    x.name = "X";
    x.mean = 1.0;
    x.sd = 2.0;
    x.mediator_loadings = Eigen::Vector2d(0.5, -1.0);
    x.outcome_loading = 0.3;
    spec.covariates.push_back(x);
    const CounterfactualTable t = generate_counterfactual_table(spec, 300000, 5);
    const TruthEffects e = monte_carlo_truth(t);
    const LsemEffects l = lsem_effects(closed_form_from_spec(spec, 10, 1));
    for (int s = 0; s < 2; ++s) {
        for (Eigen::Index k = 0; k < 2; ++k) {
            CHECK(std::abs(e.delta[s](k) - l.delta(k)) <= 4.0 * e.delta_se[s](k) + 1e-9);
        }
        CHECK(std::abs(e.zeta[s] - l.zeta) <= 4.0 * e.zeta_se[s] + 1e-9);
    }
}

TEST_CASE("latent common cause correlation of the stated model", "[simulation]") {
    const CounterfactualTable t = generate_counterfactual_table(models::latent_common_cause(false), 1'000'000, 4);
    const Eigen::VectorXd a = t.m0.col(0).array() - t.m0.col(0).mean();
    const Eigen::VectorXd b = t.m0.col(1).array() - t.m0.col(1).mean();
    const double corr = a.dot(b) / std::sqrt(a.squaredNorm() * b.squaredNorm());
    CHECK(corr == Approx(6.0 / std::sqrt(50.0)).margin(0.01));
}

TEST_CASE("extraction errors, schema and full-sample consistency", "[simulation]") {
    const CounterfactualTable t = generate_counterfactual_table(models::latent_common_cause(false), 2000, 6);
    try {
        extract_observed(t, 2001, 1);
        FAIL("expected SampleTooLarge");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SampleTooLarge);
    }
    CHECK_THROWS_AS(extract_observed(t, 0, 1), Error);

    const Dataset a = extract_observed(t, 100, 1);
    const Dataset b = extract_observed(t, 100, 2);
    CHECK(a.mediator_names == b.mediator_names);
    CHECK(a.n_covariates() == 0);
    CHECK(a.m != b.m);

    const Dataset full = extract_observed(t, 2000, 3);
    double sum_obs[2] = {0, 0}, sum_tab[2] = {0, 0};
    for (Eigen::Index i = 0; i < 2000; ++i) {
        const int arm = static_cast<int>(full.t(i));
        sum_obs[arm] += full.y(i);
        sum_tab[static_cast<int>(t.t(i))] += t.outcome_joint(i, static_cast<int>(t.t(i)), static_cast<int>(t.t(i)));
    }
    CHECK(sum_obs[0] == Approx(sum_tab[0]).epsilon(1e-12));
    CHECK(sum_obs[1] == Approx(sum_tab[1]).epsilon(1e-12));

    const CounterfactualTable u = generate_counterfactual_table(models::latent_common_cause(true), 500, 6);
    const Dataset with_u = extract_observed(u, 100, 1);
    REQUIRE(with_u.n_covariates() == 1);
    CHECK(with_u.covariate_names[0] == "U");
}

TEST_CASE("large extractions recover the generating coefficients", "[simulation]") {
    CounterStream rng(99, StreamDomain::Test, 0);
    for (int trial = 0; trial < 4; ++trial) {
        SimulationModelSpec spec = models::continuous(rng.uniform() * 1.6 - 0.8);
        spec.mediator_intercepts = Eigen::Vector2d(rng.normal(), rng.normal());
        spec.mediator_slopes = Eigen::Vector2d(rng.normal(), rng.normal());
        spec.p_treat = 0.2 + 0.6 * rng.uniform();
        const Dataset d = test::sample_from(spec, 100000, 50 + static_cast<std::uint64_t>(trial));
        const MediatorSystemFit fit = fit_mediator_system(d);
        const Eigen::Index q = fit.design_xtx_inverse.rows();
        for (Eigen::Index k = 0; k < 2; ++k) {
            const double se_a = std::sqrt(fit.coef_cov(k * q, k * q));
            const double se_b = std::sqrt(fit.coef_cov(k * q + 1, k * q + 1));
            CHECK(std::abs(fit.alpha2(k) - spec.mediator_intercepts(k)) < 3.0 * se_a);
            CHECK(std::abs(fit.beta2(k) - spec.mediator_slopes(k)) < 3.0 * se_b);
        }
    }
}

TEST_CASE("truth cache round trip and keying", "[simulation]") {
    const auto dir = temp_dir("cache");
    const SimulationModelSpec spec = models::logistic(0.4);
    const CounterfactualTable fresh = cached_counterfactual_table(spec, 1000, 77, dir);
    const auto path = truth_cache_path(dir, spec, 1000, 77);
    REQUIRE(std::filesystem::exists(path));
    const CounterfactualTable again = cached_counterfactual_table(spec, 1000, 77, dir);
    CHECK(again.m0 == fresh.m0);
    CHECK(again.noise == fresh.noise);
    CHECK(again.gamma == fresh.gamma);
    CHECK(monte_carlo_truth(again).tau == monte_carlo_truth(fresh).tau);

    CHECK_FALSE(read_table_cache(path, spec.fingerprint(), 999, 77).has_value());
    CHECK_FALSE(read_table_cache(path, spec.fingerprint() + 1, 1000, 77).has_value());
    CHECK(spec.fingerprint() != models::logistic(0.5).fingerprint());

    {
        std::ofstream bad(dir / "bad.mdxt", std::ios::binary);
        bad << "NOTIT";
    }
    try {
        read_table_cache(dir / "bad.mdxt", 0, 0, 0);
        FAIL("expected CacheFormat");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::CacheFormat);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("frozen truth for the logistic model at correlation 0.4", "[simulation]") {
    std::ifstream is(std::string(MEDIMUX_SOURCE_DIR) + "/tests/golden/model2_rho04.json");
    REQUIRE(is);
    const auto golden = nlohmann::json::parse(is);
    const auto seed = golden.at("seed").get<std::uint64_t>();
    const auto rows = golden.at("n_rows").get<std::size_t>();
    const TruthEffects e = monte_carlo_truth(generate_counterfactual_table(models::logistic(0.4), rows, seed));
    const auto& g = golden.at("effects");
    CHECK(e.delta[0](0) == Approx(g.at("delta_1(0)").at("value").get<double>()).epsilon(1e-12));
    CHECK(e.delta[1](1) == Approx(g.at("delta_2(1)").at("value").get<double>()).epsilon(1e-12));
    CHECK(e.delta_joint[0] == Approx(g.at("delta_Z(0)").at("value").get<double>()).epsilon(1e-12));
    CHECK(e.zeta[1] == Approx(g.at("zeta(1)").at("value").get<double>()).epsilon(1e-12));
    CHECK(e.tau == Approx(g.at("tau").at("value").get<double>()).epsilon(1e-12));
}

TEST_CASE("simple analysis keeps one mediator", "[simulation]") {
    const Dataset d = test::sample_from(models::continuous(0.0), 20000, 61);
    const EstimateOptions opts{.n_draws = 300, .n_sims = 500, .seed = 3};
    const MediationResult simple = simple_analysis(d, 2, Family::Linear, opts);
    CHECK(simple.estimates.contains("delta_2"));
    CHECK(simple.estimates.contains("zeta"));
    CHECK(simple.estimates.contains("tau"));
    CHECK_FALSE(simple.estimates.contains("delta_1"));
    CHECK_FALSE(simple.estimates.contains("delta_Z"));
    CHECK(simple.estimates.mediator_ids == std::vector<int>{2});
    CHECK(max_identity_residual(simple.draws) < 1e-10);

    // Independent mediators: the single-mediator estimate agrees with the
    // joint analysis.
    const MediationResult multiple = estimate_effects(d, Family::Linear, opts);
    const EffectSummary& m = multiple.estimates.at("delta_2");
    CHECK(m.covers(simple.estimates.at("delta_2").estimate));
    CHECK_THROWS_AS(simple_analysis(d, 3, Family::Linear, opts), Error);
}

TEST_CASE("small study: metric identities and thread invariance", "[simulation][study]") {
    StudyConfig cfg;
    cfg.spec = models::continuous(0.0);
    cfg.sample_sizes = {200, 400};
    cfg.correlations = {0.0, 0.5};
    cfg.runs_per_cell = 10;
    cfg.estimate.n_draws = 100;
    cfg.estimate.n_sims = 100;
    cfg.truth_rows = 20000;
    cfg.threads = 1;
    const StudyResult a = run_study(cfg);
    cfg.threads = 3;
    const StudyResult b = run_study(cfg);
    REQUIRE(a.metrics.size() == b.metrics.size());
    // 5 multiple + 2 x 3 simple effects per cell, 4 cells.
    CHECK(a.metrics.size() == 44);
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
        const StudyMetrics& m = a.metrics[i];
        CHECK(m.mean_estimate == b.metrics[i].mean_estimate);
        CHECK(m.coverage == b.metrics[i].coverage);
        CHECK(m.mse >= m.variance - 1e-12);
        CHECK(m.coverage >= 0.0);
        CHECK(m.coverage <= 1.0);
        CHECK(m.runs + m.failures == 10);
        CHECK(m.bias == Approx(m.truth - m.mean_estimate));
    }
    CHECK(a.max_identity_residual < 1e-10);
    CHECK(a.find("multiple", "delta_Z", 400, 0.5).truth == Approx(44.0).margin(1e-9));
    CHECK_THROWS_AS(a.find("simple_3", "tau", 400, 0.5), Error);

    cfg.runs_per_cell = 1;
    CHECK_THROWS_AS(run_study(cfg), Error);
}

TEST_CASE("study counts failed runs", "[simulation][study]") {
    StudyConfig cfg;
    cfg.spec = models::continuous(0.0);
    cfg.sample_sizes = {3};  // cannot hold two rows per arm
    cfg.runs_per_cell = 3;
    cfg.estimate.n_draws = 10;
    cfg.estimate.n_sims = 10;
    cfg.truth_rows = 1000;
    cfg.include_simple = false;
    const StudyResult r = run_study(cfg);
    for (const auto& m : r.metrics) {
        CHECK(m.failures == 3);
        CHECK(m.runs == 0);
    }
}

TEST_CASE("zero-correlation simple analyses cover", "[simulation][study]") {
    StudyConfig cfg;
    cfg.spec = models::continuous(0.0);
    cfg.sample_sizes = {1000};
    cfg.correlations = {0.0};
    cfg.runs_per_cell = 200;
    cfg.estimate.n_draws = 500;
    cfg.estimate.n_sims = 500;
    cfg.master_seed = 11;
    cfg.threads = 4;
    const StudyResult r = run_study(cfg);
    for (const char* est : {"simple_1", "simple_2"}) {
        const std::string effect = std::string("delta_") + est[7];
        const double cov = r.find(est, effect, 1000, 0.0).coverage;
        CHECK(cov >= 0.91);
        CHECK(cov <= 0.98);
    }
}
