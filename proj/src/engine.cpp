#include "medimux/engine.hpp"

#include "medimux/error.hpp"
#include "medimux/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace medimux {

std::string delta_name(int mediator_id, int t) {
    return "delta_" + std::to_string(mediator_id) + "(" + std::to_string(t) + ")";
}

std::string delta_name(int mediator_id) { return "delta_" + std::to_string(mediator_id); }

std::string pm_name(int mediator_id) { return "PM_" + std::to_string(mediator_id); }

const EffectSummary& EffectEstimates::at(std::string_view name) const {
    for (const auto& e : effects) {
        if (e.name == name) {
            return e.summary;
        }
    }
    throw Error(ErrorCode::InvalidArgument, "no effect named '" + std::string(name) + "'");
}

bool EffectEstimates::contains(std::string_view name) const {
    return std::any_of(effects.begin(), effects.end(),
                       [name](const NamedEffect& e) { return e.name == name; });
}

void DrawEffects::resize(Eigen::Index n_draws, Eigen::Index n_mediators) {
    for (int t = 0; t < 2; ++t) {
        delta[t].setZero(n_draws, n_mediators);
        eta[t].setZero(n_draws, n_mediators);
        delta_joint[t].setZero(n_draws);
        zeta[t].setZero(n_draws);
    }
    tau.setZero(n_draws);
}

double max_identity_residual(const DrawEffects& draws) {
    double worst = 0.0;
    const auto k = static_cast<double>(draws.n_mediators());
    for (Eigen::Index r = 0; r < draws.n_draws(); ++r) {
        for (int t = 0; t < 2; ++t) {
            const double total = draws.tau(r) - draws.delta_joint[t](r) - draws.zeta[1 - t](r);
            const double decomposition =
                draws.delta_joint[t](r) -
                (draws.delta[t].row(r).sum() + draws.eta[t].row(r).sum()) / k;
            worst = std::max({worst, std::abs(total), std::abs(decomposition)});
        }
    }
    return worst;
}

Eigen::MatrixXd MediatorBlock::mixed(Eigen::Index k, int t_k, int t_rest) const {
    Eigen::MatrixXd out = arm(t_rest);
    out.col(k) = arm(t_k).col(k);
    return out;
}

namespace {

MediatorBlock simulate_with_factor(const ParameterDraw& draw, const Eigen::MatrixXd& residual_chol,
                                   const Eigen::MatrixXd& covariate_rows, CounterStream& rng) {
    const Eigen::Index n = covariate_rows.rows();
    const Eigen::Index k = draw.mediator.alpha2.size();
    Eigen::MatrixXd noise(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) {
            noise(i, j) = rng.normal();
        }
    }
    MediatorBlock block;
    block.z0 = noise * residual_chol.transpose() + covariate_rows * draw.mediator.xi2.transpose();
    block.z0.rowwise() += draw.mediator.alpha2.transpose();
    block.z1 = block.z0.rowwise() + draw.mediator.beta2.transpose();
    return block;
}

}  // namespace

MediatorBlock simulate_potential_mediators(const ParameterDraw& draw,
                                           const Eigen::MatrixXd& covariate_rows,
                                           CounterStream& rng) {
    return simulate_with_factor(draw, psd_cholesky(draw.sigma2), covariate_rows, rng);
}

Eigen::VectorXd simulate_potential_outcomes(const ParameterDraw& draw, int t,
                                            const Eigen::MatrixXd& mediators,
                                            const Eigen::MatrixXd& covariate_rows) {
    const OutcomeParams& o = draw.outcome;
    if (mediators.cols() != o.gamma.size() || covariate_rows.cols() != o.xi3.size() ||
        mediators.rows() != covariate_rows.rows()) {
        throw Error(ErrorCode::InvalidArgument, "mediator/covariate block dimensions disagree");
    }
    Eigen::VectorXd eta = mediators * o.gamma + covariate_rows * o.xi3;
    eta.array() += o.alpha3 + o.beta3 * static_cast<double>(t);
    if (draw.family == Family::Linear) {
        return eta;
    }
    return eta.unaryExpr([family = draw.family](double e) { return inverse_link(family, e); });
}

DrawEffects compute_draw_effects(const Dataset& data, std::span<const ParameterDraw> draws,
                                 std::size_t n_sims, std::uint64_t seed, unsigned threads) {
    if (draws.empty()) {
        throw Error(ErrorCode::InvalidArgument, "no parameter draws");
    }
    if (n_sims < 1) {
        throw Error(ErrorCode::InvalidArgument, "at least one simulated individual is required");
    }
    const Eigen::Index k = draws.front().mediator.alpha2.size();
    const Eigen::Index n = data.n_rows();
    const auto sims = static_cast<Eigen::Index>(n_sims);
    // sigma2 is shared by every draw of one fit.
    const Eigen::MatrixXd residual_chol = psd_cholesky(draws.front().sigma2);

    DrawEffects out;
    out.resize(static_cast<Eigen::Index>(draws.size()), k);

    parallel_for(draws.size(), threads, [&](std::size_t index) {
        const auto r = static_cast<Eigen::Index>(index);
        const ParameterDraw& draw = draws[index];
        CounterStream rng(seed, StreamDomain::Simulation, index);

        Eigen::MatrixXd xs(sims, data.n_covariates());
        for (Eigen::Index i = 0; i < sims; ++i) {
            xs.row(i) = data.x.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
        }
        const MediatorBlock block = simulate_with_factor(draw, residual_chol, xs, rng);

        std::array<Eigen::VectorXd, 2> y_z0;
        std::array<Eigen::VectorXd, 2> y_z1;
        for (int t = 0; t < 2; ++t) {
            y_z0[t] = simulate_potential_outcomes(draw, t, block.z0, xs);
            y_z1[t] = simulate_potential_outcomes(draw, t, block.z1, xs);
            out.delta_joint[t](r) = (y_z1[t] - y_z0[t]).mean();
        }
        for (int t = 0; t < 2; ++t) {
            out.zeta[t](r) = t == 0 ? (y_z0[1] - y_z0[0]).mean() : (y_z1[1] - y_z1[0]).mean();
        }
        out.tau(r) = (y_z1[1] - y_z0[0]).mean();

        for (Eigen::Index j = 0; j < k; ++j) {
            // Y(1, M^j(0), W^j(1)) and Y(0, M^j(1), W^j(0)).
            const Eigen::VectorXd y1_mixed = simulate_potential_outcomes(draw, 1, block.mixed(j, 0, 1), xs);
            const Eigen::VectorXd y0_mixed = simulate_potential_outcomes(draw, 0, block.mixed(j, 1, 0), xs);
            out.delta[1](r, j) = (y_z1[1] - y1_mixed).mean();
            out.delta[0](r, j) = (y0_mixed - y_z0[0]).mean();
            out.eta[1](r, j) = (y1_mixed - y_z0[1]).mean();
            out.eta[0](r, j) = (y_z1[0] - y0_mixed).mean();
        }
    });
    return out;
}

double interpolated_quantile(std::span<const double> sorted, double p) {
    if (sorted.empty()) {
        throw Error(ErrorCode::InvalidArgument, "quantile of an empty sample");
    }
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    if (frac == 0.0 || lo == hi) {
        return sorted[lo];
    }
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double empirical_p_value(std::span<const double> values) {
    const auto r = static_cast<double>(values.size());
    const auto below = std::count_if(values.begin(), values.end(), [](double v) { return v <= 0.0; });
    const auto above = std::count_if(values.begin(), values.end(), [](double v) { return v >= 0.0; });
    const double p = 2.0 * static_cast<double>(std::min(below, above)) / r;
    return std::clamp(p, 2.0 / r, 1.0);
}

EffectSummary summarize_values(std::span<const double> values, double ci_level) {
    if (values.size() < 2) {
        throw Error(ErrorCode::InvalidArgument, "at least two draws are needed to summarize");
    }
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    // Centering on the median keeps the mean of a constant sample exact.
    const double pivot = sorted[sorted.size() / 2];
    double shifted = 0.0;
    for (double v : values) {
        shifted += v - pivot;
    }
    EffectSummary s;
    s.estimate = pivot + shifted / static_cast<double>(values.size());
    const double tail = (1.0 - ci_level) / 2.0;
    s.ci_low = interpolated_quantile(sorted, tail);
    s.ci_high = interpolated_quantile(sorted, 1.0 - tail);
    s.p_value = empirical_p_value(values);
    return s;
}

namespace {

std::span<const double> as_span(const Eigen::VectorXd& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

EffectEstimates summarize(const DrawEffects& draws, double ci_level,
                          std::span<const int> mediator_ids) {
    if (draws.n_draws() < 2) {
        throw Error(ErrorCode::InvalidArgument, "at least two draws are needed to summarize");
    }
    if (!(ci_level > 0.0 && ci_level < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "ci_level must lie in (0, 1)");
    }
    const Eigen::Index k = draws.n_mediators();
    EffectEstimates est;
    est.ci_level = ci_level;
    est.n_draws = static_cast<std::size_t>(draws.n_draws());
    if (mediator_ids.empty()) {
        est.mediator_ids.resize(static_cast<std::size_t>(k));
        std::iota(est.mediator_ids.begin(), est.mediator_ids.end(), 1);
    } else {
        est.mediator_ids.assign(mediator_ids.begin(), mediator_ids.end());
    }

    auto add = [&](std::string name, const Eigen::VectorXd& values) {
        est.effects.push_back({std::move(name), summarize_values(as_span(values), ci_level)});
    };

    std::vector<Eigen::VectorXd> delta_avg(static_cast<std::size_t>(k));
    for (Eigen::Index j = 0; j < k; ++j) {
        const int id = est.mediator_ids[static_cast<std::size_t>(j)];
        const Eigen::VectorXd d0 = draws.delta[0].col(j);
        const Eigen::VectorXd d1 = draws.delta[1].col(j);
        delta_avg[static_cast<std::size_t>(j)] = 0.5 * (d0 + d1);
        add(delta_name(id, 0), d0);
        add(delta_name(id, 1), d1);
        add(delta_name(id), delta_avg[static_cast<std::size_t>(j)]);
    }
    const Eigen::VectorXd joint_avg = 0.5 * (draws.delta_joint[0] + draws.delta_joint[1]);
    add("delta_Z(0)", draws.delta_joint[0]);
    add("delta_Z(1)", draws.delta_joint[1]);
    add("delta_Z", joint_avg);
    add("zeta(0)", draws.zeta[0]);
    add("zeta(1)", draws.zeta[1]);
    add("zeta", 0.5 * (draws.zeta[0] + draws.zeta[1]));
    add("tau", draws.tau);

    const bool all_positive = (draws.tau.array() > 0.0).all();
    const bool all_negative = (draws.tau.array() < 0.0).all();
    est.degenerate_total_effect = !(all_positive || all_negative);
    for (Eigen::Index j = 0; j < k; ++j) {
        const int id = est.mediator_ids[static_cast<std::size_t>(j)];
        add(pm_name(id), delta_avg[static_cast<std::size_t>(j)].cwiseQuotient(draws.tau));
    }
    add("PM_Z", joint_avg.cwiseQuotient(draws.tau));
    return est;
}

MediationResult estimate_effects(const Dataset& data, Family family,
                                 const EstimateOptions& options) {
    data.validate(is_binary(family));
    if (options.n_draws < 2) {
        throw Error(ErrorCode::InvalidArgument, "at least two parameter draws are required");
    }
    if (options.n_sims < 1) {
        throw Error(ErrorCode::InvalidArgument, "at least one simulated individual is required");
    }
    MediationResult result;
    result.mediator_fit = fit_mediator_system(data);
    result.outcome_fit = fit_outcome(data, family);

    const Eigen::MatrixXd med_chol = psd_cholesky(result.mediator_fit.coef_cov);
    const Eigen::MatrixXd out_chol = psd_cholesky(result.outcome_fit.coef_cov);
    std::vector<ParameterDraw> draws(options.n_draws);
    parallel_for(options.n_draws, options.threads, [&](std::size_t r) {
        draws[r] = sample_parameter_draw(result.mediator_fit, result.outcome_fit, med_chol,
                                         out_chol, options.seed, r);
    });

    result.draws = compute_draw_effects(data, draws, options.n_sims, options.seed, options.threads);
    result.estimates = summarize(result.draws, options.ci_level);
    result.estimates.n_sims = options.n_sims;
    result.estimates.seed = options.seed;
    result.estimates.family = family;
    result.estimates.outcome_converged = result.outcome_fit.converged;
    return result;
}

}  // namespace medimux
