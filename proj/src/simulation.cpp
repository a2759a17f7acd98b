#include "medimux/simulation.hpp"

#include "medimux/error.hpp"
#include "medimux/parallel.hpp"
#include "medimux/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace medimux {

double CovariateSpec::variance() const {
    return distribution == Distribution::Normal ? sd * sd : mean * (1.0 - mean);
}

double CovariateSpec::expectation() const { return mean; }

Eigen::Index SimulationModelSpec::n_observed_covariates() const {
    return static_cast<Eigen::Index>(
        std::count_if(covariates.begin(), covariates.end(), [](const CovariateSpec& c) { return c.observed; }));
}

void SimulationModelSpec::validate() const {
    const Eigen::Index k = n_mediators();
    if (!(p_treat > 0.0 && p_treat < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "treatment probability must lie in (0, 1)");
    }
    if (k < 1 || mediator_slopes.size() != k || outcome_mediators.size() != k ||
        residual_cov.rows() != k || residual_cov.cols() != k) {
        throw Error(ErrorCode::InvalidArgument, "simulation model has inconsistent mediator dimensions");
    }
    if (family == Family::Probit) {
        throw Error(ErrorCode::InvalidArgument, "simulation models support linear and logit outcomes");
    }
    if (!(residual_cov - residual_cov.transpose()).isZero(1e-12)) {
        throw Error(ErrorCode::InvalidArgument, "residual covariance must be symmetric");
    }
    (void)psd_cholesky(residual_cov);
    for (const auto& c : covariates) {
        if (c.mediator_loadings.size() != k) {
            throw Error(ErrorCode::InvalidArgument, "covariate '" + c.name + "' needs K mediator loadings");
        }
        if (c.distribution == CovariateSpec::Distribution::Bernoulli && !(c.mean >= 0.0 && c.mean <= 1.0)) {
            throw Error(ErrorCode::InvalidArgument, "Bernoulli covariate probability outside [0, 1]");
        }
        if (c.distribution == CovariateSpec::Distribution::Normal && !(c.sd >= 0.0)) {
            throw Error(ErrorCode::InvalidArgument, "covariate sd must be non-negative");
        }
    }
    if (family == Family::Linear && !(outcome_noise_sd >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "outcome noise sd must be non-negative");
    }
}

SimulationModelSpec SimulationModelSpec::with_correlation(double rho) const {
    SimulationModelSpec out = *this;
    const Eigen::Index k = n_mediators();
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) {
            if (i != j) {
                out.residual_cov(i, j) = rho * std::sqrt(residual_cov(i, i) * residual_cov(j, j));
            }
        }
    }
    return out;
}

namespace {

class Fnv1a {
public:
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            hash_ = (hash_ ^ p[i]) * 0x100000001B3ULL;
        }
    }
    void value(double v) { bytes(&v, sizeof v); }
    void value(std::uint64_t v) { bytes(&v, sizeof v); }
    void values(const Eigen::MatrixXd& m) {
        value(static_cast<std::uint64_t>(m.rows()));
        value(static_cast<std::uint64_t>(m.cols()));
        for (Eigen::Index i = 0; i < m.size(); ++i) value(m.data()[i]);
    }
    std::uint64_t digest() const { return hash_; }

private:
    std::uint64_t hash_ = 0xCBF29CE484222325ULL;
};

}  // namespace

std::uint64_t SimulationModelSpec::fingerprint() const {
    Fnv1a h;
    h.value(p_treat);
    h.values(mediator_intercepts);
    h.values(mediator_slopes);
    h.values(residual_cov);
    h.value(static_cast<std::uint64_t>(family));
    h.value(outcome_intercept);
    h.value(outcome_treatment);
    h.values(outcome_mediators);
    h.value(outcome_noise_sd);
    for (const auto& c : covariates) {
        h.value(static_cast<std::uint64_t>(c.distribution));
        h.value(c.mean);
        h.value(c.sd);
        h.values(c.mediator_loadings);
        h.value(c.outcome_loading);
        h.value(static_cast<std::uint64_t>(c.observed));
    }
    return h.digest();
}

namespace models {

namespace {

Eigen::MatrixXd unit_correlation(double rho) {
    Eigen::MatrixXd s(2, 2);
    s << 1.0, rho, rho, 1.0;
    return s;
}

}  // namespace

SimulationModelSpec continuous(double correlation) {
    SimulationModelSpec s;
    s.name = "continuous";
    s.p_treat = 0.3;
    s.mediator_intercepts = Eigen::Vector2d(1.0, 2.0);
    s.mediator_slopes = Eigen::Vector2d(4.0, 6.0);
    s.residual_cov = unit_correlation(correlation);
    s.family = Family::Linear;
    s.outcome_intercept = 1.0;
    s.outcome_treatment = 10.0;
    s.outcome_mediators = Eigen::Vector2d(5.0, 4.0);
    s.outcome_noise_sd = 1.0;
    return s;
}

SimulationModelSpec logistic(double correlation) {
    SimulationModelSpec s;
    s.name = "logistic";
    s.p_treat = 0.3;
    s.mediator_intercepts = Eigen::Vector2d(0.1, 0.2);
    s.mediator_slopes = Eigen::Vector2d(0.6, 0.8);
    s.residual_cov = unit_correlation(correlation);
    s.family = Family::Logit;
    s.outcome_intercept = -2.0;
    s.outcome_treatment = 0.4;
    s.outcome_mediators = Eigen::Vector2d(0.6, 0.8);
    return s;
}

SimulationModelSpec latent_common_cause(bool u_observed) {
    SimulationModelSpec s = continuous(0.0);
    s.name = "latent_common_cause";
    CovariateSpec u;
    u.name = "U";
    u.mediator_loadings = Eigen::Vector2d(2.0, 3.0);
    u.observed = u_observed;
    s.covariates.push_back(u);
    return s;
}

}  // namespace models

double CounterfactualTable::latent_index(Eigen::Index row, int t, Eigen::Index k, int t_k,
                                         int t_rest) const {
    double eta = alpha3 + beta3 * static_cast<double>(t);
    for (Eigen::Index j = 0; j < gamma.size(); ++j) {
        const int arm = j == k ? t_k : t_rest;
        eta += gamma(j) * (arm == 0 ? m0(row, j) : m1(row, j));
    }
    for (Eigen::Index p = 0; p < covariate_outcome.size(); ++p) {
        eta += covariate_outcome(p) * covariates(row, p);
    }
    return eta;
}

double CounterfactualTable::realize(Eigen::Index row, double eta) const {
    if (family == Family::Linear) {
        return eta + noise(row);
    }
    return noise(row) < inverse_link(family, eta) ? 1.0 : 0.0;
}

double CounterfactualTable::outcome(Eigen::Index row, int t, std::span<const int> arms) const {
    if (static_cast<Eigen::Index>(arms.size()) != gamma.size()) {
        throw Error(ErrorCode::InvalidArgument, "one treatment arm per mediator is required");
    }
    double eta = alpha3 + beta3 * static_cast<double>(t);
    for (Eigen::Index j = 0; j < gamma.size(); ++j) {
        eta += gamma(j) * (arms[static_cast<std::size_t>(j)] == 0 ? m0(row, j) : m1(row, j));
    }
    for (Eigen::Index p = 0; p < covariate_outcome.size(); ++p) {
        eta += covariate_outcome(p) * covariates(row, p);
    }
    return realize(row, eta);
}

double CounterfactualTable::outcome_mixed(Eigen::Index row, int t, Eigen::Index k, int t_k,
                                          int t_rest) const {
    return realize(row, latent_index(row, t, k, t_k, t_rest));
}

double CounterfactualTable::outcome_joint(Eigen::Index row, int t, int t_all) const {
    return realize(row, latent_index(row, t, -1, t_all, t_all));
}

CounterfactualTable generate_counterfactual_table(const SimulationModelSpec& spec,
                                                  std::size_t n_rows, std::uint64_t seed) {
    spec.validate();
    if (n_rows < 1) {
        throw Error(ErrorCode::EmptyAfterFiltering, "counterfactual table needs at least one row");
    }
    const auto n = static_cast<Eigen::Index>(n_rows);
    const Eigen::Index k = spec.n_mediators();
    const auto p = static_cast<Eigen::Index>(spec.covariates.size());
    const Eigen::MatrixXd chol = psd_cholesky(spec.residual_cov);

    CounterfactualTable table;
    table.family = spec.family;
    table.alpha3 = spec.outcome_intercept;
    table.beta3 = spec.outcome_treatment;
    table.gamma = spec.outcome_mediators;
    table.covariate_outcome.resize(p);
    Eigen::MatrixXd loadings(k, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const auto& c = spec.covariates[static_cast<std::size_t>(j)];
        table.covariate_outcome(j) = c.outcome_loading;
        table.covariate_observed.push_back(c.observed);
        table.covariate_names.push_back(c.name);
        loadings.col(j) = c.mediator_loadings;
    }
    table.t.resize(n);
    table.m0.resize(n, k);
    table.m1.resize(n, k);
    table.covariates.resize(n, p);
    table.noise.resize(n);

    CounterStream rng(seed, StreamDomain::Generator, 0);
    Eigen::VectorXd z(k);
    for (Eigen::Index i = 0; i < n; ++i) {
        table.t(i) = rng.uniform() < spec.p_treat ? 1.0 : 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            const auto& c = spec.covariates[static_cast<std::size_t>(j)];
            table.covariates(i, j) = c.distribution == CovariateSpec::Distribution::Normal
                                         ? c.mean + c.sd * rng.normal()
                                         : (rng.uniform() < c.mean ? 1.0 : 0.0);
        }
        for (Eigen::Index j = 0; j < k; ++j) z(j) = rng.normal();
        const Eigen::VectorXd m0 = spec.mediator_intercepts + loadings * table.covariates.row(i).transpose() + chol * z;
        table.m0.row(i) = m0.transpose();
        table.m1.row(i) = (m0 + spec.mediator_slopes).transpose();
        table.noise(i) = spec.family == Family::Linear ? spec.outcome_noise_sd * rng.normal() : rng.uniform();
    }
    return table;
}

namespace {

// Running mean and standard error of a per-row contrast, in long double so
// that identities between different contrasts survive 10^6-row sums.
struct ContrastAccumulator {
    long double sum = 0.0L;
    long double sum_sq = 0.0L;

    void add(double v) {
        sum += v;
        sum_sq += static_cast<long double>(v) * v;
    }
    double mean(Eigen::Index n) const { return static_cast<double>(sum / static_cast<long double>(n)); }
    double standard_error(Eigen::Index n) const {
        const auto nn = static_cast<long double>(n);
        const long double m = sum / nn;
        const long double var = n > 1 ? (sum_sq - nn * m * m) / (nn - 1.0L) : 0.0L;
        return static_cast<double>(std::sqrt(std::max(var, 0.0L) / nn));
    }
};

}  // namespace

TruthEffects monte_carlo_truth(const CounterfactualTable& table) {
    const Eigen::Index n = table.n_rows();
    const Eigen::Index k = table.n_mediators();
    if (n < 1) {
        throw Error(ErrorCode::InvalidArgument, "counterfactual table is empty");
    }
    std::array<std::vector<ContrastAccumulator>, 2> delta;
    std::array<std::vector<ContrastAccumulator>, 2> eta;
    std::array<ContrastAccumulator, 2> joint;
    std::array<ContrastAccumulator, 2> zeta;
    ContrastAccumulator tau;
    for (int t = 0; t < 2; ++t) {
        delta[t].resize(static_cast<std::size_t>(k));
        eta[t].resize(static_cast<std::size_t>(k));
    }

    for (Eigen::Index i = 0; i < n; ++i) {
        // y[t][a] = Y(t, Z(a)).
        const double y00 = table.outcome_joint(i, 0, 0);
        const double y01 = table.outcome_joint(i, 0, 1);
        const double y10 = table.outcome_joint(i, 1, 0);
        const double y11 = table.outcome_joint(i, 1, 1);
        joint[0].add(y01 - y00);
        joint[1].add(y11 - y10);
        zeta[0].add(y10 - y00);
        zeta[1].add(y11 - y01);
        tau.add(y11 - y00);
        for (Eigen::Index j = 0; j < k; ++j) {
            const auto jj = static_cast<std::size_t>(j);
            const double y1_mixed = table.outcome_mixed(i, 1, j, 0, 1);  // Y(1, M^j(0), W(1))
            const double y0_mixed = table.outcome_mixed(i, 0, j, 1, 0);  // Y(0, M^j(1), W(0))
            delta[1][jj].add(y11 - y1_mixed);
            delta[0][jj].add(y0_mixed - y00);
            eta[1][jj].add(y1_mixed - y10);
            eta[0][jj].add(y01 - y0_mixed);
        }
    }

    TruthEffects out;
    out.n_rows = n;
    for (int t = 0; t < 2; ++t) {
        out.delta[t].resize(k);
        out.eta[t].resize(k);
        out.delta_se[t].resize(k);
        out.eta_se[t].resize(k);
        for (Eigen::Index j = 0; j < k; ++j) {
            const auto jj = static_cast<std::size_t>(j);
            out.delta[t](j) = delta[t][jj].mean(n);
            out.eta[t](j) = eta[t][jj].mean(n);
            out.delta_se[t](j) = delta[t][jj].standard_error(n);
            out.eta_se[t](j) = eta[t][jj].standard_error(n);
        }
        out.delta_joint[t] = joint[t].mean(n);
        out.delta_joint_se[t] = joint[t].standard_error(n);
        out.zeta[t] = zeta[t].mean(n);
        out.zeta_se[t] = zeta[t].standard_error(n);
    }
    out.tau = tau.mean(n);
    out.tau_se = tau.standard_error(n);
    return out;
}

Dataset extract_observed(const CounterfactualTable& table, std::size_t n, std::uint64_t seed) {
    const auto total = static_cast<std::size_t>(table.n_rows());
    if (n == 0) {
        throw Error(ErrorCode::EmptyAfterFiltering, "requested an empty sample");
    }
    if (n > total) {
        throw Error(ErrorCode::SampleTooLarge, "sample of " + std::to_string(n) +
                                                   " rows requested from a table of " +
                                                   std::to_string(total));
    }
    // Partial Fisher-Yates: the first n slots end up a uniform sample.
    std::vector<Eigen::Index> order(total);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    CounterStream rng(seed, StreamDomain::Extraction, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(total - i));
        std::swap(order[i], order[j]);
    }

    const Eigen::Index k = table.n_mediators();
    std::vector<Eigen::Index> observed_cols;
    for (std::size_t c = 0; c < table.covariate_observed.size(); ++c) {
        if (table.covariate_observed[c]) observed_cols.push_back(static_cast<Eigen::Index>(c));
    }

    Dataset data;
    const auto rows = static_cast<Eigen::Index>(n);
    data.t.resize(rows);
    data.m.resize(rows, k);
    data.y.resize(rows);
    data.x.resize(rows, static_cast<Eigen::Index>(observed_cols.size()));
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Eigen::Index src = order[static_cast<std::size_t>(i)];
        const int arm = table.t(src) > 0.5 ? 1 : 0;
        data.t(i) = table.t(src);
        data.m.row(i) = arm == 0 ? table.m0.row(src) : table.m1.row(src);
        data.y(i) = table.outcome_joint(src, arm, arm);
        for (std::size_t c = 0; c < observed_cols.size(); ++c) {
            data.x(i, static_cast<Eigen::Index>(c)) = table.covariates(src, observed_cols[c]);
        }
    }
    for (Eigen::Index j = 0; j < k; ++j) data.mediator_names.push_back("M" + std::to_string(j + 1));
    for (Eigen::Index c : observed_cols) {
        data.covariate_names.push_back(table.covariate_names[static_cast<std::size_t>(c)]);
    }
    return data;
}

MediationResult simple_analysis(const Dataset& data, int mediator_id, Family family,
                                const EstimateOptions& options) {
    if (mediator_id < 1 || mediator_id > data.n_mediators()) {
        throw Error(ErrorCode::InvalidArgument, "mediator id out of range");
    }
    const Dataset single = data.with_mediators({mediator_id - 1});
    MediationResult result = estimate_effects(single, family, options);

    const int ids[] = {mediator_id};
    EffectEstimates relabeled = summarize(result.draws, options.ci_level, ids);
    const std::string keep[] = {delta_name(mediator_id, 0), delta_name(mediator_id, 1),
                                delta_name(mediator_id), "zeta(0)", "zeta(1)", "zeta", "tau",
                                pm_name(mediator_id)};
    std::vector<NamedEffect> filtered;
    for (const auto& name : keep) {
        filtered.push_back({name, relabeled.at(name)});
    }
    result.estimates.effects = std::move(filtered);
    result.estimates.mediator_ids = relabeled.mediator_ids;
    return result;
}

ClosedFormInputs closed_form_from_spec(const SimulationModelSpec& spec,
                                       std::size_t covariate_rows, std::uint64_t seed) {
    spec.validate();
    const Eigen::Index k = spec.n_mediators();
    ClosedFormInputs in;
    in.family = spec.family;
    in.alpha2 = spec.mediator_intercepts;
    in.beta2 = spec.mediator_slopes;
    in.sigma2 = spec.residual_cov;
    in.alpha3 = spec.outcome_intercept;
    in.beta3 = spec.outcome_treatment;
    in.gamma = spec.outcome_mediators;
    in.sigma3 = spec.family == Family::Linear ? spec.outcome_noise_sd : 1.0;

    std::vector<const CovariateSpec*> observed;
    for (const auto& c : spec.covariates) {
        if (c.observed) {
            observed.push_back(&c);
            continue;
        }
        if (c.outcome_loading != 0.0) {
            throw Error(ErrorCode::InvalidArgument,
                        "latent covariate '" + c.name + "' affects the outcome: effects are not identified");
        }
        // Unobserved common causes become part of the mediator residual.
        if (c.distribution == CovariateSpec::Distribution::Bernoulli) {
            throw Error(ErrorCode::InvalidArgument,
                        "latent Bernoulli covariates make the mediator residual non-normal");
        }
        in.alpha2 += c.expectation() * c.mediator_loadings;
        in.sigma2 += c.variance() * c.mediator_loadings * c.mediator_loadings.transpose();
    }
    const auto p = static_cast<Eigen::Index>(observed.size());
    in.xi2.resize(k, p);
    in.xi3.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        in.xi2.col(j) = observed[static_cast<std::size_t>(j)]->mediator_loadings;
        in.xi3(j) = observed[static_cast<std::size_t>(j)]->outcome_loading;
    }
    if (p > 0) {
        const auto rows = static_cast<Eigen::Index>(std::max<std::size_t>(covariate_rows, 1));
        in.covariate_rows.resize(rows, p);
        CounterStream rng(seed, StreamDomain::Generator, 1);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < p; ++j) {
                const auto& c = *observed[static_cast<std::size_t>(j)];
                in.covariate_rows(i, j) = c.distribution == CovariateSpec::Distribution::Normal
                                              ? c.mean + c.sd * rng.normal()
                                              : (rng.uniform() < c.mean ? 1.0 : 0.0);
            }
        }
    } else {
        in.covariate_rows.resize(0, 0);
    }
    return in;
}

namespace {

constexpr char kCacheMagic[5] = {'M', 'D', 'X', 'T', '1'};

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
bool get(std::istream& is, T& v) {
    return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof v));
}

void put_block(std::ostream& os, const Eigen::MatrixXd& m) {
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(m.size() * static_cast<Eigen::Index>(sizeof(double))));
}

bool get_block(std::istream& is, Eigen::MatrixXd& m) {
    return static_cast<bool>(is.read(reinterpret_cast<char*>(m.data()),
                                     static_cast<std::streamsize>(m.size() * static_cast<Eigen::Index>(sizeof(double)))));
}

}  // namespace

std::filesystem::path truth_cache_path(const std::filesystem::path& dir,
                                       const SimulationModelSpec& spec, std::size_t n_rows,
                                       std::uint64_t seed) {
    std::ostringstream name;
    name << "truth-" << std::hex << std::setw(16) << std::setfill('0') << spec.fingerprint() << "-"
         << std::dec << n_rows << "-" << std::hex << std::setw(16) << std::setfill('0') << seed
         << ".mdxt";
    return dir / name.str();
}

void write_table_cache(const std::filesystem::path& path, const CounterfactualTable& table,
                       std::uint64_t spec_fingerprint, std::uint64_t seed) {
    static_assert(std::endian::native == std::endian::little, "cache format is little-endian");
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) {
            throw Error(ErrorCode::Io, "cannot write cache file " + tmp.string());
        }
        os.write(kCacheMagic, sizeof kCacheMagic);
        put(os, spec_fingerprint);
        put(os, seed);
        put(os, static_cast<std::uint64_t>(table.n_rows()));
        put(os, static_cast<std::uint32_t>(table.n_mediators()));
        put(os, static_cast<std::uint32_t>(table.covariates.cols()));
        put(os, static_cast<std::uint8_t>(table.family));
        put(os, table.alpha3);
        put(os, table.beta3);
        put_block(os, table.gamma);
        put_block(os, table.covariate_outcome);
        for (std::size_t c = 0; c < table.covariate_observed.size(); ++c) {
            put(os, static_cast<std::uint8_t>(table.covariate_observed[c]));
            const std::string& name = table.covariate_names[c];
            put(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
        }
        put_block(os, table.t);
        put_block(os, table.m0);
        put_block(os, table.m1);
        put_block(os, table.covariates);
        put_block(os, table.noise);
        if (!os) {
            throw Error(ErrorCode::Io, "failed writing cache file " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

std::optional<CounterfactualTable> read_table_cache(const std::filesystem::path& path,
                                                    std::uint64_t spec_fingerprint,
                                                    std::size_t n_rows, std::uint64_t seed) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        return std::nullopt;
    }
    char magic[sizeof kCacheMagic];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCacheMagic, sizeof magic) != 0) {
        throw Error(ErrorCode::CacheFormat, "not a truth cache file: " + path.string());
    }
    std::uint64_t fp = 0, file_seed = 0, rows = 0;
    std::uint32_t k = 0, p = 0;
    std::uint8_t family = 0;
    if (!get(is, fp) || !get(is, file_seed) || !get(is, rows) || !get(is, k) || !get(is, p) ||
        !get(is, family)) {
        throw Error(ErrorCode::CacheFormat, "truncated cache header: " + path.string());
    }
    if (fp != spec_fingerprint || file_seed != seed || rows != n_rows) {
        return std::nullopt;
    }
    CounterfactualTable table;
    table.family = static_cast<Family>(family);
    const auto n = static_cast<Eigen::Index>(rows);
    table.gamma.resize(k);
    table.covariate_outcome.resize(p);
    bool ok = get(is, table.alpha3) && get(is, table.beta3);
    Eigen::MatrixXd gamma(k, 1), cov_out(p, 1);
    ok = ok && get_block(is, gamma) && get_block(is, cov_out);
    for (std::uint32_t c = 0; ok && c < p; ++c) {
        std::uint8_t observed = 0;
        std::uint32_t len = 0;
        ok = get(is, observed) && get(is, len);
        std::string name(len, '\0');
        ok = ok && is.read(name.data(), len);
        table.covariate_observed.push_back(observed != 0);
        table.covariate_names.push_back(std::move(name));
    }
    Eigen::MatrixXd t(n, 1), noise(n, 1);
    table.m0.resize(n, k);
    table.m1.resize(n, k);
    table.covariates.resize(n, p);
    ok = ok && get_block(is, t) && get_block(is, table.m0) && get_block(is, table.m1) &&
         get_block(is, table.covariates) && get_block(is, noise);
    if (!ok) {
        throw Error(ErrorCode::CacheFormat, "truncated cache body: " + path.string());
    }
    table.gamma = gamma.col(0);
    table.covariate_outcome = cov_out.col(0);
    table.t = t.col(0);
    table.noise = noise.col(0);
    return table;
}

CounterfactualTable cached_counterfactual_table(const SimulationModelSpec& spec,
                                                std::size_t n_rows, std::uint64_t seed,
                                                const std::optional<std::filesystem::path>& cache_dir) {
    if (!cache_dir) {
        return generate_counterfactual_table(spec, n_rows, seed);
    }
    const auto path = truth_cache_path(*cache_dir, spec, n_rows, seed);
    if (auto cached = read_table_cache(path, spec.fingerprint(), n_rows, seed)) {
        return std::move(*cached);
    }
    CounterfactualTable table = generate_counterfactual_table(spec, n_rows, seed);
    std::filesystem::create_directories(*cache_dir);
    write_table_cache(path, table, spec.fingerprint(), seed);
    return table;
}

const StudyMetrics& StudyResult::find(std::string_view estimator, std::string_view effect,
                                      std::size_t sample_size, double correlation) const {
    for (const auto& m : metrics) {
        if (m.estimator == estimator && m.effect == effect && m.sample_size == sample_size &&
            m.correlation == correlation) {
            return m;
        }
    }
    throw Error(ErrorCode::InvalidArgument, "no study metrics for " + std::string(estimator) +
                                                "/" + std::string(effect));
}

namespace {

constexpr std::uint64_t kTruthTag = 0x7472757468ULL;  // "truth"

struct TrackedEffect {
    std::string estimator;
    std::string effect;
    double truth = 0.0;
};

struct RunOutcome {
    std::vector<double> estimates;  // one per tracked effect, NaN on failure
    std::vector<char> covered;
    double identity_residual = 0.0;
};

}  // namespace

StudyResult run_study(const StudyConfig& config) {
    config.spec.validate();
    if (config.runs_per_cell < 2) {
        throw Error(ErrorCode::InvalidArgument, "runs_per_cell must be at least 2");
    }
    const Eigen::Index k = config.spec.n_mediators();
    StudyResult result;

    for (std::size_t ci = 0; ci < config.correlations.size(); ++ci) {
        const double rho = config.correlations[ci];
        const SimulationModelSpec spec = config.spec.with_correlation(rho);
        const CounterfactualTable table = cached_counterfactual_table(
            spec, config.truth_rows, derive_seed(config.master_seed, kTruthTag, ci), config.cache_dir);
        const TruthEffects truth = monte_carlo_truth(table);

        std::vector<TrackedEffect> tracked;
        for (Eigen::Index j = 0; j < k; ++j) {
            tracked.push_back({"multiple", delta_name(static_cast<int>(j + 1)), truth.delta_average(j)});
        }
        tracked.push_back({"multiple", "delta_Z", truth.delta_joint_average()});
        tracked.push_back({"multiple", "zeta", truth.zeta_average()});
        tracked.push_back({"multiple", "tau", truth.tau});
        if (config.include_simple) {
            for (Eigen::Index j = 0; j < k; ++j) {
                const int id = static_cast<int>(j + 1);
                const std::string est = "simple_" + std::to_string(id);
                tracked.push_back({est, delta_name(id), truth.delta_average(j)});
                tracked.push_back({est, "zeta", truth.zeta_average()});
                tracked.push_back({est, "tau", truth.tau});
            }
        }

        for (std::size_t si = 0; si < config.sample_sizes.size(); ++si) {
            const std::size_t n = config.sample_sizes[si];
            const std::size_t cell = ci * config.sample_sizes.size() + si;
            std::vector<RunOutcome> runs(config.runs_per_cell);

            parallel_for(config.runs_per_cell, config.threads, [&](std::size_t run) {
                const std::uint64_t run_seed = derive_seed(config.master_seed, cell, run);
                RunOutcome& out = runs[run];
                out.estimates.assign(tracked.size(), std::numeric_limits<double>::quiet_NaN());
                out.covered.assign(tracked.size(), 0);
                const Dataset data = extract_observed(table, n, hash_combine(run_seed, 0));

                EstimateOptions opts = config.estimate;
                opts.threads = 1;
                auto record = [&](const std::string& estimator, const MediationResult& r) {
                    out.identity_residual = std::max(out.identity_residual, max_identity_residual(r.draws));
                    for (std::size_t e = 0; e < tracked.size(); ++e) {
                        if (tracked[e].estimator != estimator) continue;
                        const EffectSummary& s = r.estimates.at(tracked[e].effect);
                        out.estimates[e] = s.estimate;
                        out.covered[e] = s.covers(tracked[e].truth) ? 1 : 0;
                    }
                };
                try {
                    opts.seed = run_seed;
                    record("multiple", estimate_effects(data, spec.family, opts));
                } catch (const Error&) {
                    // Counted as a failure for every multiple-analysis effect.
                }
                if (config.include_simple) {
                    for (Eigen::Index j = 0; j < k; ++j) {
                        const int id = static_cast<int>(j + 1);
                        try {
                            opts.seed = hash_combine(run_seed, 100 + static_cast<std::uint64_t>(id));
                            record("simple_" + std::to_string(id), simple_analysis(data, id, spec.family, opts));
                        } catch (const Error&) {
                        }
                    }
                }
            });

            for (std::size_t e = 0; e < tracked.size(); ++e) {
                StudyMetrics m;
                m.estimator = tracked[e].estimator;
                m.effect = tracked[e].effect;
                m.sample_size = n;
                m.correlation = rho;
                m.truth = tracked[e].truth;
                long double sum = 0.0L;
                std::size_t hits = 0;
                for (const auto& r : runs) {
                    if (std::isnan(r.estimates[e])) {
                        ++m.failures;
                        continue;
                    }
                    ++m.runs;
                    sum += r.estimates[e];
                    hits += static_cast<std::size_t>(r.covered[e]);
                }
                if (m.runs > 0) {
                    const auto count = static_cast<double>(m.runs);
                    m.mean_estimate = static_cast<double>(sum / static_cast<long double>(m.runs));
                    m.bias = m.truth - m.mean_estimate;
                    m.coverage = static_cast<double>(hits) / count;
                    long double ss = 0.0L;
                    for (const auto& r : runs) {
                        if (std::isnan(r.estimates[e])) continue;
                        const long double d = r.estimates[e] - m.mean_estimate;
                        ss += d * d;
                    }
                    m.variance = static_cast<double>(ss / static_cast<long double>(m.runs));
                    m.mse = m.bias * m.bias + m.variance;
                }
                result.metrics.push_back(std::move(m));
            }
            for (const auto& r : runs) {
                result.max_identity_residual = std::max(result.max_identity_residual, r.identity_residual);
            }
        }
    }
    return result;
}

}  // namespace medimux
