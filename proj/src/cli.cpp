#include "medimux/cli.hpp"

#include "medimux/regression.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace medimux {

using nlohmann::json;

void ColumnRoles::validate() const {
    if (treatment.empty() || outcome.empty()) {
        throw Error(ErrorCode::InvalidArgument, "treatment and outcome columns are required");
    }
    if (mediators.empty()) {
        throw Error(ErrorCode::InvalidArgument, "at least one mediator column is required");
    }
    std::set<std::string> seen;
    auto claim = [&](const std::string& name) {
        if (!seen.insert(name).second) {
            throw Error(ErrorCode::InvalidArgument, "column '" + name + "' has more than one role");
        }
    };
    claim(treatment);
    claim(outcome);
    for (const auto& m : mediators) claim(m);
    for (const auto& c : covariates) claim(c);
}

namespace {

// One CSV record; handles quoted fields with doubled quotes. Returns false at
// end of input.
bool next_record(std::string_view text, std::size_t& pos, std::vector<std::string>& fields) {
    fields.clear();
    if (pos >= text.size()) return false;
    std::string field;
    bool quoted = false;
    while (pos < text.size()) {
        const char c = text[pos++];
        if (quoted) {
            if (c == '"') {
                if (pos < text.size() && text[pos] == '"') {
                    field += '"';
                    ++pos;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            break;
        } else if (c != '\r') {
            field += c;
        }
    }
    fields.push_back(std::move(field));
    return true;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

std::optional<double> parse_number(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || !std::isfinite(v)) {
        return std::nullopt;
    }
    return v;
}

}  // namespace

IngestResult ingest_csv_text(std::string_view text, const ColumnRoles& roles, Family family) {
    roles.validate();
    if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
    std::size_t pos = 0;
    std::vector<std::string> header;
    if (!next_record(text, pos, header)) {
        throw Error(ErrorCode::InvalidDataset, "input has no header row");
    }
    auto column = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (trim(header[i]) == name) return i;
        }
        throw Error(ErrorCode::MissingColumn, "column '" + name + "' not found");
    };
    const std::size_t t_col = column(roles.treatment);
    const std::size_t y_col = column(roles.outcome);
    std::vector<std::size_t> m_cols, x_cols;
    for (const auto& m : roles.mediators) m_cols.push_back(column(m));
    for (const auto& c : roles.covariates) x_cols.push_back(column(c));

    std::vector<std::size_t> wanted{t_col, y_col};
    wanted.insert(wanted.end(), m_cols.begin(), m_cols.end());
    wanted.insert(wanted.end(), x_cols.begin(), x_cols.end());

    IngestResult out;
    std::vector<std::vector<double>> rows;
    std::vector<std::string> fields;
    while (next_record(text, pos, fields)) {
        if (fields.size() == 1 && trim(fields[0]).empty()) continue;  // blank line
        ++out.rows_read;
        std::vector<double> values(header.size(), 0.0);
        bool ok = true;
        for (std::size_t c : wanted) {
            const auto v = c < fields.size() ? parse_number(fields[c]) : std::nullopt;
            if (!v) {
                ok = false;
                break;
            }
            values[c] = *v;
        }
        if (!ok) {
            ++out.rows_rejected;
            continue;
        }
        rows.push_back(std::move(values));
    }
    if (rows.empty()) {
        throw Error(ErrorCode::EmptyAfterFiltering, "no complete rows remain after filtering");
    }

    const auto n = static_cast<Eigen::Index>(rows.size());
    Dataset& d = out.data;
    d.t.resize(n);
    d.y.resize(n);
    d.m.resize(n, static_cast<Eigen::Index>(m_cols.size()));
    d.x.resize(n, static_cast<Eigen::Index>(x_cols.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = rows[static_cast<std::size_t>(i)];
        d.t(i) = r[t_col];
        d.y(i) = r[y_col];
        for (std::size_t j = 0; j < m_cols.size(); ++j) d.m(i, static_cast<Eigen::Index>(j)) = r[m_cols[j]];
        for (std::size_t j = 0; j < x_cols.size(); ++j) d.x(i, static_cast<Eigen::Index>(j)) = r[x_cols[j]];
    }
    d.treatment_name = roles.treatment;
    d.outcome_name = roles.outcome;
    d.mediator_names = roles.mediators;
    d.covariate_names = roles.covariates;

    if (!((d.t.array() == 0.0) || (d.t.array() == 1.0)).all()) {
        throw Error(ErrorCode::NonBinaryTreatment, "treatment column '" + roles.treatment + "' is not coded 0/1");
    }
    if (is_binary(family) && !((d.y.array() == 0.0) || (d.y.array() == 1.0)).all()) {
        throw Error(ErrorCode::NonBinaryOutcome, "outcome column '" + roles.outcome + "' is not coded 0/1");
    }
    return out;
}

IngestResult ingest_csv(const std::filesystem::path& path, const ColumnRoles& roles, Family family) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error(ErrorCode::Io, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    return ingest_csv_text(ss.str(), roles, family);
}

std::vector<double> boxcox(std::span<const double> values, double lambda) {
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = values[i];
        if (!(v > 0.0)) {
            throw IndexedError(ErrorCode::NonPositiveValue, static_cast<long>(i),
                               "Box-Cox needs positive values; row " + std::to_string(i) + " is not");
        }
        out[i] = lambda == 0.0 ? std::log(v) : std::expm1(lambda * std::log(v)) / lambda;
    }
    return out;
}

void apply_boxcox(Dataset& data, const std::string& column, double lambda) {
    auto transform = [&](auto&& col) {
        const Eigen::VectorXd v = col;
        const auto t = boxcox(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), lambda);
        col = Eigen::Map<const Eigen::VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
    };
    if (column == data.outcome_name) {
        transform(data.y);
        return;
    }
    for (std::size_t j = 0; j < data.mediator_names.size(); ++j) {
        if (data.mediator_names[j] == column) {
            transform(data.m.col(static_cast<Eigen::Index>(j)));
            return;
        }
    }
    for (std::size_t j = 0; j < data.covariate_names.size(); ++j) {
        if (data.covariate_names[j] == column) {
            transform(data.x.col(static_cast<Eigen::Index>(j)));
            return;
        }
    }
    throw Error(ErrorCode::MissingColumn, "Box-Cox column '" + column + "' is not a declared column");
}

void RunConfig::validate() const {
    if (estimate.n_draws < 2) throw Error(ErrorCode::InvalidArgument, "draws must be at least 2");
    if (estimate.n_sims < 1) throw Error(ErrorCode::InvalidArgument, "sims must be at least 1");
    if (!(estimate.ci_level > 0.5 && estimate.ci_level < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "ci must lie in (0.5, 1)");
    }
    if (simple && *simple < 1) throw Error(ErrorCode::InvalidArgument, "simple mediator id is 1-based");
    if (runs < 2) throw Error(ErrorCode::InvalidArgument, "runs must be at least 2");
    if (truth_rows < 1) throw Error(ErrorCode::InvalidArgument, "truth_rows must be at least 1");
}

void apply_config_json(RunConfig& c, const json& j) {
    if (!j.is_object()) {
        throw Error(ErrorCode::InvalidArgument, "config must be a JSON object");
    }
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "input") c.input = v.get<std::string>();
            else if (key == "treatment") c.roles.treatment = v.get<std::string>();
            else if (key == "mediators") c.roles.mediators = v.get<std::vector<std::string>>();
            else if (key == "outcome") c.roles.outcome = v.get<std::string>();
            else if (key == "covariates") c.roles.covariates = v.get<std::vector<std::string>>();
            else if (key == "family") c.family = parse_family(v.get<std::string>());
            else if (key == "draws") c.estimate.n_draws = v.get<std::size_t>();
            else if (key == "sims") c.estimate.n_sims = v.get<std::size_t>();
            else if (key == "ci") c.estimate.ci_level = v.get<double>();
            else if (key == "seed") c.estimate.seed = v.get<std::uint64_t>();
            else if (key == "threads") c.estimate.threads = v.get<unsigned>();
            else if (key == "simple") c.simple = v.get<int>();
            else if (key == "boxcox") c.boxcox = v.get<std::map<std::string, double>>();
            else if (key == "output") c.output = v.get<std::string>();
            else if (key == "draws_csv") c.draws_csv = v.get<std::string>();
            else if (key == "model") {
                if (v.is_string()) c.model = v.get<std::string>();
                else c.model_spec = v;
            }
            else if (key == "correlation") c.correlation = v.get<double>();
            else if (key == "n") c.n = v.get<std::size_t>();
            else if (key == "truth_rows") c.truth_rows = v.get<std::size_t>();
            else if (key == "sample_sizes") c.sample_sizes = v.get<std::vector<std::size_t>>();
            else if (key == "correlations") c.correlations = v.get<std::vector<double>>();
            else if (key == "runs") c.runs = v.get<std::size_t>();
            else if (key == "include_simple") c.include_simple = v.get<bool>();
            else if (key == "covariate_rows") c.covariate_rows = v.get<std::size_t>();
            else if (key == "cache_dir") c.cache_dir = v.get<std::string>();
            else if (key == "cache_out") c.cache_out = v.get<std::string>();
            else throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
        } catch (const json::exception& e) {
            throw Error(ErrorCode::InvalidArgument, "config key '" + key + "': " + e.what());
        }
    }
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream is(path);
    if (!is) {
        throw Error(ErrorCode::Io, "cannot open config " + path.string());
    }
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::InvalidArgument, "config " + path.string() + ": " + e.what());
    }
    apply_config_json(base, j);
    return base;
}

namespace {

Eigen::VectorXd vector_from(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json vector_to(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json matrix_to(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const Eigen::VectorXd r = m.row(i).transpose();
        rows.push_back(vector_to(r));
    }
    return rows;
}

}  // namespace

SimulationModelSpec spec_from_json(const json& j) {
    try {
        SimulationModelSpec s;
        s.name = j.value("name", std::string("custom"));
        s.p_treat = j.at("p_treat").get<double>();
        s.mediator_intercepts = vector_from(j.at("mediator_intercepts"));
        s.mediator_slopes = vector_from(j.at("mediator_slopes"));
        const auto rows = j.at("residual_cov").get<std::vector<std::vector<double>>>();
        const auto k = static_cast<Eigen::Index>(rows.size());
        s.residual_cov.resize(k, k);
        for (Eigen::Index r = 0; r < k; ++r) {
            if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)].size()) != k) {
                throw Error(ErrorCode::InvalidArgument, "residual_cov must be square");
            }
            for (Eigen::Index c = 0; c < k; ++c) s.residual_cov(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
        }
        s.family = parse_family(j.at("family").get<std::string>());
        s.outcome_intercept = j.at("outcome_intercept").get<double>();
        s.outcome_treatment = j.at("outcome_treatment").get<double>();
        s.outcome_mediators = vector_from(j.at("outcome_mediators"));
        s.outcome_noise_sd = j.value("outcome_noise_sd", 1.0);
        for (const auto& cj : j.value("covariates", json::array())) {
            CovariateSpec c;
            c.name = cj.at("name").get<std::string>();
            const auto dist = cj.value("distribution", std::string("normal"));
            if (dist == "normal") c.distribution = CovariateSpec::Distribution::Normal;
            else if (dist == "bernoulli") c.distribution = CovariateSpec::Distribution::Bernoulli;
            else throw Error(ErrorCode::InvalidArgument, "unknown covariate distribution '" + dist + "'");
            c.mean = cj.value("mean", 0.0);
            c.sd = cj.value("sd", 1.0);
            c.mediator_loadings = vector_from(cj.at("mediator_loadings"));
            c.outcome_loading = cj.value("outcome_loading", 0.0);
            c.observed = cj.value("observed", true);
            s.covariates.push_back(std::move(c));
        }
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("model spec: ") + e.what());
    }
}

json spec_to_json(const SimulationModelSpec& s) {
    json j;
    j["name"] = s.name;
    j["p_treat"] = s.p_treat;
    j["mediator_intercepts"] = vector_to(s.mediator_intercepts);
    j["mediator_slopes"] = vector_to(s.mediator_slopes);
    j["residual_cov"] = matrix_to(s.residual_cov);
    j["family"] = std::string(to_string(s.family));
    j["outcome_intercept"] = s.outcome_intercept;
    j["outcome_treatment"] = s.outcome_treatment;
    j["outcome_mediators"] = vector_to(s.outcome_mediators);
    j["outcome_noise_sd"] = s.outcome_noise_sd;
    json covs = json::array();
    for (const auto& c : s.covariates) {
        covs.push_back({{"name", c.name},
                        {"distribution", c.distribution == CovariateSpec::Distribution::Normal ? "normal" : "bernoulli"},
                        {"mean", c.mean},
                        {"sd", c.sd},
                        {"mediator_loadings", vector_to(c.mediator_loadings)},
                        {"outcome_loading", c.outcome_loading},
                        {"observed", c.observed}});
    }
    j["covariates"] = covs;
    return j;
}

SimulationModelSpec model_from_config(const RunConfig& config) {
    if (config.model_spec) {
        return spec_from_json(*config.model_spec);
    }
    if (config.model == "model1") return models::continuous(config.correlation);
    if (config.model == "model2") return models::logistic(config.correlation);
    if (config.model == "latent_u") return models::latent_common_cause(false);
    if (config.model == "latent_u_observed") return models::latent_common_cause(true);
    throw Error(ErrorCode::InvalidArgument, "unknown model preset '" + config.model + "'");
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error(ErrorCode::Io, "cannot open " + path.string());
    }
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof buf);
        EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(is.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return hex.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!os) {
            throw Error(ErrorCode::Io, "cannot write " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

json effects_json(const EffectEstimates& e) {
    json effects = json::object();
    for (const auto& ne : e.effects) {
        effects[ne.name] = {{"estimate", ne.summary.estimate},
                            {"ci_low", ne.summary.ci_low},
                            {"ci_high", ne.summary.ci_high},
                            {"p_value", ne.summary.p_value}};
    }
    return {{"effects", effects},
            {"mediator_ids", e.mediator_ids},
            {"n_draws", e.n_draws},
            {"n_sims", e.n_sims},
            {"ci_level", e.ci_level},
            {"seed", e.seed},
            {"family", std::string(to_string(e.family))},
            {"degenerate_total_effect", e.degenerate_total_effect},
            {"outcome_converged", e.outcome_converged}};
}

json mediate_report(const EffectEstimates& estimates, const RunConfig& config,
                    const IngestResult& ingest, const std::string& input_digest) {
    json j;
    j["schema"] = "medimux.effects/1";
    j["mode"] = config.simple ? "simple" : "multiple";
    j["columns"] = {{"treatment", ingest.data.treatment_name},
                    {"mediators", ingest.data.mediator_names},
                    {"outcome", ingest.data.outcome_name},
                    {"covariates", ingest.data.covariate_names}};
    j["estimates"] = effects_json(estimates);
    j["data"] = {{"rows_read", ingest.rows_read},
                 {"rows_rejected", ingest.rows_rejected},
                 {"rows_used", static_cast<std::size_t>(ingest.data.n_rows())}};
    json boxcox = json::object();
    for (const auto& [col, lambda] : config.boxcox) boxcox[col] = lambda;
    j["provenance"] = {{"seed", config.estimate.seed},
                       {"n_draws", config.estimate.n_draws},
                       {"n_sims", config.estimate.n_sims},
                       {"version", kVersion},
                       {"input_sha256", input_digest},
                       {"boxcox", boxcox}};
    return j;
}

namespace {

std::string format_double(double v) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

}  // namespace

std::string draws_csv(const DrawEffects& draws, std::span<const int> mediator_ids) {
    std::ostringstream os;
    const Eigen::Index k = draws.n_mediators();
    auto id = [&](Eigen::Index j) {
        return static_cast<std::size_t>(j) < mediator_ids.size() ? mediator_ids[static_cast<std::size_t>(j)]
                                                                 : static_cast<int>(j + 1);
    };
    os << "draw";
    for (int t = 0; t < 2; ++t) {
        for (Eigen::Index j = 0; j < k; ++j) os << ",delta_" << id(j) << "(" << t << ")";
    }
    for (int t = 0; t < 2; ++t) {
        for (Eigen::Index j = 0; j < k; ++j) os << ",eta_" << id(j) << "(" << t << ")";
    }
    os << ",delta_Z(0),delta_Z(1),zeta(0),zeta(1),tau\n";
    for (Eigen::Index r = 0; r < draws.n_draws(); ++r) {
        os << r;
        for (int t = 0; t < 2; ++t) {
            for (Eigen::Index j = 0; j < k; ++j) os << ',' << format_double(draws.delta[t](r, j));
        }
        for (int t = 0; t < 2; ++t) {
            for (Eigen::Index j = 0; j < k; ++j) os << ',' << format_double(draws.eta[t](r, j));
        }
        os << ',' << format_double(draws.delta_joint[0](r)) << ',' << format_double(draws.delta_joint[1](r))
           << ',' << format_double(draws.zeta[0](r)) << ',' << format_double(draws.zeta[1](r)) << ','
           << format_double(draws.tau(r)) << '\n';
    }
    return os.str();
}

json truth_json(const TruthEffects& truth, const SimulationModelSpec& spec, std::uint64_t seed) {
    json effects = json::object();
    auto put = [&](const std::string& name, double value, double se) {
        effects[name] = {{"value", value}, {"mc_se", se}};
    };
    const Eigen::Index k = truth.delta[0].size();
    for (Eigen::Index j = 0; j < k; ++j) {
        const int id = static_cast<int>(j + 1);
        for (int t = 0; t < 2; ++t) {
            put(delta_name(id, t), truth.delta[t](j), truth.delta_se[t](j));
            put("eta_" + std::to_string(id) + "(" + std::to_string(t) + ")", truth.eta[t](j), truth.eta_se[t](j));
        }
        put(delta_name(id), truth.delta_average(j), 0.5 * std::hypot(truth.delta_se[0](j), truth.delta_se[1](j)));
    }
    for (int t = 0; t < 2; ++t) {
        put("delta_Z(" + std::to_string(t) + ")", truth.delta_joint[t], truth.delta_joint_se[t]);
        put("zeta(" + std::to_string(t) + ")", truth.zeta[t], truth.zeta_se[t]);
    }
    put("delta_Z", truth.delta_joint_average(), 0.5 * std::hypot(truth.delta_joint_se[0], truth.delta_joint_se[1]));
    put("zeta", truth.zeta_average(), 0.5 * std::hypot(truth.zeta_se[0], truth.zeta_se[1]));
    put("tau", truth.tau, truth.tau_se);
    return {{"schema", "medimux.truth/1"},
            {"model", spec_to_json(spec)},
            {"n_rows", static_cast<std::size_t>(truth.n_rows)},
            {"seed", seed},
            {"version", kVersion},
            {"effects", effects}};
}

json closed_form_json(const ClosedFormInputs& in, const SimulationModelSpec& spec) {
    json effects = json::object();
    const Eigen::Index k = in.gamma.size();
    if (in.family == Family::Linear) {
        const LsemEffects e = lsem_effects(in);
        for (Eigen::Index j = 0; j < k; ++j) effects[delta_name(static_cast<int>(j + 1))] = e.delta(j);
        effects["delta_Z"] = e.delta_joint;
        effects["zeta"] = e.zeta;
        effects["tau"] = e.tau;
    } else {
        std::array<BinaryEffects, 2> b{binary_effects(in, 0), binary_effects(in, 1)};
        for (Eigen::Index j = 0; j < k; ++j) {
            const int id = static_cast<int>(j + 1);
            effects[delta_name(id, 0)] = b[0].delta(j);
            effects[delta_name(id, 1)] = b[1].delta(j);
            effects[delta_name(id)] = 0.5 * (b[0].delta(j) + b[1].delta(j));
        }
        effects["delta_Z(0)"] = b[0].delta_joint;
        effects["delta_Z(1)"] = b[1].delta_joint;
        effects["delta_Z"] = 0.5 * (b[0].delta_joint + b[1].delta_joint);
        effects["zeta(0)"] = b[0].zeta;
        effects["zeta(1)"] = b[1].zeta;
        effects["zeta"] = 0.5 * (b[0].zeta + b[1].zeta);
        effects["tau"] = b[0].tau;
    }
    return {{"schema", "medimux.closed_form/1"},
            {"model", spec_to_json(spec)},
            {"family", std::string(to_string(in.family))},
            {"covariate_rows", static_cast<std::size_t>(in.covariate_rows.rows())},
            {"version", kVersion},
            {"effects", effects}};
}

std::string study_csv(const StudyResult& result) {
    std::ostringstream os;
    os << "estimator,effect,metric,sample_size,correlation,value\n";
    for (const auto& m : result.metrics) {
        const std::pair<const char*, double> rows[] = {
            {"bias", m.bias},          {"coverage", m.coverage},
            {"variance", m.variance},  {"mse", m.mse},
            {"mean_estimate", m.mean_estimate}, {"truth", m.truth},
            {"runs", static_cast<double>(m.runs)}, {"failures", static_cast<double>(m.failures)}};
        for (const auto& [metric, value] : rows) {
            os << m.estimator << ',' << m.effect << ',' << metric << ',' << m.sample_size << ','
               << format_double(m.correlation) << ',' << format_double(value) << '\n';
        }
    }
    return os.str();
}

json study_json(const StudyResult& result, const StudyConfig& config) {
    json metrics = json::array();
    for (const auto& m : result.metrics) {
        metrics.push_back({{"estimator", m.estimator},
                           {"effect", m.effect},
                           {"sample_size", m.sample_size},
                           {"correlation", m.correlation},
                           {"truth", m.truth},
                           {"mean_estimate", m.mean_estimate},
                           {"bias", m.bias},
                           {"coverage", m.coverage},
                           {"variance", m.variance},
                           {"mse", m.mse},
                           {"runs", m.runs},
                           {"failures", m.failures}});
    }
    return {{"schema", "medimux.study/1"},
            {"model", spec_to_json(config.spec)},
            {"runs_per_cell", config.runs_per_cell},
            {"n_draws", config.estimate.n_draws},
            {"n_sims", config.estimate.n_sims},
            {"ci_level", config.estimate.ci_level},
            {"master_seed", config.master_seed},
            {"truth_rows", config.truth_rows},
            {"version", kVersion},
            {"max_identity_residual", result.max_identity_residual},
            {"metrics", metrics}};
}

std::string dataset_csv(const Dataset& data) {
    Dataset d = data;
    d.ensure_names();
    std::ostringstream os;
    os << d.treatment_name;
    for (const auto& m : d.mediator_names) os << ',' << m;
    os << ',' << d.outcome_name;
    for (const auto& c : d.covariate_names) os << ',' << c;
    os << '\n';
    for (Eigen::Index i = 0; i < d.n_rows(); ++i) {
        os << format_double(d.t(i));
        for (Eigen::Index j = 0; j < d.m.cols(); ++j) os << ',' << format_double(d.m(i, j));
        os << ',' << format_double(d.y(i));
        for (Eigen::Index j = 0; j < d.x.cols(); ++j) os << ',' << format_double(d.x(i, j));
        os << '\n';
    }
    return os.str();
}

json error_json(const Error& error) {
    json j = {{"error", std::string(to_string(error.code()))}, {"message", error.what()}};
    if (const auto* indexed = dynamic_cast<const IndexedError*>(&error)) {
        j["index"] = indexed->index();
    }
    return j;
}

}  // namespace medimux
