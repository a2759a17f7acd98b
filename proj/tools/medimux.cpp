#include "medimux/cli.hpp"
#include "medimux/parallel.hpp"
#include "medimux/rng.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <iostream>

using namespace medimux;
using nlohmann::json;

namespace {

// Flag values; each one that was given overrides the config file.
struct Flags {
    std::optional<std::string> config;
    std::optional<std::string> input;
    std::optional<std::string> family;
    std::optional<std::string> mediators;
    std::optional<std::string> treatment;
    std::optional<std::string> outcome;
    std::optional<std::string> covariates;
    std::optional<std::size_t> sims;
    std::optional<std::size_t> draws;
    std::optional<double> ci;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<int> simple;
    std::vector<std::string> boxcox;
    std::optional<std::string> output;
    std::optional<std::string> draws_csv;
    std::optional<std::string> json_out;
    std::optional<std::string> model;
    std::optional<double> correlation;
    std::optional<std::size_t> n;
    std::optional<std::size_t> rows;
    std::optional<std::string> sample_sizes;
    std::optional<std::string> correlations;
    std::optional<std::size_t> runs;
    std::optional<std::size_t> covariate_rows;
    std::optional<std::string> cache_dir;
    std::optional<std::string> cache_out;
    bool no_simple = false;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& s) {
    std::vector<T> out;
    for (const auto& item : split_list(s)) {
        try {
            if constexpr (std::is_same_v<T, double>) out.push_back(std::stod(item));
            else out.push_back(static_cast<T>(std::stoull(item)));
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidArgument, "cannot parse list item '" + item + "'");
        }
    }
    return out;
}

RunConfig resolve(const Flags& f) {
    RunConfig c;
    c.estimate.threads = default_thread_count();
    if (const char* env = std::getenv("MEDIMUX_CACHE_DIR"); env && *env) c.cache_dir = env;
    if (f.config) c = load_run_config(*f.config, c);
    if (f.input) c.input = *f.input;
    if (f.family) c.family = parse_family(*f.family);
    if (f.mediators) c.roles.mediators = split_list(*f.mediators);
    if (f.treatment) c.roles.treatment = *f.treatment;
    if (f.outcome) c.roles.outcome = *f.outcome;
    if (f.covariates) c.roles.covariates = split_list(*f.covariates);
    if (f.sims) c.estimate.n_sims = *f.sims;
    if (f.draws) c.estimate.n_draws = *f.draws;
    if (f.ci) c.estimate.ci_level = *f.ci;
    if (f.seed) c.estimate.seed = *f.seed;
    if (f.threads) c.estimate.threads = std::max(1U, *f.threads);
    if (f.simple) c.simple = *f.simple;
    for (const auto& spec : f.boxcox) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::InvalidArgument, "--boxcox expects col=lambda, got '" + spec + "'");
        }
        try {
            c.boxcox[spec.substr(0, eq)] = std::stod(spec.substr(eq + 1));
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidArgument, "bad Box-Cox lambda in '" + spec + "'");
        }
    }
    if (f.output) c.output = *f.output;
    if (f.draws_csv) c.draws_csv = *f.draws_csv;
    if (f.model) {
        c.model = *f.model;
        c.model_spec.reset();
    }
    if (f.correlation) c.correlation = *f.correlation;
    if (f.n) c.n = *f.n;
    if (f.rows) c.truth_rows = *f.rows;
    if (f.sample_sizes) c.sample_sizes = parse_list<std::size_t>(*f.sample_sizes);
    if (f.correlations) c.correlations = parse_list<double>(*f.correlations);
    if (f.runs) c.runs = *f.runs;
    if (f.covariate_rows) c.covariate_rows = *f.covariate_rows;
    if (f.cache_dir) c.cache_dir = *f.cache_dir;
    if (f.cache_out) c.cache_out = *f.cache_out;
    if (f.no_simple) c.include_simple = false;
    c.validate();
    return c;
}

void emit(const std::optional<std::filesystem::path>& path, const std::string& body) {
    if (path) {
        write_file_atomic(*path, body);
    } else {
        std::cout << body << std::flush;
        if (!std::cout) throw Error(ErrorCode::Io, "failed writing standard output");
    }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void cmd_mediate(const RunConfig& c) {
    if (!c.input) throw Error(ErrorCode::InvalidArgument, "mediate needs --input");
    IngestResult ingest = ingest_csv(*c.input, c.roles, c.family);
    if (ingest.rows_rejected > 0) {
        std::cerr << json{{"warning", "rows_rejected"}, {"count", ingest.rows_rejected}}.dump() << "\n";
    }
    for (const auto& [col, lambda] : c.boxcox) apply_boxcox(ingest.data, col, lambda);

    MediationResult result;
    std::vector<int> ids;
    if (c.simple) {
        result = simple_analysis(ingest.data, *c.simple, c.family, c.estimate);
        result.estimates.effects.erase(
            std::remove_if(result.estimates.effects.begin(), result.estimates.effects.end(),
                           [](const NamedEffect& e) { return e.name.rfind("PM_", 0) == 0; }),
            result.estimates.effects.end());
        ids = {*c.simple};
    } else {
        result = estimate_effects(ingest.data, c.family, c.estimate);
        ids = result.estimates.mediator_ids;
    }
    const std::string digest = sha256_file(*c.input);
    if (c.draws_csv) write_file_atomic(*c.draws_csv, draws_csv(result.draws, ids));
    emit(c.output, dump(mediate_report(result.estimates, c, ingest, digest)));
}

void cmd_simulate(const RunConfig& c) {
    const SimulationModelSpec spec = model_from_config(c);
    if (c.n == 0) throw Error(ErrorCode::EmptyAfterFiltering, "simulate needs n >= 1");
    const std::uint64_t seed = c.estimate.seed;
    const CounterfactualTable table = cached_counterfactual_table(spec, c.truth_rows, seed, c.cache_dir);
    if (c.cache_out) write_table_cache(*c.cache_out, table, spec.fingerprint(), seed);
    const Dataset data = extract_observed(table, c.n, hash_combine(seed, 1));
    emit(c.output, dataset_csv(data));
}

void cmd_truth(const RunConfig& c) {
    const SimulationModelSpec spec = model_from_config(c);
    const CounterfactualTable table =
        cached_counterfactual_table(spec, c.truth_rows, c.estimate.seed, c.cache_dir);
    emit(c.output, dump(truth_json(monte_carlo_truth(table), spec, c.estimate.seed)));
}

void cmd_study(const RunConfig& c, const std::optional<std::string>& json_out) {
    StudyConfig s;
    s.spec = model_from_config(c);
    s.sample_sizes = c.sample_sizes;
    s.correlations = c.correlations;
    s.runs_per_cell = c.runs;
    s.estimate = c.estimate;
    s.master_seed = c.estimate.seed;
    s.truth_rows = c.truth_rows;
    s.include_simple = c.include_simple;
    s.threads = c.estimate.threads;
    s.cache_dir = c.cache_dir;
    const StudyResult result = run_study(s);
    if (json_out) write_file_atomic(*json_out, dump(study_json(result, s)));
    emit(c.output, study_csv(result));
}

void cmd_closed_form(const RunConfig& c) {
    const SimulationModelSpec spec = model_from_config(c);
    const ClosedFormInputs in = closed_form_from_spec(spec, c.covariate_rows, c.estimate.seed);
    emit(c.output, dump(closed_form_json(in, spec)));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"medimux: causal effect estimation with several mediators"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    Flags f;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "JSON config file; flags override its keys");
        sub->add_option("--output,-o", f.output, "output file (default: standard output)");
        sub->add_option("--seed", f.seed, "master seed");
        sub->add_option("--threads", f.threads, "worker threads (default: all cores)");
    };
    auto estimation = [&](CLI::App* sub) {
        sub->add_option("--sims", f.sims, "simulated individuals per draw (I)");
        sub->add_option("--draws", f.draws, "parameter draws (R)");
        sub->add_option("--ci", f.ci, "confidence level");
    };
    auto model = [&](CLI::App* sub) {
        sub->add_option("--model", f.model, "model1, model2, latent_u or latent_u_observed");
        sub->add_option("--correlation", f.correlation, "residual mediator correlation");
        sub->add_option("--rows", f.rows, "counterfactual table rows");
        sub->add_option("--cache-dir", f.cache_dir, "truth table cache directory (or MEDIMUX_CACHE_DIR)");
    };

    auto* mediate = app.add_subcommand("mediate", "estimate effects from a CSV file");
    common(mediate);
    estimation(mediate);
    mediate->add_option("--input,-i", f.input, "CSV input");
    mediate->add_option("--family", f.family, "linear, logit or probit");
    mediate->add_option("--mediators", f.mediators, "comma-separated mediator columns");
    mediate->add_option("--treatment", f.treatment, "treatment column");
    mediate->add_option("--outcome", f.outcome, "outcome column");
    mediate->add_option("--covariates", f.covariates, "comma-separated covariate columns");
    mediate->add_option("--simple", f.simple, "single-mediator analysis on mediator k (1-based)");
    mediate->add_option("--boxcox", f.boxcox, "col=lambda, repeatable");
    mediate->add_option("--draws-csv", f.draws_csv, "write per-draw effects to this CSV");

    auto* simulate = app.add_subcommand("simulate", "write an observed sample from a model");
    common(simulate);
    model(simulate);
    simulate->add_option("--n", f.n, "observed rows");
    simulate->add_option("--cache-out", f.cache_out, "also write the counterfactual table here");

    auto* truth = app.add_subcommand("truth", "true effects from a counterfactual table");
    common(truth);
    model(truth);

    auto* study = app.add_subcommand("study", "repeated-sampling study: bias, coverage, MSE");
    common(study);
    estimation(study);
    model(study);
    study->add_option("--sample-sizes", f.sample_sizes, "comma-separated sample sizes");
    study->add_option("--correlations", f.correlations, "comma-separated correlations");
    study->add_option("--runs", f.runs, "runs per cell");
    study->add_option("--json", f.json_out, "also write the metrics as JSON");
    study->add_flag("--no-simple", f.no_simple, "skip the single-mediator analyses");

    auto* closed = app.add_subcommand("closed-form", "analytic effects of a model");
    common(closed);
    model(closed);
    closed->add_option("--covariate-rows", f.covariate_rows, "rows drawn for covariate averaging");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        const RunConfig c = resolve(f);
        if (mediate->parsed()) cmd_mediate(c);
        else if (simulate->parsed()) cmd_simulate(c);
        else if (truth->parsed()) cmd_truth(c);
        else if (study->parsed()) cmd_study(c, f.json_out);
        else if (closed->parsed()) cmd_closed_form(c);
    } catch (const Error& e) {
        std::cerr << error_json(e).dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "Internal"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}
