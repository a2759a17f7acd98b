#pragma once

#include "medimux/closed_form.hpp"
#include "medimux/dataset.hpp"
#include "medimux/engine.hpp"
#include "medimux/error.hpp"
#include "medimux/simulation.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace medimux {

inline constexpr const char* kVersion = "0.1.0";

struct ColumnRoles {
    std::string treatment = "T";
    std::vector<std::string> mediators;
    std::string outcome = "Y";
    std::vector<std::string> covariates;

    // Throws InvalidArgument when a column has two roles or none are given.
    void validate() const;
};

struct IngestResult {
    Dataset data;
    std::size_t rows_read = 0;
    std::size_t rows_rejected = 0;  // missing or unparseable declared cell
};

// Header row, comma separated, "." decimal point. Quoted fields are allowed.
// Undeclared columns are ignored.
IngestResult ingest_csv(const std::filesystem::path& path, const ColumnRoles& roles,
                        Family family);
IngestResult ingest_csv_text(std::string_view text, const ColumnRoles& roles, Family family);

// (v^lambda - 1) / lambda, or log(v) at lambda = 0. NonPositiveValue carries
// the 0-based row.
std::vector<double> boxcox(std::span<const double> values, double lambda);

// Applies the transform to a named mediator, outcome or covariate column.
void apply_boxcox(Dataset& data, const std::string& column, double lambda);

// Settings shared by all subcommands. Loaded from a JSON config file, then
// overridden by command-line flags.
struct RunConfig {
    std::optional<std::filesystem::path> input;
    ColumnRoles roles;
    Family family = Family::Linear;
    EstimateOptions estimate;
    std::optional<int> simple;
    std::map<std::string, double> boxcox;
    std::optional<std::filesystem::path> output;
    std::optional<std::filesystem::path> draws_csv;

    // Simulation settings.
    std::string model = "model1";
    std::optional<nlohmann::json> model_spec;  // inline spec, wins over `model`
    double correlation = 0.0;
    std::size_t n = 1000;
    std::size_t truth_rows = 1'000'000;
    std::vector<std::size_t> sample_sizes{1000};
    std::vector<double> correlations{0.0};
    std::size_t runs = 200;
    bool include_simple = true;
    std::size_t covariate_rows = 10'000;
    std::optional<std::filesystem::path> cache_dir;
    std::optional<std::filesystem::path> cache_out;

    void validate() const;
};

// Applies the keys present in `j`; unknown keys are rejected.
void apply_config_json(RunConfig& config, const nlohmann::json& j);
// Applies the file's keys on top of `base`.
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

// Preset name ("model1", "model2", "latent_u", "latent_u_observed") or an
// inline JSON spec.
SimulationModelSpec model_from_config(const RunConfig& config);
SimulationModelSpec spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const SimulationModelSpec& spec);

std::string sha256_file(const std::filesystem::path& path);

// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

nlohmann::json effects_json(const EffectEstimates& estimates);
nlohmann::json mediate_report(const EffectEstimates& estimates, const RunConfig& config,
                              const IngestResult& ingest, const std::string& input_digest);
std::string draws_csv(const DrawEffects& draws, std::span<const int> mediator_ids);

nlohmann::json truth_json(const TruthEffects& truth, const SimulationModelSpec& spec,
                          std::uint64_t seed);
nlohmann::json closed_form_json(const ClosedFormInputs& inputs, const SimulationModelSpec& spec);
std::string study_csv(const StudyResult& result);
nlohmann::json study_json(const StudyResult& result, const StudyConfig& config);
std::string dataset_csv(const Dataset& data);

nlohmann::json error_json(const Error& error);

}  // namespace medimux
