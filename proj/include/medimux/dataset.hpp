#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace medimux {

// Observed rectangular data: binary treatment, K mediators, an outcome and P
// covariates. Column-major Eigen storage; one row per individual.
struct Dataset {
    Eigen::VectorXd t;
    Eigen::MatrixXd m;  // n x K
    Eigen::VectorXd y;
    Eigen::MatrixXd x;  // n x P, may have zero columns

    std::string treatment_name = "T";
    std::vector<std::string> mediator_names;
    std::string outcome_name = "Y";
    std::vector<std::string> covariate_names;

    Eigen::Index n_rows() const { return t.size(); }
    Eigen::Index n_mediators() const { return m.cols(); }
    Eigen::Index n_covariates() const { return x.cols(); }

    // Throws InvalidDataset / NonBinaryTreatment / NonBinaryOutcome.
    void validate(bool binary_outcome) const;

    // Dataset restricted to the given mediator columns (0-based).
    Dataset with_mediators(const std::vector<Eigen::Index>& columns) const;

    // Fills in default column names where they are missing.
    void ensure_names();
};

}  // namespace medimux
