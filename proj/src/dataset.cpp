#include "medimux/dataset.hpp"

#include "medimux/error.hpp"

namespace medimux {

namespace {

bool is_zero_one(const Eigen::VectorXd& v) {
    return ((v.array() == 0.0) || (v.array() == 1.0)).all();
}

}  // namespace

void Dataset::validate(bool binary_outcome) const {
    const Eigen::Index n = n_rows();
    if (m.rows() != n || y.size() != n || x.rows() != n) {
        throw Error(ErrorCode::InvalidDataset, "column lengths differ");
    }
    if (m.cols() < 1) {
        throw Error(ErrorCode::InvalidDataset, "at least one mediator is required");
    }
    if (!t.allFinite() || !m.allFinite() || !y.allFinite() || !x.allFinite()) {
        throw Error(ErrorCode::InvalidDataset, "dataset contains missing or non-finite values");
    }
    if (!is_zero_one(t)) {
        throw Error(ErrorCode::NonBinaryTreatment, "treatment must be coded 0/1");
    }
    const double treated = t.sum();
    if (treated < 2.0 || static_cast<double>(n) - treated < 2.0) {
        throw Error(ErrorCode::InvalidDataset,
                    "each treatment arm needs at least two rows");
    }
    if (binary_outcome && !is_zero_one(y)) {
        throw Error(ErrorCode::NonBinaryOutcome, "binary outcome must be coded 0/1");
    }
}

Dataset Dataset::with_mediators(const std::vector<Eigen::Index>& columns) const {
    Dataset out;
    out.t = t;
    out.y = y;
    out.x = x;
    out.treatment_name = treatment_name;
    out.outcome_name = outcome_name;
    out.covariate_names = covariate_names;
    out.m.resize(n_rows(), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t j = 0; j < columns.size(); ++j) {
        const Eigen::Index c = columns[j];
        if (c < 0 || c >= m.cols()) {
            throw Error(ErrorCode::InvalidArgument, "mediator index out of range");
        }
        out.m.col(static_cast<Eigen::Index>(j)) = m.col(c);
        out.mediator_names.push_back(static_cast<Eigen::Index>(mediator_names.size()) > c
                                         ? mediator_names[static_cast<std::size_t>(c)]
                                         : "M" + std::to_string(c + 1));
    }
    return out;
}

void Dataset::ensure_names() {
    for (auto k = static_cast<Eigen::Index>(mediator_names.size()); k < m.cols(); ++k) {
        mediator_names.push_back("M" + std::to_string(k + 1));
    }
    for (auto p = static_cast<Eigen::Index>(covariate_names.size()); p < x.cols(); ++p) {
        covariate_names.push_back("X" + std::to_string(p + 1));
    }
}

}  // namespace medimux
