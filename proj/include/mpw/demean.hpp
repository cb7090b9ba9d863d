#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpw/errors.hpp"
#include "mpw/panel.hpp"

namespace mpw {

// Group structure for a list of fixed-effect sets. A set is one key column
// or a pair interaction; pair keys are combined into composite group codes.
struct FeStructure {
    std::vector<std::vector<int>> group_of_row;  // per set: row -> dense group id
    std::vector<int> n_groups;                   // per set
    std::size_t singleton_rows = 0;              // rows alone in some group
};

inline FeStructure build_fe_structure(const PanelDataset& data,
                                      const std::vector<std::vector<std::string>>& fe_sets) {
    if (fe_sets.empty()) throw InvalidInputError("fe sets must be nonempty");
    FeStructure fs;
    std::vector<bool> singleton(data.n_rows, false);
    for (const auto& set : fe_sets) {
        if (set.empty() || set.size() > 2)
            throw InvalidInputError("each fe set must name one key or a pair");
        const auto& k1 = data.key(set[0]);
        const std::vector<std::int64_t>* k2 = set.size() == 2 ? &data.key(set[1]) : nullptr;
        std::map<std::pair<std::int64_t, std::int64_t>, int> ids;
        std::vector<int> g(data.n_rows);
        std::vector<int> sizes;
        for (std::size_t i = 0; i < data.n_rows; ++i) {
            std::pair<std::int64_t, std::int64_t> key{k1[i], k2 ? (*k2)[i] : 0};
            auto [it, inserted] = ids.try_emplace(key, static_cast<int>(ids.size()));
            if (inserted) sizes.push_back(0);
            g[i] = it->second;
            ++sizes[it->second];
        }
        for (std::size_t i = 0; i < data.n_rows; ++i)
            if (sizes[g[i]] == 1) singleton[i] = true;
        fs.group_of_row.push_back(std::move(g));
        fs.n_groups.push_back(static_cast<int>(ids.size()));
    }
    for (bool s : singleton) fs.singleton_rows += s ? 1 : 0;
    return fs;
}

struct DemeanResult {
    Eigen::MatrixXd cols;
    int iterations = 0;
    double final_change = 0.0;
};

// Absorb fixed effects by (weighted) within-group demeaning. One set is a
// single exact pass; several sets alternate projections until the largest
// absolute change in any entry over a full sweep falls below tol.
inline DemeanResult demean_columns(Eigen::MatrixXd cols, const FeStructure& fs,
                                   const Eigen::VectorXd& w, double tol = 1e-10,
                                   int max_iter = 10000) {
    const long n = cols.rows();
    const std::size_t n_sets = fs.group_of_row.size();
    if (n == 0) throw InsufficientDataError("demean_columns: empty sample");

    std::vector<Eigen::VectorXd> group_wsum(n_sets);
    for (std::size_t s = 0; s < n_sets; ++s) {
        group_wsum[s] = Eigen::VectorXd::Zero(fs.n_groups[s]);
        for (long i = 0; i < n; ++i) group_wsum[s][fs.group_of_row[s][i]] += w[i];
    }

    auto sweep_set = [&](std::size_t s) {
        Eigen::MatrixXd means = Eigen::MatrixXd::Zero(fs.n_groups[s], cols.cols());
        for (long i = 0; i < n; ++i)
            means.row(fs.group_of_row[s][i]) += w[i] * cols.row(i);
        for (int g = 0; g < fs.n_groups[s]; ++g) means.row(g) /= group_wsum[s][g];
        for (long i = 0; i < n; ++i) cols.row(i) -= means.row(fs.group_of_row[s][i]);
    };

    DemeanResult res;
    if (n_sets == 1) {
        sweep_set(0);
        res.cols = std::move(cols);
        res.iterations = 1;
        res.final_change = 0.0;
        return res;
    }

    for (int iter = 1; iter <= max_iter; ++iter) {
        Eigen::MatrixXd before = cols;
        for (std::size_t s = 0; s < n_sets; ++s) sweep_set(s);
        double change = (cols - before).cwiseAbs().maxCoeff();
        if (change < tol) {
            res.cols = std::move(cols);
            res.iterations = iter;
            res.final_change = change;
            return res;
        }
        if (iter == max_iter)
            throw ConvergenceError("demean_columns: no convergence after " +
                                   std::to_string(max_iter) +
                                   " sweeps; last change " + std::to_string(change));
    }
    return res;  // unreachable
}

// Convenience: build design columns for (outcome | regressors), demean under
// the spec's FE sets, and hand back pieces estimators share.
struct DemeanedDesign {
    Eigen::VectorXd y;
    Eigen::MatrixXd X;
    Eigen::VectorXd w;
    std::vector<std::string> x_names;
    FeStructure fe;
    int iterations = 0;
};

inline DemeanedDesign demean_design(const PanelDataset& data, const std::string& outcome,
                                    const std::vector<std::string>& regressor_tokens,
                                    const std::vector<std::vector<std::string>>& fe_sets,
                                    Transform transform = Transform::None,
                                    double tol = 1e-10, int max_iter = 10000) {
    if (data.n_rows == 0) throw InsufficientDataError("empty sample");
    const long n = static_cast<long>(data.n_rows);
    const int k = static_cast<int>(regressor_tokens.size());
    Eigen::MatrixXd cols(n, k + 1);
    {
        const auto& yraw = data.value(outcome);
        for (long i = 0; i < n; ++i) cols(i, 0) = transform_outcome(yraw[i], transform);
    }
    for (int j = 0; j < k; ++j) cols.col(j + 1) = resolve_column(data, regressor_tokens[j]);

    DemeanedDesign d;
    d.w = data.weights();
    d.fe = build_fe_structure(data, fe_sets);
    auto res = demean_columns(std::move(cols), d.fe, d.w, tol, max_iter);
    d.y = res.cols.col(0);
    d.X = res.cols.rightCols(k);
    d.x_names = regressor_tokens;
    d.iterations = res.iterations;
    return d;
}

}  // namespace mpw
