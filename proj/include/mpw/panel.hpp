#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpw/errors.hpp"

namespace mpw {

// Column-oriented panel: integer key columns (unit, period, cluster, any FE
// keys) plus numeric columns (outcome, regressors, weight). Rows are aligned
// across all columns.
struct PanelDataset {
    std::size_t n_rows = 0;
    std::map<std::string, std::vector<std::int64_t>> keys;
    std::map<std::string, std::vector<double>> values;

    void add_key(const std::string& name, std::vector<std::int64_t> col) {
        check_len(name, col.size());
        keys[name] = std::move(col);
    }
    void add_value(const std::string& name, std::vector<double> col) {
        check_len(name, col.size());
        values[name] = std::move(col);
    }

    const std::vector<std::int64_t>& key(const std::string& name) const {
        auto it = keys.find(name);
        if (it == keys.end())
            throw InvalidInputError("panel: no key column '" + name + "'");
        return it->second;
    }
    const std::vector<double>& value(const std::string& name) const {
        auto it = values.find(name);
        if (it == values.end())
            throw InvalidInputError("panel: no numeric column '" + name + "'");
        return it->second;
    }
    bool has_value(const std::string& name) const { return values.count(name) > 0; }
    bool has_key(const std::string& name) const { return keys.count(name) > 0; }

    // Row weights; columns may omit "weight", meaning all ones.
    Eigen::VectorXd weights() const {
        if (!has_value("weight")) return Eigen::VectorXd::Ones(static_cast<long>(n_rows));
        const auto& w = value("weight");
        Eigen::VectorXd out(static_cast<long>(n_rows));
        for (std::size_t i = 0; i < n_rows; ++i) {
            if (!(w[i] > 0.0))
                throw InvalidInputError("panel: nonpositive weight at row " + std::to_string(i));
            out[static_cast<long>(i)] = w[i];
        }
        return out;
    }

    PanelDataset filter(const std::vector<bool>& keep) const {
        if (keep.size() != n_rows)
            throw InvalidInputError("panel::filter: mask length mismatch");
        PanelDataset out;
        for (std::size_t i = 0; i < n_rows; ++i)
            if (keep[i]) ++out.n_rows;
        for (const auto& [name, col] : keys) {
            std::vector<std::int64_t> c;
            c.reserve(out.n_rows);
            for (std::size_t i = 0; i < n_rows; ++i)
                if (keep[i]) c.push_back(col[i]);
            out.keys[name] = std::move(c);
        }
        for (const auto& [name, col] : values) {
            std::vector<double> c;
            c.reserve(out.n_rows);
            for (std::size_t i = 0; i < n_rows; ++i)
                if (keep[i]) c.push_back(col[i]);
            out.values[name] = std::move(c);
        }
        return out;
    }

private:
    void check_len(const std::string& name, std::size_t len) {
        if (n_rows == 0 && keys.empty() && values.empty()) {
            n_rows = len;
            return;
        }
        if (len != n_rows)
            throw InvalidInputError("panel: column '" + name + "' has " + std::to_string(len) +
                                    " rows, expected " + std::to_string(n_rows));
    }
};

enum class Transform { None, Log01, Log1p, Asinh };

inline double transform_outcome(double y, Transform kind) {
    if (kind != Transform::None && y < 0.0)
        throw InvalidInputError("transform_outcome: negative outcome " + std::to_string(y));
    switch (kind) {
        case Transform::None:
            return y;
        case Transform::Log01:
            return std::log(0.1 + y);
        case Transform::Log1p:
            return std::log1p(y);
        case Transform::Asinh:
            return std::asinh(y);
    }
    return y;
}

inline Transform transform_from_string(const std::string& s) {
    if (s == "none" || s.empty()) return Transform::None;
    if (s == "log0.1") return Transform::Log01;
    if (s == "log1p") return Transform::Log1p;
    if (s == "asinh") return Transform::Asinh;
    throw InvalidInputError("unknown transform '" + s + "'");
}

enum class EstimatorKind { FeOls, Tsls, NegBin, LongDiff };

inline EstimatorKind estimator_from_string(const std::string& s) {
    if (s == "fe_ols") return EstimatorKind::FeOls;
    if (s == "tsls") return EstimatorKind::Tsls;
    if (s == "negbin") return EstimatorKind::NegBin;
    if (s == "long_diff") return EstimatorKind::LongDiff;
    throw InvalidInputError("unknown estimator '" + s + "'");
}

// One estimation request. Regressors are column tokens; a token may be a
// '*'-separated product of numeric columns ("mpw*post"), materialized on the
// fly. FE sets are one key or a pair interaction.
struct ModelSpec {
    std::string name;
    std::string outcome;
    std::vector<std::string> regressors;
    std::vector<std::vector<std::string>> fe;
    std::string cluster;
    Transform transform = Transform::None;
    EstimatorKind estimator = EstimatorKind::FeOls;
    std::string endogenous;  // tsls only
    std::string instrument;  // tsls only, the excluded instrument
    std::string offset;      // negbin only: log-exposure column
    int year0 = 0, year1 = 0;  // long_diff only
};

struct ConvergenceInfo {
    bool converged = true;
    int iterations = 0;
    double final_change = 0.0;
};

struct EstimateReport {
    std::string name;
    std::vector<std::string> coef_names;
    Eigen::VectorXd coef;
    Eigen::MatrixXd vcov;
    Eigen::VectorXd se;
    Eigen::VectorXd tstat;
    Eigen::VectorXd pval;
    std::size_t n_obs = 0;
    std::size_t n_clusters = 0;
    std::size_t dropped_singletons = 0;  // rows in singleton FE groups (retained)
    std::size_t n_dropped_rows = 0;      // rows/units excluded before fitting
    std::size_t rank = 0;
    std::optional<double> first_stage_coef;
    std::optional<double> first_stage_f;
    std::optional<ConvergenceInfo> convergence;
    std::optional<double> dispersion;  // negbin
    bool poisson_limit = false;

    int find(const std::string& name) const {
        for (std::size_t i = 0; i < coef_names.size(); ++i)
            if (coef_names[i] == name) return static_cast<int>(i);
        return -1;
    }
    double coef_of(const std::string& name) const {
        int i = find(name);
        if (i < 0) throw InvalidInputError("report '" + this->name + "': no coefficient '" + name + "'");
        return coef[i];
    }
    double se_of(const std::string& name) const {
        int i = find(name);
        if (i < 0) throw InvalidInputError("report '" + this->name + "': no coefficient '" + name + "'");
        return se[i];
    }
};

// Resolve a regressor token: either a plain numeric column or a product
// "a*b*c" of numeric columns.
inline Eigen::VectorXd resolve_column(const PanelDataset& data, const std::string& token) {
    Eigen::VectorXd out = Eigen::VectorXd::Ones(static_cast<long>(data.n_rows));
    std::size_t start = 0;
    bool any = false;
    while (start <= token.size()) {
        std::size_t end = token.find('*', start);
        if (end == std::string::npos) end = token.size();
        std::string part = token.substr(start, end - start);
        if (part.empty())
            throw InvalidInputError("bad regressor token '" + token + "'");
        const auto& col = data.value(part);
        for (std::size_t i = 0; i < data.n_rows; ++i)
            out[static_cast<long>(i)] *= col[i];
        any = true;
        start = end + 1;
        if (end == token.size()) break;
    }
    if (!any) throw InvalidInputError("empty regressor token");
    return out;
}

}  // namespace mpw
