#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "mpw/demean.hpp"
#include "mpw/errors.hpp"
#include "mpw/panel.hpp"

namespace mpw {

namespace detail {

// Least squares with explicit rank check; names the pivoted-out columns on
// failure.
struct WlsFit {
    Eigen::VectorXd beta;
    Eigen::MatrixXd bread;  // (X'WX)^-1
    Eigen::VectorXd resid;  // y - X beta (unweighted residuals)
    int rank = 0;
};

inline WlsFit wls_solve(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& w, const std::vector<std::string>& names,
                        const std::string& who) {
    const int k = static_cast<int>(X.cols());
    Eigen::VectorXd sw = w.array().sqrt();
    Eigen::MatrixXd Xw = sw.asDiagonal() * X;
    Eigen::VectorXd yw = sw.asDiagonal() * y;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
    if (qr.rank() < k) {
        std::string cols;
        auto perm = qr.colsPermutation().indices();
        for (int j = qr.rank(); j < k; ++j) {
            if (!cols.empty()) cols += ", ";
            cols += names[perm[j]];
        }
        throw RankError(who + ": collinear columns after demeaning: " + cols);
    }
    WlsFit fit;
    fit.beta = qr.solve(yw);
    fit.rank = static_cast<int>(qr.rank());
    Eigen::MatrixXd xtx = Xw.transpose() * Xw;
    fit.bread = xtx.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
    fit.resid = y - X * fit.beta;
    return fit;
}

inline std::vector<int> dense_cluster_ids(const std::vector<std::int64_t>& raw, int& n_clusters) {
    std::map<std::int64_t, int> ids;
    std::vector<int> g(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        auto [it, _] = ids.try_emplace(raw[i], static_cast<int>(ids.size()));
        g[i] = it->second;
    }
    n_clusters = static_cast<int>(ids.size());
    return g;
}

}  // namespace detail

// Standard normal two-sided p-value for a t statistic (large-G reference).
inline double normal_p_value(double t) {
    return std::erfc(std::abs(t) / std::numbers::sqrt2);
}

// Chi-square survival function for integer degrees of freedom, via the
// closed-form upper incomplete gamma recurrences.
inline double chisq_sf(double x, int dof) {
    if (dof < 1) throw InvalidInputError("chisq_sf: dof must be >= 1");
    if (x <= 0.0) return 1.0;
    const double z = x / 2.0;
    if (dof % 2 == 0) {
        const int m = dof / 2;
        double term = 1.0, sum = 1.0;
        for (int j = 1; j < m; ++j) {
            term *= z / j;
            sum += term;
        }
        return std::min(1.0, std::exp(-z) * sum);
    }
    const int m = dof / 2;  // dof = 2m + 1
    double p = std::erfc(std::sqrt(z));
    double term = 2.0 * std::sqrt(z / std::numbers::pi);  // z^{1/2}/Gamma(3/2)
    double sum = 0.0;
    for (int j = 1; j <= m; ++j) {
        sum += term;
        term *= z / (j + 0.5);
    }
    return std::min(1.0, p + std::exp(-z) * sum);
}

// CR1 cluster-robust covariance: sandwich with small-sample factor
// G/(G-1) * (N-1)/(N-K). Scores are w_i * x_i * u_i.
inline Eigen::MatrixXd cluster_vcov(const Eigen::MatrixXd& X, const Eigen::VectorXd& resid,
                                    const Eigen::VectorXd& w, const std::vector<int>& cluster,
                                    int n_clusters, const Eigen::MatrixXd& bread, int k_rank) {
    const long n = X.rows();
    const int k = static_cast<int>(X.cols());
    if (n_clusters < 2)
        throw InvalidInputError("cluster_vcov: need at least 2 clusters");
    Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(n_clusters, k);
    for (long i = 0; i < n; ++i)
        scores.row(cluster[i]) += (w[i] * resid[i]) * X.row(i);
    Eigen::MatrixXd meat = scores.transpose() * scores;
    const double nn = static_cast<double>(n);
    const double gg = static_cast<double>(n_clusters);
    const double factor = gg / (gg - 1.0) * (nn - 1.0) / (nn - k_rank);
    return factor * bread * meat * bread;
}

// HC1 heteroskedasticity-robust covariance, factor N/(N-K).
inline Eigen::MatrixXd hc1_vcov(const Eigen::MatrixXd& X, const Eigen::VectorXd& resid,
                                const Eigen::VectorXd& w, const Eigen::MatrixXd& bread,
                                int k_rank) {
    const long n = X.rows();
    const int k = static_cast<int>(X.cols());
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
    for (long i = 0; i < n; ++i) {
        Eigen::VectorXd s = (w[i] * resid[i]) * X.row(i).transpose();
        meat += s * s.transpose();
    }
    const double factor = static_cast<double>(n) / (static_cast<double>(n) - k_rank);
    return factor * bread * meat * bread;
}

namespace detail {

inline void fill_inference(EstimateReport& rep) {
    const int k = static_cast<int>(rep.coef.size());
    rep.se.resize(k);
    rep.tstat.resize(k);
    rep.pval.resize(k);
    for (int j = 0; j < k; ++j) {
        rep.se[j] = std::sqrt(std::max(0.0, rep.vcov(j, j)));
        rep.tstat[j] = rep.se[j] > 0.0 ? rep.coef[j] / rep.se[j] : 0.0;
        rep.pval[j] = rep.se[j] > 0.0 ? normal_p_value(rep.tstat[j]) : 1.0;
    }
}

}  // namespace detail

// Fixed-effects OLS: absorb the spec's FE sets by demeaning, then WLS with
// CR1 clustered inference. Degrees of freedom use the rank of the demeaned
// design; singleton-group rows are retained but counted.
inline EstimateReport fit_fe_ols(const ModelSpec& spec, const PanelDataset& data) {
    if (data.n_rows == 0)
        throw InsufficientDataError("fit_fe_ols '" + spec.name + "': empty sample");
    if (spec.regressors.empty())
        throw InvalidInputError("fit_fe_ols '" + spec.name + "': no regressors");
    DemeanedDesign d = demean_design(data, spec.outcome, spec.regressors, spec.fe,
                                     spec.transform);
    auto fit = detail::wls_solve(d.X, d.y, d.w, d.x_names, "fit_fe_ols '" + spec.name + "'");

    EstimateReport rep;
    rep.name = spec.name;
    rep.coef_names = d.x_names;
    rep.coef = fit.beta;
    rep.n_obs = data.n_rows;
    rep.rank = static_cast<std::size_t>(fit.rank);
    rep.dropped_singletons = d.fe.singleton_rows;

    int n_clusters = 0;
    auto cluster = detail::dense_cluster_ids(data.key(spec.cluster), n_clusters);
    rep.n_clusters = static_cast<std::size_t>(n_clusters);
    rep.vcov = cluster_vcov(d.X, fit.resid, d.w, cluster, n_clusters, fit.bread, fit.rank);
    detail::fill_inference(rep);
    return rep;
}

// Wald test that the named coefficients are jointly zero; chi-square
// reference with q = #names.
inline double wald_joint_test(const EstimateReport& report,
                              const std::vector<std::string>& names) {
    const int q = static_cast<int>(names.size());
    if (q == 0) throw InvalidInputError("wald_joint_test: no coefficients named");
    Eigen::VectorXd b(q);
    Eigen::MatrixXd V(q, q);
    std::vector<int> idx(q);
    for (int j = 0; j < q; ++j) {
        int i = report.find(names[j]);
        if (i < 0)
            throw InvalidInputError("wald_joint_test: no coefficient '" + names[j] + "'");
        idx[j] = i;
        b[j] = report.coef[i];
    }
    for (int a = 0; a < q; ++a)
        for (int c = 0; c < q; ++c) V(a, c) = report.vcov(idx[a], idx[c]);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(V);
    if (!lu.isInvertible())
        throw RankError("wald_joint_test: singular sub-covariance");
    const double w = b.dot(lu.solve(b));
    return chisq_sf(w, q);
}

// Cross-sectional long difference: y_{year1} - y_{year0} per unit, regressed
// on exposure and baseline (year0) controls with an intercept and HC1 SEs.
// Units missing either year are dropped and counted.
inline EstimateReport fit_long_difference(const PanelDataset& data, const std::string& outcome,
                                          const std::vector<std::string>& regressors,
                                          const std::string& unit_key,
                                          const std::string& period_key, int year0, int year1,
                                          Transform transform = Transform::None) {
    const auto& unit = data.key(unit_key);
    const auto& period = data.key(period_key);
    std::map<std::int64_t, std::pair<long, long>> rows;  // unit -> (row0, row1)
    for (std::size_t i = 0; i < data.n_rows; ++i) {
        if (period[i] == year0) rows[unit[i]].first = static_cast<long>(i) + 1;
        if (period[i] == year1) rows[unit[i]].second = static_cast<long>(i) + 1;
    }
    std::vector<std::pair<long, long>> complete;
    std::size_t dropped = 0;
    for (const auto& [u, pr] : rows) {
        if (pr.first > 0 && pr.second > 0)
            complete.push_back({pr.first - 1, pr.second - 1});
        else
            ++dropped;
    }
    const long n = static_cast<long>(complete.size());
    if (n < static_cast<long>(regressors.size()) + 2)
        throw InsufficientDataError("fit_long_difference: only " + std::to_string(n) +
                                    " units with both years");

    const auto& yraw = data.value(outcome);
    const int k = static_cast<int>(regressors.size()) + 1;
    Eigen::MatrixXd X(n, k);
    Eigen::VectorXd dy(n);
    std::vector<std::string> names;
    names.push_back("(intercept)");
    for (const auto& r : regressors) names.push_back(r);
    std::vector<Eigen::VectorXd> cols;
    for (const auto& r : regressors) cols.push_back(resolve_column(data, r));
    for (long i = 0; i < n; ++i) {
        auto [r0, r1] = complete[i];
        dy[i] = transform_outcome(yraw[r1], transform) - transform_outcome(yraw[r0], transform);
        X(i, 0) = 1.0;
        for (int j = 0; j < k - 1; ++j) X(i, j + 1) = cols[j][r0];  // baseline values
    }
    Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
    auto fit = detail::wls_solve(X, dy, w, names, "fit_long_difference");

    EstimateReport rep;
    rep.name = "long_difference";
    rep.coef_names = names;
    rep.coef = fit.beta;
    rep.n_obs = static_cast<std::size_t>(n);
    rep.n_clusters = static_cast<std::size_t>(n);
    rep.n_dropped_rows = dropped;
    rep.rank = static_cast<std::size_t>(fit.rank);
    rep.vcov = hc1_vcov(X, fit.resid, w, fit.bread, fit.rank);
    detail::fill_inference(rep);
    return rep;
}

}  // namespace mpw
