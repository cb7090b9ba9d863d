#pragma once

#include <Eigen/Dense>
#include <limits>
#include <string>
#include <vector>

#include "mpw/demean.hpp"
#include "mpw/errors.hpp"
#include "mpw/estimators.hpp"
#include "mpw/panel.hpp"

namespace mpw {

// Just-identified 2SLS: one endogenous regressor, one excluded instrument,
// fixed effects absorbed by demeaning. Reports the first-stage coefficient
// and the cluster-robust Wald F on the excluded instrument, which in this
// single-instrument case coincides with the Kleibergen-Paap rk Wald F.
inline EstimateReport fit_tsls(const ModelSpec& spec, const PanelDataset& data) {
    if (spec.endogenous.empty() || spec.instrument.empty())
        throw InvalidInputError("fit_tsls '" + spec.name +
                                "': endogenous and instrument columns required");
    for (const auto& r : spec.regressors)
        if (r == spec.instrument)
            throw InvalidInputError("fit_tsls '" + spec.name +
                                    "': excluded instrument also appears as a regressor");
    if (data.n_rows == 0)
        throw InsufficientDataError("fit_tsls '" + spec.name + "': empty sample");

    // Demean outcome, endogenous, instrument, and controls jointly.
    const long n = static_cast<long>(data.n_rows);
    const int kc = static_cast<int>(spec.regressors.size());
    Eigen::MatrixXd cols(n, kc + 3);
    {
        const auto& yraw = data.value(spec.outcome);
        for (long i = 0; i < n; ++i) cols(i, 0) = transform_outcome(yraw[i], spec.transform);
    }
    cols.col(1) = resolve_column(data, spec.endogenous);
    cols.col(2) = resolve_column(data, spec.instrument);
    for (int j = 0; j < kc; ++j) cols.col(j + 3) = resolve_column(data, spec.regressors[j]);

    Eigen::VectorXd w = data.weights();
    FeStructure fe = build_fe_structure(data, spec.fe);
    auto dm = demean_columns(std::move(cols), fe, w);
    Eigen::VectorXd y = dm.cols.col(0);
    Eigen::VectorXd T = dm.cols.col(1);
    Eigen::VectorXd Z = dm.cols.col(2);
    Eigen::MatrixXd C = dm.cols.rightCols(kc);

    int n_clusters = 0;
    auto cluster = detail::dense_cluster_ids(data.key(spec.cluster), n_clusters);

    // First stage: endogenous on instrument plus controls.
    Eigen::MatrixXd Xf(n, kc + 1);
    Xf.col(0) = Z;
    Xf.rightCols(kc) = C;
    std::vector<std::string> fnames;
    fnames.push_back(spec.instrument);
    for (const auto& r : spec.regressors) fnames.push_back(r);
    auto first = detail::wls_solve(Xf, T, w, fnames, "fit_tsls first stage '" + spec.name + "'");
    Eigen::MatrixXd vf =
        cluster_vcov(Xf, first.resid, w, cluster, n_clusters, first.bread, first.rank);
    const double fs_coef = first.beta[0];
    const double fs_se = std::sqrt(std::max(0.0, vf(0, 0)));
    const double fs_f = fs_se > 0.0 ? (fs_coef / fs_se) * (fs_coef / fs_se)
                                    : std::numeric_limits<double>::infinity();

    // Second stage on the instrument-predicted endogenous column.
    Eigen::VectorXd T_hat = Xf * first.beta;
    Eigen::MatrixXd Xs(n, kc + 1);
    Xs.col(0) = T_hat;
    Xs.rightCols(kc) = C;
    std::vector<std::string> snames;
    snames.push_back(spec.endogenous);
    for (const auto& r : spec.regressors) snames.push_back(r);
    auto second = detail::wls_solve(Xs, y, w, snames, "fit_tsls second stage '" + spec.name + "'");

    // Structural residuals use the actual endogenous column.
    Eigen::VectorXd u = y - T * second.beta[0] - C * second.beta.tail(kc);

    EstimateReport rep;
    rep.name = spec.name;
    rep.coef_names = snames;
    rep.coef = second.beta;
    rep.n_obs = data.n_rows;
    rep.n_clusters = static_cast<std::size_t>(n_clusters);
    rep.dropped_singletons = fe.singleton_rows;
    rep.rank = static_cast<std::size_t>(second.rank);
    rep.first_stage_coef = fs_coef;
    rep.first_stage_f = fs_f;
    rep.vcov = cluster_vcov(Xs, u, w, cluster, n_clusters, second.bread, second.rank);
    detail::fill_inference(rep);
    return rep;
}

}  // namespace mpw
