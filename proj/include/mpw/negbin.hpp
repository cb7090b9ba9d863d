#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mpw/errors.hpp"
#include "mpw/estimators.hpp"
#include "mpw/panel.hpp"

namespace mpw {

struct NegBinOptions {
    int max_iter = 200;       // outer iterations
    double tol = 1e-9;        // relative log-likelihood change
    double alpha_floor = 1e-8;  // below this the fit is flagged as the Poisson limit
    bool cluster_se = false;
    std::string cluster;
};

namespace detail {

struct NbDesign {
    Eigen::MatrixXd X;       // regressors, intercept, unit and period dummies
    Eigen::VectorXd y;
    Eigen::VectorXd offset;  // log exposure
    std::vector<std::string> names;  // all columns
    int n_reported = 0;              // leading columns exposed in the report
    std::size_t dropped_rows = 0;    // rows of all-zero units
    std::vector<std::int64_t> cluster_raw;
};

inline double nb_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& eta, double alpha) {
    const double r = 1.0 / alpha;
    double ll = 0.0;
    for (long i = 0; i < y.size(); ++i) {
        const double mu = std::exp(eta[i]);
        ll += std::lgamma(y[i] + r) - std::lgamma(r) - std::lgamma(y[i] + 1.0) +
              r * std::log(r / (r + mu)) + y[i] * std::log(mu / (r + mu));
    }
    return ll;
}

inline Eigen::VectorXd nb_score_beta(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& eta, double alpha) {
    const double r = 1.0 / alpha;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(X.cols());
    for (long i = 0; i < y.size(); ++i) {
        const double mu = std::exp(eta[i]);
        g += ((y[i] - mu) * r / (r + mu)) * X.row(i).transpose();
    }
    return g;
}

}  // namespace detail

// Unconditional NB2 maximum likelihood with explicit unit and period dummies
// and a log-exposure offset. Var(y) = mu + alpha * mu^2; alpha is profiled by
// Newton steps on log(alpha) between IRLS sweeps for the mean parameters.
// Units whose outcome is zero in every period are dropped first.
inline EstimateReport fit_negbin(const PanelDataset& data, const std::string& outcome,
                                 const std::vector<std::string>& regressors,
                                 const std::string& offset_col, const std::string& unit_key,
                                 const std::string& period_key, NegBinOptions opts = {}) {
    const auto& yraw = data.value(outcome);
    for (std::size_t i = 0; i < data.n_rows; ++i) {
        if (yraw[i] < 0.0 || std::abs(yraw[i] - std::round(yraw[i])) > 1e-9)
            throw InvalidInputError("fit_negbin: outcome must be a nonnegative integer, got " +
                                    std::to_string(yraw[i]) + " at row " + std::to_string(i));
    }

    // Drop all-zero units.
    const auto& unit = data.key(unit_key);
    std::map<std::int64_t, double> unit_total;
    for (std::size_t i = 0; i < data.n_rows; ++i) unit_total[unit[i]] += yraw[i];
    std::vector<bool> keep(data.n_rows);
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < data.n_rows; ++i) {
        keep[i] = unit_total[unit[i]] > 0.0;
        if (!keep[i]) ++dropped;
    }
    PanelDataset d = data.filter(keep);
    if (d.n_rows < regressors.size() + 2)
        throw InsufficientDataError("fit_negbin: too few rows after dropping all-zero units");

    // Design: regressors, intercept, unit dummies, period dummies (first
    // level of each omitted).
    detail::NbDesign des;
    const long n = static_cast<long>(d.n_rows);
    const auto& u = d.key(unit_key);
    const auto& t = d.key(period_key);
    // Dense ids in sorted code order; level 0 of each is the omitted dummy.
    std::map<std::int64_t, int> uid, tid;
    for (long i = 0; i < n; ++i) {
        uid[u[i]] = 0;
        tid[t[i]] = 0;
    }
    {
        int next = 0;
        for (auto& [code, id] : uid) id = next++;
        next = 0;
        for (auto& [code, id] : tid) id = next++;
    }
    const int kr = static_cast<int>(regressors.size());
    const int ku = static_cast<int>(uid.size()) - 1;
    const int kt = static_cast<int>(tid.size()) - 1;
    const int k = kr + 1 + ku + kt;
    des.X = Eigen::MatrixXd::Zero(n, k);
    for (int j = 0; j < kr; ++j) {
        des.X.col(j) = resolve_column(d, regressors[j]);
        des.names.push_back(regressors[j]);
    }
    des.X.col(kr).setOnes();
    des.names.push_back("(intercept)");
    for (const auto& [code, id] : uid)
        if (id > 0) des.names.push_back("unit=" + std::to_string(code));
    for (const auto& [code, id] : tid)
        if (id > 0) des.names.push_back("period=" + std::to_string(code));
    for (long i = 0; i < n; ++i) {
        const int ui = uid[u[i]], ti = tid[t[i]];
        if (ui > 0) des.X(i, kr + ui) = 1.0;                // columns kr+1 .. kr+ku
        if (ti > 0) des.X(i, kr + ku + ti) = 1.0;           // columns kr+ku+1 .. kr+ku+kt
    }
    des.n_reported = kr + 1;
    des.dropped_rows = dropped;
    {
        Eigen::VectorXd yv(n);
        const auto& yy = d.value(outcome);
        for (long i = 0; i < n; ++i) yv[i] = yy[i];
        des.y = yv;
    }
    {
        Eigen::VectorXd off(n);
        const auto& oo = d.value(offset_col);
        for (long i = 0; i < n; ++i) off[i] = oo[i];
        des.offset = off;
    }

    auto eta_of = [&](const Eigen::VectorXd& beta) {
        Eigen::VectorXd eta = des.X * beta + des.offset;
        for (long i = 0; i < n; ++i) eta[i] = std::min(eta[i], 40.0);
        return eta;
    };

    // IRLS sweep for beta at fixed alpha (Fisher scoring, weights
    // mu/(1+alpha*mu), working response on the link scale).
    auto irls = [&](Eigen::VectorXd beta, double alpha, int sweeps) {
        for (int it = 0; it < sweeps; ++it) {
            Eigen::VectorXd eta = eta_of(beta);
            Eigen::VectorXd wts(n), z(n);
            for (long i = 0; i < n; ++i) {
                const double mu = std::exp(eta[i]);
                wts[i] = mu / (1.0 + alpha * mu);
                z[i] = eta[i] - des.offset[i] + (des.y[i] - mu) / mu;
            }
            Eigen::MatrixXd Xw = wts.array().sqrt().matrix().asDiagonal() * des.X;
            Eigen::VectorXd zw = wts.array().sqrt().matrix().asDiagonal() * z;
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
            if (qr.rank() < k) {
                std::string cols;
                auto perm = qr.colsPermutation().indices();
                for (int j = qr.rank(); j < k; ++j) {
                    if (!cols.empty()) cols += ", ";
                    cols += des.names[perm[j]];
                }
                throw RankError("fit_negbin: collinear design columns: " + cols);
            }
            Eigen::VectorXd beta_new = qr.solve(zw);
            double change = (beta_new - beta).cwiseAbs().maxCoeff();
            beta = beta_new;
            if (change < 1e-11) break;
        }
        return beta;
    };

    // Poisson start (alpha ~ 0), then moment estimate of the dispersion.
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
    {
        double ymean = std::max(des.y.mean(), 1e-3);
        beta[kr] = std::log(ymean) - des.offset.mean();
    }
    beta = irls(beta, 1e-10, 50);
    double alpha;
    {
        Eigen::VectorXd eta = eta_of(beta);
        double num = 0.0, den = 0.0;
        for (long i = 0; i < n; ++i) {
            const double mu = std::exp(eta[i]);
            num += (des.y[i] - mu) * (des.y[i] - mu) - mu;
            den += mu * mu;
        }
        alpha = std::max(opts.alpha_floor, std::min(10.0, num / std::max(den, 1e-12)));
    }

    double ll = detail::nb_loglik(des.y, eta_of(beta), alpha);
    ConvergenceInfo conv;
    conv.converged = false;
    for (int outer = 1; outer <= opts.max_iter; ++outer) {
        beta = irls(beta, alpha, 25);
        // Newton on theta = log(alpha), numeric derivatives of the profile.
        for (int inner = 0; inner < 20; ++inner) {
            const double h = 1e-4;
            const double theta = std::log(alpha);
            Eigen::VectorXd eta = eta_of(beta);
            const double l0 = detail::nb_loglik(des.y, eta, std::exp(theta));
            const double lp = detail::nb_loglik(des.y, eta, std::exp(theta + h));
            const double lm = detail::nb_loglik(des.y, eta, std::exp(theta - h));
            const double g = (lp - lm) / (2 * h);
            const double hess = (lp - 2 * l0 + lm) / (h * h);
            double step = hess < -1e-12 ? -g / hess : (g > 0 ? 0.5 : -0.5);
            step = std::max(-2.0, std::min(2.0, step));
            double theta_new = theta + step;
            double alpha_new = std::max(opts.alpha_floor, std::exp(theta_new));
            if (detail::nb_loglik(des.y, eta, alpha_new) < l0 - 1e-12) {
                // halve until improvement or give up this inner loop
                bool improved = false;
                for (int half = 0; half < 20; ++half) {
                    step /= 2;
                    alpha_new = std::max(opts.alpha_floor, std::exp(theta + step));
                    if (detail::nb_loglik(des.y, eta, alpha_new) >= l0) {
                        improved = true;
                        break;
                    }
                }
                if (!improved) {
                    alpha_new = alpha;
                }
            }
            double rel = std::abs(alpha_new - alpha) / (1.0 + alpha);
            alpha = alpha_new;
            if (rel < 1e-10 || alpha <= opts.alpha_floor) break;
        }
        const double ll_new = detail::nb_loglik(des.y, eta_of(beta), alpha);
        conv.iterations = outer;
        conv.final_change = std::abs(ll_new - ll);
        if (std::abs(ll_new - ll) < opts.tol * (1.0 + std::abs(ll_new))) {
            conv.converged = true;
            ll = ll_new;
            break;
        }
        ll = ll_new;
    }
    if (!conv.converged)
        throw ConvergenceError("fit_negbin: no convergence after " +
                               std::to_string(opts.max_iter) + " outer iterations; last "
                               "log-likelihood change " + std::to_string(conv.final_change));

    // Observed information over (beta, log alpha): analytic beta block,
    // numeric dispersion row/column.
    const double r = 1.0 / alpha;
    Eigen::VectorXd eta = eta_of(beta);
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(k + 1, k + 1);
    for (long i = 0; i < n; ++i) {
        const double mu = std::exp(eta[i]);
        const double m = mu * r * (r + des.y[i]) / ((r + mu) * (r + mu));
        info.topLeftCorner(k, k) += m * des.X.row(i).transpose() * des.X.row(i);
    }
    {
        const double h = 1e-4;
        const double theta = std::log(alpha);
        const double lp = detail::nb_loglik(des.y, eta, std::exp(theta + h));
        const double l0 = detail::nb_loglik(des.y, eta, alpha);
        const double lm = detail::nb_loglik(des.y, eta, std::exp(theta - h));
        info(k, k) = -(lp - 2 * l0 + lm) / (h * h);
        Eigen::VectorXd gp = detail::nb_score_beta(des.X, des.y, eta, std::exp(theta + h));
        Eigen::VectorXd gm = detail::nb_score_beta(des.X, des.y, eta, std::exp(theta - h));
        Eigen::VectorXd cross = -(gp - gm) / (2 * h);
        info.block(0, k, k, 1) = cross;
        info.block(k, 0, 1, k) = cross.transpose();
    }
    Eigen::MatrixXd vcov_full = info.ldlt().solve(Eigen::MatrixXd::Identity(k + 1, k + 1));

    if (opts.cluster_se) {
        const std::string& ckey = opts.cluster.empty() ? unit_key : opts.cluster;
        int n_clusters = 0;
        auto cl = detail::dense_cluster_ids(d.key(ckey), n_clusters);
        if (n_clusters < 2) throw InvalidInputError("fit_negbin: need >= 2 clusters");
        Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(n_clusters, k + 1);
        const double h = 1e-4;
        for (long i = 0; i < n; ++i) {
            const double mu = std::exp(eta[i]);
            Eigen::VectorXd s(k + 1);
            s.head(k) = ((des.y[i] - mu) * r / (r + mu)) * des.X.row(i).transpose();
            Eigen::VectorXd y1(1), e1(1);
            y1[0] = des.y[i];
            e1[0] = eta[i];
            s[k] = (detail::nb_loglik(y1, e1, std::exp(std::log(alpha) + h)) -
                    detail::nb_loglik(y1, e1, std::exp(std::log(alpha) - h))) /
                   (2 * h);
            scores.row(cl[i]) += s.transpose();
        }
        const double gg = static_cast<double>(n_clusters);
        vcov_full = gg / (gg - 1.0) * vcov_full * (scores.transpose() * scores) * vcov_full;
    }

    EstimateReport rep;
    rep.name = "negbin";
    rep.coef_names.assign(des.names.begin(), des.names.begin() + des.n_reported);
    rep.coef = beta.head(des.n_reported);
    rep.vcov = vcov_full.topLeftCorner(des.n_reported, des.n_reported);
    rep.n_obs = d.n_rows;
    rep.n_dropped_rows = des.dropped_rows;
    rep.rank = static_cast<std::size_t>(k);
    rep.convergence = conv;
    rep.dispersion = alpha;
    rep.poisson_limit = alpha <= opts.alpha_floor * 1.0000001;
    if (opts.cluster_se) {
        int n_clusters = 0;
        detail::dense_cluster_ids(d.key(opts.cluster.empty() ? unit_key : opts.cluster),
                                  n_clusters);
        rep.n_clusters = static_cast<std::size_t>(n_clusters);
    }
    detail::fill_inference(rep);
    return rep;
}

}  // namespace mpw
