#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mpw/amortization.hpp"
#include "mpw/demean.hpp"
#include "mpw/errors.hpp"
#include "mpw/pricing.hpp"

namespace mpw {

struct LeaveOutParams {
    std::size_t min_out_of_state = 50;  // out-of-state loans needed for q_{L,-k}
    double coverage_floor = 0.70;       // pre-shock lender-share coverage per county
};

struct LeaveOutResult {
    std::map<std::int64_t, double> county_prediction;  // counties passing coverage
    // Lender-by-state price positions, normalized to loan-weighted mean zero
    // within state, with their loan counts.
    std::map<std::pair<std::int64_t, std::int64_t>, double> lender_state_effect;
    std::map<std::pair<std::int64_t, std::int64_t>, std::size_t> lender_state_loans;
    std::vector<std::int64_t> omitted_counties;  // failed coverage, sorted
    std::size_t demean_iterations = 0;
    std::size_t recover_iterations = 0;
};

// Lender-predicted origin payments, in five steps: (1) pre-shock lender
// shares by county; (2) pooled regression of the normalized monthly payment
// on loan controls with county, state-year, and lender-by-state effects over
// the shock-period loans; (3) lender-by-state effects normalized to
// loan-weighted mean zero within state; (4) leave-out averages across the
// other states, subject to a minimum out-of-state loan count; (5) county
// predictions as share-weighted leave-out positions, retained where covered
// lender share clears the floor.
inline LeaveOutResult lender_leaveout_payments(
    const LoanTable& loans_pre, const LoanTable& loans_shock,
    const std::map<std::int64_t, std::int64_t>& county_state, LeaveOutParams params = {}) {
    auto state_of = [&county_state](std::int64_t county) {
        auto it = county_state.find(county);
        if (it == county_state.end())
            throw InvalidInputError("lender_leaveout_payments: no state for county " +
                                    std::to_string(county));
        return it->second;
    };

    // Step 1: pre-shock lender shares per county.
    std::map<std::int64_t, std::map<std::int64_t, double>> share;  // county -> lender -> share
    {
        std::map<std::int64_t, double> county_total;
        for (const auto& l : loans_pre.loans) {
            share[l.county][l.lender] += 1.0;
            county_total[l.county] += 1.0;
        }
        for (auto& [county, by_lender] : share)
            for (auto& [lender, cnt] : by_lender) cnt /= county_total[county];
    }

    // Step 2: pooled payment regression with three FE sets.
    const long n = static_cast<long>(loans_shock.loans.size());
    if (n < 10)
        throw InsufficientDataError("lender_leaveout_payments: too few shock-period loans");
    const int p = static_cast<int>(loans_shock.covariate_names.size());

    Eigen::VectorXd pay(n);
    Eigen::MatrixXd X(n, p);
    FeStructure fe;
    fe.group_of_row.resize(3);
    fe.n_groups.resize(3);
    std::map<std::int64_t, int> county_id;
    std::map<std::pair<std::int64_t, int>, int> stateyear_id;
    std::map<std::pair<std::int64_t, std::int64_t>, int> lenderstate_id;
    std::vector<std::pair<std::int64_t, std::int64_t>> lenderstate_key;
    for (auto& g : fe.group_of_row) g.resize(n);
    for (long i = 0; i < n; ++i) {
        const auto& l = loans_shock.loans[i];
        pay[i] = monthly_payment(100000.0, l.annual_rate, 360);
        if (static_cast<int>(l.covariates.size()) != p)
            throw InvalidInputError("lender_leaveout_payments: loan " +
                                    std::to_string(l.loan_id) + " covariate count mismatch");
        for (int j = 0; j < p; ++j) X(i, j) = l.covariates[j];
        const std::int64_t st = state_of(l.county);
        fe.group_of_row[0][i] =
            county_id.try_emplace(l.county, static_cast<int>(county_id.size())).first->second;
        fe.group_of_row[1][i] = stateyear_id
                                    .try_emplace({st, l.vintage_year},
                                                 static_cast<int>(stateyear_id.size()))
                                    .first->second;
        auto [it, inserted] = lenderstate_id.try_emplace({l.lender, st},
                                                         static_cast<int>(lenderstate_id.size()));
        if (inserted) lenderstate_key.push_back({l.lender, st});
        fe.group_of_row[2][i] = it->second;
    }
    fe.n_groups[0] = static_cast<int>(county_id.size());
    fe.n_groups[1] = static_cast<int>(stateyear_id.size());
    fe.n_groups[2] = static_cast<int>(lenderstate_id.size());

    Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd beta(p);
    LeaveOutResult res;
    if (p > 0) {
        Eigen::MatrixXd cols(n, p + 1);
        cols.col(0) = pay;
        cols.rightCols(p) = X;
        auto dm = demean_columns(std::move(cols), fe, w);
        res.demean_iterations = static_cast<std::size_t>(dm.iterations);
        Eigen::MatrixXd Xd = dm.cols.rightCols(p);
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xd);
        if (qr.rank() < p) {
            std::string cols_msg;
            auto perm = qr.colsPermutation().indices();
            for (int j = qr.rank(); j < p; ++j) {
                if (!cols_msg.empty()) cols_msg += ", ";
                cols_msg += loans_shock.covariate_names[perm[j]];
            }
            throw RankError("lender_leaveout_payments: collinear controls: " + cols_msg);
        }
        beta = qr.solve(dm.cols.col(0));
    } else {
        beta.resize(0);
    }

    // Recover the three effect vectors from the slope residual by zig-zag
    // averaging; the within-state normalization below pins the lender-state
    // level, so the split of constants across sets does not matter.
    Eigen::VectorXd resid = p > 0 ? (pay - X * beta).eval() : pay;
    std::vector<Eigen::VectorXd> effect(3);
    std::vector<Eigen::VectorXd> gsize(3);
    for (int s = 0; s < 3; ++s) {
        effect[s] = Eigen::VectorXd::Zero(fe.n_groups[s]);
        gsize[s] = Eigen::VectorXd::Zero(fe.n_groups[s]);
        for (long i = 0; i < n; ++i) gsize[s][fe.group_of_row[s][i]] += 1.0;
    }
    const int max_iter = 10000;
    const double tol = 1e-10;
    bool converged = false;
    for (int iter = 1; iter <= max_iter; ++iter) {
        double change = 0.0;
        for (int s = 0; s < 3; ++s) {
            Eigen::VectorXd acc = Eigen::VectorXd::Zero(fe.n_groups[s]);
            for (long i = 0; i < n; ++i) {
                double other = 0.0;
                for (int s2 = 0; s2 < 3; ++s2)
                    if (s2 != s) other += effect[s2][fe.group_of_row[s2][i]];
                acc[fe.group_of_row[s][i]] += resid[i] - other;
            }
            acc.array() /= gsize[s].array();
            change = std::max(change, (acc - effect[s]).cwiseAbs().maxCoeff());
            effect[s] = acc;
        }
        res.recover_iterations = static_cast<std::size_t>(iter);
        if (change < tol) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw ConvergenceError("lender_leaveout_payments: effect recovery did not converge");

    // Step 3: normalize lender-state effects within state.
    std::map<std::int64_t, std::pair<double, double>> state_acc;  // state -> (sum w*λ, sum w)
    for (int g = 0; g < fe.n_groups[2]; ++g) {
        const auto& [lender, st] = lenderstate_key[g];
        state_acc[st].first += gsize[2][g] * effect[2][g];
        state_acc[st].second += gsize[2][g];
    }
    for (int g = 0; g < fe.n_groups[2]; ++g) {
        const auto& [lender, st] = lenderstate_key[g];
        const auto& [sw, tw] = state_acc[st];
        const double lam = effect[2][g] - sw / tw;
        res.lender_state_effect[{lender, st}] = lam;
        res.lender_state_loans[{lender, st}] =
            static_cast<std::size_t>(std::llround(gsize[2][g]));
    }

    // Step 4: leave-out averages q_{L,-k} for every state k a lender's
    // counties might sit in.
    std::map<std::int64_t, std::vector<std::pair<std::int64_t, double>>> lender_states;
    for (const auto& [key, lam] : res.lender_state_effect)
        lender_states[key.first].push_back({key.second, lam});
    auto leaveout_q = [&](std::int64_t lender, std::int64_t skip_state)
        -> std::optional<double> {
        auto it = lender_states.find(lender);
        if (it == lender_states.end()) return std::nullopt;
        double num = 0.0;
        std::size_t cnt = 0;
        for (const auto& [st, lam] : it->second) {
            if (st == skip_state) continue;
            const std::size_t m = res.lender_state_loans.at({lender, st});
            num += static_cast<double>(m) * lam;
            cnt += m;
        }
        if (cnt < params.min_out_of_state) return std::nullopt;
        return num / static_cast<double>(cnt);
    };

    // Step 5: county predictions where covered share clears the floor.
    for (const auto& [county, by_lender] : share) {
        const std::int64_t st = state_of(county);
        double pred = 0.0, covered = 0.0;
        for (const auto& [lender, s_cl] : by_lender) {
            auto q = leaveout_q(lender, st);
            if (!q) continue;
            pred += s_cl * *q;
            covered += s_cl;
        }
        if (covered >= params.coverage_floor)
            res.county_prediction[county] = pred;
        else
            res.omitted_counties.push_back(county);
    }
    std::sort(res.omitted_counties.begin(), res.omitted_counties.end());
    return res;
}

// Aggregate county predictions to origin CZs with pre-shock loan-count
// weights.
inline std::map<std::int64_t, double> aggregate_predictions_to_cz(
    const std::map<std::int64_t, double>& county_prediction, const LoanTable& loans_pre,
    const std::map<std::int64_t, std::int64_t>& cz_map) {
    std::map<std::int64_t, double> wsum, acc;
    for (const auto& l : loans_pre.loans) {
        auto pit = county_prediction.find(l.county);
        if (pit == county_prediction.end()) continue;
        auto cit = cz_map.find(l.county);
        if (cit == cz_map.end()) continue;
        acc[cit->second] += pit->second;
        wsum[cit->second] += 1.0;
    }
    std::map<std::int64_t, double> out;
    for (const auto& [cz, s] : acc) out[cz] = s / wsum[cz];
    return out;
}

}  // namespace mpw
