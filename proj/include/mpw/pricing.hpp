#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpw/amortization.hpp"
#include "mpw/errors.hpp"

namespace mpw {

// One mortgage origination. Covariates are positional against the owning
// table's declared schema.
struct LoanRecord {
    std::int64_t loan_id = 0;
    std::int64_t county = 0;
    std::int64_t lender = 0;
    int vintage_year = 0;
    double annual_rate = 0.0;  // fraction per year
    double principal = 0.0;    // dollars
    std::vector<double> covariates;
};

struct LoanTable {
    std::vector<std::string> covariate_names;
    std::vector<LoanRecord> loans;
};

// Rate-pricing model: county effects absorbed by within-county demeaning,
// slopes fit by ridge on standardized demeaned covariates and reported on the
// original scale. County effects are loan-weighted mean zero; the overall
// level sits in the intercept.
struct PricingModel {
    std::vector<std::string> covariate_names;
    Eigen::VectorXd slopes;          // original covariate scale
    Eigen::VectorXd slopes_std;      // standardized scale (what the penalty acts on)
    double intercept = 0.0;
    std::map<std::int64_t, double> county_effects;
    double penalty = 0.0;
    Eigen::VectorXd covariate_means;   // overall loan-weighted means
    Eigen::VectorXd covariate_scales;  // RMS of within-county-demeaned columns

    // Predicted annual rate, floored at zero. Empty if the county was not in
    // the training sample.
    std::optional<double> predict_rate(std::int64_t county,
                                       const std::vector<double>& x) const {
        auto it = county_effects.find(county);
        if (it == county_effects.end()) return std::nullopt;
        double r = intercept + it->second;
        for (int j = 0; j < slopes.size(); ++j) r += slopes[j] * x[j];
        return std::max(0.0, r);
    }
};

// Per-CZ normalized payment aggregates. Each aggregation op fills its own
// side; a row exists only where at least one loan was usable.
struct PaymentAggregate {
    std::int64_t cz = 0;
    std::optional<double> p_new;  // $/month per $100,000
    std::optional<double> p_old;  // $/month per $100,000
    std::size_t n_loans = 0;
};

struct AggregationDiagnostics {
    std::size_t skipped_no_county_effect = 0;
    std::size_t skipped_no_cz = 0;
    std::map<std::int64_t, std::size_t> skipped_by_county;
};

inline PricingModel fit_pricing_model(const LoanTable& table, double penalty) {
    if (penalty < 0.0)
        throw InvalidInputError("fit_pricing_model: penalty must be >= 0");
    const auto& loans = table.loans;
    const int p = static_cast<int>(table.covariate_names.size());
    const int n = static_cast<int>(loans.size());
    if (n == 0) throw InsufficientDataError("fit_pricing_model: no loans");
    for (const auto& l : loans)
        if (static_cast<int>(l.covariates.size()) != p)
            throw InvalidInputError("fit_pricing_model: loan " + std::to_string(l.loan_id) +
                                    " has " + std::to_string(l.covariates.size()) +
                                    " covariates, schema declares " + std::to_string(p));

    // County groups.
    std::map<std::int64_t, std::vector<int>> groups;
    for (int i = 0; i < n; ++i) groups[loans[i].county].push_back(i);
    for (const auto& [county, idx] : groups)
        if (idx.size() < 2)
            throw InvalidInputError("fit_pricing_model: county " + std::to_string(county) +
                                    " has fewer than 2 loans");

    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        y[i] = loans[i].annual_rate;
        for (int j = 0; j < p; ++j) X(i, j) = loans[i].covariates[j];
    }
    Eigen::VectorXd overall_means = p > 0 ? X.colwise().mean().transpose().eval()
                                          : Eigen::VectorXd(0);

    // Absorb county effects: demean X and y within county.
    Eigen::MatrixXd Xd = X;
    Eigen::VectorXd yd = y;
    std::map<std::int64_t, Eigen::VectorXd> county_xmean;
    std::map<std::int64_t, double> county_ymean;
    for (const auto& [county, idx] : groups) {
        Eigen::VectorXd xm = Eigen::VectorXd::Zero(p);
        double ym = 0.0;
        for (int i : idx) {
            xm += X.row(i).transpose();
            ym += y[i];
        }
        xm /= static_cast<double>(idx.size());
        ym /= static_cast<double>(idx.size());
        for (int i : idx) {
            Xd.row(i) -= xm.transpose();
            yd[i] -= ym;
        }
        county_xmean[county] = xm;
        county_ymean[county] = ym;
    }

    // Standardize demeaned columns to unit RMS.
    Eigen::VectorXd scales(p);
    for (int j = 0; j < p; ++j) {
        scales[j] = std::sqrt(Xd.col(j).squaredNorm() / n);
        if (!(scales[j] > 1e-12))
            throw RankError("fit_pricing_model: covariate '" + table.covariate_names[j] +
                            "' has no within-county variation");
    }
    Eigen::MatrixXd Xs = Xd * scales.cwiseInverse().asDiagonal();

    Eigen::VectorXd b_std(p);
    if (p == 0) {
        // FE-only model; nothing to solve.
    } else if (penalty == 0.0) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xs);
        if (qr.rank() < p) {
            std::string cols;
            auto perm = qr.colsPermutation().indices();
            for (int k = qr.rank(); k < p; ++k) {
                if (!cols.empty()) cols += ", ";
                cols += table.covariate_names[perm[k]];
            }
            throw RankError("fit_pricing_model: singular design at penalty 0; "
                            "collinear columns: " + cols);
        }
        b_std = qr.solve(yd);
    } else {
        Eigen::MatrixXd A = Xs.transpose() * Xs;
        A.diagonal().array() += penalty;
        b_std = A.ldlt().solve(Xs.transpose() * yd);
    }

    PricingModel model;
    model.covariate_names = table.covariate_names;
    model.slopes_std = b_std;
    model.slopes = p > 0 ? (b_std.array() / scales.array()).matrix().eval()
                         : Eigen::VectorXd(0);
    model.penalty = penalty;
    model.covariate_means = overall_means;
    model.covariate_scales = scales;

    // County effects: group-mean residuals, recentered so the loan-weighted
    // mean lives in the intercept.
    double alpha = 0.0;
    std::map<std::int64_t, double> raw;
    for (const auto& [county, idx] : groups) {
        double e = county_ymean[county];
        if (p > 0) e -= county_xmean[county].dot(model.slopes);
        raw[county] = e;
        alpha += e * static_cast<double>(idx.size());
    }
    alpha /= n;
    model.intercept = alpha;
    for (auto& [county, e] : raw) model.county_effects[county] = e - alpha;
    return model;
}

namespace detail {

// Shared CZ aggregation: normalized payment per loan, loan-count-weighted
// mean within CZ. Loans are visited in loan_id order so the sum is
// reproducible regardless of input order.
template <typename RateFn>
std::pair<std::map<std::int64_t, PaymentAggregate>, AggregationDiagnostics>
aggregate_payments(const LoanTable& table,
                   const std::map<std::int64_t, std::int64_t>& cz_map,
                   bool fill_new, RateFn rate_of) {
    std::vector<const LoanRecord*> order;
    order.reserve(table.loans.size());
    for (const auto& l : table.loans) order.push_back(&l);
    std::sort(order.begin(), order.end(),
              [](const LoanRecord* a, const LoanRecord* b) { return a->loan_id < b->loan_id; });

    std::map<std::int64_t, double> sum;
    std::map<std::int64_t, std::size_t> count;
    AggregationDiagnostics diag;
    for (const LoanRecord* l : order) {
        auto cz_it = cz_map.find(l->county);
        if (cz_it == cz_map.end()) {
            ++diag.skipped_no_cz;
            ++diag.skipped_by_county[l->county];
            continue;
        }
        std::optional<double> rate = rate_of(*l);
        if (!rate) {
            ++diag.skipped_no_county_effect;
            ++diag.skipped_by_county[l->county];
            continue;
        }
        double pay = monthly_payment(100000.0, *rate, 360);
        sum[cz_it->second] += pay;
        count[cz_it->second] += 1;
    }

    std::map<std::int64_t, PaymentAggregate> out;
    for (const auto& [cz, s] : sum) {
        PaymentAggregate a;
        a.cz = cz;
        a.n_loans = count[cz];
        double mean = s / static_cast<double>(a.n_loans);
        if (fill_new)
            a.p_new = mean;
        else
            a.p_old = mean;
        out[cz] = a;
    }
    return {out, diag};
}

}  // namespace detail

// Counterfactual payments: predict a current-rule rate for each loan from its
// covariates and county effect, price at $100,000 over 360 months, and
// average within CZ. Loans in counties the model never saw are skipped and
// counted in the diagnostics.
inline std::pair<std::map<std::int64_t, PaymentAggregate>, AggregationDiagnostics>
compute_p_new(const PricingModel& model, const LoanTable& table,
              const std::map<std::int64_t, std::int64_t>& cz_map) {
    for (const auto& l : table.loans)
        if (l.covariates.size() != model.covariate_names.size())
            throw InvalidInputError("compute_p_new: loan " + std::to_string(l.loan_id) +
                                    " covariate count does not match model schema");
    return detail::aggregate_payments(
        table, cz_map, /*fill_new=*/true,
        [&model](const LoanRecord& l) { return model.predict_rate(l.county, l.covariates); });
}

// Actual payments on the same loans, at each loan's contract rate.
inline std::pair<std::map<std::int64_t, PaymentAggregate>, AggregationDiagnostics>
compute_p_old(const LoanTable& table,
              const std::map<std::int64_t, std::int64_t>& cz_map) {
    return detail::aggregate_payments(
        table, cz_map, /*fill_new=*/false,
        [](const LoanRecord& l) { return std::optional<double>(l.annual_rate); });
}

}  // namespace mpw
