#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mpw/amortization.hpp"
#include "mpw/leaveout.hpp"

using namespace mpw;

namespace {

void add_loan(LoanTable& t, std::int64_t id, std::int64_t county, std::int64_t lender,
              int vintage, double rate) {
    LoanRecord l;
    l.loan_id = id;
    l.county = county;
    l.lender = lender;
    l.vintage_year = vintage;
    l.annual_rate = rate;
    l.principal = 250000.0;
    t.loans.push_back(l);
}

}  // namespace

TEST_CASE("two-lender toy: county prediction is the share-weighted position mix") {
    // Four states, two counties each; lender 1 prices at 3.0%, lender 2 at
    // 3.5%, everywhere and always. County county_state mapping: state = county / 10.
    LoanTable pre, shock;
    std::map<std::int64_t, std::int64_t> county_state;
    std::int64_t id = 0;
    for (std::int64_t st = 0; st < 4; ++st) {
        for (std::int64_t c = 0; c < 2; ++c) {
            const std::int64_t county = st * 10 + c;
            county_state[county] = st;
            // Pre-period shares: first county 80/20, second 30/70.
            const int n1 = c == 0 ? 8 : 3, n2 = 10 - n1;
            for (int i = 0; i < n1; ++i) add_loan(pre, id++, county, 1, 2018, 0.040);
            for (int i = 0; i < n2; ++i) add_loan(pre, id++, county, 2, 2019, 0.045);
            // Shock-period loans: 30 per county per lender, constant rates,
            // both lenders present in both vintages.
            for (int i = 0; i < 30; ++i) add_loan(shock, id++, county, 1, 2020 + i % 2, 0.030);
            for (int i = 0; i < 30; ++i) add_loan(shock, id++, county, 2, 2020 + i % 2, 0.035);
        }
    }
    LeaveOutParams params;
    params.min_out_of_state = 50;
    params.coverage_floor = 0.70;
    auto res = lender_leaveout_payments(pre, shock, county_state, params);

    // Hand computation: payments are constants per lender, the within-state
    // loan-weighted mean is their midpoint, so the normalized positions are
    // +/- half the payment gap, identical in every state; the leave-out
    // averages equal the positions themselves.
    const double p1 = monthly_payment(100000.0, 0.030, 360);
    const double p2 = monthly_payment(100000.0, 0.035, 360);
    const double lam1 = (p1 - p2) / 2.0;
    const double lam2 = (p2 - p1) / 2.0;
    for (std::int64_t st = 0; st < 4; ++st) {
        REQUIRE(std::abs(res.lender_state_effect.at({1, st}) - lam1) < 1e-7);
        REQUIRE(std::abs(res.lender_state_effect.at({2, st}) - lam2) < 1e-7);
    }
    for (std::int64_t st = 0; st < 4; ++st) {
        const double pred80 = res.county_prediction.at(st * 10);
        const double pred30 = res.county_prediction.at(st * 10 + 1);
        REQUIRE(std::abs(pred80 - (0.8 * lam1 + 0.2 * lam2)) < 1e-7);
        REQUIRE(std::abs(pred30 - (0.3 * lam1 + 0.7 * lam2)) < 1e-7);
    }
    REQUIRE(res.omitted_counties.empty());
}

TEST_CASE("normalized positions average to zero within each state") {
    std::mt19937_64 rng(1501);
    std::normal_distribution<double> z(0.0, 1.0);
    LoanTable pre, shock;
    std::map<std::int64_t, std::int64_t> county_state;
    std::int64_t id = 0;
    std::vector<double> position(6);
    for (auto& p : position) p = 0.002 * z(rng);
    for (std::int64_t st = 0; st < 5; ++st)
        for (std::int64_t c = 0; c < 3; ++c) {
            const std::int64_t county = st * 10 + c;
            county_state[county] = st;
            for (std::int64_t lender = 0; lender < 6; ++lender) {
                add_loan(pre, id++, county, lender, 2018, 0.04);
                for (int i = 0; i < 8; ++i)
                    add_loan(shock, id++, county, lender, 2020 + (i % 2),
                             0.03 + position[lender] + 0.0005 * z(rng));
            }
        }
    auto res = lender_leaveout_payments(pre, shock, county_state);
    for (std::int64_t st = 0; st < 5; ++st) {
        double acc = 0.0, wsum = 0.0;
        for (std::int64_t lender = 0; lender < 6; ++lender) {
            const double nl = static_cast<double>(res.lender_state_loans.at({lender, st}));
            acc += nl * res.lender_state_effect.at({lender, st});
            wsum += nl;
        }
        REQUIRE(std::abs(acc / wsum) < 1e-8);
    }
}

TEST_CASE("a single-lender county with no out-of-state loans is omitted") {
    LoanTable pre, shock;
    std::map<std::int64_t, std::int64_t> county_state;
    std::int64_t id = 0;
    // Two national lenders in states 0 and 1, plus a local-only lender 9 in
    // state 0 whose loans never leave it.
    for (std::int64_t st = 0; st < 2; ++st) {
        const std::int64_t county = st * 10;
        county_state[county] = st;
        for (std::int64_t lender = 1; lender <= 2; ++lender) {
            for (int i = 0; i < 10; ++i) add_loan(pre, id++, county, lender, 2018, 0.04);
            for (int i = 0; i < 60; ++i)
                add_loan(shock, id++, county, lender, 2020, 0.030 + 0.002 * lender);
        }
    }
    county_state[5] = 0;  // the lender-9-only county, also state 0
    for (int i = 0; i < 10; ++i) add_loan(pre, id++, 5, 9, 2018, 0.04);
    for (int i = 0; i < 20; ++i) add_loan(shock, id++, 5, 9, 2020, 0.033);

    auto res = lender_leaveout_payments(pre, shock, county_state);
    REQUIRE(res.county_prediction.find(5) == res.county_prediction.end());
    REQUIRE(std::find(res.omitted_counties.begin(), res.omitted_counties.end(), 5) !=
            res.omitted_counties.end());
    REQUIRE(res.county_prediction.count(0) == 1);
    REQUIRE(res.county_prediction.count(10) == 1);
}

TEST_CASE("lender-position world: predictions track true origin payments") {
    // Rates vary only through lender positions (plus tiny noise), so the
    // county predictions should line up with realized county mean payments.
    std::mt19937_64 rng(1502);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_int_distribution<int> pick_lender(0, 9);
    LoanTable pre, shock;
    std::map<std::int64_t, std::int64_t> county_state;
    std::int64_t id = 0;
    std::vector<double> position(10);
    for (auto& p : position) p = 0.004 * z(rng);

    const int n_states = 8, counties_per = 4;
    for (std::int64_t st = 0; st < n_states; ++st)
        for (std::int64_t c = 0; c < counties_per; ++c) {
            const std::int64_t county = st * 100 + c;
            county_state[county] = st;
            // County-specific lender mix, persistent across periods.
            std::vector<double> mix(10);
            double mix_total = 0.0;
            for (auto& m : mix) {
                m = std::abs(z(rng)) + 0.05;
                mix_total += m;
            }
            for (int i = 0; i < 40; ++i) {
                std::uniform_real_distribution<double> u(0.0, mix_total);
                double r = u(rng);
                int lender = 0;
                for (int L = 0; L < 10; ++L) {
                    r -= mix[L];
                    if (r <= 0.0) {
                        lender = L;
                        break;
                    }
                }
                add_loan(pre, id++, county, lender, 2018 + (i % 2), 0.04);
                add_loan(shock, id++, county, lender, 2020 + (i % 2),
                         0.030 + position[lender] + 0.0002 * z(rng));
            }
        }

    auto res = lender_leaveout_payments(pre, shock, county_state);
    REQUIRE(res.county_prediction.size() >= 30);

    // Correlate predictions with realized county mean payments.
    std::map<std::int64_t, std::pair<double, int>> realized;
    for (const auto& l : shock.loans) {
        realized[l.county].first += monthly_payment(100000.0, l.annual_rate, 360);
        realized[l.county].second += 1;
    }
    std::vector<double> a, b;
    for (const auto& [county, pred] : res.county_prediction) {
        a.push_back(pred);
        b.push_back(realized[county].first / realized[county].second);
    }
    const auto nn = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i] / nn;
        mb += b[i] / nn;
    }
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    REQUIRE(sab / std::sqrt(saa * sbb) > 0.99);
}

TEST_CASE("county to CZ aggregation uses pre-shock loan counts") {
    LoanTable pre;
    std::int64_t id = 0;
    for (int i = 0; i < 3; ++i) add_loan(pre, id++, 1, 1, 2018, 0.04);
    for (int i = 0; i < 1; ++i) add_loan(pre, id++, 2, 1, 2018, 0.04);
    std::map<std::int64_t, double> county_pred{{1, 10.0}, {2, -6.0}};
    std::map<std::int64_t, std::int64_t> cz_map{{1, 7}, {2, 7}};
    auto cz = aggregate_predictions_to_cz(county_pred, pre, cz_map);
    REQUIRE(std::abs(cz.at(7) - (3.0 * 10.0 + 1.0 * (-6.0)) / 4.0) < 1e-12);
}
