#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mpw/bartik.hpp"
#include "mpw/exposure.hpp"
#include "mpw/leaveout.hpp"
#include "mpw/network.hpp"
#include "mpw/panel.hpp"
#include "mpw/pricing.hpp"
#include "mpw/rng.hpp"

namespace mpw {

// Ground-truth world: geography, loans, migration network, exposures with a
// known wedge, and outcome panels whose structural parameters are recorded.
// Everything is deterministic in (config, master_seed).
struct DgpConfig {
    int n_cz = 200;
    int n_counties_per_cz = 2;
    int n_states = 20;
    int n_lenders = 20;
    int n_soc = 8;
    int loans_per_county = 10;  // per vintage year

    int year_min = 2017;
    int year_max = 2024;
    int post_start = 2022;

    double true_beta_migration = -0.059;  // on MPW x Post, continuous outcome
    double true_theta_h1b = 0.018;        // on demeaned MPW x Post, count log-mean
    double true_triple = 0.048;           // on MPW x Post x Bartik

    // Gravity law for bilateral flows.
    double gravity_intercept = -8.0;
    double gravity_pop_origin = 1.0;
    double gravity_pop_dest = 0.8;
    double gravity_distance = -1.2;
    double flow_noise = 0.3;  // lognormal sigma; 0 gives exact gravity flows

    // Loan rate equations (fractions per year).
    double base_rate_pre = 0.042;    // 2018-2019
    double base_rate_shock = 0.030;  // 2020-2021
    double base_rate_new = 0.068;    // 2024 pricing rule
    double lender_scale = 0.004;     // sd of lender price positions
    double county_rate_sd = 0.0015;  // sd of county-level rate shifts
    double rate_noise = 0.0010;      // idiosyncratic rate noise
    std::vector<double> pricing_slopes = {0.0020, -0.0020, 0.0100};
    double ridge_penalty = 1.0;  // used when building the stored exposures

    // Outcome noise structure.
    double outcome_noise = 0.5;   // idiosyncratic cz-year noise
    double cluster_noise = 0.5;   // cz-level random Post slope
    double endogeneity = 0.0;     // loading of outcome noise on the WOP residual
    double soc_noise = 0.8;       // cz-soc-year noise
    double nb_dispersion = 0.5;   // NB2 dispersion for count outcomes
    double e_bar = 0.45;          // employment / population

    std::uint64_t master_seed = 20240517;
};

struct SyntheticWorld {
    DgpConfig config;
    std::vector<std::string> covariate_names;
    LoanTable loans_pre;      // 2018-2019
    LoanTable loans_shock;    // 2020-2021
    LoanTable loans_pricing;  // 2024

    std::map<std::int64_t, std::int64_t> county_cz;
    std::map<std::int64_t, std::int64_t> county_state;
    std::map<std::int64_t, std::vector<std::pair<std::int64_t, double>>> crosswalk;
    FlowTable county_flows;
    std::map<std::int64_t, Centroid> cz_centroids;
    std::map<std::int64_t, double> cz_pops;

    ExposureTable exposures;  // stored truth, includes the instrument column
    std::map<std::pair<std::int64_t, int>, double> baseline_shares;
    std::map<std::pair<int, int>, double> national_emp;
    BartikPanel bartik;

    PanelDataset panel;      // cz-year
    PanelDataset soc_panel;  // cz-soc-year

    double mean_mpw = 0.0;
    double sd_mpw = 0.0;
};

namespace detail {

struct Geography {
    std::map<std::int64_t, std::int64_t> county_cz;
    std::map<std::int64_t, std::int64_t> county_state;
    std::map<std::int64_t, double> county_pop;
    std::map<std::int64_t, Centroid> county_centroid;
    std::map<std::int64_t, Centroid> cz_centroids;
    std::map<std::int64_t, double> cz_pops;
    std::map<std::int64_t, std::vector<std::int64_t>> cz_counties;
};

inline Geography make_geography(const DgpConfig& cfg, std::mt19937_64& rng) {
    Geography g;
    std::uniform_real_distribution<double> lat(30.0, 47.0), lon(-120.0, -75.0);
    std::uniform_real_distribution<double> jitter(-0.3, 0.3);
    std::lognormal_distribution<double> pop(10.5, 0.6);
    std::vector<int> per_state_counter(cfg.n_states, 0);
    for (int cz = 0; cz < cfg.n_cz; ++cz) {
        const std::int64_t state = cz % cfg.n_states;
        const double clat = lat(rng), clon = lon(rng);
        std::vector<std::tuple<double, double, double>> parts;
        for (int j = 0; j < cfg.n_counties_per_cz; ++j) {
            const std::int64_t county = state * 1000 + per_state_counter[state]++;
            g.county_cz[county] = cz;
            g.county_state[county] = state;
            const double p = pop(rng);
            const double la = clat + jitter(rng), lo = clon + jitter(rng);
            g.county_pop[county] = p;
            g.county_centroid[county] = {county, la, lo};
            g.cz_counties[cz].push_back(county);
            parts.push_back({la, lo, p});
        }
        g.cz_centroids[cz] = population_weighted_centroid(cz, parts);
        double total = 0.0;
        for (const auto& [la, lo, p] : parts) total += p;
        g.cz_pops[cz] = total;
    }
    return g;
}

}  // namespace detail

// Bilateral county-level flows whose CZ aggregates follow the gravity law
// exactly up to the multiplicative noise: CZ flows are drawn from the law,
// then split across county pairs by population shares.
inline void generate_network(const DgpConfig& cfg, const detail::Geography& geo,
                             SyntheticWorld& w, std::mt19937_64& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    for (int o = 0; o < cfg.n_cz; ++o) {
        for (int d = 0; d < cfg.n_cz; ++d) {
            if (o == d) continue;
            const double dist =
                great_circle_distance(geo.cz_centroids.at(o), geo.cz_centroids.at(d));
            double lf = cfg.gravity_intercept +
                        cfg.gravity_pop_origin * std::log(geo.cz_pops.at(o)) +
                        cfg.gravity_pop_dest * std::log(geo.cz_pops.at(d)) +
                        cfg.gravity_distance * std::log(dist);
            if (cfg.flow_noise > 0.0) lf += cfg.flow_noise * z(rng);
            const double flow = std::exp(lf);
            for (std::int64_t oc : geo.cz_counties.at(o))
                for (std::int64_t dc : geo.cz_counties.at(d)) {
                    const double share = (geo.county_pop.at(oc) / geo.cz_pops.at(o)) *
                                         (geo.county_pop.at(dc) / geo.cz_pops.at(d));
                    w.county_flows.rows.push_back({oc, dc, flow * share});
                }
        }
    }
    w.cz_centroids = geo.cz_centroids;
    w.cz_pops = geo.cz_pops;
}

// Loans for the three vintage groups. Shock-period rates carry lender price
// positions, county shifts, covariate effects, and noise; the 2024 pricing
// sample follows a pure county-plus-covariates rule so the pricing model has
// an exactly recoverable target at zero noise.
inline void generate_loans(const DgpConfig& cfg, const detail::Geography& geo,
                           SyntheticWorld& w, std::mt19937_64& rng) {
    w.covariate_names = {"loan_size", "income", "dti"};
    w.loans_pre.covariate_names = w.covariate_names;
    w.loans_shock.covariate_names = w.covariate_names;
    w.loans_pricing.covariate_names = w.covariate_names;

    std::normal_distribution<double> z(0.0, 1.0);
    std::map<std::int64_t, double> county_shift;
    for (const auto& [county, cz] : geo.county_cz) county_shift[county] = cfg.county_rate_sd * z(rng);
    std::vector<double> lender_position(cfg.n_lenders);
    for (auto& v : lender_position) v = cfg.lender_scale * z(rng);

    // Persistent county lender mixes, shared by the pre and shock vintages so
    // pre-period shares predict shock-period lending.
    std::map<std::int64_t, std::vector<double>> mix;
    for (const auto& [county, cz] : geo.county_cz) {
        auto& m = mix[county];
        m.resize(cfg.n_lenders);
        double total = 0.0;
        for (auto& v : m) {
            v = std::abs(z(rng)) + 0.05;
            total += v;
        }
        for (auto& v : m) v /= total;
    }
    auto pick_lender = [&](std::int64_t county, double u) {
        const auto& m = mix.at(county);
        double acc = 0.0;
        for (int L = 0; L < cfg.n_lenders; ++L) {
            acc += m[L];
            if (u <= acc) return L;
        }
        return cfg.n_lenders - 1;
    };

    std::uniform_real_distribution<double> uu(0.0, 1.0);
    std::int64_t next_id = 1;
    auto emit = [&](LoanTable& table, std::int64_t county, int vintage, double base,
                    bool with_lender) {
        LoanRecord l;
        l.loan_id = next_id++;
        l.county = county;
        l.vintage_year = vintage;
        const int lender = pick_lender(county, uu(rng));
        l.lender = lender;
        l.covariates = {3.0 + z(rng), 1.0 + 0.3 * z(rng), 0.36 + 0.08 * z(rng)};
        double rate = base + county_shift.at(county);
        for (std::size_t j = 0; j < l.covariates.size(); ++j)
            rate += cfg.pricing_slopes[j] * l.covariates[j];
        if (with_lender) rate += lender_position[lender];
        rate += cfg.rate_noise * z(rng);
        l.annual_rate = std::max(0.001, rate);
        l.principal = std::max(50000.0, 300000.0 + 50000.0 * z(rng));
        table.loans.push_back(l);
    };

    for (const auto& [county, cz] : geo.county_cz) {
        for (int i = 0; i < cfg.loans_per_county; ++i) {
            emit(w.loans_pre, county, 2018 + i % 2, cfg.base_rate_pre, true);
            emit(w.loans_shock, county, 2020 + i % 2, cfg.base_rate_shock, true);
            emit(w.loans_pricing, county, 2024, cfg.base_rate_new, false);
        }
    }
}

// Occupation shares and national employment paths for the Bartik shock.
inline void generate_bartik_inputs(const DgpConfig& cfg, SyntheticWorld& w,
                                   std::mt19937_64& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    for (int cz = 0; cz < cfg.n_cz; ++cz) {
        std::vector<double> raw(cfg.n_soc);
        double total = 0.0;
        for (auto& v : raw) {
            v = std::abs(z(rng)) + 0.1;
            total += v;
        }
        for (int s = 0; s < cfg.n_soc; ++s) w.baseline_shares[{cz, s}] = raw[s] / total;
    }
    for (int s = 0; s < cfg.n_soc; ++s) {
        double le = std::log(5.0e5) + 0.5 * z(rng);
        const double drift = 0.01 * z(rng);
        for (int y = cfg.year_min; y <= cfg.year_max; ++y) {
            w.national_emp[{s, y}] = std::exp(le);
            le += drift + 0.03 * z(rng);
        }
    }
    std::set<int> baseline_years;
    for (int y = cfg.year_min; y <= std::min(cfg.year_max, cfg.post_start - 3); ++y)
        baseline_years.insert(y);
    w.bartik = build_bartik(w.baseline_shares, w.national_emp, baseline_years);
}

namespace detail {

// Standardized WOP residual after projecting on the instrument column: the
// endogeneity switch loads the outcome noise on exactly the variation the
// instrument cannot see.
inline std::map<std::int64_t, double> wop_residual(const ExposureTable& exposures) {
    std::vector<std::int64_t> czs;
    std::vector<double> wv, zv;
    for (const auto& [cz, row] : exposures.rows)
        if (row.wop && row.predicted_wop) {
            czs.push_back(cz);
            wv.push_back(*row.wop);
            zv.push_back(*row.predicted_wop);
        }
    std::map<std::int64_t, double> out;
    if (czs.size() < 3) return out;
    const double n = static_cast<double>(czs.size());
    double mw = 0, mz = 0;
    for (std::size_t i = 0; i < czs.size(); ++i) {
        mw += wv[i] / n;
        mz += zv[i] / n;
    }
    double szz = 0, szw = 0;
    for (std::size_t i = 0; i < czs.size(); ++i) {
        szz += (zv[i] - mz) * (zv[i] - mz);
        szw += (zv[i] - mz) * (wv[i] - mw);
    }
    const double slope = szz > 1e-12 ? szw / szz : 0.0;
    double ss = 0;
    std::vector<double> res(czs.size());
    for (std::size_t i = 0; i < czs.size(); ++i) {
        res[i] = (wv[i] - mw) - slope * (zv[i] - mz);
        ss += res[i] * res[i];
    }
    const double sd = std::sqrt(ss / n);
    for (std::size_t i = 0; i < czs.size(); ++i)
        out[czs[i]] = sd > 1e-12 ? res[i] / sd : 0.0;
    return out;
}

}  // namespace detail

// CZ-year outcome panel. Continuous outcome follows
//   y = a_c + d_t + beta * mpw * post + gamma' controls
//       + cluster_noise * u_c * post + endogeneity * eta_c * post + eps,
// and the count outcome is NB2 around
//   exp(a2_c + d2_t + theta * (mpw - mean) * post + log_emp).
inline PanelDataset generate_panel(const DgpConfig& cfg, const ExposureTable& exposures,
                                   std::mt19937_64& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<std::int64_t> czs;
    std::vector<double> mpw_v;
    for (const auto& [cz, row] : exposures.rows)
        if (row.mpw) {
            czs.push_back(cz);
            mpw_v.push_back(*row.mpw);
        }
    double mpw_mean = 0.0;
    for (double v : mpw_v) mpw_mean += v;
    mpw_mean /= static_cast<double>(mpw_v.size());

    auto eta = detail::wop_residual(exposures);

    const int n_years = cfg.year_max - cfg.year_min + 1;
    std::vector<double> delta(n_years), delta2(n_years);
    for (int t = 0; t < n_years; ++t) {
        delta[t] = 0.5 * z(rng);
        delta2[t] = 0.05 * z(rng);
    }

    PanelDataset d;
    std::vector<std::int64_t> unit, period, cluster;
    std::vector<double> weight, mig, h1b_rate, h1b, ctrl1, ctrl2, log_emp;
    std::vector<double> mpw_col, p_new_col, wop_col, pred_wop_col, post_col;
    for (std::size_t i = 0; i < czs.size(); ++i) {
        const std::int64_t cz = czs[i];
        const auto& row = exposures.rows.at(cz);
        const double alpha = 2.0 * z(rng);
        const double alpha2 = -9.0 + 0.3 * z(rng);
        const double alpha3 = 0.6 + 0.2 * z(rng);
        const double u_c = z(rng), u2_c = z(rng);
        const double emp = cfg.e_bar * 40000.0 * std::exp(0.3 * z(rng));
        const double eta_c = eta.count(cz) ? eta.at(cz) : 0.0;
        for (int t = 0; t < n_years; ++t) {
            const int year = cfg.year_min + t;
            const double post = year >= cfg.post_start ? 1.0 : 0.0;
            const double c1 = z(rng), c2 = z(rng);
            const double y =
                alpha + delta[t] + cfg.true_beta_migration * *row.mpw * post + 0.4 * c1 -
                0.3 * c2 + cfg.cluster_noise * u_c * post +
                cfg.endogeneity * eta_c * post + cfg.outcome_noise * z(rng);
            const double yh = alpha3 + 0.3 * delta[t] +
                              cfg.true_theta_h1b * *row.mpw * post + 0.2 * c1 +
                              0.3 * cfg.cluster_noise * u2_c * post -
                              0.3 * cfg.endogeneity * eta_c * post +
                              0.3 * cfg.outcome_noise * z(rng);
            const double le = std::log(emp);
            const double mu =
                std::exp(alpha2 + delta2[t] + cfg.true_theta_h1b * (*row.mpw - mpw_mean) * post + le);
            double count;
            if (cfg.nb_dispersion > 0.0) {
                std::gamma_distribution<double> gamma(1.0 / cfg.nb_dispersion, cfg.nb_dispersion);
                std::poisson_distribution<long> pois(mu * gamma(rng));
                count = static_cast<double>(pois(rng));
            } else {
                std::poisson_distribution<long> pois(mu);
                count = static_cast<double>(pois(rng));
            }
            unit.push_back(cz);
            period.push_back(year);
            cluster.push_back(cz);
            weight.push_back(1.0);
            mig.push_back(y);
            h1b_rate.push_back(yh);
            h1b.push_back(count);
            ctrl1.push_back(c1);
            ctrl2.push_back(c2);
            log_emp.push_back(le);
            mpw_col.push_back(*row.mpw);
            p_new_col.push_back(*row.p_new);
            wop_col.push_back(*row.wop);
            pred_wop_col.push_back(row.predicted_wop ? *row.predicted_wop : 0.0);
            post_col.push_back(post);
        }
    }
    d.add_key("unit", unit);
    d.add_key("period", period);
    d.add_key("cluster", cluster);
    d.add_value("weight", weight);
    d.add_value("mig_rate", mig);
    d.add_value("h1b_rate", h1b_rate);
    d.add_value("h1b_new", h1b);
    d.add_value("ctrl1", ctrl1);
    d.add_value("ctrl2", ctrl2);
    d.add_value("log_emp", log_emp);
    d.add_value("mpw", mpw_col);
    d.add_value("p_new", p_new_col);
    d.add_value("wop", wop_col);
    d.add_value("predicted_wop", pred_wop_col);
    d.add_value("post", post_col);
    return d;
}

// CZ-SOC-year panel with all three two-way effect components and the triple
// term true_triple * mpw * post * bartik plus its lower-order interactions.
inline PanelDataset generate_soc_panel(const DgpConfig& cfg, const ExposureTable& exposures,
                                       const BartikPanel& bartik, std::mt19937_64& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    std::map<std::int64_t, double> mpw_of;
    double mpw_mean = 0.0;
    for (const auto& [cz, row] : exposures.rows)
        if (row.mpw) {
            mpw_of[cz] = *row.mpw;
            mpw_mean += *row.mpw;
        }
    mpw_mean /= static_cast<double>(mpw_of.size());

    std::map<std::pair<std::int64_t, int>, double> a_ct, a_cs, a_st;
    std::map<std::tuple<std::int64_t, int, int>, double> b_of;
    for (const auto& c : bartik.cells) b_of[{c.cz, c.soc, c.year}] = c.b;

    PanelDataset d;
    std::vector<std::int64_t> unit, period, group, cluster;
    std::vector<double> weight, h, b_col, post_col, mpw_col;
    for (const auto& c : bartik.cells) {
        auto it = mpw_of.find(c.cz);
        if (it == mpw_of.end()) continue;
        const double mpw = it->second;
        const double post = c.year >= cfg.post_start ? 1.0 : 0.0;
        auto ct = a_ct.try_emplace({c.cz, c.year}, 0.5 * z(rng)).first;
        auto cs = a_cs.try_emplace({c.cz, c.soc}, 0.5 * z(rng)).first;
        auto st = a_st.try_emplace({static_cast<std::int64_t>(c.soc), c.year}, 0.5 * z(rng)).first;
        const double y = ct->second + cs->second + st->second +
                         cfg.true_triple * mpw * post * c.b + 0.3 * c.b + 0.2 * post * c.b +
                         0.005 * (mpw - mpw_mean) * c.b + cfg.soc_noise * z(rng);
        unit.push_back(c.cz);
        period.push_back(c.year);
        group.push_back(c.soc);
        cluster.push_back(c.cz);
        weight.push_back(1.0);
        h.push_back(y);
        b_col.push_back(c.b);
        post_col.push_back(post);
        mpw_col.push_back(mpw);
    }
    d.add_key("unit", unit);
    d.add_key("period", period);
    d.add_key("group", group);
    d.add_key("cluster", cluster);
    d.add_value("weight", weight);
    d.add_value("h1b_soc", h);
    d.add_value("bartik", b_col);
    d.add_value("post", post_col);
    d.add_value("mpw", mpw_col);
    return d;
}

// Full world: geography, loans, flows, exposures rebuilt through the actual
// pipeline operations, Bartik inputs, and both outcome panels.
inline SyntheticWorld generate_world(const DgpConfig& cfg) {
    SyntheticWorld w;
    w.config = cfg;

    auto rng_geo = make_rng(cfg.master_seed, "geography");
    auto geo = detail::make_geography(cfg, rng_geo);
    w.county_cz = geo.county_cz;
    w.county_state = geo.county_state;
    for (const auto& [county, cz] : geo.county_cz) w.crosswalk[county] = {{cz, 1.0}};

    auto rng_net = make_rng(cfg.master_seed, "network");
    generate_network(cfg, geo, w, rng_net);

    auto rng_loans = make_rng(cfg.master_seed, "loans");
    generate_loans(cfg, geo, w, rng_loans);

    // Exposures through the pipeline operations.
    auto model = fit_pricing_model(w.loans_pricing, cfg.ridge_penalty);
    auto [p_new_agg, diag_new] = compute_p_new(model, w.loans_shock, w.county_cz);
    auto [p_old_agg, diag_old] = compute_p_old(w.loans_shock, w.county_cz);
    std::map<std::int64_t, double> p_new, p_old;
    for (const auto& [cz, a] : p_new_agg) p_new[cz] = *a.p_new;
    for (const auto& [cz, a] : p_old_agg) p_old[cz] = *a.p_old;

    auto [cz_flows, xdiag] = apply_crosswalk(w.county_flows, w.crosswalk);
    auto weights = normalize_in_shares(cz_flows);
    auto [wop, wdiag] = build_wop(weights, p_old);
    w.exposures = build_mpw(p_new, wop);

    auto gravity = fit_gravity(cz_flows, w.cz_pops, w.cz_centroids);
    auto shares_hat = predict_gravity_shares(gravity.model, w.cz_pops, w.cz_centroids);
    auto leaveout = lender_leaveout_payments(w.loans_pre, w.loans_shock, w.county_state);
    auto pred_p_old = aggregate_predictions_to_cz(leaveout.county_prediction, w.loans_pre,
                                                  w.county_cz);
    auto [pred_wop, pdiag] = build_predicted_wop(shares_hat, pred_p_old);
    for (const auto& [cz, v] : pred_wop)
        if (w.exposures.rows.count(cz)) w.exposures.rows.at(cz).predicted_wop = v;

    {
        std::vector<double> v;
        for (const auto& [cz, row] : w.exposures.rows)
            if (row.mpw) v.push_back(*row.mpw);
        double m = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        w.mean_mpw = m;
        w.sd_mpw = std::sqrt(s / static_cast<double>(v.size() - 1));
    }

    auto rng_bartik = make_rng(cfg.master_seed, "bartik");
    generate_bartik_inputs(cfg, w, rng_bartik);

    auto rng_panel = make_rng(cfg.master_seed, "panel");
    w.panel = generate_panel(cfg, w.exposures, rng_panel);

    auto rng_soc = make_rng(cfg.master_seed, "soc_panel");
    w.soc_panel = generate_soc_panel(cfg, w.exposures, w.bartik, rng_soc);
    return w;
}

}  // namespace mpw
