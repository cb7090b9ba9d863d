#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "mpw/errors.hpp"

namespace mpw {

// Bilateral migrant counts. Self-flows may be stored; consumers exclude them.
struct FlowRow {
    std::int64_t origin = 0;
    std::int64_t destination = 0;
    double count = 0.0;
};

struct FlowTable {
    std::vector<FlowRow> rows;

    double total() const {
        double s = 0.0;
        for (const auto& r : rows) s += r.count;
        return s;
    }
};

// Normalized in-migration shares per destination. Entries are sorted by
// origin code; weights sum to one. Destinations with zero inflow are absent.
struct WeightEntry {
    std::int64_t origin = 0;
    double weight = 0.0;
};

struct WeightMatrix {
    std::map<std::int64_t, std::vector<WeightEntry>> by_destination;
};

struct Centroid {
    std::int64_t cz = 0;
    double latitude = 0.0;   // degrees
    double longitude = 0.0;  // degrees
};

// log(flow_od) = b0 + b1 log(pop_o) + b2 log(pop_d) + b3 log(dist_od)
struct GravityModel {
    double intercept = 0.0;
    double pop_origin_elasticity = 0.0;
    double pop_dest_elasticity = 0.0;
    double distance_elasticity = 0.0;
};

struct CrosswalkDiagnostics {
    std::vector<std::int64_t> missing_counties;  // dropped, sorted
    double dropped_mass = 0.0;
};

// Reweight county-level flows onto CZs. Each county splits across CZs by its
// crosswalk weights (which must sum to 1 per county); flow mass is preserved
// up to the mass of counties absent from the crosswalk, which are dropped and
// reported.
inline std::pair<FlowTable, CrosswalkDiagnostics> apply_crosswalk(
    const FlowTable& flows,
    const std::map<std::int64_t, std::vector<std::pair<std::int64_t, double>>>& crosswalk) {
    for (const auto& [county, parts] : crosswalk) {
        double s = 0.0;
        for (const auto& [cz, w] : parts) s += w;
        if (std::abs(s - 1.0) > 1e-9)
            throw InvalidInputError("apply_crosswalk: weights for county " +
                                    std::to_string(county) + " sum to " + std::to_string(s));
    }

    std::map<std::pair<std::int64_t, std::int64_t>, double> acc;
    CrosswalkDiagnostics diag;
    std::map<std::int64_t, bool> missing_seen;
    for (const auto& r : flows.rows) {
        auto o_it = crosswalk.find(r.origin);
        auto d_it = crosswalk.find(r.destination);
        if (o_it == crosswalk.end() || d_it == crosswalk.end()) {
            if (o_it == crosswalk.end()) missing_seen[r.origin] = true;
            if (d_it == crosswalk.end()) missing_seen[r.destination] = true;
            diag.dropped_mass += r.count;
            continue;
        }
        for (const auto& [ocz, ow] : o_it->second)
            for (const auto& [dcz, dw] : d_it->second)
                acc[{ocz, dcz}] += r.count * ow * dw;
    }
    for (const auto& [county, _] : missing_seen) diag.missing_counties.push_back(county);

    FlowTable out;
    out.rows.reserve(acc.size());
    for (const auto& [key, count] : acc)
        out.rows.push_back({key.first, key.second, count});
    return {out, diag};
}

// In-shares: w_od = flow_od / sum_{o' != d} flow_{o'd}. Self-flows are
// excluded from both numerator and denominator; destinations with no
// positive external inflow are omitted (their wedge is undefined downstream).
inline WeightMatrix normalize_in_shares(const FlowTable& flows) {
    std::map<std::int64_t, std::map<std::int64_t, double>> inflow;
    for (const auto& r : flows.rows) {
        if (r.count < 0.0)
            throw InvalidInputError("normalize_in_shares: negative flow " +
                                    std::to_string(r.origin) + "->" +
                                    std::to_string(r.destination));
        if (r.origin == r.destination) continue;
        inflow[r.destination][r.origin] += r.count;
    }
    WeightMatrix wm;
    for (const auto& [dest, by_origin] : inflow) {
        double denom = 0.0;
        for (const auto& [o, c] : by_origin) denom += c;
        if (!(denom > 0.0)) continue;
        auto& entries = wm.by_destination[dest];
        for (const auto& [o, c] : by_origin)
            if (c > 0.0) entries.push_back({o, c / denom});
    }
    return wm;
}

// Keep the k largest-share origins per destination (ties to the lower origin
// code) and renormalize to sum one.
inline WeightMatrix truncate_top_k(const WeightMatrix& weights, int k) {
    if (k < 1) throw InvalidInputError("truncate_top_k: k must be >= 1");
    WeightMatrix out;
    for (const auto& [dest, entries] : weights.by_destination) {
        std::vector<WeightEntry> sorted = entries;
        std::sort(sorted.begin(), sorted.end(), [](const WeightEntry& a, const WeightEntry& b) {
            if (a.weight != b.weight) return a.weight > b.weight;
            return a.origin < b.origin;
        });
        if (static_cast<int>(sorted.size()) > k) sorted.resize(k);
        double s = 0.0;
        for (const auto& e : sorted) s += e.weight;
        std::sort(sorted.begin(), sorted.end(),
                  [](const WeightEntry& a, const WeightEntry& b) { return a.origin < b.origin; });
        auto& dst = out.by_destination[dest];
        for (const auto& e : sorted) dst.push_back({e.origin, e.weight / s});
    }
    return out;
}

// Haversine distance on a 6371 km sphere.
inline double great_circle_distance(const Centroid& a, const Centroid& b) {
    constexpr double kEarthRadiusKm = 6371.0;
    constexpr double deg = std::numbers::pi / 180.0;
    const double phi1 = a.latitude * deg, phi2 = b.latitude * deg;
    const double dphi = (b.latitude - a.latitude) * deg;
    const double dlam = (b.longitude - a.longitude) * deg;
    const double s = std::sin(dphi / 2), t = std::sin(dlam / 2);
    const double h = s * s + std::cos(phi1) * std::cos(phi2) * t * t;
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

inline Centroid population_weighted_centroid(
    std::int64_t cz, const std::vector<std::tuple<double, double, double>>& parts) {
    double wsum = 0.0, lat = 0.0, lon = 0.0;
    for (const auto& [la, lo, pop] : parts) {
        wsum += pop;
        lat += la * pop;
        lon += lo * pop;
    }
    if (!(wsum > 0.0))
        throw InvalidInputError("population_weighted_centroid: total population must be > 0");
    return {cz, lat / wsum, lon / wsum};
}

struct GravityFitResult {
    GravityModel model;
    std::size_t n_pairs_used = 0;
    std::size_t n_zero_dropped = 0;  // zero-flow pairs excluded (log undefined)
};

namespace detail {

inline double require_pop(const std::map<std::int64_t, double>& pops, std::int64_t cz,
                          const char* who) {
    auto it = pops.find(cz);
    if (it == pops.end() || !(it->second > 0.0))
        throw InvalidInputError(std::string(who) + ": missing or nonpositive population for CZ " +
                                std::to_string(cz));
    return it->second;
}

inline const Centroid& require_centroid(const std::map<std::int64_t, Centroid>& cents,
                                        std::int64_t cz, const char* who) {
    auto it = cents.find(cz);
    if (it == cents.end())
        throw InvalidInputError(std::string(who) + ": missing centroid for CZ " +
                                std::to_string(cz));
    return it->second;
}

}  // namespace detail

// OLS of log(flow) on log populations and log distance over positive-flow
// pairs with distinct endpoints.
inline GravityFitResult fit_gravity(const FlowTable& flows,
                                    const std::map<std::int64_t, double>& pops,
                                    const std::map<std::int64_t, Centroid>& centroids) {
    std::vector<double> lf, lpo, lpd, ld;
    std::size_t zero_dropped = 0;
    for (const auto& r : flows.rows) {
        if (r.origin == r.destination) continue;
        if (!(r.count > 0.0)) {
            ++zero_dropped;
            continue;
        }
        double po = detail::require_pop(pops, r.origin, "fit_gravity");
        double pd = detail::require_pop(pops, r.destination, "fit_gravity");
        const Centroid& co = detail::require_centroid(centroids, r.origin, "fit_gravity");
        const Centroid& cd = detail::require_centroid(centroids, r.destination, "fit_gravity");
        double dist = great_circle_distance(co, cd);
        if (!(dist > 0.0))
            throw InvalidInputError("fit_gravity: coincident centroids for CZs " +
                                    std::to_string(r.origin) + " and " +
                                    std::to_string(r.destination));
        lf.push_back(std::log(r.count));
        lpo.push_back(std::log(po));
        lpd.push_back(std::log(pd));
        ld.push_back(std::log(dist));
    }
    const int n = static_cast<int>(lf.size());
    if (n < 5)
        throw InsufficientDataError("fit_gravity: need at least 5 positive-flow pairs, have " +
                                    std::to_string(n));
    Eigen::MatrixXd X(n, 4);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = lpo[i];
        X(i, 2) = lpd[i];
        X(i, 3) = ld[i];
        y[i] = lf[i];
    }
    Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
    GravityFitResult res;
    res.model = {beta[0], beta[1], beta[2], beta[3]};
    res.n_pairs_used = static_cast<std::size_t>(n);
    res.n_zero_dropped = zero_dropped;
    return res;
}

// Predicted in-shares: exponentiate fitted log-flows over all ordered pairs
// o != d in the CZ universe, then renormalize per destination.
inline WeightMatrix predict_gravity_shares(const GravityModel& model,
                                           const std::map<std::int64_t, double>& pops,
                                           const std::map<std::int64_t, Centroid>& centroids) {
    std::vector<std::int64_t> czs;
    for (const auto& [cz, c] : centroids) {
        detail::require_pop(pops, cz, "predict_gravity_shares");
        czs.push_back(cz);
    }
    WeightMatrix wm;
    for (std::int64_t d : czs) {
        double lpd = std::log(pops.at(d));
        // Log-scale scores, shifted by their max before exponentiating.
        std::vector<std::pair<std::int64_t, double>> scores;
        double max_score = -std::numeric_limits<double>::infinity();
        for (std::int64_t o : czs) {
            if (o == d) continue;
            double dist = great_circle_distance(centroids.at(o), centroids.at(d));
            if (!(dist > 0.0))
                throw InvalidInputError("predict_gravity_shares: coincident centroids for CZs " +
                                        std::to_string(o) + " and " + std::to_string(d));
            double s = model.intercept + model.pop_origin_elasticity * std::log(pops.at(o)) +
                       model.pop_dest_elasticity * lpd +
                       model.distance_elasticity * std::log(dist);
            scores.push_back({o, s});
            max_score = std::max(max_score, s);
        }
        if (scores.empty()) continue;
        double denom = 0.0;
        for (auto& [o, s] : scores) {
            s = std::exp(s - max_score);
            denom += s;
        }
        auto& entries = wm.by_destination[d];
        for (const auto& [o, s] : scores) entries.push_back({o, s / denom});
    }
    return wm;
}

}  // namespace mpw
