#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpw/errors.hpp"
#include "mpw/network.hpp"
#include "mpw/rng.hpp"

namespace mpw {

// Per-CZ exposure measures, all in $/month per $100,000 of principal.
// mpw = p_new - wop wherever both components exist.
struct ExposureRow {
    std::int64_t cz = 0;
    std::optional<double> p_new;
    std::optional<double> wop;
    std::optional<double> mpw;
    std::optional<double> predicted_wop;  // instrument column
};

struct ExposureTable {
    std::map<std::int64_t, ExposureRow> rows;
};

enum class MissingOriginPolicy {
    DropRenormalize,  // reweight over origins with data (default)
    MarkMissing,      // any missing origin voids the destination
};

struct WopDiagnostics {
    MissingOriginPolicy policy = MissingOriginPolicy::DropRenormalize;
    std::size_t destinations_built = 0;
    std::size_t destinations_missing = 0;
    std::size_t origins_dropped = 0;  // origin entries without a payment
};

// Weighted-origin old payment: WOP_d = sum_o w_od * P_old_o. Origins lacking
// a payment are handled per policy; under drop-and-renormalize the weights
// are rescaled over covered origins.
inline std::pair<std::map<std::int64_t, double>, WopDiagnostics> build_wop(
    const WeightMatrix& weights, const std::map<std::int64_t, double>& p_old,
    MissingOriginPolicy policy = MissingOriginPolicy::DropRenormalize) {
    std::map<std::int64_t, double> wop;
    WopDiagnostics diag;
    diag.policy = policy;
    for (const auto& [dest, entries] : weights.by_destination) {
        double acc = 0.0, covered = 0.0;
        bool any_missing = false;
        for (const auto& e : entries) {
            auto it = p_old.find(e.origin);
            if (it == p_old.end()) {
                any_missing = true;
                ++diag.origins_dropped;
                continue;
            }
            acc += e.weight * it->second;
            covered += e.weight;
        }
        if (policy == MissingOriginPolicy::MarkMissing && any_missing) {
            ++diag.destinations_missing;
            continue;
        }
        if (!(covered > 0.0)) {
            ++diag.destinations_missing;
            continue;
        }
        wop[dest] = acc / covered;
        ++diag.destinations_built;
    }
    return {wop, diag};
}

// Same construction with predicted shares and predicted payments; passing
// realized inputs reproduces build_wop.
inline std::pair<std::map<std::int64_t, double>, WopDiagnostics> build_predicted_wop(
    const WeightMatrix& gravity_shares, const std::map<std::int64_t, double>& predicted_p_old,
    MissingOriginPolicy policy = MissingOriginPolicy::DropRenormalize) {
    return build_wop(gravity_shares, predicted_p_old, policy);
}

// Assemble the exposure table over the union of the component universes.
inline ExposureTable build_mpw(const std::map<std::int64_t, double>& p_new,
                               const std::map<std::int64_t, double>& wop) {
    ExposureTable t;
    for (const auto& [cz, v] : p_new) {
        t.rows[cz].cz = cz;
        t.rows[cz].p_new = v;
    }
    for (const auto& [cz, v] : wop) {
        t.rows[cz].cz = cz;
        t.rows[cz].wop = v;
    }
    for (auto& [cz, row] : t.rows)
        if (row.p_new && row.wop) row.mpw = *row.p_new - *row.wop;
    return t;
}

struct VarianceDecomposition {
    double var_mpw = 0.0;
    double var_pnew = 0.0;
    double var_wop = 0.0;
    double cov_term = 0.0;  // -2 Cov(P_new, WOP)
    double corr = 0.0;
    std::size_t n = 0;
};

// Var(MPW) = Var(P_new) + Var(WOP) - 2 Cov(P_new, WOP), over rows where both
// components exist. Sample (n-1) moments.
inline VarianceDecomposition variance_decomposition(const ExposureTable& exposures) {
    std::vector<double> p, w;
    for (const auto& [cz, row] : exposures.rows)
        if (row.p_new && row.wop) {
            p.push_back(*row.p_new);
            w.push_back(*row.wop);
        }
    const std::size_t n = p.size();
    if (n < 2)
        throw InsufficientDataError("variance_decomposition: need >= 2 complete rows, have " +
                                    std::to_string(n));
    double mp = 0.0, mw = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mp += p[i];
        mw += w[i];
    }
    mp /= n;
    mw /= n;
    double vp = 0.0, vw = 0.0, cov = 0.0, vm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dp = p[i] - mp, dw = w[i] - mw;
        vp += dp * dp;
        vw += dw * dw;
        cov += dp * dw;
        vm += (dp - dw) * (dp - dw);
    }
    const double denom = static_cast<double>(n - 1);
    VarianceDecomposition d;
    d.var_pnew = vp / denom;
    d.var_wop = vw / denom;
    d.var_mpw = vm / denom;
    d.cov_term = -2.0 * cov / denom;
    d.corr = (cov / denom) / std::sqrt(d.var_pnew * d.var_wop);
    d.n = n;
    return d;
}

namespace detail {

// Fisher-Yates with rejection sampling, so the permutation depends only on
// the seed and not on library internals.
inline std::vector<std::size_t> random_permutation(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::uint64_t bound = i;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t r;
        do {
            r = rng();
        } while (r >= limit);
        std::swap(perm[i - 1], perm[r % bound]);
    }
    return perm;
}

}  // namespace detail

// Reshuffle the WOP column uniformly at random across destinations with a
// non-missing WOP, holding p_new fixed and recomputing mpw. Deterministic in
// the seed.
inline ExposureTable permute_wop(const ExposureTable& exposures, std::uint64_t seed) {
    std::vector<std::int64_t> czs;
    std::vector<double> wops;
    for (const auto& [cz, row] : exposures.rows)
        if (row.wop) {
            czs.push_back(cz);
            wops.push_back(*row.wop);
        }
    std::mt19937_64 rng(derive_seed(seed, "permute_wop"));
    auto perm = detail::random_permutation(czs.size(), rng);

    ExposureTable out = exposures;
    for (std::size_t i = 0; i < czs.size(); ++i) {
        auto& row = out.rows.at(czs[i]);
        row.wop = wops[perm[i]];
        row.mpw = row.p_new ? std::optional<double>(*row.p_new - *row.wop) : std::nullopt;
    }
    return out;
}

// Two-sided centered placebo p-value with the add-one convention:
// p = (1 + #{r : |b_r - mean| >= |actual - mean|}) / (R + 1).
inline double centered_p_value(double actual, const std::vector<double>& placebos) {
    if (placebos.empty())
        throw InvalidInputError("centered_p_value: empty placebo list");
    double mean = 0.0;
    for (double b : placebos) mean += b;
    mean /= static_cast<double>(placebos.size());
    const double ref = std::abs(actual - mean);
    std::size_t count = 0;
    for (double b : placebos)
        if (std::abs(b - mean) >= ref) ++count;
    return static_cast<double>(1 + count) / static_cast<double>(placebos.size() + 1);
}

// H-1B positions gained per deterred domestic in-migrant:
// O = e_bar * theta / |beta|.
inline double offset_ratio(double beta_migration, double theta_h1b, double e_bar) {
    if (beta_migration == 0.0)
        throw InvalidInputError("offset_ratio: beta_migration must be nonzero");
    return e_bar * theta_h1b / std::abs(beta_migration);
}

}  // namespace mpw
