#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mpw/errors.hpp"

namespace mpw {

// Demeaned occupation-specific demand shock in percentage points, per
// (cz, soc, year) cell.
struct BartikCell {
    std::int64_t cz = 0;
    int soc = 0;
    int year = 0;
    double b = 0.0;
};

struct BartikPanel {
    std::vector<BartikCell> cells;  // sorted by (cz, soc, year)
};

// Raw shock: baseline share times the gap of national log employment from
// its baseline-period mean, in percentage points. The panel is then demeaned
// so the full-sample mean is zero.
inline BartikPanel build_bartik(
    const std::map<std::pair<std::int64_t, int>, double>& baseline_shares,
    const std::map<std::pair<int, int>, double>& national_emp,  // (soc, year) -> count
    const std::set<int>& baseline_years) {
    if (baseline_years.empty())
        throw InvalidInputError("build_bartik: baseline_years must be nonempty");

    std::set<int> socs, years;
    for (const auto& [key, emp] : national_emp) {
        if (!(emp > 0.0))
            throw InvalidInputError("build_bartik: nonpositive employment for soc " +
                                    std::to_string(key.first) + ", year " +
                                    std::to_string(key.second));
        socs.insert(key.first);
        years.insert(key.second);
    }

    std::map<int, double> baseline_mean;  // soc -> mean log employment
    for (int s : socs) {
        double acc = 0.0;
        for (int y : baseline_years) {
            auto it = national_emp.find({s, y});
            if (it == national_emp.end())
                throw InvalidInputError("build_bartik: no employment for soc " +
                                        std::to_string(s) + " in baseline year " +
                                        std::to_string(y));
            acc += std::log(it->second);
        }
        baseline_mean[s] = acc / static_cast<double>(baseline_years.size());
    }

    BartikPanel panel;
    double sum = 0.0;
    for (const auto& [key, share] : baseline_shares) {
        const auto& [cz, soc] = key;
        if (!socs.count(soc))
            throw InvalidInputError("build_bartik: share references unknown soc " +
                                    std::to_string(soc));
        for (int y : years) {
            auto it = national_emp.find({soc, y});
            if (it == national_emp.end())
                throw InvalidInputError("build_bartik: no employment for soc " +
                                        std::to_string(soc) + ", year " + std::to_string(y));
            double raw = share * (std::log(it->second) - baseline_mean[soc]) * 100.0;
            panel.cells.push_back({cz, soc, y, raw});
            sum += raw;
        }
    }
    if (!panel.cells.empty()) {
        const double mean = sum / static_cast<double>(panel.cells.size());
        for (auto& c : panel.cells) c.b -= mean;
    }
    return panel;
}

enum class TercileBin { Nonpositive, Low, Mid, High };

struct TercileAssignment {
    std::vector<TercileBin> bins;  // aligned with the input cells
    double cut_low_mid = 0.0;      // upper edge of the low bin
    double cut_mid_high = 0.0;     // upper edge of the mid bin
    std::size_t n_positive = 0;
};

// Nonpositive cells form the reference bin; positive cells split at the
// 33.3/66.7 percentiles of the positive subsample, ties going to the lower
// bin.
inline TercileAssignment bin_positive_terciles(const BartikPanel& shocks) {
    TercileAssignment out;
    out.bins.resize(shocks.cells.size(), TercileBin::Nonpositive);
    std::vector<double> pos;
    for (const auto& c : shocks.cells)
        if (c.b > 0.0) pos.push_back(c.b);
    out.n_positive = pos.size();
    if (pos.empty()) return out;

    std::sort(pos.begin(), pos.end());
    const std::size_t np = pos.size();
    auto rank = [np](double frac) {
        std::size_t r = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(np)));
        return std::min(std::max<std::size_t>(r, 1), np);
    };
    out.cut_low_mid = pos[rank(1.0 / 3.0) - 1];
    out.cut_mid_high = pos[rank(2.0 / 3.0) - 1];

    for (std::size_t i = 0; i < shocks.cells.size(); ++i) {
        const double b = shocks.cells[i].b;
        if (b <= 0.0)
            out.bins[i] = TercileBin::Nonpositive;
        else if (b <= out.cut_low_mid)
            out.bins[i] = TercileBin::Low;
        else if (b <= out.cut_mid_high)
            out.bins[i] = TercileBin::Mid;
        else
            out.bins[i] = TercileBin::High;
    }
    return out;
}

}  // namespace mpw
