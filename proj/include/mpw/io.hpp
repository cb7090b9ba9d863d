#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mpw/bartik.hpp"
#include "mpw/csv.hpp"
#include "mpw/exposure.hpp"
#include "mpw/network.hpp"
#include "mpw/panel.hpp"
#include "mpw/pricing.hpp"

namespace mpw {

// Typed readers and writers for the flat-file interfaces. Readers validate
// schema, types, and key uniqueness, and name file, line, and column in
// every error. Writers emit sorted rows with 10-significant-digit numbers.

namespace io_detail {

inline std::string at_line(const std::string& path, std::size_t row_index) {
    // +2: one for the header row, one for 1-based numbering.
    return path + ":" + std::to_string(row_index + 2);
}

inline void require_header(const CsvTable& t, const std::vector<std::string>& expect) {
    for (const auto& name : expect)
        t.require(name);
    for (const auto& got : t.header)
        if (std::find(expect.begin(), expect.end(), got) == expect.end())
            throw ValidationError(t.path + ": unknown column '" + got + "'");
}

}  // namespace io_detail

// loans.csv: loan_id, county, lender, vintage_year, annual_rate, principal,
// then the declared covariate columns.
inline LoanTable read_loans_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    const std::vector<std::string> fixed = {"loan_id", "county",      "lender",
                                            "vintage_year", "annual_rate", "principal"};
    if (t.header.size() < fixed.size())
        throw ValidationError(path + ": expected at least " + std::to_string(fixed.size()) +
                              " columns");
    for (std::size_t j = 0; j < fixed.size(); ++j)
        if (t.header[j] != fixed[j])
            throw ValidationError(path + ": column " + std::to_string(j + 1) + " must be '" +
                                  fixed[j] + "', got '" + t.header[j] + "'");
    LoanTable out;
    for (std::size_t j = fixed.size(); j < t.header.size(); ++j)
        out.covariate_names.push_back(t.header[j]);

    std::set<std::int64_t> seen;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        const std::string where = io_detail::at_line(path, i);
        LoanRecord l;
        l.loan_id = parse_int(r[0], where, "loan_id");
        l.county = parse_int(r[1], where, "county");
        l.lender = parse_int(r[2], where, "lender");
        l.vintage_year = static_cast<int>(parse_int(r[3], where, "vintage_year"));
        l.annual_rate = parse_double(r[4], where, "annual_rate");
        l.principal = parse_double(r[5], where, "principal");
        if (l.annual_rate < 0.0)
            throw ValidationError(where + ": column 'annual_rate': negative rate");
        if (!(l.principal > 0.0))
            throw ValidationError(where + ": column 'principal': must be positive");
        if (!seen.insert(l.loan_id).second)
            throw ValidationError(where + ": column 'loan_id': duplicate id " +
                                  std::to_string(l.loan_id));
        for (std::size_t j = 6; j < r.size(); ++j)
            l.covariates.push_back(parse_double(r[j], where, t.header[j]));
        out.loans.push_back(std::move(l));
    }
    return out;
}

inline void write_loans_csv(const std::string& path, const LoanTable& table) {
    std::vector<std::string> header = {"loan_id", "county",      "lender",
                                       "vintage_year", "annual_rate", "principal"};
    for (const auto& c : table.covariate_names) header.push_back(c);
    CsvWriter w(path, header);
    for (const auto& l : table.loans) {
        w.field(l.loan_id);
        w.field(l.county);
        w.field(l.lender);
        w.field(l.vintage_year);
        w.field(l.annual_rate);
        w.field(l.principal);
        for (double v : l.covariates) w.field(v);
        w.end_row();
    }
}

// flows.csv: origin, destination, count.
inline FlowTable read_flows_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    io_detail::require_header(t, {"origin", "destination", "count"});
    const int jo = t.require("origin"), jd = t.require("destination"), jc = t.require("count");
    FlowTable out;
    std::set<std::pair<std::int64_t, std::int64_t>> seen;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const std::string where = io_detail::at_line(path, i);
        FlowRow r;
        r.origin = parse_int(t.rows[i][jo], where, "origin");
        r.destination = parse_int(t.rows[i][jd], where, "destination");
        r.count = parse_double(t.rows[i][jc], where, "count");
        if (r.count < 0.0)
            throw ValidationError(where + ": column 'count': negative flow");
        if (!seen.insert({r.origin, r.destination}).second)
            throw ValidationError(where + ": duplicate flow pair " + std::to_string(r.origin) +
                                  " -> " + std::to_string(r.destination));
        out.rows.push_back(r);
    }
    return out;
}

inline void write_flows_csv(const std::string& path, const FlowTable& flows) {
    FlowTable sorted = flows;
    std::sort(sorted.rows.begin(), sorted.rows.end(), [](const FlowRow& a, const FlowRow& b) {
        return std::make_pair(a.origin, a.destination) < std::make_pair(b.origin, b.destination);
    });
    CsvWriter w(path, {"origin", "destination", "count"});
    for (const auto& r : sorted.rows) {
        w.field(r.origin);
        w.field(r.destination);
        w.field(r.count);
        w.end_row();
    }
}

// centroids.csv: cz, latitude, longitude, population.
struct CentroidTable {
    std::map<std::int64_t, Centroid> centroids;
    std::map<std::int64_t, double> populations;
};

inline CentroidTable read_centroids_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    io_detail::require_header(t, {"cz", "latitude", "longitude", "population"});
    const int jc = t.require("cz"), jla = t.require("latitude"), jlo = t.require("longitude"),
              jp = t.require("population");
    CentroidTable out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const std::string where = io_detail::at_line(path, i);
        const std::int64_t cz = parse_int(t.rows[i][jc], where, "cz");
        const double lat = parse_double(t.rows[i][jla], where, "latitude");
        const double lon = parse_double(t.rows[i][jlo], where, "longitude");
        const double pop = parse_double(t.rows[i][jp], where, "population");
        if (std::abs(lat) > 90.0)
            throw ValidationError(where + ": column 'latitude': out of range");
        if (std::abs(lon) > 180.0)
            throw ValidationError(where + ": column 'longitude': out of range");
        if (!(pop > 0.0))
            throw ValidationError(where + ": column 'population': must be positive");
        if (out.centroids.count(cz))
            throw ValidationError(where + ": duplicate cz " + std::to_string(cz));
        out.centroids[cz] = {cz, lat, lon};
        out.populations[cz] = pop;
    }
    return out;
}

inline void write_centroids_csv(const std::string& path,
                                const std::map<std::int64_t, Centroid>& centroids,
                                const std::map<std::int64_t, double>& populations) {
    CsvWriter w(path, {"cz", "latitude", "longitude", "population"});
    for (const auto& [cz, c] : centroids) {
        w.field(cz);
        w.field(c.latitude);
        w.field(c.longitude);
        w.field(populations.at(cz));
        w.end_row();
    }
}

// crosswalk.csv: county, cz, weight.
inline std::map<std::int64_t, std::vector<std::pair<std::int64_t, double>>> read_crosswalk_csv(
    const std::string& path) {
    CsvTable t = read_csv(path);
    io_detail::require_header(t, {"county", "cz", "weight"});
    const int jc = t.require("county"), jz = t.require("cz"), jw = t.require("weight");
    std::map<std::int64_t, std::vector<std::pair<std::int64_t, double>>> out;
    std::set<std::pair<std::int64_t, std::int64_t>> seen;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const std::string where = io_detail::at_line(path, i);
        const std::int64_t county = parse_int(t.rows[i][jc], where, "county");
        const std::int64_t cz = parse_int(t.rows[i][jz], where, "cz");
        const double weight = parse_double(t.rows[i][jw], where, "weight");
        if (!(weight > 0.0) || weight > 1.0 + 1e-12)
            throw ValidationError(where + ": column 'weight': must be in (0, 1]");
        if (!seen.insert({county, cz}).second)
            throw ValidationError(where + ": duplicate crosswalk pair");
        out[county].push_back({cz, weight});
    }
    return out;
}

inline void write_crosswalk_csv(
    const std::string& path,
    const std::map<std::int64_t, std::vector<std::pair<std::int64_t, double>>>& crosswalk) {
    CsvWriter w(path, {"county", "cz", "weight"});
    for (const auto& [county, parts] : crosswalk)
        for (const auto& [cz, weight] : parts) {
            w.field(county);
            w.field(cz);
            w.field(weight);
            w.end_row();
        }
}

// exposure.csv: cz, p_new, wop, mpw, predicted_wop; empty field = missing.
inline ExposureTable read_exposure_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    io_detail::require_header(t, {"cz", "p_new", "wop", "mpw", "predicted_wop"});
    const int jc = t.require("cz"), jp = t.require("p_new"), jw = t.require("wop"),
              jm = t.require("mpw"), jz = t.require("predicted_wop");
    ExposureTable out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const std::string where = io_detail::at_line(path, i);
        ExposureRow row;
        row.cz = parse_int(t.rows[i][jc], where, "cz");
        row.p_new = parse_optional_double(t.rows[i][jp], where, "p_new");
        row.wop = parse_optional_double(t.rows[i][jw], where, "wop");
        row.mpw = parse_optional_double(t.rows[i][jm], where, "mpw");
        row.predicted_wop = parse_optional_double(t.rows[i][jz], where, "predicted_wop");
        if (out.rows.count(row.cz))
            throw ValidationError(where + ": duplicate cz " + std::to_string(row.cz));
        const bool both = row.p_new.has_value() && row.wop.has_value();
        if (row.mpw.has_value() != both)
            throw ValidationError(where + ": column 'mpw': must be present exactly when "
                                          "p_new and wop both are");
        if (both && std::abs(*row.mpw - (*row.p_new - *row.wop)) > 1e-6)
            throw ValidationError(where + ": column 'mpw': identity mpw = p_new - wop violated");
        out.rows[row.cz] = row;
    }
    return out;
}

inline void write_exposure_csv(const std::string& path, const ExposureTable& exposures) {
    CsvWriter w(path, {"cz", "p_new", "wop", "mpw", "predicted_wop"});
    for (const auto& [cz, row] : exposures.rows) {
        w.field(cz);
        w.field(row.p_new);
        w.field(row.wop);
        w.field(row.mpw);
        w.field(row.predicted_wop);
        w.end_row();
    }
}

// bartik.csv: cz, soc, year, b.
inline BartikPanel read_bartik_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    io_detail::require_header(t, {"cz", "soc", "year", "b"});
    const int jc = t.require("cz"), js = t.require("soc"), jy = t.require("year"),
              jb = t.require("b");
    BartikPanel out;
    std::set<std::tuple<std::int64_t, int, int>> seen;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const std::string where = io_detail::at_line(path, i);
        BartikCell c;
        c.cz = parse_int(t.rows[i][jc], where, "cz");
        c.soc = static_cast<int>(parse_int(t.rows[i][js], where, "soc"));
        c.year = static_cast<int>(parse_int(t.rows[i][jy], where, "year"));
        c.b = parse_double(t.rows[i][jb], where, "b");
        if (!seen.insert({c.cz, c.soc, c.year}).second)
            throw ValidationError(where + ": duplicate (cz, soc, year) cell");
        out.cells.push_back(c);
    }
    return out;
}

inline void write_bartik_csv(const std::string& path, const BartikPanel& panel) {
    BartikPanel sorted = panel;
    std::sort(sorted.cells.begin(), sorted.cells.end(),
              [](const BartikCell& a, const BartikCell& b) {
                  return std::make_tuple(a.cz, a.soc, a.year) <
                         std::make_tuple(b.cz, b.soc, b.year);
              });
    CsvWriter w(path, {"cz", "soc", "year", "b"});
    for (const auto& c : sorted.cells) {
        w.field(c.cz);
        w.field(c.soc);
        w.field(c.year);
        w.field(c.b);
        w.end_row();
    }
}

// panel.csv: unit, period, optional group, cluster, optional weight, then
// numeric outcome/regressor columns.
inline PanelDataset read_panel_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    const int ju = t.require("unit"), jp = t.require("period"), jc = t.require("cluster");
    const int jg = t.find("group");
    PanelDataset out;
    const std::size_t n = t.rows.size();
    std::vector<std::int64_t> unit(n), period(n), cluster(n), group(jg >= 0 ? n : 0);
    std::map<std::string, std::vector<double>> numeric;
    std::vector<int> numeric_cols;
    for (std::size_t j = 0; j < t.header.size(); ++j) {
        const int ji = static_cast<int>(j);
        if (ji == ju || ji == jp || ji == jc || ji == jg) continue;
        numeric[t.header[j]].resize(n);
        numeric_cols.push_back(ji);
    }
    std::set<std::tuple<std::int64_t, std::int64_t, std::int64_t>> seen;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string where = io_detail::at_line(path, i);
        unit[i] = parse_int(t.rows[i][ju], where, "unit");
        period[i] = parse_int(t.rows[i][jp], where, "period");
        cluster[i] = parse_int(t.rows[i][jc], where, "cluster");
        const std::int64_t g = jg >= 0 ? parse_int(t.rows[i][jg], where, "group") : 0;
        if (jg >= 0) group[i] = g;
        if (!seen.insert({unit[i], period[i], g}).second)
            throw ValidationError(where + ": duplicate (unit, period" +
                                  std::string(jg >= 0 ? ", group" : "") + ") key");
        for (int ji : numeric_cols)
            numeric[t.header[ji]][i] =
                parse_double(t.rows[i][ji], where, t.header[ji]);
    }
    out.add_key("unit", std::move(unit));
    out.add_key("period", std::move(period));
    out.add_key("cluster", std::move(cluster));
    if (jg >= 0) out.add_key("group", std::move(group));
    for (auto& [name, col] : numeric) out.add_value(name, std::move(col));
    return out;
}

inline void write_panel_csv(const std::string& path, const PanelDataset& d) {
    std::vector<std::string> header = {"unit", "period"};
    if (d.has_key("group")) header.push_back("group");
    header.push_back("cluster");
    std::vector<std::string> value_names;
    for (const auto& [name, col] : d.values) value_names.push_back(name);
    for (const auto& name : value_names) header.push_back(name);

    CsvWriter w(path, header);
    for (std::size_t i = 0; i < d.n_rows; ++i) {
        w.field(d.key("unit")[i]);
        w.field(d.key("period")[i]);
        if (d.has_key("group")) w.field(d.key("group")[i]);
        w.field(d.key("cluster")[i]);
        for (const auto& name : value_names) w.field(d.value(name)[i]);
        w.end_row();
    }
}

// estimates.csv: model, name, coef, se, t, p.
inline void write_estimates_csv(const std::string& path,
                                const std::vector<EstimateReport>& reports) {
    CsvWriter w(path, {"model", "name", "coef", "se", "t", "p"});
    for (const auto& rep : reports)
        for (std::size_t j = 0; j < rep.coef_names.size(); ++j) {
            w.field(rep.name);
            w.field(rep.coef_names[j]);
            w.field(rep.coef[static_cast<long>(j)]);
            w.field(rep.se[static_cast<long>(j)]);
            w.field(rep.tstat[static_cast<long>(j)]);
            w.field(rep.pval[static_cast<long>(j)]);
            w.end_row();
        }
}

// truth.csv: name, value.
inline void write_truth_csv(const std::string& path,
                            const std::vector<std::pair<std::string, double>>& rows) {
    CsvWriter w(path, {"name", "value"});
    for (const auto& [name, value] : rows) {
        w.field(name);
        w.field(value);
        w.end_row();
    }
}

inline std::map<std::string, double> read_truth_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    io_detail::require_header(t, {"name", "value"});
    std::map<std::string, double> out;
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        out[t.rows[i][0]] = parse_double(t.rows[i][1], io_detail::at_line(path, i), "value");
    return out;
}

}  // namespace mpw
