#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpw/demean.hpp"
#include "mpw/dgp.hpp"
#include "mpw/estimators.hpp"
#include "mpw/exposure.hpp"
#include "mpw/io.hpp"
#include "mpw/leaveout.hpp"
#include "mpw/negbin.hpp"
#include "mpw/network.hpp"
#include "mpw/pricing.hpp"
#include "mpw/rng.hpp"
#include "mpw/tsls.hpp"

namespace mpw {

// One configured estimation: the core ModelSpec plus pipeline-level options
// (which dataset it runs on, event-study expansion).
struct SpecEntry {
    ModelSpec spec;
    std::string data = "panel";  // "panel" or "soc_panel"
    bool event_study = false;
    std::string exposure;                 // event-study exposure column
    std::vector<std::string> controls;    // event-study controls
};

struct RunConfig {
    std::map<std::string, std::string> inputs;
    std::string output_dir = "out";
    int post_start = 2022;
    int reference_year = 2019;
    int vintage_pre_min = 2018, vintage_pre_max = 2019;
    int vintage_shock_min = 2020, vintage_shock_max = 2021;
    int vintage_pricing_min = 2024, vintage_pricing_max = 2024;
    double penalty = 1.0;
    MissingOriginPolicy missing_origin_policy = MissingOriginPolicy::DropRenormalize;
    std::vector<int> top_k;
    std::vector<std::string> topk_models;
    int permutations = 0;
    std::string placebo_model;
    std::uint64_t master_seed = 1;
    double e_bar = 0.45;
    std::size_t min_out_of_state = 50;
    double coverage_floor = 0.70;
    std::string offset_beta_model, offset_theta_model;
    std::vector<SpecEntry> estimators;
};

namespace pipeline_detail {

inline std::vector<std::string> string_list(const nlohmann::json& j) {
    std::vector<std::string> out;
    for (const auto& v : j) out.push_back(v.get<std::string>());
    return out;
}

inline SpecEntry parse_spec_entry(const nlohmann::json& j) {
    SpecEntry e;
    e.spec.name = j.at("name").get<std::string>();
    e.data = j.value("data", std::string("panel"));
    e.spec.outcome = j.at("outcome").get<std::string>();
    e.spec.estimator = estimator_from_string(j.value("estimator", std::string("fe_ols")));
    e.spec.transform = transform_from_string(j.value("transform", std::string("none")));
    if (j.contains("regressors")) e.spec.regressors = string_list(j.at("regressors"));
    if (j.contains("fe"))
        for (const auto& set : j.at("fe")) e.spec.fe.push_back(string_list(set));
    e.spec.cluster = j.value("cluster", std::string("cluster"));
    e.spec.endogenous = j.value("endogenous", std::string());
    e.spec.instrument = j.value("instrument", std::string());
    e.spec.offset = j.value("offset", std::string());
    e.spec.year0 = j.value("year0", 0);
    e.spec.year1 = j.value("year1", 0);
    if (j.contains("event_study")) {
        e.event_study = true;
        e.exposure = j.at("event_study").at("exposure").get<std::string>();
        if (j.at("event_study").contains("controls"))
            e.controls = string_list(j.at("event_study").at("controls"));
    }
    return e;
}

}  // namespace pipeline_detail

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError(path + ": cannot open config file");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": bad JSON: " + e.what());
    }
    try {
        RunConfig c;
        if (j.contains("inputs"))
            for (const auto& [key, value] : j.at("inputs").items())
                c.inputs[key] = value.get<std::string>();
        c.output_dir = j.value("output_dir", c.output_dir);
        c.post_start = j.value("post_start", c.post_start);
        c.reference_year = j.value("reference_year", c.reference_year);
        if (j.contains("vintage_pre")) {
            c.vintage_pre_min = j.at("vintage_pre").at(0).get<int>();
            c.vintage_pre_max = j.at("vintage_pre").at(1).get<int>();
        }
        if (j.contains("vintage_shock")) {
            c.vintage_shock_min = j.at("vintage_shock").at(0).get<int>();
            c.vintage_shock_max = j.at("vintage_shock").at(1).get<int>();
        }
        if (j.contains("vintage_pricing")) {
            c.vintage_pricing_min = j.at("vintage_pricing").at(0).get<int>();
            c.vintage_pricing_max = j.at("vintage_pricing").at(1).get<int>();
        }
        c.penalty = j.value("penalty", c.penalty);
        const std::string policy = j.value("missing_origin_policy", std::string("drop_renormalize"));
        if (policy == "drop_renormalize")
            c.missing_origin_policy = MissingOriginPolicy::DropRenormalize;
        else if (policy == "mark_missing")
            c.missing_origin_policy = MissingOriginPolicy::MarkMissing;
        else
            throw ValidationError("unknown missing_origin_policy '" + policy + "'");
        if (j.contains("top_k"))
            for (const auto& v : j.at("top_k")) c.top_k.push_back(v.get<int>());
        if (j.contains("topk_models")) c.topk_models = pipeline_detail::string_list(j.at("topk_models"));
        c.permutations = j.value("permutations", 0);
        c.placebo_model = j.value("placebo_model", std::string());
        c.master_seed = j.value("master_seed", c.master_seed);
        c.e_bar = j.value("e_bar", c.e_bar);
        c.min_out_of_state = j.value("min_out_of_state", c.min_out_of_state);
        c.coverage_floor = j.value("coverage_floor", c.coverage_floor);
        if (j.contains("offset")) {
            c.offset_beta_model = j.at("offset").value("beta_model", std::string());
            c.offset_theta_model = j.at("offset").value("theta_model", std::string());
        }
        if (j.contains("estimators"))
            for (const auto& spec : j.at("estimators"))
                c.estimators.push_back(pipeline_detail::parse_spec_entry(spec));
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": bad config: " + e.what());
    }
}

struct IngestedTables {
    LoanTable loans;
    FlowTable flows;
    CentroidTable centroids;
    std::map<std::int64_t, std::vector<std::pair<std::int64_t, double>>> crosswalk;
    PanelDataset panel;
    std::optional<PanelDataset> soc_panel;
    std::optional<BartikPanel> bartik;
    std::string summary;
};

inline IngestedTables ingest(const RunConfig& config) {
    auto path_of = [&config](const std::string& key) {
        auto it = config.inputs.find(key);
        if (it == config.inputs.end())
            throw ValidationError("config: missing input path for '" + key + "'");
        if (!std::filesystem::exists(it->second))
            throw ValidationError(it->second + ": file does not exist");
        return it->second;
    };
    IngestedTables t;
    std::ostringstream s;
    t.loans = read_loans_csv(path_of("loans"));
    s << "loans: " << t.loans.loans.size() << " rows, "
      << 6 + t.loans.covariate_names.size() << " columns\n";
    t.flows = read_flows_csv(path_of("flows"));
    s << "flows: " << t.flows.rows.size() << " rows\n";
    t.centroids = read_centroids_csv(path_of("centroids"));
    s << "centroids: " << t.centroids.centroids.size() << " rows\n";
    t.crosswalk = read_crosswalk_csv(path_of("crosswalk"));
    s << "crosswalk: " << t.crosswalk.size() << " counties\n";
    t.panel = read_panel_csv(path_of("panel"));
    s << "panel: " << t.panel.n_rows << " rows, " << t.panel.values.size()
      << " numeric columns\n";
    if (config.inputs.count("soc_panel")) {
        t.soc_panel = read_panel_csv(path_of("soc_panel"));
        s << "soc_panel: " << t.soc_panel->n_rows << " rows\n";
    }
    if (config.inputs.count("bartik")) {
        t.bartik = read_bartik_csv(path_of("bartik"));
        s << "bartik: " << t.bartik->cells.size() << " cells\n";
    }
    t.summary = s.str();
    return t;
}

// Event-study expansion: exposure x year indicators for every sample year
// except the reference.
struct EventStudyColumns {
    ModelSpec spec;                                // expanded regressors
    PanelDataset data;                             // with interaction columns
    std::vector<std::pair<int, std::string>> year_terms;  // (year, column name)
};

inline EventStudyColumns build_event_study(const SpecEntry& entry, const PanelDataset& data,
                                           int reference_year) {
    EventStudyColumns out;
    out.data = data;
    out.spec = entry.spec;
    out.spec.regressors.clear();
    std::set<std::int64_t> years(data.key("period").begin(), data.key("period").end());
    if (!years.count(reference_year))
        throw InvalidInputError("event study '" + entry.spec.name + "': reference year " +
                                std::to_string(reference_year) + " not in the sample");
    const auto& expo = data.value(entry.exposure);
    for (std::int64_t y : years) {
        if (y == reference_year) continue;
        std::vector<double> col(data.n_rows, 0.0);
        for (std::size_t i = 0; i < data.n_rows; ++i)
            if (data.key("period")[i] == y) col[i] = expo[i];
        const std::string name = entry.exposure + "@" + std::to_string(y);
        out.data.add_value(name, col);
        out.spec.regressors.push_back(name);
        out.year_terms.push_back({static_cast<int>(y), name});
    }
    for (const auto& c : entry.controls) out.spec.regressors.push_back(c);
    return out;
}

// eventstudy.csv: year, coef, se, ci_lo, ci_hi, reference.
inline void emit_event_study_points(const std::string& path, const EstimateReport& report,
                                    const std::vector<std::pair<int, std::string>>& year_terms,
                                    int reference_year) {
    std::vector<std::tuple<int, double, double, int>> rows;  // year, coef, se, reference
    rows.push_back({reference_year, 0.0, 0.0, 1});
    for (const auto& [year, name] : year_terms)
        rows.push_back({year, report.coef_of(name), report.se_of(name), 0});
    std::sort(rows.begin(), rows.end());
    CsvWriter w(path, {"year", "coef", "se", "ci_lo", "ci_hi", "reference"});
    for (const auto& [year, coef, se, ref] : rows) {
        w.field(year);
        w.field(coef);
        w.field(se);
        w.field(coef - 1.96 * se);
        w.field(coef + 1.96 * se);
        w.field(ref);
        w.end_row();
    }
}

// Exposure columns merged into the outcome panel by unit; rows whose unit
// lacks a wedge are dropped (missing instrument becomes NaN, filtered only
// where a spec needs it).
struct MergedPanel {
    PanelDataset data;
    std::size_t dropped_no_exposure = 0;
};

inline MergedPanel merge_exposure_into_panel(const PanelDataset& panel,
                                             const ExposureTable& exposures, int post_start) {
    const auto& unit = panel.key("unit");
    const auto& period = panel.key("period");
    std::vector<bool> keep(panel.n_rows);
    MergedPanel out;
    for (std::size_t i = 0; i < panel.n_rows; ++i) {
        auto it = exposures.rows.find(unit[i]);
        keep[i] = it != exposures.rows.end() && it->second.mpw.has_value();
        if (!keep[i]) ++out.dropped_no_exposure;
    }
    out.data = panel.filter(keep);
    const auto& u2 = out.data.key("unit");
    const auto& p2 = out.data.key("period");
    std::vector<double> mpw(out.data.n_rows), p_new(out.data.n_rows), wop(out.data.n_rows),
        pred(out.data.n_rows), post(out.data.n_rows);
    for (std::size_t i = 0; i < out.data.n_rows; ++i) {
        const auto& row = exposures.rows.at(u2[i]);
        mpw[i] = *row.mpw;
        p_new[i] = *row.p_new;
        wop[i] = *row.wop;
        pred[i] = row.predicted_wop ? *row.predicted_wop
                                    : std::numeric_limits<double>::quiet_NaN();
        post[i] = p2[i] >= post_start ? 1.0 : 0.0;
    }
    out.data.add_value("mpw", mpw);
    out.data.add_value("p_new", p_new);
    out.data.add_value("wop", wop);
    out.data.add_value("predicted_wop", pred);
    out.data.add_value("post", post);
    return out;
}

// Drop rows with NaN in any column a spec touches (the instrument column is
// NaN where the leave-out construction failed coverage).
inline PanelDataset drop_missing_for(const PanelDataset& data,
                                     const std::vector<std::string>& tokens,
                                     std::size_t* dropped = nullptr) {
    std::set<std::string> cols;
    for (const auto& tok : tokens) {
        std::size_t start = 0;
        while (start <= tok.size()) {
            std::size_t end = tok.find('*', start);
            if (end == std::string::npos) end = tok.size();
            if (end > start) cols.insert(tok.substr(start, end - start));
            if (end == tok.size()) break;
            start = end + 1;
        }
    }
    std::vector<bool> keep(data.n_rows, true);
    std::size_t n_drop = 0;
    for (const auto& c : cols) {
        if (!data.has_value(c)) continue;
        const auto& col = data.value(c);
        for (std::size_t i = 0; i < data.n_rows; ++i)
            if (std::isnan(col[i]) && keep[i]) {
                keep[i] = false;
                ++n_drop;
            }
    }
    if (dropped) *dropped = n_drop;
    if (n_drop == 0) return data;
    return data.filter(keep);
}

// Network-permutation placebo via Frisch-Waugh: the outcome and controls are
// demeaned and residualized once; each permutation only rebuilds, demeans,
// and residualizes the treatment column. Coefficients equal full re-fits.
struct PlaceboRun {
    std::vector<double> coefs;  // one per permutation, in replication order
    double actual = 0.0;
    double p_value = 1.0;
};

inline PlaceboRun run_placebo(const PanelDataset& merged, const ExposureTable& exposures,
                              const ModelSpec& spec, int permutations,
                              std::uint64_t master_seed) {
    if (spec.regressors.empty() || spec.regressors[0] != "mpw*post")
        throw InvalidInputError("placebo model '" + spec.name +
                                "' must have mpw*post as its first regressor");
    const long n = static_cast<long>(merged.n_rows);
    std::vector<std::string> controls(spec.regressors.begin() + 1, spec.regressors.end());

    Eigen::VectorXd w = merged.weights();
    FeStructure fe = build_fe_structure(merged, spec.fe);
    const int kc = static_cast<int>(controls.size());
    Eigen::MatrixXd cols(n, kc + 1);
    {
        const auto& yraw = merged.value(spec.outcome);
        for (long i = 0; i < n; ++i) cols(i, 0) = transform_outcome(yraw[i], spec.transform);
    }
    for (int j = 0; j < kc; ++j) cols.col(j + 1) = resolve_column(merged, controls[j]);
    auto dm = demean_columns(std::move(cols), fe, w);
    Eigen::VectorXd y = dm.cols.col(0);
    Eigen::MatrixXd C = dm.cols.rightCols(kc);

    // Residualize y on the demeaned controls (weighted).
    Eigen::MatrixXd ctc;
    Eigen::LDLT<Eigen::MatrixXd> ctc_ldlt;
    if (kc > 0) {
        ctc = C.transpose() * w.asDiagonal() * C;
        ctc_ldlt.compute(ctc);
        y -= C * ctc_ldlt.solve(C.transpose() * (w.asDiagonal() * y));
    }

    const auto& unit = merged.key("unit");
    const auto& post = merged.value("post");
    auto beta_for = [&](const ExposureTable& exp_table) {
        Eigen::MatrixXd tcol(n, 1);
        for (long i = 0; i < n; ++i)
            tcol(i, 0) = *exp_table.rows.at(unit[i]).mpw * post[i];
        auto tdm = demean_columns(std::move(tcol), fe, w);
        Eigen::VectorXd tv = tdm.cols.col(0);
        if (kc > 0) tv -= C * ctc_ldlt.solve(C.transpose() * (w.asDiagonal() * tv));
        const double denom = tv.dot(w.asDiagonal() * tv);
        return tv.dot(w.asDiagonal() * y) / denom;
    };

    PlaceboRun out;
    out.actual = beta_for(exposures);
    out.coefs.reserve(permutations);
    for (int r = 0; r < permutations; ++r) {
        auto permuted = permute_wop(exposures, derive_seed(master_seed, "placebo", r));
        out.coefs.push_back(beta_for(permuted));
    }
    out.p_value = centered_p_value(out.actual, out.coefs);
    return out;
}

// Full pipeline. Stages run in order; any failure removes the partial
// outputs and rethrows with the stage name attached.
struct PipelineResult {
    std::vector<EstimateReport> reports;
    ExposureTable exposures;
    VarianceDecomposition decomposition;
    std::map<std::string, PlaceboRun> placebos;
    std::string summary;
    std::vector<std::string> written_files;
};

namespace pipeline_detail {

class OutputTracker {
public:
    explicit OutputTracker(const std::string& dir) : dir_(dir) {
        std::filesystem::create_directories(dir_);
    }
    std::string path(const std::string& name) {
        std::string p = (std::filesystem::path(dir_) / name).string();
        written_.push_back(p);
        return p;
    }
    void remove_all() {
        for (const auto& p : written_) {
            std::error_code ec;
            std::filesystem::remove(p, ec);
        }
    }
    const std::vector<std::string>& written() const { return written_; }

private:
    std::string dir_;
    std::vector<std::string> written_;
};

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) {
    try {
        return fn();
    } catch (const ValidationError& e) {
        throw ValidationError("stage " + name + ": " + e.what());
    } catch (const InvalidInputError& e) {
        throw InvalidInputError("stage " + name + ": " + e.what());
    } catch (const RankError& e) {
        throw RankError("stage " + name + ": " + e.what());
    } catch (const InsufficientDataError& e) {
        throw InsufficientDataError("stage " + name + ": " + e.what());
    } catch (const ConvergenceError& e) {
        throw ConvergenceError("stage " + name + ": " + e.what());
    } catch (const Error& e) {
        throw Error("stage " + name + ": " + e.what());
    }
}

inline LoanTable slice_vintages(const LoanTable& all, int lo, int hi) {
    LoanTable out;
    out.covariate_names = all.covariate_names;
    for (const auto& l : all.loans)
        if (l.vintage_year >= lo && l.vintage_year <= hi) out.loans.push_back(l);
    return out;
}

}  // namespace pipeline_detail

inline PipelineResult run_pipeline(const RunConfig& config) {
    using pipeline_detail::stage;
    pipeline_detail::OutputTracker tracker(config.output_dir);
    PipelineResult result;
    std::ostringstream summary;
    try {
        IngestedTables tables = stage("ingest", [&] { return ingest(config); });
        summary << "== ingest ==\n" << tables.summary;

        // Payments.
        auto loans_pre = pipeline_detail::slice_vintages(tables.loans, config.vintage_pre_min,
                                                         config.vintage_pre_max);
        auto loans_shock = pipeline_detail::slice_vintages(tables.loans, config.vintage_shock_min,
                                                           config.vintage_shock_max);
        auto loans_pricing = pipeline_detail::slice_vintages(
            tables.loans, config.vintage_pricing_min, config.vintage_pricing_max);
        std::map<std::int64_t, std::int64_t> county_cz;
        for (const auto& [county, parts] : tables.crosswalk) {
            // Majority CZ for payment aggregation.
            double best = -1.0;
            for (const auto& [cz, wgt] : parts)
                if (wgt > best) {
                    best = wgt;
                    county_cz[county] = cz;
                }
        }
        std::map<std::int64_t, double> p_new, p_old;
        stage("payments", [&] {
            auto model = fit_pricing_model(loans_pricing, config.penalty);
            auto [pn, dn] = compute_p_new(model, loans_shock, county_cz);
            auto [po, dold] = compute_p_old(loans_shock, county_cz);
            for (const auto& [cz, a] : pn) p_new[cz] = *a.p_new;
            for (const auto& [cz, a] : po) p_old[cz] = *a.p_old;
            summary << "== payments ==\n"
                    << "pricing loans: " << loans_pricing.loans.size()
                    << ", shock loans: " << loans_shock.loans.size()
                    << ", skipped (no county effect): " << dn.skipped_no_county_effect
                    << ", skipped (no cz): " << dn.skipped_no_cz << "\n";
            return 0;
        });

        // Weights.
        FlowTable cz_flows;
        WeightMatrix weights;
        stage("weights", [&] {
            auto [flows, diag] = apply_crosswalk(tables.flows, tables.crosswalk);
            cz_flows = std::move(flows);
            weights = normalize_in_shares(cz_flows);
            summary << "== weights ==\n"
                    << "cz flow pairs: " << cz_flows.rows.size()
                    << ", destinations with shares: " << weights.by_destination.size()
                    << ", counties missing from crosswalk: " << diag.missing_counties.size()
                    << "\n";
            return 0;
        });

        // Wedge.
        stage("wedge", [&] {
            auto [wop, wdiag] = build_wop(weights, p_old, config.missing_origin_policy);
            result.exposures = build_mpw(p_new, wop);
            summary << "== wedge ==\n"
                    << "destinations built: " << wdiag.destinations_built
                    << ", missing: " << wdiag.destinations_missing
                    << ", origins dropped: " << wdiag.origins_dropped << " (policy "
                    << (config.missing_origin_policy == MissingOriginPolicy::DropRenormalize
                            ? "drop_renormalize"
                            : "mark_missing")
                    << ")\n";
            return 0;
        });

        // Decomposition.
        stage("decomposition", [&] {
            result.decomposition = variance_decomposition(result.exposures);
            const auto& d = result.decomposition;
            summary << "== decomposition ==\n"
                    << "var_mpw=" << format_number(d.var_mpw)
                    << " var_pnew=" << format_number(d.var_pnew)
                    << " var_wop=" << format_number(d.var_wop)
                    << " cov_term=" << format_number(d.cov_term)
                    << " corr=" << format_number(d.corr) << " n=" << d.n << "\n";
            return 0;
        });

        // Instrument.
        stage("instrument", [&] {
            auto gravity = fit_gravity(cz_flows, tables.centroids.populations,
                                       tables.centroids.centroids);
            auto shares_hat = predict_gravity_shares(gravity.model,
                                                     tables.centroids.populations,
                                                     tables.centroids.centroids);
            std::map<std::int64_t, std::int64_t> county_state;
            for (const auto& [county, cz] : county_cz) county_state[county] = county / 1000;
            LeaveOutParams params;
            params.min_out_of_state = config.min_out_of_state;
            params.coverage_floor = config.coverage_floor;
            auto leaveout = lender_leaveout_payments(loans_pre, loans_shock, county_state, params);
            auto pred_p_old =
                aggregate_predictions_to_cz(leaveout.county_prediction, loans_pre, county_cz);
            auto [pred_wop, pdiag] =
                build_predicted_wop(shares_hat, pred_p_old, config.missing_origin_policy);
            for (const auto& [cz, v] : pred_wop)
                if (result.exposures.rows.count(cz))
                    result.exposures.rows.at(cz).predicted_wop = v;
            summary << "== instrument ==\n"
                    << "gravity: b0=" << format_number(gravity.model.intercept)
                    << " b1=" << format_number(gravity.model.pop_origin_elasticity)
                    << " b2=" << format_number(gravity.model.pop_dest_elasticity)
                    << " b3=" << format_number(gravity.model.distance_elasticity)
                    << " pairs=" << gravity.n_pairs_used << "\n"
                    << "leave-out counties predicted: " << leaveout.county_prediction.size()
                    << ", omitted: " << leaveout.omitted_counties.size() << "\n";
            return 0;
        });
        write_exposure_csv(tracker.path("exposure.csv"), result.exposures);

        // Estimates.
        MergedPanel merged = stage("estimates", [&] {
            return merge_exposure_into_panel(tables.panel, result.exposures, config.post_start);
        });
        std::optional<MergedPanel> merged_soc;
        if (tables.soc_panel) {
            PanelDataset soc = *tables.soc_panel;
            if (tables.bartik) {
                std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>, double> b_of;
                for (const auto& c : tables.bartik->cells)
                    b_of[{c.cz, c.soc, c.year}] = c.b;
                std::vector<double> col(soc.n_rows);
                for (std::size_t i = 0; i < soc.n_rows; ++i) {
                    auto it = b_of.find({soc.key("unit")[i], soc.key("group")[i],
                                         soc.key("period")[i]});
                    col[i] = it != b_of.end() ? it->second
                                              : std::numeric_limits<double>::quiet_NaN();
                }
                soc.add_value("bartik", col);
            }
            merged_soc = merge_exposure_into_panel(soc, result.exposures, config.post_start);
        }
        summary << "== estimates ==\n"
                << "panel rows used: " << merged.data.n_rows
                << ", dropped (no wedge): " << merged.dropped_no_exposure << "\n";

        std::map<std::string, double> named_treatment_coef;
        for (const auto& entry : config.estimators) {
            stage("estimates:" + entry.spec.name, [&] {
                const PanelDataset* base = &merged.data;
                if (entry.data == "soc_panel") {
                    if (!merged_soc)
                        throw InvalidInputError("spec '" + entry.spec.name +
                                                "' needs soc_panel input");
                    base = &merged_soc->data;
                }
                EstimateReport rep;
                if (entry.event_study) {
                    auto ev = build_event_study(entry, *base, config.reference_year);
                    std::size_t dropped = 0;
                    auto data = drop_missing_for(ev.data, ev.spec.regressors, &dropped);
                    rep = fit_fe_ols(ev.spec, data);
                    rep.name = entry.spec.name;
                    emit_event_study_points(tracker.path(entry.spec.name + "_eventstudy.csv"),
                                            rep, ev.year_terms, config.reference_year);
                } else if (entry.spec.estimator == EstimatorKind::FeOls) {
                    std::size_t dropped = 0;
                    auto data = drop_missing_for(*base, entry.spec.regressors, &dropped);
                    rep = fit_fe_ols(entry.spec, data);
                    rep.n_dropped_rows = dropped;
                } else if (entry.spec.estimator == EstimatorKind::Tsls) {
                    std::vector<std::string> used = entry.spec.regressors;
                    used.push_back(entry.spec.endogenous);
                    used.push_back(entry.spec.instrument);
                    std::size_t dropped = 0;
                    auto data = drop_missing_for(*base, used, &dropped);
                    rep = fit_tsls(entry.spec, data);
                    rep.n_dropped_rows = dropped;
                } else if (entry.spec.estimator == EstimatorKind::NegBin) {
                    std::vector<std::string> used = entry.spec.regressors;
                    used.push_back(entry.spec.offset);
                    std::size_t dropped = 0;
                    auto data = drop_missing_for(*base, used, &dropped);
                    NegBinOptions opts;
                    rep = fit_negbin(data, entry.spec.outcome, entry.spec.regressors,
                                     entry.spec.offset, "unit", "period", opts);
                    rep.name = entry.spec.name;
                } else {
                    std::size_t dropped = 0;
                    auto data = drop_missing_for(*base, entry.spec.regressors, &dropped);
                    rep = fit_long_difference(data, entry.spec.outcome, entry.spec.regressors,
                                              "unit", "period", entry.spec.year0,
                                              entry.spec.year1, entry.spec.transform);
                    rep.name = entry.spec.name;
                }
                if (!entry.spec.regressors.empty() && rep.find(entry.spec.regressors[0]) >= 0)
                    named_treatment_coef[entry.spec.name] = rep.coef_of(entry.spec.regressors[0]);
                else if (!entry.spec.endogenous.empty() && rep.find(entry.spec.endogenous) >= 0)
                    named_treatment_coef[entry.spec.name] = rep.coef_of(entry.spec.endogenous);
                summary << entry.spec.name << ": N=" << rep.n_obs << " G=" << rep.n_clusters
                        << " rank=" << rep.rank
                        << " singletons=" << rep.dropped_singletons
                        << " dropped=" << rep.n_dropped_rows;
                if (rep.first_stage_f)
                    summary << " first_stage_coef=" << format_number(*rep.first_stage_coef)
                            << " first_stage_F=" << format_number(*rep.first_stage_f);
                if (rep.convergence)
                    summary << " converged=" << (rep.convergence->converged ? 1 : 0)
                            << " iterations=" << rep.convergence->iterations;
                if (rep.dispersion) summary << " dispersion=" << format_number(*rep.dispersion);
                summary << "\n";
                result.reports.push_back(std::move(rep));
                return 0;
            });
        }
        write_estimates_csv(tracker.path("estimates.csv"), result.reports);

        // Top-K truncation path.
        if (!config.top_k.empty() && !config.topk_models.empty()) {
            stage("topk", [&] {
                CsvWriter w(tracker.path("topk.csv"), {"k", "model", "coef", "se"});
                for (int k : config.top_k) {
                    auto weights_k = truncate_top_k(weights, k);
                    auto [wop_k, diag_k] =
                        build_wop(weights_k, p_old, config.missing_origin_policy);
                    ExposureTable exp_k = build_mpw(p_new, wop_k);
                    auto merged_k =
                        merge_exposure_into_panel(tables.panel, exp_k, config.post_start);
                    for (const auto& name : config.topk_models) {
                        for (const auto& entry : config.estimators) {
                            if (entry.spec.name != name ||
                                entry.spec.estimator != EstimatorKind::FeOls || entry.event_study)
                                continue;
                            auto rep = fit_fe_ols(entry.spec, merged_k.data);
                            w.field(k);
                            w.field(name);
                            w.field(rep.coef_of(entry.spec.regressors[0]));
                            w.field(rep.se_of(entry.spec.regressors[0]));
                            w.end_row();
                        }
                    }
                }
                return 0;
            });
        }

        // Permutation placebo.
        if (config.permutations > 0 && !config.placebo_model.empty()) {
            stage("placebo", [&] {
                const SpecEntry* entry = nullptr;
                for (const auto& e : config.estimators)
                    if (e.spec.name == config.placebo_model) entry = &e;
                if (!entry)
                    throw InvalidInputError("placebo model '" + config.placebo_model +
                                            "' is not a configured estimator");
                auto run = run_placebo(merged.data, result.exposures, entry->spec,
                                       config.permutations, config.master_seed);
                CsvWriter w(tracker.path("placebo.csv"), {"model", "rep", "coef"});
                for (std::size_t r = 0; r < run.coefs.size(); ++r) {
                    w.field(entry->spec.name);
                    w.field(static_cast<std::int64_t>(r));
                    w.field(run.coefs[r]);
                    w.end_row();
                }
                summary << "== placebo ==\n"
                        << entry->spec.name << ": actual=" << format_number(run.actual)
                        << " permutations=" << run.coefs.size()
                        << " centered_p=" << format_number(run.p_value) << "\n";
                result.placebos[entry->spec.name] = std::move(run);
                return 0;
            });
        }

        // Offset ratios from this run's own estimates.
        if (!config.offset_beta_model.empty() && !config.offset_theta_model.empty()) {
            stage("offset", [&] {
                if (!named_treatment_coef.count(config.offset_beta_model) ||
                    !named_treatment_coef.count(config.offset_theta_model))
                    throw InvalidInputError("offset models must name configured estimators");
                const double beta = named_treatment_coef.at(config.offset_beta_model);
                const double theta = named_treatment_coef.at(config.offset_theta_model);
                const double ratio = offset_ratio(beta, theta, config.e_bar);
                summary << "== offset ==\n"
                        << "beta(" << config.offset_beta_model << ")=" << format_number(beta)
                        << " theta(" << config.offset_theta_model << ")=" << format_number(theta)
                        << " e_bar=" << format_number(config.e_bar)
                        << " offset_ratio=" << format_number(ratio) << "\n";
                return 0;
            });
        }

        result.summary = summary.str();
        std::ofstream out(tracker.path("summary.txt"));
        out << result.summary;
        out.close();
        result.written_files = tracker.written();
        return result;
    } catch (...) {
        tracker.remove_all();
        throw;
    }
}

// The dgp generate command: write the synthetic world's CSV family plus the
// true-parameter record and a ready-to-run pipeline config.
inline void write_world(const SyntheticWorld& w, const std::string& dir) {
    std::filesystem::create_directories(dir);
    auto p = [&dir](const std::string& name) {
        return (std::filesystem::path(dir) / name).string();
    };
    LoanTable all;
    all.covariate_names = w.loans_pre.covariate_names;
    for (const auto* t : {&w.loans_pre, &w.loans_shock, &w.loans_pricing})
        for (const auto& l : t->loans) all.loans.push_back(l);
    std::sort(all.loans.begin(), all.loans.end(),
              [](const LoanRecord& a, const LoanRecord& b) { return a.loan_id < b.loan_id; });
    write_loans_csv(p("loans.csv"), all);
    write_flows_csv(p("flows.csv"), w.county_flows);
    write_centroids_csv(p("centroids.csv"), w.cz_centroids, w.cz_pops);
    write_crosswalk_csv(p("crosswalk.csv"), w.crosswalk);

    PanelDataset panel_out = w.panel;
    for (const auto& col : {"mpw", "p_new", "wop", "predicted_wop", "post"})
        panel_out.values.erase(col);
    write_panel_csv(p("panel.csv"), panel_out);
    PanelDataset soc_out = w.soc_panel;
    for (const auto& col : {"mpw", "post", "bartik"}) soc_out.values.erase(col);
    write_panel_csv(p("panel_soc.csv"), soc_out);
    write_bartik_csv(p("bartik.csv"), w.bartik);

    std::vector<std::pair<std::string, double>> truth = {
        {"true_beta_migration", w.config.true_beta_migration},
        {"true_theta_h1b", w.config.true_theta_h1b},
        {"true_triple", w.config.true_triple},
        {"gravity_intercept", w.config.gravity_intercept},
        {"gravity_pop_origin", w.config.gravity_pop_origin},
        {"gravity_pop_dest", w.config.gravity_pop_dest},
        {"gravity_distance", w.config.gravity_distance},
        {"lender_scale", w.config.lender_scale},
        {"ridge_penalty", w.config.ridge_penalty},
        {"endogeneity", w.config.endogeneity},
        {"e_bar", w.config.e_bar},
        {"master_seed", static_cast<double>(w.config.master_seed)},
        {"mean_mpw", w.mean_mpw},
        {"sd_mpw", w.sd_mpw},
    };
    write_truth_csv(p("truth.csv"), truth);

    nlohmann::json cfg;
    cfg["inputs"] = {{"loans", p("loans.csv")},     {"flows", p("flows.csv")},
                     {"centroids", p("centroids.csv")}, {"crosswalk", p("crosswalk.csv")},
                     {"panel", p("panel.csv")},     {"soc_panel", p("panel_soc.csv")},
                     {"bartik", p("bartik.csv")}};
    cfg["output_dir"] = (std::filesystem::path(dir) / "out").string();
    cfg["post_start"] = w.config.post_start;
    cfg["reference_year"] = 2019;
    cfg["penalty"] = w.config.ridge_penalty;
    cfg["missing_origin_policy"] = "drop_renormalize";
    cfg["top_k"] = {1, 3, 5, 10, 20};
    cfg["topk_models"] = {"did_college"};
    cfg["permutations"] = 1000;
    cfg["placebo_model"] = "did_college";
    cfg["master_seed"] = w.config.master_seed;
    cfg["e_bar"] = w.config.e_bar;
    cfg["offset"] = {{"beta_model", "did_college"}, {"theta_model", "did_h1b"}};
    cfg["estimators"] = nlohmann::json::array();
    auto fe2 = nlohmann::json::array({nlohmann::json::array({"unit"}),
                                      nlohmann::json::array({"period"})});
    cfg["estimators"].push_back({{"name", "did_college"},
                                 {"estimator", "fe_ols"},
                                 {"outcome", "mig_rate"},
                                 {"regressors", {"mpw*post", "ctrl1", "ctrl2"}},
                                 {"fe", fe2},
                                 {"cluster", "cluster"}});
    cfg["estimators"].push_back({{"name", "did_h1b"},
                                 {"estimator", "fe_ols"},
                                 {"outcome", "h1b_rate"},
                                 {"regressors", {"mpw*post", "ctrl1", "ctrl2"}},
                                 {"fe", fe2},
                                 {"cluster", "cluster"}});
    cfg["estimators"].push_back({{"name", "components_college"},
                                 {"estimator", "fe_ols"},
                                 {"outcome", "mig_rate"},
                                 {"regressors", {"p_new*post", "wop*post", "ctrl1", "ctrl2"}},
                                 {"fe", fe2},
                                 {"cluster", "cluster"}});
    cfg["estimators"].push_back(
        {{"name", "event_college"},
         {"estimator", "fe_ols"},
         {"outcome", "mig_rate"},
         {"fe", fe2},
         {"cluster", "cluster"},
         {"event_study", {{"exposure", "mpw"}, {"controls", {"ctrl1", "ctrl2"}}}}});
    cfg["estimators"].push_back({{"name", "iv_wop"},
                                 {"estimator", "tsls"},
                                 {"outcome", "mig_rate"},
                                 {"endogenous", "wop*post"},
                                 {"instrument", "predicted_wop*post"},
                                 {"regressors", {"p_new*post", "ctrl1", "ctrl2"}},
                                 {"fe", fe2},
                                 {"cluster", "cluster"}});
    auto fe3 = nlohmann::json::array({nlohmann::json::array({"unit", "period"}),
                                      nlohmann::json::array({"unit", "group"}),
                                      nlohmann::json::array({"group", "period"})});
    cfg["estimators"].push_back(
        {{"name", "triple_bartik"},
         {"data", "soc_panel"},
         {"estimator", "fe_ols"},
         {"outcome", "h1b_soc"},
         {"regressors", {"mpw*post*bartik", "bartik", "post*bartik", "mpw*bartik"}},
         {"fe", fe3},
         {"cluster", "cluster"}});
    cfg["estimators"].push_back({{"name", "h1b_log01"},
                                 {"estimator", "fe_ols"},
                                 {"outcome", "h1b_rate"},
                                 {"transform", "log0.1"},
                                 {"regressors", {"mpw*post", "ctrl1", "ctrl2"}},
                                 {"fe", fe2},
                                 {"cluster", "cluster"}});
    cfg["estimators"].push_back({{"name", "h1b_negbin"},
                                 {"estimator", "negbin"},
                                 {"outcome", "h1b_new"},
                                 {"offset", "log_emp"},
                                 {"regressors", {"mpw*post"}},
                                 {"cluster", "cluster"}});
    cfg["estimators"].push_back({{"name", "h1b_longdiff"},
                                 {"estimator", "long_diff"},
                                 {"outcome", "h1b_rate"},
                                 {"regressors", {"mpw", "ctrl1", "ctrl2"}},
                                 {"year0", 2019},
                                 {"year1", 2024}});
    std::ofstream out((std::filesystem::path(dir) / "run_config.json").string());
    out << cfg.dump(2) << "\n";
}

}  // namespace mpw
