#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <random>

#include "mpw/estimators.hpp"

using namespace mpw;

namespace {

// A small two-way panel with exposure treatment: y = a_u + d_t +
// beta * exposure * post + gamma * x + noise.
struct SmallPanel {
    PanelDataset data;
    double beta;
};

SmallPanel did_panel(int n_units, int n_periods, double beta, double noise_sd,
                     std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> ue(200.0, 230.0);
    SmallPanel out;
    out.beta = beta;
    std::vector<std::int64_t> unit, period, cluster;
    std::vector<double> y, treat, x, expo_col, post_col;
    std::vector<double> alpha(n_units), exposure(n_units);
    for (int u = 0; u < n_units; ++u) {
        alpha[u] = z(rng);
        exposure[u] = ue(rng);
    }
    std::vector<double> delta(n_periods);
    for (int t = 0; t < n_periods; ++t) delta[t] = z(rng);
    const int post_start = n_periods / 2;
    for (int u = 0; u < n_units; ++u)
        for (int t = 0; t < n_periods; ++t) {
            const double post = t >= post_start ? 1.0 : 0.0;
            const double xv = z(rng);
            const double yv = alpha[u] + delta[t] + beta * exposure[u] * post + 0.5 * xv +
                              noise_sd * z(rng);
            unit.push_back(u);
            period.push_back(2017 + t);
            cluster.push_back(u);
            y.push_back(yv);
            treat.push_back(exposure[u] * post);
            x.push_back(xv);
            expo_col.push_back(exposure[u]);
            post_col.push_back(post);
        }
    out.data.add_key("unit", unit);
    out.data.add_key("period", period);
    out.data.add_key("cluster", cluster);
    out.data.add_value("y", y);
    out.data.add_value("treat", treat);
    out.data.add_value("x", x);
    out.data.add_value("exposure", expo_col);
    out.data.add_value("post", post_col);
    return out;
}

ModelSpec did_spec() {
    ModelSpec spec;
    spec.name = "did";
    spec.outcome = "y";
    spec.regressors = {"treat", "x"};
    spec.fe = {{"unit"}, {"period"}};
    spec.cluster = "cluster";
    return spec;
}

// Dummy-variable OLS benchmark including all FE indicators, returning the
// slope coefficients on the named regressors.
Eigen::VectorXd dummy_ols(const PanelDataset& d, const std::string& outcome,
                          const std::vector<std::string>& regs,
                          const std::vector<std::vector<std::string>>& fe_sets) {
    const long n = static_cast<long>(d.n_rows);
    const int k = static_cast<int>(regs.size());
    auto fs = build_fe_structure(d, fe_sets);
    int total = 0;
    for (int g : fs.n_groups) total += g;
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, k + total);
    for (int j = 0; j < k; ++j) X.col(j) = resolve_column(d, regs[j]);
    int offset = k;
    for (std::size_t s = 0; s < fs.group_of_row.size(); ++s) {
        for (long i = 0; i < n; ++i) X(i, offset + fs.group_of_row[s][i]) = 1.0;
        offset += fs.n_groups[s];
    }
    Eigen::VectorXd y(n);
    for (long i = 0; i < n; ++i) y[i] = d.value(outcome)[i];
    // Rank-deficient (dummies of each FE set span the constant): use a
    // minimum-norm solve; the slope block is still unique.
    Eigen::VectorXd beta = X.completeOrthogonalDecomposition().solve(y);
    return beta.head(k);
}

}  // namespace

TEST_CASE("fe-ols equals dummy-variable OLS on a small instance") {
    auto p = did_panel(20, 6, -0.06, 0.8, 601);
    auto rep = fit_fe_ols(did_spec(), p.data);
    auto oracle = dummy_ols(p.data, "y", {"treat", "x"}, {{"unit"}, {"period"}});
    REQUIRE(std::abs(rep.coef[0] - oracle[0]) < 1e-8);
    REQUIRE(std::abs(rep.coef[1] - oracle[1]) < 1e-8);
    REQUIRE(rep.n_obs == p.data.n_rows);
    REQUIRE(rep.n_clusters == 20);
}

TEST_CASE("constant outcome gives zero slopes") {
    auto p = did_panel(10, 4, -0.06, 0.5, 602);
    std::vector<double> flat(p.data.n_rows, 3.0);
    p.data.values["y"] = flat;
    auto rep = fit_fe_ols(did_spec(), p.data);
    REQUIRE(std::abs(rep.coef[0]) < 1e-12);
    REQUIRE(std::abs(rep.coef[1]) < 1e-12);
}

TEST_CASE("coefficients invariant to shifting a column absorbed by FE") {
    auto p = did_panel(12, 6, -0.06, 0.7, 603);
    auto rep1 = fit_fe_ols(did_spec(), p.data);
    // Shift the outcome by a unit-level constant; unit FE absorbs it.
    auto shifted = p.data;
    for (std::size_t i = 0; i < shifted.n_rows; ++i)
        shifted.values["y"][i] += 7.5 + 2.0 * static_cast<double>(shifted.keys["unit"][i]);
    auto rep2 = fit_fe_ols(did_spec(), shifted);
    REQUIRE(std::abs(rep1.coef[0] - rep2.coef[0]) < 1e-8);
    REQUIRE(std::abs(rep1.coef[1] - rep2.coef[1]) < 1e-8);
}

TEST_CASE("collinear regressors raise a rank error naming the column") {
    auto p = did_panel(10, 4, -0.06, 0.5, 604);
    p.data.add_value("treat_copy", p.data.value("treat"));
    auto spec = did_spec();
    spec.regressors = {"treat", "treat_copy", "x"};
    try {
        fit_fe_ols(spec, p.data);
        FAIL("expected RankError");
    } catch (const RankError& e) {
        REQUIRE(std::string(e.what()).find("treat") != std::string::npos);
    }
}

TEST_CASE("degenerate regressor after demeaning raises a rank error") {
    auto p = did_panel(10, 4, 0.0, 0.5, 605);
    // A column constant within units is absorbed entirely by unit FE.
    p.data.add_value("absorbed", p.data.value("exposure"));
    auto spec = did_spec();
    spec.regressors = {"treat", "absorbed"};
    REQUIRE_THROWS_AS(fit_fe_ols(spec, p.data), RankError);
}

TEST_CASE("singleton rows are retained and counted") {
    auto p = did_panel(8, 4, -0.06, 0.5, 606);
    // Add one extra unit observed a single time.
    p.data.keys["unit"].push_back(99);
    p.data.keys["period"].push_back(2017);
    p.data.keys["cluster"].push_back(99);
    p.data.values["y"].push_back(1.0);
    p.data.values["treat"].push_back(0.0);
    p.data.values["x"].push_back(0.3);
    p.data.values["exposure"].push_back(210.0);
    p.data.values["post"].push_back(0.0);
    p.data.n_rows += 1;
    auto rep = fit_fe_ols(did_spec(), p.data);
    REQUIRE(rep.dropped_singletons == 1);
    REQUIRE(rep.n_obs == p.data.n_rows);
}

TEST_CASE("did recovery within three standard errors") {
    int hits = 0;
    const int reps = 25;
    for (int r = 0; r < reps; ++r) {
        auto p = did_panel(60, 8, -0.059, 0.6, 700 + r);
        auto rep = fit_fe_ols(did_spec(), p.data);
        if (std::abs(rep.coef[0] + 0.059) <= 3.0 * rep.se[0]) ++hits;
    }
    REQUIRE(hits >= 23);
}

TEST_CASE("sample filters reproduce estimation on the subset") {
    auto p = did_panel(16, 8, -0.05, 0.6, 608);
    std::vector<bool> keep(p.data.n_rows, true);
    // Drop the four highest-exposure units, mimicking drop-sample reruns.
    for (std::size_t i = 0; i < p.data.n_rows; ++i)
        if (p.data.value("exposure")[i] > 225.0) keep[i] = false;
    auto sub = p.data.filter(keep);
    REQUIRE(sub.n_rows < p.data.n_rows);
    auto rep = fit_fe_ols(did_spec(), sub);
    REQUIRE(rep.n_obs == sub.n_rows);

    std::vector<bool> none(p.data.n_rows, false);
    REQUIRE_THROWS_AS(fit_fe_ols(did_spec(), p.data.filter(none)), InsufficientDataError);
}

TEST_CASE("event study: fitted values invariant to the reference year") {
    auto p = did_panel(14, 6, -0.05, 0.6, 609);
    const std::vector<int> years = {2017, 2018, 2019, 2020, 2021, 2022};

    auto event_spec = [&](int ref) {
        PanelDataset d = p.data;
        ModelSpec spec;
        spec.name = "event";
        spec.outcome = "y";
        spec.fe = {{"unit"}, {"period"}};
        spec.cluster = "cluster";
        for (int yv : years) {
            if (yv == ref) continue;
            std::vector<double> col(d.n_rows, 0.0);
            for (std::size_t i = 0; i < d.n_rows; ++i)
                if (d.key("period")[i] == yv) col[i] = d.value("exposure")[i];
            const std::string name = "exposure_y" + std::to_string(yv);
            d.add_value(name, col);
            spec.regressors.push_back(name);
        }
        spec.regressors.push_back("x");
        return std::make_pair(spec, d);
    };

    auto [spec19, d19] = event_spec(2019);
    auto [spec17, d17] = event_spec(2017);
    auto rep19 = fit_fe_ols(spec19, d19);
    auto rep17 = fit_fe_ols(spec17, d17);

    // The reference coefficient is absent by construction.
    REQUIRE(rep19.find("exposure_y2019") == -1);
    REQUIRE(rep17.find("exposure_y2017") == -1);

    // Residuals (hence fitted values) agree across reference choices.
    auto resid = [&](const ModelSpec& spec, const PanelDataset& d) {
        auto dm = demean_design(d, spec.outcome, spec.regressors, spec.fe);
        Eigen::VectorXd sw = dm.w.array().sqrt();
        Eigen::VectorXd beta = (sw.asDiagonal() * dm.X)
                                   .colPivHouseholderQr()
                                   .solve(sw.asDiagonal() * dm.y);
        return (dm.y - dm.X * beta).eval();
    };
    Eigen::VectorXd r19 = resid(spec19, d19);
    Eigen::VectorXd r17 = resid(spec17, d17);
    REQUIRE((r19 - r17).cwiseAbs().maxCoeff() < 1e-9);
}
