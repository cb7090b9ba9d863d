#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <random>

#include "mpw/estimators.hpp"
#include "mpw/tsls.hpp"

using namespace mpw;

namespace {

// Panel with an endogenous treatment: the outcome noise loads on the part of
// the treatment the instrument does not predict.
struct IvPanel {
    PanelDataset data;
    double beta;
};

IvPanel iv_panel(int n_units, int n_periods, double beta, double endog, double instrument_str,
                 std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    IvPanel out;
    out.beta = beta;
    std::vector<std::int64_t> unit, period, cluster;
    std::vector<double> y, treat, instr, ctrl;
    for (int u = 0; u < n_units; ++u) {
        const double zi = z(rng);                      // instrument, unit level
        const double eta = z(rng);                     // endogenous component
        const double ti = instrument_str * zi + eta;   // treatment, unit level
        const double au = z(rng);
        for (int t = 0; t < n_periods; ++t) {
            const double post = t >= n_periods / 2 ? 1.0 : 0.0;
            const double c = z(rng);
            unit.push_back(u);
            period.push_back(t);
            cluster.push_back(u);
            treat.push_back(ti * post);
            instr.push_back(zi * post);
            ctrl.push_back(c);
            y.push_back(au + 0.3 * t + beta * ti * post + endog * eta * post + 0.4 * c +
                        0.5 * z(rng));
        }
    }
    out.data.add_key("unit", unit);
    out.data.add_key("period", period);
    out.data.add_key("cluster", cluster);
    out.data.add_value("y", y);
    out.data.add_value("treat", treat);
    out.data.add_value("instr", instr);
    out.data.add_value("ctrl", ctrl);
    return out;
}

ModelSpec iv_spec() {
    ModelSpec spec;
    spec.name = "iv";
    spec.outcome = "y";
    spec.estimator = EstimatorKind::Tsls;
    spec.endogenous = "treat";
    spec.instrument = "instr";
    spec.regressors = {"ctrl"};
    spec.fe = {{"unit"}, {"period"}};
    spec.cluster = "cluster";
    return spec;
}

}  // namespace

TEST_CASE("instrumenting a column with itself reproduces OLS") {
    auto p = iv_panel(30, 6, -0.06, 0.0, 1.0, 1001);
    auto spec = iv_spec();
    spec.instrument = "treat";

    auto iv = fit_tsls(spec, p.data);

    ModelSpec ols;
    ols.name = "ols";
    ols.outcome = "y";
    ols.regressors = {"treat", "ctrl"};
    ols.fe = {{"unit"}, {"period"}};
    ols.cluster = "cluster";
    auto ref = fit_fe_ols(ols, p.data);

    REQUIRE(std::abs(iv.coef_of("treat") - ref.coef_of("treat")) < 1e-10);
    REQUIRE(std::abs(iv.coef_of("ctrl") - ref.coef_of("ctrl")) < 1e-10);
}

TEST_CASE("tsls matches an explicit stage-by-stage oracle") {
    auto p = iv_panel(10, 5, -0.08, 0.6, 1.2, 1002);
    auto rep = fit_tsls(iv_spec(), p.data);

    // Oracle: residualize everything on the FE dummies, run the two stages
    // with plain matrix algebra.
    const long n = static_cast<long>(p.data.n_rows);
    auto fs = build_fe_structure(p.data, {{"unit"}, {"period"}});
    int total = 0;
    for (int g : fs.n_groups) total += g;
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, total);
    int off = 0;
    for (std::size_t s = 0; s < fs.group_of_row.size(); ++s) {
        for (long i = 0; i < n; ++i) D(i, off + fs.group_of_row[s][i]) = 1.0;
        off += fs.n_groups[s];
    }
    auto project_out = [&](const Eigen::VectorXd& v) {
        return (v - D * D.completeOrthogonalDecomposition().solve(v)).eval();
    };
    Eigen::VectorXd y(n), T(n), Z(n), C(n);
    for (long i = 0; i < n; ++i) {
        y[i] = p.data.value("y")[i];
        T[i] = p.data.value("treat")[i];
        Z[i] = p.data.value("instr")[i];
        C[i] = p.data.value("ctrl")[i];
    }
    y = project_out(y);
    T = project_out(T);
    Z = project_out(Z);
    C = project_out(C);

    Eigen::MatrixXd Xf(n, 2);
    Xf.col(0) = Z;
    Xf.col(1) = C;
    Eigen::VectorXd pi = (Xf.transpose() * Xf).ldlt().solve(Xf.transpose() * T);
    Eigen::VectorXd That = Xf * pi;
    Eigen::MatrixXd Xs(n, 2);
    Xs.col(0) = That;
    Xs.col(1) = C;
    Eigen::VectorXd beta = (Xs.transpose() * Xs).ldlt().solve(Xs.transpose() * y);

    REQUIRE(std::abs(rep.coef_of("treat") - beta[0]) < 1e-8);
    REQUIRE(std::abs(rep.coef_of("ctrl") - beta[1]) < 1e-8);
    REQUIRE(std::abs(*rep.first_stage_coef - pi[0]) < 1e-8);
}

TEST_CASE("first-stage F equals the cluster-robust Wald on the instrument") {
    auto p = iv_panel(25, 6, -0.06, 0.5, 1.0, 1003);
    auto rep = fit_tsls(iv_spec(), p.data);

    // Hand computation: first-stage fe-ols of treat on instr + ctrl, then
    // square the t statistic on the instrument.
    ModelSpec first;
    first.name = "first";
    first.outcome = "treat";
    first.regressors = {"instr", "ctrl"};
    first.fe = {{"unit"}, {"period"}};
    first.cluster = "cluster";
    auto fs = fit_fe_ols(first, p.data);
    const double t = fs.coef_of("instr") / fs.se_of("instr");
    REQUIRE(std::abs(*rep.first_stage_f - t * t) < 1e-8);
    REQUIRE(std::abs(*rep.first_stage_coef - fs.coef_of("instr")) < 1e-10);
}

TEST_CASE("tsls stays consistent under endogeneity while OLS drifts") {
    const int reps = 120;
    const double beta = -0.06;
    double iv_sum = 0.0, iv_sumsq = 0.0, ols_sum = 0.0;
    int iv_closer = 0;
    for (int r = 0; r < reps; ++r) {
        auto p = iv_panel(80, 6, beta, 0.8, 2.0, 1100 + r);
        auto iv = fit_tsls(iv_spec(), p.data);

        ModelSpec ols;
        ols.name = "ols";
        ols.outcome = "y";
        ols.regressors = {"treat", "ctrl"};
        ols.fe = {{"unit"}, {"period"}};
        ols.cluster = "cluster";
        auto ref = fit_fe_ols(ols, p.data);

        const double bi = iv.coef_of("treat") - beta;
        const double bo = ref.coef_of("treat") - beta;
        iv_sum += bi;
        iv_sumsq += bi * bi;
        ols_sum += bo;
        if (std::abs(bi) < std::abs(bo)) ++iv_closer;
        REQUIRE(*iv.first_stage_f > 10.0);
    }
    const double iv_bias = iv_sum / reps;
    const double ols_bias = ols_sum / reps;
    const double mc_se = std::sqrt((iv_sumsq / reps - iv_bias * iv_bias) / (reps - 1));
    REQUIRE(std::abs(iv_bias) < 0.02 * std::abs(beta) + 3.0 * mc_se);
    REQUIRE(std::abs(ols_bias) > 5.0 * (std::abs(iv_bias) + mc_se));
    REQUIRE(iv_closer >= static_cast<int>(0.9 * reps));
}

TEST_CASE("instrument collinear with controls raises a rank error") {
    auto p = iv_panel(12, 4, -0.06, 0.3, 1.0, 1004);
    p.data.add_value("instr_copy", p.data.value("instr"));
    auto spec = iv_spec();
    spec.regressors = {"instr_copy", "ctrl"};
    REQUIRE_THROWS_AS(fit_tsls(spec, p.data), RankError);
}

TEST_CASE("instrument reused as a control is rejected") {
    auto p = iv_panel(12, 4, -0.06, 0.3, 1.0, 1005);
    auto spec = iv_spec();
    spec.regressors = {"instr"};
    REQUIRE_THROWS_AS(fit_tsls(spec, p.data), InvalidInputError);
}
