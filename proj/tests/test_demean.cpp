#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <random>

#include "mpw/demean.hpp"

using namespace mpw;

namespace {

// Residualize columns on the full dummy matrix of every FE group, the brute
// force benchmark for the iterative demeaning.
Eigen::MatrixXd dummy_residualize(const Eigen::MatrixXd& cols, const FeStructure& fs,
                                  const Eigen::VectorXd& w) {
    const long n = cols.rows();
    int total_groups = 0;
    for (int g : fs.n_groups) total_groups += g;
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, total_groups);
    int offset = 0;
    for (std::size_t s = 0; s < fs.group_of_row.size(); ++s) {
        for (long i = 0; i < n; ++i) D(i, offset + fs.group_of_row[s][i]) = 1.0;
        offset += fs.n_groups[s];
    }
    Eigen::VectorXd sw = w.array().sqrt();
    Eigen::MatrixXd Dw = sw.asDiagonal() * D;
    Eigen::MatrixXd Cw = sw.asDiagonal() * cols;
    // The dummy matrix is rank deficient (each set spans the constant), so
    // a minimum-norm least-squares solve is required.
    Eigen::MatrixXd fitted = Dw * Dw.completeOrthogonalDecomposition().solve(Cw);
    Eigen::MatrixXd resid_w = Cw - fitted;
    return sw.cwiseInverse().asDiagonal() * resid_w;
}

PanelDataset random_panel(int n_units, int n_periods, int n_groups, std::uint64_t seed) {
    PanelDataset d;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<std::int64_t> unit, period, group;
    std::vector<double> x1, x2, y;
    for (int u = 0; u < n_units; ++u)
        for (int t = 0; t < n_periods; ++t) {
            unit.push_back(u);
            period.push_back(2017 + t);
            group.push_back((u + t) % n_groups);
            x1.push_back(z(rng) + 0.3 * u);
            x2.push_back(z(rng) - 0.2 * t);
            y.push_back(z(rng));
        }
    d.add_key("unit", unit);
    d.add_key("period", period);
    d.add_key("group", group);
    d.add_value("x1", x1);
    d.add_value("x2", x2);
    d.add_value("y", y);
    return d;
}

Eigen::MatrixXd panel_cols(const PanelDataset& d) {
    Eigen::MatrixXd cols(static_cast<long>(d.n_rows), 3);
    for (std::size_t i = 0; i < d.n_rows; ++i) {
        cols(i, 0) = d.value("y")[i];
        cols(i, 1) = d.value("x1")[i];
        cols(i, 2) = d.value("x2")[i];
    }
    return cols;
}

}  // namespace

TEST_CASE("single FE set demeans group means to zero") {
    auto d = random_panel(12, 6, 3, 501);
    auto fs = build_fe_structure(d, {{"unit"}});
    Eigen::VectorXd w = Eigen::VectorXd::Ones(static_cast<long>(d.n_rows));
    auto res = demean_columns(panel_cols(d), fs, w);
    REQUIRE(res.iterations == 1);

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(fs.n_groups[0], 3);
    for (long i = 0; i < res.cols.rows(); ++i)
        sums.row(fs.group_of_row[0][i]) += res.cols.row(i);
    REQUIRE(sums.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("two crossed FE sets match dummy residualization") {
    auto d = random_panel(10, 8, 3, 502);
    auto fs = build_fe_structure(d, {{"unit"}, {"period"}});
    Eigen::VectorXd w = Eigen::VectorXd::Ones(static_cast<long>(d.n_rows));
    Eigen::MatrixXd cols = panel_cols(d);
    auto res = demean_columns(cols, fs, w);
    Eigen::MatrixXd oracle = dummy_residualize(cols, fs, w);
    REQUIRE((res.cols - oracle).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("three two-way FE sets match the dummy oracle") {
    auto d = random_panel(6, 5, 3, 503);
    auto fs = build_fe_structure(d, {{"unit", "period"}, {"unit", "group"}, {"group", "period"}});
    Eigen::VectorXd w = Eigen::VectorXd::Ones(static_cast<long>(d.n_rows));
    Eigen::MatrixXd cols = panel_cols(d);
    auto res = demean_columns(cols, fs, w, 1e-12, 50000);
    Eigen::MatrixXd oracle = dummy_residualize(cols, fs, w);
    REQUIRE((res.cols - oracle).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("weighted demeaning matches weighted dummy residualization") {
    auto d = random_panel(8, 6, 3, 504);
    std::mt19937_64 rng(505);
    std::uniform_real_distribution<double> uw(0.2, 3.0);
    std::vector<double> wv(d.n_rows);
    for (auto& v : wv) v = uw(rng);
    d.add_value("weight", wv);
    auto fs = build_fe_structure(d, {{"unit"}, {"period"}});
    Eigen::VectorXd w = d.weights();
    Eigen::MatrixXd cols = panel_cols(d);
    auto res = demean_columns(cols, fs, w);
    Eigen::MatrixXd oracle = dummy_residualize(cols, fs, w);
    REQUIRE((res.cols - oracle).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("singleton rows are flagged") {
    PanelDataset d;
    d.add_key("unit", {1, 1, 2, 3});
    d.add_key("period", {2017, 2018, 2017, 2018});
    d.add_value("y", {1.0, 2.0, 3.0, 4.0});
    auto fs = build_fe_structure(d, {{"unit"}});
    REQUIRE(fs.singleton_rows == 2);  // units 2 and 3 appear once
}

TEST_CASE("iteration cap raises a convergence error") {
    auto d = random_panel(10, 8, 3, 506);
    auto fs = build_fe_structure(d, {{"unit"}, {"period"}, {"group"}});
    Eigen::VectorXd w = Eigen::VectorXd::Ones(static_cast<long>(d.n_rows));
    REQUIRE_THROWS_AS(demean_columns(panel_cols(d), fs, w, 1e-14, 2), ConvergenceError);
}

TEST_CASE("fe set validation") {
    auto d = random_panel(4, 3, 2, 507);
    REQUIRE_THROWS_AS(build_fe_structure(d, {}), InvalidInputError);
    REQUIRE_THROWS_AS(build_fe_structure(d, {{"unit", "period", "group"}}), InvalidInputError);
    REQUIRE_THROWS_AS(build_fe_structure(d, {{"missing"}}), InvalidInputError);
}
