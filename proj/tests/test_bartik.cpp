#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mpw/bartik.hpp"

using namespace mpw;

TEST_CASE("flat national employment produces zero shocks") {
    std::map<std::pair<std::int64_t, int>, double> shares{{{1, 10}, 0.2}, {{2, 10}, 0.5}};
    std::map<std::pair<int, int>, double> emp;
    for (int y = 2017; y <= 2020; ++y) emp[{10, y}] = 5000.0;
    auto panel = build_bartik(shares, emp, {2017, 2018});
    for (const auto& c : panel.cells) REQUIRE(std::abs(c.b) < 1e-12);
}

TEST_CASE("raw shock is share times log growth in percentage points") {
    // One SOC, baseline year 2017, one later year with +0.05 log growth.
    std::map<std::pair<std::int64_t, int>, double> shares{{{1, 10}, 0.10}};
    std::map<std::pair<int, int>, double> emp{{{10, 2017}, 1000.0},
                                              {{10, 2018}, 1000.0 * std::exp(0.05)}};
    auto panel = build_bartik(shares, emp, {2017});
    REQUIRE(panel.cells.size() == 2);
    // Raw values are 0 and 0.5pp; demeaning shifts both by the panel mean,
    // so the gap between the two cells pins the raw magnitude.
    const double gap = panel.cells[1].b - panel.cells[0].b;
    REQUIRE(std::abs(gap - 0.5) < 1e-10);
}

TEST_CASE("demeaned panel has zero mean") {
    std::mt19937_64 rng(401);
    std::uniform_real_distribution<double> u(0.01, 0.4);
    std::lognormal_distribution<double> e(8.0, 0.3);
    std::map<std::pair<std::int64_t, int>, double> shares;
    std::map<std::pair<int, int>, double> emp;
    for (std::int64_t cz = 0; cz < 20; ++cz)
        for (int soc = 0; soc < 5; ++soc) shares[{cz, soc}] = u(rng);
    for (int soc = 0; soc < 5; ++soc)
        for (int y = 2017; y <= 2024; ++y) emp[{soc, y}] = e(rng);
    auto panel = build_bartik(shares, emp, {2017, 2018, 2019});
    double mean = 0.0;
    for (const auto& c : panel.cells) mean += c.b;
    mean /= static_cast<double>(panel.cells.size());
    REQUIRE(std::abs(mean) < 1e-9);
}

TEST_CASE("zero employment is rejected") {
    std::map<std::pair<std::int64_t, int>, double> shares{{{1, 10}, 0.1}};
    std::map<std::pair<int, int>, double> emp{{{10, 2017}, 0.0}, {{10, 2018}, 10.0}};
    REQUIRE_THROWS_AS(build_bartik(shares, emp, {2017}), InvalidInputError);
}

TEST_CASE("terciles: all nonpositive collapse to the reference bin") {
    BartikPanel panel;
    for (int i = 0; i < 5; ++i) panel.cells.push_back({0, 0, 2017 + i, -0.1 * i});
    auto t = bin_positive_terciles(panel);
    for (auto b : t.bins) REQUIRE(b == TercileBin::Nonpositive);
    REQUIRE(t.n_positive == 0);
}

TEST_CASE("terciles: nine positives split three per bin") {
    BartikPanel panel;
    for (int i = 1; i <= 9; ++i) panel.cells.push_back({0, 0, i, static_cast<double>(i)});
    auto t = bin_positive_terciles(panel);
    for (int i = 0; i < 3; ++i) REQUIRE(t.bins[i] == TercileBin::Low);
    for (int i = 3; i < 6; ++i) REQUIRE(t.bins[i] == TercileBin::Mid);
    for (int i = 6; i < 9; ++i) REQUIRE(t.bins[i] == TercileBin::High);
}

TEST_CASE("terciles: exactly three positives, one per bin") {
    BartikPanel panel;
    panel.cells.push_back({0, 0, 1, 0.3});
    panel.cells.push_back({0, 0, 2, -1.0});
    panel.cells.push_back({0, 0, 3, 0.1});
    panel.cells.push_back({0, 0, 4, 0.2});
    auto t = bin_positive_terciles(panel);
    REQUIRE(t.bins[0] == TercileBin::High);
    REQUIRE(t.bins[1] == TercileBin::Nonpositive);
    REQUIRE(t.bins[2] == TercileBin::Low);
    REQUIRE(t.bins[3] == TercileBin::Mid);
}

TEST_CASE("terciles: boundary ties fall to the lower bin") {
    BartikPanel panel;
    // Positives {1, 1, 2, 3, 3, 9}: cutoffs land on 1 and 3, so the tied 1s
    // both stay low and the tied 3s both stay mid.
    for (double v : {1.0, 1.0, 2.0, 3.0, 3.0, 9.0}) panel.cells.push_back({0, 0, 0, v});
    auto t = bin_positive_terciles(panel);
    REQUIRE(t.bins[0] == TercileBin::Low);
    REQUIRE(t.bins[1] == TercileBin::Low);
    REQUIRE(t.bins[2] == TercileBin::Mid);
    REQUIRE(t.bins[3] == TercileBin::Mid);
    REQUIRE(t.bins[4] == TercileBin::Mid);
    REQUIRE(t.bins[5] == TercileBin::High);

    // A tie block spanning both cutoffs collapses the mid bin entirely.
    BartikPanel span;
    for (double v : {1.0, 2.0, 2.0, 2.0, 5.0, 9.0}) span.cells.push_back({0, 0, 0, v});
    auto t2 = bin_positive_terciles(span);
    for (int i = 0; i < 4; ++i) REQUIRE(t2.bins[i] == TercileBin::Low);
    REQUIRE(t2.bins[4] == TercileBin::High);
    REQUIRE(t2.bins[5] == TercileBin::High);
}

TEST_CASE("terciles partition every cell") {
    std::mt19937_64 rng(402);
    std::normal_distribution<double> z(0.0, 1.0);
    BartikPanel panel;
    for (int i = 0; i < 500; ++i) panel.cells.push_back({i % 20, i % 5, 2017 + i % 8, z(rng)});
    auto t = bin_positive_terciles(panel);
    REQUIRE(t.bins.size() == panel.cells.size());
    std::size_t np = 0;
    for (std::size_t i = 0; i < panel.cells.size(); ++i) {
        if (panel.cells[i].b <= 0.0)
            REQUIRE(t.bins[i] == TercileBin::Nonpositive);
        else {
            REQUIRE(t.bins[i] != TercileBin::Nonpositive);
            ++np;
        }
    }
    REQUIRE(np == t.n_positive);
}
