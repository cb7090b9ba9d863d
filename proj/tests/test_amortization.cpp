#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "mpw/amortization.hpp"
#include "mpw/errors.hpp"

using namespace mpw;

namespace {

// Independent oracle: run the amortization schedule month by month and
// return the balance left after the final payment.
double remaining_balance(double principal, double annual_rate, int term_months,
                         double payment) {
    double balance = principal;
    const double i = annual_rate / 12.0;
    for (int m = 0; m < term_months; ++m) balance = balance * (1.0 + i) - payment;
    return balance;
}

}  // namespace

TEST_CASE("zero-rate payment is principal over term") {
    REQUIRE(monthly_payment(100000.0, 0.0, 360) == Catch::Approx(100000.0 / 360).epsilon(1e-12));
    REQUIRE(std::abs(monthly_payment(100000.0, 0.0, 360) - 277.78) < 0.01);
}

TEST_CASE("payment amortizes the balance to zero") {
    const double p6 = monthly_payment(100000.0, 0.06, 360);
    REQUIRE(std::abs(p6 - 599.55) < 0.01);
    REQUIRE(std::abs(remaining_balance(100000.0, 0.06, 360, p6)) < 0.01);

    // 719.18 frozen from the balance-iteration oracle at the 2023 peak rate.
    const double p779 = monthly_payment(100000.0, 0.0779, 360);
    REQUIRE(std::abs(p779 - 719.18) < 0.01);
    REQUIRE(std::abs(remaining_balance(100000.0, 0.0779, 360, p779)) < 0.01);
}

TEST_CASE("balance oracle on randomized rate and term") {
    std::mt19937_64 rng(7101);
    std::uniform_real_distribution<double> rate(0.0, 0.15);
    const int terms[] = {120, 240, 360};
    for (int rep = 0; rep < 300; ++rep) {
        const double r = rate(rng);
        const int t = terms[rep % 3];
        const double pay = monthly_payment(100000.0, r, t);
        REQUIRE(std::abs(remaining_balance(100000.0, r, t, pay)) < 0.01);
    }
}

TEST_CASE("payment is increasing in rate and principal, continuous at zero") {
    double prev = 0.0;
    for (double r : {0.0, 0.01, 0.03, 0.05, 0.08, 0.12}) {
        const double p = monthly_payment(100000.0, r, 360);
        REQUIRE(p > prev);
        prev = p;
    }
    REQUIRE(monthly_payment(200000.0, 0.05, 360) > monthly_payment(100000.0, 0.05, 360));
    // Continuity at zero: the exact gap from L/n at monthly rate i is
    // (L/n)*(n+1)/2*i to first order, about 4.2e-6 dollars at an annual rate
    // of 1e-9. Check both the limit and the expansion.
    const double tiny = monthly_payment(100000.0, 1e-9, 360);
    const double base = 100000.0 / 360;
    REQUIRE(std::abs(tiny - base) < 1e-5);
    REQUIRE(std::abs(tiny - base * (1.0 + 0.5 * 361 * 1e-9 / 12.0)) < 1e-9);
}

TEST_CASE("invalid amortization inputs") {
    REQUIRE_THROWS_AS(monthly_payment(0.0, 0.05, 360), InvalidInputError);
    REQUIRE_THROWS_AS(monthly_payment(-1.0, 0.05, 360), InvalidInputError);
    REQUIRE_THROWS_AS(monthly_payment(100000.0, 0.05, 0), InvalidInputError);
    REQUIRE_THROWS_AS(monthly_payment(100000.0, -0.01, 360), InvalidInputError);
}

TEST_CASE("present value of a constant monthly wedge") {
    REQUIRE(std::abs(present_value_of_wedge(21.0, 0.05, 30) - 3912.0) < 5.0);
    REQUIRE(std::abs(present_value_of_wedge(21.0, 0.05, 10) - 1980.0) < 5.0);
    REQUIRE(present_value_of_wedge(0.0, 0.05, 30) == 0.0);
}

TEST_CASE("present value monotonicity") {
    REQUIRE(present_value_of_wedge(21.0, 0.05, 30) > present_value_of_wedge(21.0, 0.05, 10));
    REQUIRE(present_value_of_wedge(30.0, 0.05, 30) > present_value_of_wedge(21.0, 0.05, 30));
    REQUIRE(present_value_of_wedge(21.0, 0.08, 30) < present_value_of_wedge(21.0, 0.05, 30));
}

TEST_CASE("present value undefined at zero discount") {
    REQUIRE_THROWS_AS(present_value_of_wedge(21.0, 0.0, 30), InvalidInputError);
    REQUIRE_THROWS_AS(present_value_of_wedge(21.0, 0.05, -1), InvalidInputError);
}
