#pragma once

#include <cmath>

#include "mpw/errors.hpp"

namespace mpw {

// Fixed-rate mortgage arithmetic. Payments are principal-and-interest only.

// Level monthly payment that amortizes `principal` over `term_months` at the
// annual contract rate: L*i*(1+i)^n / ((1+i)^n - 1) with i the monthly rate.
// At a zero rate the schedule is linear, L/n.
inline double monthly_payment(double principal, double annual_rate, int term_months) {
    if (!(principal > 0.0))
        throw InvalidInputError("monthly_payment: principal must be positive");
    if (term_months < 1)
        throw InvalidInputError("monthly_payment: term_months must be >= 1");
    if (annual_rate < 0.0)
        throw InvalidInputError("monthly_payment: annual_rate must be >= 0");
    if (annual_rate == 0.0) return principal / term_months;
    // expm1/log1p keep the denominator accurate as the rate approaches zero.
    const double i = annual_rate / 12.0;
    const double log_growth = static_cast<double>(term_months) * std::log1p(i);
    return principal * i * std::exp(log_growth) / std::expm1(log_growth);
}

// Present value of a constant monthly amount A sustained for `years` and
// discounted at annual rate delta: A * (1 - (1+delta/12)^(-12T)) / (delta/12).
// Undefined at delta = 0.
inline double present_value_of_wedge(double monthly_amount, double annual_discount,
                                     int years) {
    if (years < 0)
        throw InvalidInputError("present_value_of_wedge: years must be >= 0");
    if (!(annual_discount > 0.0))
        throw InvalidInputError("present_value_of_wedge: annual_discount must be > 0");
    const double m = annual_discount / 12.0;
    return monthly_amount * (1.0 - std::pow(1.0 + m, -12.0 * years)) / m;
}

}  // namespace mpw
