#pragma once

#include <compare>
#include <cstdint>
#include <string>

namespace gridfarm {

/// Fixed-point money amount counted in hundredths of a unit. All ledger
/// arithmetic goes through this type so sums never drift.
class Money {
public:
    constexpr Money() = default;

    static constexpr Money from_cents(std::int64_t cents) { return Money(cents); }
    /// Rounds half away from zero to the nearest cent.
    static Money from_units(double units);
    /// Parses "12", "12.5", "-0.07". Throws std::invalid_argument on junk or
    /// more than two fractional digits.
    static Money parse(const std::string& text);

    constexpr std::int64_t cents() const { return cents_; }
    double units() const { return static_cast<double>(cents_) / 100.0; }
    std::string to_string() const;

    constexpr Money& operator+=(Money o) { cents_ += o.cents_; return *this; }
    constexpr Money& operator-=(Money o) { cents_ -= o.cents_; return *this; }
    friend constexpr Money operator+(Money a, Money b) { return a += b; }
    friend constexpr Money operator-(Money a, Money b) { return a -= b; }
    friend constexpr Money operator*(Money a, std::int64_t k) { return Money(a.cents_ * k); }
    friend constexpr Money operator*(std::int64_t k, Money a) { return Money(a.cents_ * k); }
    friend constexpr auto operator<=>(Money, Money) = default;

    /// Scales by a real factor, rounding to the nearest cent.
    Money scaled(double factor) const;

private:
    constexpr explicit Money(std::int64_t cents) : cents_(cents) {}
    std::int64_t cents_ = 0;
};

/// Amount owed for `cpu_hours` at `rate_per_cpu_hour`, rounded to the cent.
/// The one rounding rule shared by charging, reservations and projections.
Money cost_of(double cpu_hours, Money rate_per_cpu_hour);

}  // namespace gridfarm
