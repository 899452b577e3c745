#include "gridfarm/core/money.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace gridfarm {

Money Money::from_units(double units) {
    return Money(std::llround(units * 100.0));
}

Money Money::parse(const std::string& text) {
    std::size_t i = 0;
    bool negative = false;
    if (i < text.size() && (text[i] == '-' || text[i] == '+')) {
        negative = text[i] == '-';
        ++i;
    }
    std::int64_t whole = 0;
    std::size_t digits = 0;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
        whole = whole * 10 + (text[i] - '0');
        ++i;
        ++digits;
    }
    std::int64_t frac = 0;
    std::size_t frac_digits = 0;
    if (i < text.size() && text[i] == '.') {
        ++i;
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
            if (frac_digits == 2) throw std::invalid_argument("money has more than two decimals: " + text);
            frac = frac * 10 + (text[i] - '0');
            ++i;
            ++frac_digits;
        }
    }
    if (i != text.size() || (digits == 0 && frac_digits == 0)) {
        throw std::invalid_argument("not a money amount: " + text);
    }
    if (frac_digits == 1) frac *= 10;
    std::int64_t cents = whole * 100 + frac;
    return Money(negative ? -cents : cents);
}

std::string Money::to_string() const {
    std::int64_t abs = cents_ < 0 ? -cents_ : cents_;
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s%lld.%02lld", cents_ < 0 ? "-" : "",
                  static_cast<long long>(abs / 100), static_cast<long long>(abs % 100));
    return buf;
}

Money Money::scaled(double factor) const {
    return Money(std::llround(static_cast<double>(cents_) * factor));
}

Money cost_of(double cpu_hours, Money rate_per_cpu_hour) {
    return Money::from_cents(std::llround(cpu_hours * static_cast<double>(rate_per_cpu_hour.cents())));
}

}  // namespace gridfarm
