#include "gridfarm/core/time.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace gridfarm {
namespace {

[[noreturn]] void bad_duration(std::string_view text) {
    throw std::invalid_argument("invalid duration: '" + std::string(text) + "'");
}

// Reads a non-negative decimal number starting at pos.
double read_number(std::string_view text, std::size_t& pos) {
    std::size_t start = pos;
    while (pos < text.size() && (std::isdigit(static_cast<unsigned char>(text[pos])) || text[pos] == '.')) ++pos;
    if (pos == start) bad_duration(text);
    std::string digits(text.substr(start, pos - start));
    char* end = nullptr;
    double v = std::strtod(digits.c_str(), &end);
    if (end != digits.c_str() + digits.size()) bad_duration(text);
    return v;
}

double unit_seconds(char unit, std::string_view text) {
    switch (std::tolower(static_cast<unsigned char>(unit))) {
        case 'd': return kSecondsPerDay;
        case 'h': return 3600.0;
        case 'm': return 60.0;
        case 's': return 1.0;
        default: bad_duration(text);
    }
}

}  // namespace

Seconds parse_duration(std::string_view text) {
    if (text.empty()) bad_duration(text);
    bool negative = false;
    std::size_t pos = 0;
    if (text[0] == '-') {
        negative = true;
        pos = 1;
    }
    double total = 0.0;
    if (pos < text.size() && (text[pos] == 'P' || text[pos] == 'p')) {
        ++pos;
        bool in_time = false;
        bool any = false;
        while (pos < text.size()) {
            if (text[pos] == 'T' || text[pos] == 't') {
                if (in_time) bad_duration(text);
                in_time = true;
                ++pos;
                continue;
            }
            double v = read_number(text, pos);
            if (pos >= text.size()) bad_duration(text);
            char unit = static_cast<char>(std::toupper(static_cast<unsigned char>(text[pos++])));
            if (!in_time && unit == 'D') total += v * kSecondsPerDay;
            else if (in_time && unit == 'H') total += v * 3600.0;
            else if (in_time && unit == 'M') total += v * 60.0;
            else if (in_time && unit == 'S') total += v;
            else bad_duration(text);
            any = true;
        }
        if (!any) bad_duration(text);
    } else {
        double v = read_number(text, pos);
        if (pos == text.size()) {
            total = v * 3600.0;
        } else {
            total += v * unit_seconds(text[pos++], text);
            while (pos < text.size()) {
                double w = read_number(text, pos);
                if (pos >= text.size()) bad_duration(text);
                total += w * unit_seconds(text[pos++], text);
            }
        }
    }
    return Seconds(negative ? -total : total);
}

std::string format_duration(Seconds d) {
    double s = d.count();
    std::string out = s < 0 ? "-PT" : "PT";
    s = std::fabs(s);
    auto hours = static_cast<long long>(std::floor(s / 3600.0));
    s -= static_cast<double>(hours) * 3600.0;
    auto minutes = static_cast<long long>(std::floor(s / 60.0));
    s -= static_cast<double>(minutes) * 60.0;
    if (s < 1e-9) s = 0.0;
    bool wrote = false;
    if (hours > 0) {
        out += std::to_string(hours) + "H";
        wrote = true;
    }
    if (minutes > 0) {
        out += std::to_string(minutes) + "M";
        wrote = true;
    }
    if (s > 0.0 || !wrote) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.9g", s);
        out += buf;
        out += "S";
    }
    return out;
}

double parse_time_of_day(std::string_view text) {
    int h = 0, m = 0, sec = 0;
    std::string s(text);
    int n = std::sscanf(s.c_str(), "%d:%d:%d", &h, &m, &sec);
    if (n < 2 || h < 0 || m < 0 || m > 59 || sec < 0 || sec > 59) {
        throw std::invalid_argument("invalid time of day: '" + s + "'");
    }
    double v = h * 3600.0 + m * 60.0 + sec;
    if (v > kSecondsPerDay) throw std::invalid_argument("time of day past 24:00: '" + s + "'");
    return v;
}

std::string format_time_of_day(double seconds_after_midnight) {
    auto total = static_cast<long long>(std::llround(seconds_after_midnight));
    char buf[32];
    if (total % 60 == 0) {
        std::snprintf(buf, sizeof buf, "%02lld:%02lld", total / 3600, (total / 60) % 60);
    } else {
        std::snprintf(buf, sizeof buf, "%02lld:%02lld:%02lld", total / 3600, (total / 60) % 60, total % 60);
    }
    return buf;
}

}  // namespace gridfarm
