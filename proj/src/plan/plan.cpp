#include "gridfarm/plan/plan.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <sstream>

namespace gridfarm::plan {
namespace {

// Shortest decimal text that reads back to exactly `v`.
std::string exact_real(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    std::string s = buf;
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string quoted(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default: out += c;
        }
    }
    return out + "\"";
}

std::uint64_t real_count(const RealRange& r) {
    return static_cast<std::uint64_t>(std::floor((r.to - r.from) / r.step + 1e-9)) + 1;
}

std::string render_real(double v, int digits) {
    if (v == 0.0) v = 0.0;  // fold -0
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

std::string value_at(const Domain& domain, std::uint64_t k, int real_digits) {
    return std::visit(
        [&](const auto& d) -> std::string {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, IntegerRange>) {
                return std::to_string(d.from + static_cast<std::int64_t>(k) * d.step);
            } else if constexpr (std::is_same_v<T, RealRange>) {
                return render_real(d.from + static_cast<double>(k) * d.step, real_digits);
            } else {
                return d.values[k].text;
            }
        },
        domain);
}

}  // namespace

std::string print_plan(const Plan& plan) {
    std::ostringstream out;
    out << "plan " << plan.name << ";\n";
    out << "expected_job_hours " << exact_real(plan.expected_job_hours) << ";\n";
    out << "payload_mb " << exact_real(plan.payload_mb) << ";\n";
    for (const auto& p : plan.parameters) {
        out << "parameter " << p.name;
        if (p.label) out << " label " << quoted(*p.label);
        std::visit(
            [&](const auto& d) {
                using T = std::decay_t<decltype(d)>;
                if constexpr (std::is_same_v<T, IntegerRange>) {
                    out << " integer range from " << d.from << " to " << d.to << " step " << d.step;
                } else if constexpr (std::is_same_v<T, RealRange>) {
                    out << " real range from " << exact_real(d.from) << " to " << exact_real(d.to) << " step "
                        << exact_real(d.step);
                } else {
                    out << " list ";
                    for (std::size_t i = 0; i < d.values.size(); ++i) {
                        if (i) out << ", ";
                        const auto& lit = d.values[i];
                        out << (lit.kind == Literal::Kind::text ? quoted(lit.text) : lit.text);
                    }
                }
            },
            p.domain);
        out << ";\n";
    }
    out << "task main\n";
    for (const auto& step : plan.task.steps) {
        out << "    ";
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, StageIn>) {
                    out << "stage_in " << quoted(s.source) << " " << quoted(s.dest);
                } else if constexpr (std::is_same_v<T, Substitute>) {
                    out << "substitute " << quoted(s.template_name) << " " << quoted(s.output);
                } else if constexpr (std::is_same_v<T, Execute>) {
                    out << "execute " << quoted(s.command);
                    for (std::size_t i = 0; i < s.produces.size(); ++i) {
                        out << (i ? ", " : " produces ") << quoted(s.produces[i]);
                    }
                } else {
                    out << "stage_out " << quoted(s.source) << " " << quoted(s.dest);
                }
            },
            step);
        out << ";\n";
    }
    for (const auto& o : plan.task.outputs) out << "    output " << quoted(o) << ";\n";
    out << "endtask\n";
    return out.str();
}

std::uint64_t domain_size(const Domain& domain) {
    return std::visit(
        [](const auto& d) -> std::uint64_t {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, IntegerRange>) {
                if (d.step <= 0 || d.from > d.to) return 0;
                return static_cast<std::uint64_t>((d.to - d.from) / d.step) + 1;
            } else if constexpr (std::is_same_v<T, RealRange>) {
                if (!(d.step > 0) || d.from > d.to) return 0;
                return real_count(d);
            } else {
                return d.values.size();
            }
        },
        domain);
}

std::vector<std::string> domain_values(const Domain& domain, int real_digits) {
    std::vector<std::string> out;
    std::uint64_t n = domain_size(domain);
    out.reserve(n);
    for (std::uint64_t k = 0; k < n; ++k) out.push_back(value_at(domain, k, real_digits));
    return out;
}

CrossProductTooLarge::CrossProductTooLarge(std::uint64_t count, std::uint64_t cap, bool overflowed)
    : std::runtime_error(overflowed ? "cross-product exceeds " + std::to_string(cap) + " jobs (count overflows 64 bits)"
                                    : "cross-product of " + std::to_string(count) + " jobs exceeds cap of " +
                                          std::to_string(cap)),
      count_(count),
      overflowed_(overflowed) {}

std::uint64_t job_count(const Plan& plan, std::uint64_t max_jobs) {
    std::uint64_t total = 1;
    bool over = false;
    for (const auto& p : plan.parameters) {
        std::uint64_t n = domain_size(p.domain);
        if (n != 0 && total > std::numeric_limits<std::uint64_t>::max() / n) {
            throw CrossProductTooLarge(0, max_jobs, true);
        }
        total *= n;
        if (total > max_jobs) over = true;
    }
    if (over) throw CrossProductTooLarge(total, max_jobs, false);
    return total;
}

Binding binding_for(const Plan& plan, std::uint64_t ordinal, int real_digits) {
    Binding binding(plan.parameters.size());
    for (std::size_t i = plan.parameters.size(); i-- > 0;) {
        const auto& p = plan.parameters[i];
        std::uint64_t n = domain_size(p.domain);
        binding[i] = {p.name, value_at(p.domain, ordinal % n, real_digits)};
        ordinal /= n;
    }
    return binding;
}

std::vector<JobSpec> expand_jobs(const Plan& plan, std::string_view experiment_id, const ExpandOptions& options) {
    std::uint64_t n = job_count(plan, options.max_jobs);
    std::vector<std::vector<std::string>> values;
    values.reserve(plan.parameters.size());
    for (const auto& p : plan.parameters) values.push_back(domain_values(p.domain, options.real_digits));

    std::vector<JobSpec> jobs;
    jobs.reserve(n);
    std::vector<std::size_t> index(plan.parameters.size(), 0);
    for (std::uint64_t ord = 0; ord < n; ++ord) {
        Binding binding;
        binding.reserve(index.size());
        for (std::size_t i = 0; i < index.size(); ++i) binding.emplace_back(plan.parameters[i].name, values[i][index[i]]);
        JobSpec spec{{std::string(experiment_id), ord}, binding, resolve_task(plan.task, binding)};
        jobs.push_back(std::move(spec));
        for (std::size_t i = index.size(); i-- > 0;) {
            if (++index[i] < values[i].size()) break;
            index[i] = 0;
        }
    }
    return jobs;
}

UnresolvedPlaceholder::UnresolvedPlaceholder(std::string name)
    : std::runtime_error("unresolved placeholder '${" + name + "}'"), name_(std::move(name)) {}

std::vector<std::string> placeholders_in(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while ((i = text.find("${", i)) != std::string_view::npos) {
        auto close = text.find('}', i + 2);
        if (close == std::string_view::npos) break;
        out.emplace_back(text.substr(i + 2, close - i - 2));
        i = close + 1;
    }
    return out;
}

std::string substitute_placeholders(std::string_view text, const Binding& binding) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    for (;;) {
        auto open = text.find("${", i);
        if (open == std::string_view::npos) {
            out.append(text.substr(i));
            return out;
        }
        auto close = text.find('}', open + 2);
        if (close == std::string_view::npos) throw UnresolvedPlaceholder(std::string(text.substr(open + 2)));
        out.append(text.substr(i, open - i));
        std::string_view name = text.substr(open + 2, close - open - 2);
        const std::string* value = nullptr;
        for (const auto& [k, v] : binding) {
            if (k == name) {
                value = &v;
                break;
            }
        }
        if (!value) throw UnresolvedPlaceholder(std::string(name));
        out += *value;
        i = close + 1;
    }
}

TaskScript resolve_task(const TaskScript& task, const Binding& binding) {
    auto sub = [&](const std::string& s) { return substitute_placeholders(s, binding); };
    TaskScript out;
    out.steps.reserve(task.steps.size());
    for (const auto& step : task.steps) {
        out.steps.push_back(std::visit(
            [&](const auto& s) -> Step {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, StageIn>) {
                    return StageIn{sub(s.source), sub(s.dest)};
                } else if constexpr (std::is_same_v<T, Substitute>) {
                    return Substitute{sub(s.template_name), sub(s.output)};
                } else if constexpr (std::is_same_v<T, Execute>) {
                    Execute e{sub(s.command), {}};
                    for (const auto& p : s.produces) e.produces.push_back(sub(p));
                    return e;
                } else {
                    return StageOut{sub(s.source), sub(s.dest)};
                }
            },
            step));
    }
    for (const auto& o : task.outputs) out.outputs.push_back(sub(o));
    return out;
}

bool is_resolved(const TaskScript& task) {
    auto clean = [](const std::string& s) { return s.find("${") == std::string::npos; };
    for (const auto& step : task.steps) {
        bool ok = std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, StageIn>) return clean(s.source) && clean(s.dest);
                else if constexpr (std::is_same_v<T, Substitute>) return clean(s.template_name) && clean(s.output);
                else if constexpr (std::is_same_v<T, Execute>) {
                    bool all = clean(s.command);
                    for (const auto& p : s.produces) all = all && clean(p);
                    return all;
                } else return clean(s.source) && clean(s.dest);
            },
            step);
        if (!ok) return false;
    }
    for (const auto& o : task.outputs) {
        if (!clean(o)) return false;
    }
    return true;
}

}  // namespace gridfarm::plan
