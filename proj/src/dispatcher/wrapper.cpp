#include "gridfarm/dispatcher/wrapper.hpp"

#include <algorithm>
#include <sstream>

namespace gridfarm::dispatcher {
namespace {

using Verb = WrapperCommand::Verb;

std::string quoted(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out += c;
    }
    return out + "\"";
}

int rank(Verb v) {
    switch (v) {
        case Verb::stage_in: return 0;
        case Verb::execute: return 1;
        case Verb::stage_out: return 2;
        case Verb::report: return 3;
    }
    return 4;
}

}  // namespace

const char* to_string(Verb v) {
    switch (v) {
        case Verb::stage_in: return "stage_in";
        case Verb::execute: return "execute";
        case Verb::stage_out: return "stage_out";
        case Verb::report: return "report";
    }
    return "?";
}

bool well_formed(const WrapperScript& script) {
    const auto& c = script.commands;
    if (c.empty() || c.back().verb != Verb::report) return false;
    int executes = 0;
    int last = 0;
    for (std::size_t i = 0; i + 1 < c.size(); ++i) {
        int r = rank(c[i].verb);
        if (r == 3 || r < last) return false;
        if (r == 1) ++executes;
        last = r;
    }
    return executes >= 1;
}

WrapperScript build_wrapper(const DispatchOrder& order) {
    if (!plan::is_resolved(order.task)) {
        throw MalformedTask("job " + std::to_string(order.job) + " has unresolved placeholders");
    }
    WrapperScript w;
    std::vector<std::string> staged_out;
    for (const auto& step : order.task.steps) {
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, plan::StageIn>) {
                    w.commands.push_back({Verb::stage_in, s.source, s.dest});
                } else if constexpr (std::is_same_v<T, plan::Substitute>) {
                    w.commands.push_back({Verb::stage_in, order.staging_dir + "/" + s.output, s.output});
                } else if constexpr (std::is_same_v<T, plan::Execute>) {
                    w.commands.push_back({Verb::execute, s.command, {}});
                } else {
                    w.commands.push_back({Verb::stage_out, s.source, s.dest});
                    staged_out.push_back(s.source);
                }
            },
            step);
    }
    for (const auto& o : order.task.outputs) {
        if (std::find(staged_out.begin(), staged_out.end(), o) == staged_out.end()) {
            w.commands.push_back({Verb::stage_out, o, o});
        }
    }
    w.commands.push_back({Verb::report, {}, {}});
    if (!well_formed(w)) {
        throw MalformedTask("job " + std::to_string(order.job) +
                            ": task steps must be staging, then execution, then stage-out");
    }
    return w;
}

std::string print_wrapper(const WrapperScript& script) {
    std::ostringstream out;
    for (const auto& c : script.commands) {
        out << to_string(c.verb);
        switch (c.verb) {
            case Verb::stage_in:
            case Verb::stage_out: out << ' ' << quoted(c.arg) << ' ' << quoted(c.arg2); break;
            case Verb::execute: out << ' ' << quoted(c.arg); break;
            case Verb::report: break;
        }
        out << '\n';
    }
    return out.str();
}

namespace {

std::vector<std::string> split_quoted(std::string_view line, std::size_t pos, int lineno) {
    std::vector<std::string> out;
    while (pos < line.size()) {
        if (line[pos] == ' ' || line[pos] == '\t') {
            ++pos;
            continue;
        }
        if (line[pos] != '"') throw std::invalid_argument("wrapper line " + std::to_string(lineno) + ": expected string");
        ++pos;
        std::string s;
        bool closed = false;
        while (pos < line.size()) {
            char c = line[pos++];
            if (c == '\\' && pos < line.size()) {
                char e = line[pos++];
                s += e == 'n' ? '\n' : e;
            } else if (c == '"') {
                closed = true;
                break;
            } else {
                s += c;
            }
        }
        if (!closed) throw std::invalid_argument("wrapper line " + std::to_string(lineno) + ": unterminated string");
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

WrapperScript parse_wrapper(std::string_view text) {
    WrapperScript w;
    int lineno = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        auto nl = text.find('\n', start);
        std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
        start = nl == std::string_view::npos ? text.size() : nl + 1;
        ++lineno;
        if (line.empty()) continue;
        auto sp = line.find(' ');
        std::string_view verb = line.substr(0, sp);
        auto args = sp == std::string_view::npos ? std::vector<std::string>{} : split_quoted(line, sp, lineno);
        auto need = [&](std::size_t n) {
            if (args.size() != n) {
                throw std::invalid_argument("wrapper line " + std::to_string(lineno) + ": '" + std::string(verb) +
                                            "' takes " + std::to_string(n) + " argument(s)");
            }
        };
        if (verb == "stage_in" || verb == "stage_out") {
            need(2);
            w.commands.push_back({verb == "stage_in" ? Verb::stage_in : Verb::stage_out, args[0], args[1]});
        } else if (verb == "execute") {
            need(1);
            w.commands.push_back({Verb::execute, args[0], {}});
        } else if (verb == "report") {
            need(0);
            w.commands.push_back({Verb::report, {}, {}});
        } else {
            throw std::invalid_argument("wrapper line " + std::to_string(lineno) + ": unknown verb '" +
                                        std::string(verb) + "'");
        }
    }
    return w;
}

}  // namespace gridfarm::dispatcher
