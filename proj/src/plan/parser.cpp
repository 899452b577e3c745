#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <set>
#include <string>
#include <unordered_set>

#include "gridfarm/plan/plan.hpp"

namespace gridfarm::plan {
namespace {

enum class Tok { ident, number, string, semicolon, comma, end };

struct Token {
    Tok kind = Tok::end;
    std::string text;  // identifier (lowercased copy in `lower`), literal body, or number source
    std::string lower;
    SourcePos pos;
    SourcePos end_pos;
};

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    std::vector<Token> run(std::vector<Diagnostic>& diags) {
        std::vector<Token> out;
        for (;;) {
            skip_space();
            Token t;
            t.pos = {line_, col_};
            if (at_end()) {
                t.kind = Tok::end;
                t.end_pos = t.pos;
                out.push_back(t);
                return out;
            }
            char c = peek();
            if (c == ';' || c == ',') {
                t.kind = c == ';' ? Tok::semicolon : Tok::comma;
                t.text = std::string(1, c);
                advance();
            } else if (c == '"') {
                if (!lex_string(t, diags)) continue;
            } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.') {
                if (!lex_number(t, diags)) continue;
            } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
                t.kind = Tok::ident;
                while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_')) {
                    t.text += peek();
                    advance();
                }
                t.lower = t.text;
                std::transform(t.lower.begin(), t.lower.end(), t.lower.begin(),
                               [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
            } else {
                diags.push_back({t.pos, std::string("syntax error: unexpected character '") + c + "'"});
                advance();
                continue;
            }
            t.end_pos = {line_, col_};
            out.push_back(std::move(t));
        }
    }

private:
    bool at_end() const { return i_ >= src_.size(); }
    char peek(std::size_t k = 0) const { return i_ + k < src_.size() ? src_[i_ + k] : '\0'; }
    void advance() {
        if (src_[i_] == '\n') {
            ++line_;
            col_ = 1;
        } else if ((static_cast<unsigned char>(src_[i_]) & 0xC0) != 0x80) {
            ++col_;  // count code points, not UTF-8 continuation bytes
        }
        ++i_;
    }
    void skip_space() {
        while (!at_end()) {
            char c = peek();
            if (c == '#') {
                while (!at_end() && peek() != '\n') advance();
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                advance();
            } else {
                break;
            }
        }
    }
    bool lex_string(Token& t, std::vector<Diagnostic>& diags) {
        t.kind = Tok::string;
        advance();
        while (!at_end() && peek() != '"') {
            char c = peek();
            if (c == '\n') break;
            if (c == '\\') {
                advance();
                if (at_end()) break;
                char e = peek();
                switch (e) {
                    case 'n': t.text += '\n'; break;
                    case 't': t.text += '\t'; break;
                    case '"': t.text += '"'; break;
                    case '\\': t.text += '\\'; break;
                    default:
                        diags.push_back({{line_, col_}, std::string("syntax error: unknown escape '\\") + e + "'"});
                        t.text += e;
                }
                advance();
                continue;
            }
            t.text += c;
            advance();
        }
        if (at_end() || peek() != '"') {
            diags.push_back({t.pos, "syntax error: unterminated string"});
            return false;
        }
        advance();
        return true;
    }
    bool lex_number(Token& t, std::vector<Diagnostic>& diags) {
        t.kind = Tok::number;
        if (peek() == '-' || peek() == '+') {
            t.text += peek();
            advance();
        }
        bool digits = false;
        while (!at_end()) {
            char c = peek();
            if (std::isdigit(static_cast<unsigned char>(c))) {
                digits = true;
            } else if (c == '.') {
            } else if ((c == 'e' || c == 'E') && digits) {
                t.text += c;
                advance();
                if (peek() == '-' || peek() == '+') {
                    t.text += peek();
                    advance();
                }
                continue;
            } else {
                break;
            }
            t.text += c;
            advance();
        }
        char* end = nullptr;
        std::strtod(t.text.c_str(), &end);
        if (!digits || end != t.text.c_str() + t.text.size()) {
            diags.push_back({t.pos, "syntax error: malformed number '" + t.text + "'"});
            return false;
        }
        return true;
    }

    std::string_view src_;
    std::size_t i_ = 0;
    int line_ = 1;
    int col_ = 1;
};

bool is_integer_text(const std::string& s) {
    std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
    if (i >= s.size()) return false;
    return std::all_of(s.begin() + static_cast<std::ptrdiff_t>(i), s.end(),
                       [](unsigned char c) { return std::isdigit(c); });
}

std::string basename_of(const std::string& path) {
    auto slash = path.find_last_of('/');
    return slash == std::string::npos ? path : path.substr(slash + 1);
}

const std::set<std::string> kTopKeywords = {"plan", "parameter", "task", "expected_job_hours", "payload_mb"};
const std::set<std::string> kStepKeywords = {"stage_in", "substitute", "execute", "stage_out", "output", "endtask"};

struct ParseError {};

class Parser {
public:
    Parser(std::vector<Token> toks, std::vector<Diagnostic>& diags) : toks_(std::move(toks)), diags_(diags) {}

    Plan run() {
        Plan plan;
        bool saw_task = false;
        bool saw_name = false;
        bool task_started = false;  // a task block that ended in a syntax error
        while (cur().kind != Tok::end) {
            try {
                const Token& t = cur();
                if (t.kind != Tok::ident || !kTopKeywords.count(t.lower)) {
                    error(t.pos, "syntax error: expected 'parameter', 'task' or 'plan', found " + describe(t));
                }
                if (t.lower == "plan") {
                    SourcePos p = t.pos;
                    next();
                    std::string name = expect_ident("plan name");
                    expect(Tok::semicolon, "';'");
                    if (saw_name) diags_.push_back({p, "duplicate plan name declaration"});
                    plan.name = name;
                    saw_name = true;
                } else if (t.lower == "expected_job_hours" || t.lower == "payload_mb") {
                    Token kw = t;
                    next();
                    Token num = cur();
                    double v = expect_number("a number");
                    expect(Tok::semicolon, "';'");
                    if (!std::isfinite(v) || (kw.lower == "expected_job_hours" ? v <= 0 : v < 0)) {
                        diags_.push_back({num.pos, kw.lower + " must be " +
                                                       (kw.lower == "expected_job_hours" ? "positive" : "non-negative")});
                    } else if (kw.lower == "expected_job_hours") {
                        plan.expected_job_hours = v;
                    } else {
                        plan.payload_mb = v;
                    }
                } else if (t.lower == "parameter") {
                    parse_parameter(plan);
                } else {
                    SourcePos p = t.pos;
                    if (saw_task) diags_.push_back({p, "duplicate task: only one task block is allowed"});
                    task_started = true;
                    plan.task = parse_task();
                    saw_task = true;
                    task_pos_ = p;
                }
            } catch (const ParseError&) {
                recover_top();
            }
        }
        end_pos_ = cur().pos;
        if (!saw_task && !task_started) diags_.push_back({end_pos_, "missing task: expected 'task main ... endtask'"});
        validate(plan, saw_task);
        return plan;
    }

private:
    const Token& cur() const { return toks_[pos_]; }
    void next() {
        if (cur().kind != Tok::end) ++pos_;
    }
    [[noreturn]] void error(SourcePos p, std::string msg) {
        diags_.push_back({p, std::move(msg)});
        throw ParseError{};
    }
    static std::string describe(const Token& t) {
        switch (t.kind) {
            case Tok::ident: return "'" + t.text + "'";
            case Tok::number: return "number " + t.text;
            case Tok::string: return "string \"" + t.text + "\"";
            case Tok::semicolon: return "';'";
            case Tok::comma: return "','";
            case Tok::end: return "end of input";
        }
        return "token";
    }
    void expect(Tok kind, const char* what) {
        if (cur().kind != kind) error(cur().pos, std::string("syntax error: expected ") + what + ", found " + describe(cur()));
        next();
    }
    void expect_keyword(const char* kw) {
        if (cur().kind != Tok::ident || cur().lower != kw) {
            error(cur().pos, std::string("syntax error: expected '") + kw + "', found " + describe(cur()));
        }
        next();
    }
    std::string expect_ident(const char* what) {
        if (cur().kind != Tok::ident) error(cur().pos, std::string("syntax error: expected ") + what + ", found " + describe(cur()));
        std::string s = cur().text;
        next();
        return s;
    }
    std::string expect_string(const char* what) {
        if (cur().kind != Tok::string) error(cur().pos, std::string("syntax error: expected ") + what + ", found " + describe(cur()));
        std::string s = cur().text;
        next();
        return s;
    }
    double expect_number(const char* what) {
        if (cur().kind != Tok::number) error(cur().pos, std::string("syntax error: expected ") + what + ", found " + describe(cur()));
        double v = std::strtod(cur().text.c_str(), nullptr);
        next();
        return v;
    }
    bool accept(Tok kind) {
        if (cur().kind == kind) {
            next();
            return true;
        }
        return false;
    }
    bool at_keyword(const char* kw) const { return cur().kind == Tok::ident && cur().lower == kw; }

    void recover_top() {
        while (cur().kind != Tok::end) {
            if (cur().kind == Tok::semicolon) {
                next();
                return;
            }
            if (cur().kind == Tok::ident && kTopKeywords.count(cur().lower)) return;
            next();
        }
    }

    void parse_parameter(Plan& plan) {
        SourcePos decl_pos = cur().pos;
        next();
        Token name_tok = cur();
        ParameterDecl decl;
        decl.name = expect_ident("parameter name");
        if (kTopKeywords.count(name_tok.lower) || kStepKeywords.count(name_tok.lower)) {
            diags_.push_back({name_tok.pos, "invalid parameter name: '" + decl.name + "' is a keyword"});
        }
        if (at_keyword("label")) {
            next();
            decl.label = expect_string("label text");
        }
        SourcePos domain_pos = cur().pos;
        if (at_keyword("integer") || at_keyword("real")) {
            bool integer = cur().lower == "integer";
            next();
            expect_keyword("range");
            expect_keyword("from");
            Token from = cur();
            expect_number("range start");
            expect_keyword("to");
            Token to = cur();
            expect_number("range end");
            expect_keyword("step");
            Token step = cur();
            expect_number("range step");
            if (integer) {
                for (const Token* t : {&from, &to, &step}) {
                    if (!is_integer_text(t->text)) error(t->pos, "invalid range: integer range needs integer bounds, found " + t->text);
                }
                IntegerRange r{std::stoll(from.text), std::stoll(to.text), std::stoll(step.text)};
                if (r.step <= 0) diags_.push_back({domain_pos, "invalid range: step must be positive"});
                else if (r.from > r.to) diags_.push_back({domain_pos, "invalid range: from must not exceed to"});
                decl.domain = r;
            } else {
                RealRange r{std::strtod(from.text.c_str(), nullptr), std::strtod(to.text.c_str(), nullptr),
                            std::strtod(step.text.c_str(), nullptr)};
                if (!std::isfinite(r.from) || !std::isfinite(r.to) || !std::isfinite(r.step)) {
                    diags_.push_back({domain_pos, "invalid range: bounds must be finite"});
                } else if (r.step <= 0) {
                    diags_.push_back({domain_pos, "invalid range: step must be positive"});
                } else if (r.from > r.to) {
                    diags_.push_back({domain_pos, "invalid range: from must not exceed to"});
                } else if ((r.to - r.from) / r.step > 1e12) {
                    diags_.push_back({domain_pos, "invalid range: domain is too large"});
                } else if (std::floor((r.to - r.from) / r.step + 1e-9) < 1e7) {
                    auto vals = domain_values(r);
                    std::unordered_set<std::string> seen(vals.begin(), vals.end());
                    if (seen.size() != vals.size()) {
                        diags_.push_back({domain_pos, "invalid range: values collide at 6 significant digits"});
                    }
                }
                decl.domain = r;
            }
        } else if (at_keyword("list")) {
            next();
            ValueList list;
            std::unordered_set<std::string> seen;
            while (cur().kind == Tok::string || cur().kind == Tok::number) {
                Literal lit{cur().kind == Tok::string ? Literal::Kind::text : Literal::Kind::number, cur().text};
                if (!seen.insert(lit.text).second) diags_.push_back({cur().pos, "duplicate value '" + lit.text + "' in list"});
                list.values.push_back(std::move(lit));
                next();
                if (!accept(Tok::comma)) break;
            }
            if (list.values.empty()) diags_.push_back({domain_pos, "empty domain: list has no values"});
            decl.domain = std::move(list);
        } else {
            error(cur().pos, "syntax error: expected 'integer', 'real' or 'list', found " + describe(cur()));
        }
        expect(Tok::semicolon, "';'");
        for (const auto& p : plan.parameters) {
            if (p.name == decl.name) {
                diags_.push_back({name_tok.pos, "duplicate parameter '" + decl.name + "'"});
                return;
            }
        }
        (void)decl_pos;
        plan.parameters.push_back(std::move(decl));
    }

    struct StringRef {
        std::string text;
        SourcePos pos;
    };

    StringRef take_string(const char* what) {
        SourcePos p = cur().pos;
        return {expect_string(what), p};
    }

    TaskScript parse_task() {
        next();
        Token name = cur();
        std::string task_name = expect_ident("task name");
        if (name.lower != "main") diags_.push_back({name.pos, "only task 'main' is supported, found '" + task_name + "'"});
        TaskScript task;
        for (;;) {
            if (cur().kind == Tok::end) error(cur().pos, "syntax error: missing 'endtask'");
            if (cur().kind == Tok::ident && cur().lower == "endtask") {
                next();
                accept(Tok::semicolon);
                return task;
            }
            try {
                parse_step(task);
            } catch (const ParseError&) {
                while (cur().kind != Tok::end && !(cur().kind == Tok::ident && kStepKeywords.count(cur().lower))) {
                    if (cur().kind == Tok::semicolon) {
                        next();
                        break;
                    }
                    next();
                }
            }
        }
    }

    void parse_step(TaskScript& task) {
        const Token& t = cur();
        if (t.kind != Tok::ident || !kStepKeywords.count(t.lower)) {
            error(t.pos, "syntax error: expected a task step (stage_in, substitute, execute, stage_out, output), found " +
                             describe(t));
        }
        std::string verb = t.lower;
        next();
        if (verb == "stage_in") {
            auto src = take_string("source path");
            std::string dest = cur().kind == Tok::string ? take_string("destination").text : basename_of(src.text);
            strings_.push_back({src.text, src.pos});
            strings_.push_back({dest, src.pos});
            task.steps.emplace_back(StageIn{src.text, dest});
        } else if (verb == "substitute") {
            auto tmpl = take_string("template name");
            auto out = take_string("output name");
            strings_.push_back(tmpl);
            strings_.push_back(out);
            task.steps.emplace_back(Substitute{tmpl.text, out.text});
        } else if (verb == "execute") {
            auto cmd = take_string("command");
            strings_.push_back(cmd);
            Execute ex{cmd.text, {}};
            if (at_keyword("produces")) {
                next();
                do {
                    auto p = take_string("produced file name");
                    strings_.push_back(p);
                    ex.produces.push_back(p.text);
                } while (accept(Tok::comma));
            }
            task.steps.emplace_back(std::move(ex));
        } else if (verb == "stage_out") {
            auto src = take_string("source name");
            std::string dest = src.text;
            if (cur().kind == Tok::string) dest = take_string("destination path").text;
            strings_.push_back(src);
            strings_.push_back({dest, src.pos});
            stage_out_refs_.push_back(src);
            task.steps.emplace_back(StageOut{src.text, dest});
        } else if (verb == "output") {
            do {
                auto o = take_string("output name");
                strings_.push_back(o);
                task.outputs.push_back(o.text);
            } while (accept(Tok::comma));
        } else {
            error(t.pos, "syntax error: unexpected 'endtask'");
        }
        accept(Tok::semicolon);
    }

    void validate(const Plan& plan, bool saw_task) {
        if (plan.parameters.empty()) diags_.push_back({end_pos_, "plan declares no parameters"});
        std::unordered_set<std::string> declared;
        for (const auto& p : plan.parameters) declared.insert(p.name);
        for (const auto& s : strings_) check_placeholders(s, declared);
        if (saw_task) {
            bool has_execute = std::any_of(plan.task.steps.begin(), plan.task.steps.end(),
                                           [](const Step& s) { return std::holds_alternative<Execute>(s); });
            if (!has_execute) diags_.push_back({task_pos_, "task has no execute step"});
            std::unordered_set<std::string> produced(plan.task.outputs.begin(), plan.task.outputs.end());
            for (const auto& step : plan.task.steps) {
                if (auto* in = std::get_if<StageIn>(&step)) produced.insert(in->dest);
                if (auto* sub = std::get_if<Substitute>(&step)) produced.insert(sub->output);
                if (auto* ex = std::get_if<Execute>(&step)) produced.insert(ex->produces.begin(), ex->produces.end());
            }
            for (const auto& ref : stage_out_refs_) {
                if (!produced.count(ref.text)) {
                    diags_.push_back({ref.pos, "stage_out of '" + ref.text +
                                                   "' which no step produces (declare it with 'output' or 'produces')"});
                }
            }
        }
    }

    void check_placeholders(const StringRef& s, const std::unordered_set<std::string>& declared) {
        std::size_t i = 0;
        while ((i = s.text.find("${", i)) != std::string::npos) {
            auto close = s.text.find('}', i + 2);
            SourcePos p{s.pos.line, s.pos.column + 1 + static_cast<int>(i)};
            if (close == std::string::npos) {
                diags_.push_back({p, "unterminated placeholder '${'"});
                return;
            }
            std::string name = s.text.substr(i + 2, close - i - 2);
            if (!declared.count(name)) diags_.push_back({p, "unknown placeholder '${" + name + "}'"});
            i = close + 1;
        }
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
    std::vector<Diagnostic>& diags_;
    std::vector<StringRef> strings_;
    std::vector<StringRef> stage_out_refs_;
    SourcePos end_pos_;
    SourcePos task_pos_;
};

}  // namespace

std::string to_string(const Diagnostic& d) {
    return std::to_string(d.pos.line) + ":" + std::to_string(d.pos.column) + ": " + d.message;
}

ParseResult parse_plan(std::string_view text) {
    ParseResult result;
    Lexer lexer(text);
    auto tokens = lexer.run(result.diagnostics);
    Parser parser(std::move(tokens), result.diagnostics);
    Plan plan = parser.run();
    if (result.diagnostics.empty()) {
        result.plan = std::move(plan);
    } else {
        std::stable_sort(result.diagnostics.begin(), result.diagnostics.end(), [](const Diagnostic& a, const Diagnostic& b) {
            return a.pos.line != b.pos.line ? a.pos.line < b.pos.line : a.pos.column < b.pos.column;
        });
    }
    return result;
}

}  // namespace gridfarm::plan
