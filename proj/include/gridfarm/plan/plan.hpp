#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace gridfarm::plan {

struct IntegerRange {
    std::int64_t from = 0;
    std::int64_t to = 0;
    std::int64_t step = 1;
    friend bool operator==(const IntegerRange&, const IntegerRange&) = default;
};

struct RealRange {
    double from = 0.0;
    double to = 0.0;
    double step = 1.0;
    friend bool operator==(const RealRange&, const RealRange&) = default;
};

struct Literal {
    enum class Kind { text, number };
    Kind kind = Kind::text;
    std::string text;
    friend bool operator==(const Literal&, const Literal&) = default;
};

struct ValueList {
    std::vector<Literal> values;
    friend bool operator==(const ValueList&, const ValueList&) = default;
};

using Domain = std::variant<IntegerRange, RealRange, ValueList>;

struct ParameterDecl {
    std::string name;
    std::optional<std::string> label;
    Domain domain;
    friend bool operator==(const ParameterDecl&, const ParameterDecl&) = default;
};

struct StageIn {
    std::string source;
    std::string dest;
    friend bool operator==(const StageIn&, const StageIn&) = default;
};

struct Substitute {
    std::string template_name;
    std::string output;
    friend bool operator==(const Substitute&, const Substitute&) = default;
};

struct Execute {
    std::string command;
    std::vector<std::string> produces;
    friend bool operator==(const Execute&, const Execute&) = default;
};

struct StageOut {
    std::string source;
    std::string dest;
    friend bool operator==(const StageOut&, const StageOut&) = default;
};

using Step = std::variant<StageIn, Substitute, Execute, StageOut>;

struct TaskScript {
    std::vector<Step> steps;
    /// Files the job must return even without an explicit stage_out.
    std::vector<std::string> outputs;
    friend bool operator==(const TaskScript&, const TaskScript&) = default;
};

struct Plan {
    std::string name = "plan";
    std::vector<ParameterDecl> parameters;
    TaskScript task;
    /// CPU hours one job needs on the reference machine.
    double expected_job_hours = 1.0;
    /// Data staged per job, used for simulated transfer time.
    double payload_mb = 0.0;
    friend bool operator==(const Plan&, const Plan&) = default;
};

struct SourcePos {
    int line = 1;
    int column = 1;
    friend bool operator==(const SourcePos&, const SourcePos&) = default;
};

struct Diagnostic {
    SourcePos pos;
    std::string message;
};

std::string to_string(const Diagnostic& d);

struct ParseResult {
    std::optional<Plan> plan;
    std::vector<Diagnostic> diagnostics;
    bool ok() const { return plan.has_value(); }
};

/// Parses plan source. Exactly one of `plan` / `diagnostics` is populated.
ParseResult parse_plan(std::string_view text);

/// Canonical text form: one declaration per line, lowercase keywords.
std::string print_plan(const Plan& plan);

/// Number of values a parameter takes.
std::uint64_t domain_size(const Domain& domain);

/// Rendered values of a domain in enumeration order. Real values use
/// `real_digits` significant digits.
std::vector<std::string> domain_values(const Domain& domain, int real_digits = 6);

struct JobId {
    std::string experiment;
    std::uint64_t ordinal = 0;
    friend bool operator==(const JobId&, const JobId&) = default;
    friend auto operator<=>(const JobId&, const JobId&) = default;
};

using Binding = std::vector<std::pair<std::string, std::string>>;

struct JobSpec {
    JobId id;
    Binding binding;
    TaskScript task;
    friend bool operator==(const JobSpec&, const JobSpec&) = default;
};

struct ExpandOptions {
    std::uint64_t max_jobs = 1'000'000;
    int real_digits = 6;
};

class CrossProductTooLarge : public std::runtime_error {
public:
    CrossProductTooLarge(std::uint64_t count, std::uint64_t cap, bool overflowed);
    std::uint64_t count() const { return count_; }
    bool overflowed() const { return overflowed_; }

private:
    std::uint64_t count_;
    bool overflowed_;
};

/// Size of the cross-product, or throws CrossProductTooLarge.
std::uint64_t job_count(const Plan& plan, std::uint64_t max_jobs = ExpandOptions{}.max_jobs);

/// Full cross-product, last parameter varying fastest.
std::vector<JobSpec> expand_jobs(const Plan& plan, std::string_view experiment_id,
                                 const ExpandOptions& options = {});

/// Binding of a single ordinal without expanding the rest.
Binding binding_for(const Plan& plan, std::uint64_t ordinal, int real_digits = 6);

class UnresolvedPlaceholder : public std::runtime_error {
public:
    explicit UnresolvedPlaceholder(std::string name);
    const std::string& name() const { return name_; }

private:
    std::string name_;
};

/// Replaces every `${name}` in `text`. Throws UnresolvedPlaceholder.
std::string substitute_placeholders(std::string_view text, const Binding& binding);

/// Placeholder names referenced by `text`, in order of appearance.
std::vector<std::string> placeholders_in(std::string_view text);

TaskScript resolve_task(const TaskScript& task, const Binding& binding);

bool is_resolved(const TaskScript& task);

}  // namespace gridfarm::plan
