#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridfarm/core/money.hpp"

namespace gridfarm::economy {

struct LedgerEntry {
    std::uint64_t seq = 0;  // journal record that carried the charge
    double t_sim = 0.0;     // seconds
    std::uint64_t job = 0;
    int attempt = 0;
    std::string resource;
    double cpu_hours = 0.0;
    Money rate;
    Money amount;
    friend bool operator==(const LedgerEntry&, const LedgerEntry&) = default;
};

class LedgerError : public std::runtime_error {
public:
    enum class Kind { double_charge, over_budget, negative_hours };
    LedgerError(Kind kind, std::string what) : std::runtime_error(std::move(what)), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

/// Append-only record of what the experiment has spent, plus reservations
/// held for jobs in flight.
class BudgetLedger {
public:
    explicit BudgetLedger(Money budget = {}, bool enforce = true) : budget_(budget), enforce_(enforce) {}

    Money budget() const { return budget_; }
    void set_budget(Money budget) { budget_ = budget; }
    bool enforcing() const { return enforce_; }

    Money committed() const { return committed_; }
    Money reserved() const { return reserved_; }
    /// budget - committed - reserved; negative once steered below spend.
    Money available() const { return budget_ - committed_ - reserved_; }

    /// Holds `amount` for a job about to run. Replaces any earlier hold.
    void reserve(std::uint64_t job, Money amount);
    void release(std::uint64_t job);
    Money reservation(std::uint64_t job) const;

    /// Would charging `amount` for this attempt be accepted right now?
    bool can_charge(std::uint64_t job, Money amount, int attempt = 0) const;

    /// Appends an entry of cpu_hours x rate, releasing the job's hold.
    /// Throws LedgerError on a second charge for the same attempt or, under
    /// enforcement, when committed would pass the budget.
    const LedgerEntry& charge(std::uint64_t job, const std::string& resource, double cpu_hours, Money rate,
                              std::uint64_t seq, double t_sim, int attempt = 0);
    /// Records an already-computed amount (integrated charging).
    const LedgerEntry& charge_amount(std::uint64_t job, const std::string& resource, double cpu_hours, Money rate,
                                     Money amount, std::uint64_t seq, double t_sim, int attempt = 0);

    /// Any attempt of `job` charged.
    bool charged(std::uint64_t job) const;
    bool charged(std::uint64_t job, int attempt) const { return charged_.count({job, attempt}) != 0; }
    const std::vector<LedgerEntry>& entries() const { return entries_; }

    /// Committed recomputed from the entries.
    Money recompute_committed() const;

    /// CSV with header seq,t_sim,job_id,resource_id,cpu_hours,rate,amount.
    std::string to_csv() const;

private:
    Money budget_;
    bool enforce_;
    Money committed_;
    Money reserved_;
    std::map<std::uint64_t, Money> holds_;
    std::set<std::pair<std::uint64_t, int>> charged_;
    std::vector<LedgerEntry> entries_;
};

}  // namespace gridfarm::economy
