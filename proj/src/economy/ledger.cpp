#include "gridfarm/economy/ledger.hpp"

#include <limits>

#include <cstdio>
#include <sstream>

namespace gridfarm::economy {

void BudgetLedger::reserve(std::uint64_t job, Money amount) {
    release(job);
    holds_[job] = amount;
    reserved_ += amount;
}

void BudgetLedger::release(std::uint64_t job) {
    auto it = holds_.find(job);
    if (it == holds_.end()) return;
    reserved_ -= it->second;
    holds_.erase(it);
}

Money BudgetLedger::reservation(std::uint64_t job) const {
    auto it = holds_.find(job);
    return it == holds_.end() ? Money{} : it->second;
}

bool BudgetLedger::charged(std::uint64_t job) const {
    auto it = charged_.lower_bound({job, std::numeric_limits<int>::min()});
    return it != charged_.end() && it->first == job;
}

bool BudgetLedger::can_charge(std::uint64_t job, Money amount, int attempt) const {
    if (charged(job, attempt)) return false;
    return !enforce_ || committed_ + amount <= budget_;
}

const LedgerEntry& BudgetLedger::charge(std::uint64_t job, const std::string& resource, double cpu_hours, Money rate,
                                        std::uint64_t seq, double t_sim, int attempt) {
    return charge_amount(job, resource, cpu_hours, rate, cost_of(cpu_hours, rate), seq, t_sim, attempt);
}

const LedgerEntry& BudgetLedger::charge_amount(std::uint64_t job, const std::string& resource, double cpu_hours,
                                               Money rate, Money amount, std::uint64_t seq, double t_sim, int attempt) {
    if (cpu_hours < 0) throw LedgerError(LedgerError::Kind::negative_hours, "negative cpu hours");
    if (charged(job, attempt)) {
        throw LedgerError(LedgerError::Kind::double_charge, "job " + std::to_string(job) + " already charged");
    }
    if (enforce_ && committed_ + amount > budget_) {
        throw LedgerError(LedgerError::Kind::over_budget, "charge of " + amount.to_string() + " for job " +
                                                              std::to_string(job) + " exceeds budget");
    }
    release(job);
    committed_ += amount;
    entries_.push_back({seq, t_sim, job, attempt, resource, cpu_hours, rate, amount});
    charged_.insert({job, attempt});
    return entries_.back();
}

Money BudgetLedger::recompute_committed() const {
    Money sum;
    for (const auto& e : entries_) sum += e.amount;
    return sum;
}

std::string BudgetLedger::to_csv() const {
    std::ostringstream out;
    out << "seq,t_sim,job_id,resource_id,cpu_hours,rate,amount\n";
    char buf[64];
    for (const auto& e : entries_) {
        out << e.seq << ',';
        std::snprintf(buf, sizeof buf, "%.3f", e.t_sim);
        out << buf << ',' << e.job << ',' << e.resource << ',';
        std::snprintf(buf, sizeof buf, "%.6f", e.cpu_hours);
        out << buf << ',' << e.rate.to_string() << ',' << e.amount.to_string() << '\n';
    }
    return out.str();
}

}  // namespace gridfarm::economy
