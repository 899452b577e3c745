#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <istream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace gridfarm::engine {

using json = nlohmann::json;

struct JournalRecord {
    std::uint64_t seq = 0;
    double t_sim = 0.0;  // seconds
    std::string kind;
    json payload = json::object();
};

/// `{"crc32":...,"kind":...,"payload":...,"seq":...,"t_sim":...}`; the crc
/// covers the same object serialized without its crc32 member.
std::string encode_record(const JournalRecord& record);

/// nullopt (and `error` set) for unparseable lines or checksum mismatch.
std::optional<JournalRecord> decode_record(std::string_view line, std::string* error = nullptr);

class JournalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Where committed records go. append() returns only once the line is
/// handed to the OS (and synced, if asked).
class JournalSink {
public:
    virtual ~JournalSink() = default;
    virtual void append(const std::string& line) = 0;
};

class MemoryJournal : public JournalSink {
public:
    void append(const std::string& line) override { lines_.push_back(line); }
    const std::vector<std::string>& lines() const { return lines_; }
    std::string text() const;

private:
    std::vector<std::string> lines_;
};

class FileJournal : public JournalSink {
public:
    /// Opens for append, creating the file. Throws JournalError.
    explicit FileJournal(std::filesystem::path path, bool sync = false);
    ~FileJournal() override;
    FileJournal(const FileJournal&) = delete;
    FileJournal& operator=(const FileJournal&) = delete;
    void append(const std::string& line) override;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    bool sync_;
    std::FILE* file_ = nullptr;
};

struct JournalContents {
    std::vector<JournalRecord> records;
    std::vector<std::string> lines;  // raw text of each valid record
    bool torn_tail = false;           // final line incomplete or unreadable
    /// 1-based line where a bad record was followed by more data; replay
    /// stops before it.
    std::optional<std::size_t> corrupt_line;
    std::string error;

    bool clean() const { return !torn_tail && !corrupt_line; }
};

JournalContents read_journal(std::istream& in);
JournalContents read_journal_text(std::string_view text);
JournalContents read_journal_file(const std::filesystem::path& path);

/// Replaces the file with just the valid records (write to a sibling, then
/// rename).
void rewrite_journal(const std::filesystem::path& path, const std::vector<std::string>& lines);

std::filesystem::path journal_path(const std::filesystem::path& dir, const std::string& experiment_id);

}  // namespace gridfarm::engine
