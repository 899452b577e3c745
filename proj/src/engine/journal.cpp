#include "gridfarm/engine/journal.hpp"

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include <unistd.h>
#include <zlib.h>

namespace gridfarm::engine {
namespace {

std::uint32_t crc_of(const std::string& text) {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size())));
}

json body_of(const JournalRecord& r) {
    return json{{"seq", r.seq}, {"t_sim", r.t_sim}, {"kind", r.kind}, {"payload", r.payload}};
}

}  // namespace

std::string encode_record(const JournalRecord& record) {
    json body = body_of(record);
    std::uint32_t crc = crc_of(body.dump());
    body["crc32"] = crc;
    return body.dump();
}

std::optional<JournalRecord> decode_record(std::string_view line, std::string* error) {
    auto fail = [&](const std::string& why) -> std::optional<JournalRecord> {
        if (error) *error = why;
        return std::nullopt;
    };
    json j = json::parse(line.begin(), line.end(), nullptr, false);
    if (j.is_discarded() || !j.is_object()) return fail("not a JSON object");
    if (!j.contains("crc32") || !j.contains("seq") || !j.contains("t_sim") || !j.contains("kind") ||
        !j.contains("payload")) {
        return fail("missing field");
    }
    try {
        JournalRecord r;
        r.seq = j.at("seq").get<std::uint64_t>();
        r.t_sim = j.at("t_sim").get<double>();
        r.kind = j.at("kind").get<std::string>();
        r.payload = j.at("payload");
        auto crc = j.at("crc32").get<std::uint32_t>();
        if (crc_of(body_of(r).dump()) != crc) return fail("checksum mismatch");
        return r;
    } catch (const json::exception& e) {
        return fail(e.what());
    }
}

std::string MemoryJournal::text() const {
    std::string out;
    for (const auto& l : lines_) out += l + "\n";
    return out;
}

FileJournal::FileJournal(std::filesystem::path path, bool sync) : path_(std::move(path)), sync_(sync) {
    if (path_.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path_.parent_path(), ec);
    }
    file_ = std::fopen(path_.c_str(), "ab");
    if (!file_) throw JournalError("cannot open journal " + path_.string() + ": " + std::strerror(errno));
}

FileJournal::~FileJournal() {
    if (file_) std::fclose(file_);
}

void FileJournal::append(const std::string& line) {
    if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fputc('\n', file_) == EOF ||
        std::fflush(file_) != 0) {
        throw JournalError("journal write failed: " + path_.string());
    }
    if (sync_ && ::fsync(fileno(file_)) != 0) throw JournalError("journal fsync failed: " + path_.string());
}

JournalContents read_journal(std::istream& in) {
    std::stringstream buf;
    buf << in.rdbuf();
    return read_journal_text(buf.str());
}

JournalContents read_journal_text(std::string_view text) {
    JournalContents out;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        ++line_no;
        auto nl = text.find('\n', pos);
        bool complete = nl != std::string_view::npos;
        std::string_view line = text.substr(pos, complete ? nl - pos : std::string_view::npos);
        std::size_t next = complete ? nl + 1 : text.size();
        bool last = next >= text.size();
        std::string why;
        auto rec = complete ? decode_record(line, &why) : std::nullopt;
        if (!complete) why = "incomplete final record";
        std::uint64_t expected = out.records.empty() ? 1 : out.records.back().seq + 1;
        if (rec && rec->seq != expected) {
            why = "sequence gap: expected " + std::to_string(expected) + ", found " + std::to_string(rec->seq);
            rec.reset();
        }
        if (!rec) {
            if (last) {
                out.torn_tail = true;
            } else {
                out.corrupt_line = line_no;
            }
            out.error = "line " + std::to_string(line_no) + ": " + why;
            break;
        }
        out.lines.emplace_back(line);
        out.records.push_back(std::move(*rec));
        pos = next;
    }
    return out;
}

JournalContents read_journal_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw JournalError("cannot read journal " + path.string());
    return read_journal(in);
}

void rewrite_journal(const std::filesystem::path& path, const std::vector<std::string>& lines) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw JournalError("cannot write " + tmp.string());
        for (const auto& l : lines) out << l << '\n';
        if (!out) throw JournalError("cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::filesystem::path journal_path(const std::filesystem::path& dir, const std::string& experiment_id) {
    return dir / (experiment_id + ".journal");
}

}  // namespace gridfarm::engine
