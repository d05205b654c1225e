#pragma once

#include "botwars/dialogue.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace botwars {

// Thrown when a transcript line does not match the dialogue schema.
class SchemaError : public std::runtime_error {
public:
    SchemaError(std::string source, std::size_t line, const std::string& what);

    const std::string& source() const { return source_; }
    std::size_t line() const { return line_; }

private:
    std::string source_;
    std::size_t line_;
};

struct StorageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const Utterance& u);
nlohmann::json to_json(const Dialogue& d);

// Strict: every schema field must be present with the right type, and no others.
// Throws std::invalid_argument describing the first problem.
Dialogue dialogue_from_json(const nlohmann::json& j);

// One compact JSON object per line, no trailing spaces.
std::string to_jsonl_line(const Dialogue& d);

// Reads a JSONL file; blank lines are skipped. Throws SchemaError naming the
// 1-based line number on the first malformed line.
std::vector<Dialogue> read_transcripts(const std::filesystem::path& path);

// Thread-safe append-only writer for one JSONL file.
class JsonlSink {
public:
    explicit JsonlSink(std::filesystem::path path, bool truncate = false);

    void append(const std::string& line);
    const std::filesystem::path& path() const { return path_; }
    std::size_t lines_written() const;

private:
    std::filesystem::path path_;
    mutable std::mutex mu_;
    std::ofstream out_;
    std::size_t lines_ = 0;
};

} // namespace botwars
