#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace botwars {

// Fixed four-decimal rendering with trailing zeros stripped ("2.5", "2.6667", "3").
std::string format_number(double v);
std::string format_number(std::optional<double> v);

std::string csv_escape(std::string_view field);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string str() const;
    void write(const std::filesystem::path& path) const;
};

// Minimal RFC 4180 reader (quoted fields, doubled quotes). Throws std::runtime_error.
CsvTable read_csv(const std::filesystem::path& path);

} // namespace botwars
