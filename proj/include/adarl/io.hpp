#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace adarl::io {

std::string read_file(const std::string& path);
/// Writes atomically (temp file + rename) and creates parent directories.
void write_file(const std::string& path, const std::string& contents);
bool exists(const std::string& path);

nlohmann::json read_json(const std::string& path);
void write_json(const std::string& path, const nlohmann::json& j);

std::string sha256_hex(const std::string& data);

/// Formats a double for CSV output with round-trip precision.
std::string format_double(double x);

std::string csv_line(const std::vector<std::string>& fields);

}  // namespace adarl::io
