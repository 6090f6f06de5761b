#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace contrafix {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool starts_with(std::string_view s, std::string_view prefix);

std::vector<std::string> split_lines(std::string_view text);
std::string join_lines(const std::vector<std::string>& lines);

/// Hex SHA-256 digest of arbitrary bytes.
std::string sha256_hex(std::string_view data);

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, std::string_view content);
/// Whole-file replace via temp file + rename.
void write_file_atomic(const std::filesystem::path& p, std::string_view content);

/// NUL byte in the first 8 KiB marks a file as binary.
bool looks_binary(std::string_view content);

/**
 * Calendar date (no timezone). Manifests carry ISO-8601 dates and the
 * skill-base temporal filter compares against midnight of this date.
 */
struct Date {
  int year = 0;
  int month = 0;
  int day = 0;

  auto operator<=>(const Date&) const = default;

  bool valid() const;
  std::string to_string() const;          // YYYY-MM-DD
  std::int64_t epoch_seconds() const;     // midnight UTC

  static std::optional<Date> parse(std::string_view iso);
};

}  // namespace contrafix
