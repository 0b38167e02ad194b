#pragma once

// Helpers for the flat `key = value` / CSV-ish text formats used by config and scenario files.

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>

namespace ctxchan {

std::string_view trim(std::string_view s) noexcept;

/// Calls `fn(line, lineno)` for every line with its '#' comment stripped and whitespace trimmed,
/// skipping lines that end up empty. Line numbers are 1-based.
void for_each_content_line(std::string_view text,
                           const std::function<void(std::string_view, int)>& fn);

/// Splits "key = value" at the first '='; both halves trimmed.
std::pair<std::string_view, std::string_view> split_key_value(std::string_view line);

/// Throws std::runtime_error if the file cannot be read.
std::string read_text_file(const std::filesystem::path& path);

bool parse_bool(std::string_view s, bool& out) noexcept;

}  // namespace ctxchan
