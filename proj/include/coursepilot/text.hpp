#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// Small UTF-8 and whitespace helpers shared by ingest, chat and eval.
namespace coursepilot::text {

bool is_valid_utf8(std::string_view s) noexcept;

/// Number of code points; invalid bytes count as one each.
std::size_t code_point_count(std::string_view s) noexcept;

/// Prefix holding at most `max_code_points` code points, never splitting one.
std::string_view truncate_code_points(std::string_view s, std::size_t max_code_points) noexcept;

/// ceil(code points / 4); the engine's provider-agnostic token estimate.
std::size_t approx_tokens(std::string_view s) noexcept;

std::string_view trim(std::string_view s) noexcept;

std::string ascii_lower(std::string_view s);

/// Collapses every run of ASCII whitespace to one space and trims the ends.
std::string collapse_whitespace(std::string_view s);

std::vector<std::string> split_lines(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace coursepilot::text
