#pragma once

// Flat UTF-8 key=value configuration text. Lines starting with '#' and blank
// lines are ignored; later assignments override earlier ones.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace rja {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);

/// Sorted "key=value\n" lines; parse_key_values inverts it.
std::string format_key_values(const KeyValues& kv);

KeyValues load_key_values(const std::filesystem::path& path);

/// Typed lookups; a missing key yields `fallback`, a malformed value throws ConfigError.
bool get_bool(const KeyValues& kv, const std::string& key, bool fallback);
long long get_int(const KeyValues& kv, const std::string& key, long long fallback);
std::uint64_t get_u64(const KeyValues& kv, const std::string& key, std::uint64_t fallback);
double get_double(const KeyValues& kv, const std::string& key, double fallback);
std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace rja
