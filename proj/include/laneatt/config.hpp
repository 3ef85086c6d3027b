#pragma once

#include <map>
#include <string>
#include <vector>

namespace laneatt {

/// Flat key=value config text: one `key = value` pair per line, `#` starts a
/// comment, blank lines ignored. Duplicate keys and keyless lines raise
/// ConfigError naming the offending line.
using KeyValueMap = std::map<std::string, std::string>;

KeyValueMap parse_key_value_text(const std::string& text, const std::string& origin = "<string>");
KeyValueMap parse_key_value_file(const std::string& path);

/// Typed accessors; all throw ConfigError with the field name on bad input.
int config_int(const KeyValueMap& map, const std::string& key, int fallback);
double config_double(const KeyValueMap& map, const std::string& key, double fallback);
bool config_bool(const KeyValueMap& map, const std::string& key, bool fallback);
std::string config_string(const KeyValueMap& map, const std::string& key,
                          const std::string& fallback);
std::vector<double> config_double_list(const KeyValueMap& map, const std::string& key,
                                       const std::vector<double>& fallback);

/// Parse helpers shared with flag handling.
int parse_int_field(const std::string& field, const std::string& text);
double parse_double_field(const std::string& field, const std::string& text);
bool parse_bool_field(const std::string& field, const std::string& text);
std::vector<double> parse_double_list_field(const std::string& field, const std::string& text);

/// Throws ConfigError if `map` contains a key outside `allowed`.
void reject_unknown_keys(const KeyValueMap& map, const std::vector<std::string>& allowed,
                         const std::string& origin);

}  // namespace laneatt
