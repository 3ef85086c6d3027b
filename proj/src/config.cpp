#include "laneatt/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "laneatt/errors.hpp"

namespace laneatt {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

KeyValueMap parse_key_value_text(const std::string& text, const std::string& origin) {
    KeyValueMap map;
    std::istringstream stream(text);
    std::string line;
    int line_no = 0;
    while (std::getline(stream, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no), "expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(line_no), "empty key");
        }
        if (map.count(key)) {
            throw ConfigError(origin + ":" + std::to_string(line_no), "duplicate key '" + key + "'");
        }
        map.emplace(std::move(key), std::move(value));
    }
    return map;
}

KeyValueMap parse_key_value_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path, "cannot open config file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_key_value_text(buf.str(), path);
}

int parse_int_field(const std::string& field, const std::string& text) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(field, "expected an integer, got '" + text + "'");
    }
}

double parse_double_field(const std::string& field, const std::string& text) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(field, "expected a number, got '" + text + "'");
    }
}

bool parse_bool_field(const std::string& field, const std::string& text) {
    std::string lower = text;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == "true" || lower == "1" || lower == "yes" || lower == "on") return true;
    if (lower == "false" || lower == "0" || lower == "no" || lower == "off") return false;
    throw ConfigError(field, "expected a boolean, got '" + text + "'");
}

std::vector<double> parse_double_list_field(const std::string& field, const std::string& text) {
    std::vector<double> out;
    std::string item;
    std::istringstream stream(text);
    while (std::getline(stream, item, ',')) {
        const std::string trimmed = trim(item);
        if (trimmed.empty()) throw ConfigError(field, "empty element in list '" + text + "'");
        out.push_back(parse_double_field(field, trimmed));
    }
    if (out.empty()) throw ConfigError(field, "expected a comma-separated list, got '" + text + "'");
    return out;
}

namespace {

template <typename T, typename Fn>
T lookup(const KeyValueMap& map, const std::string& key, T fallback, Fn parse) {
    const auto it = map.find(key);
    if (it == map.end()) return fallback;
    return parse(key, it->second);
}

}  // namespace

int config_int(const KeyValueMap& map, const std::string& key, int fallback) {
    return lookup(map, key, fallback, parse_int_field);
}

double config_double(const KeyValueMap& map, const std::string& key, double fallback) {
    return lookup(map, key, fallback, parse_double_field);
}

bool config_bool(const KeyValueMap& map, const std::string& key, bool fallback) {
    return lookup(map, key, fallback, parse_bool_field);
}

std::string config_string(const KeyValueMap& map, const std::string& key,
                          const std::string& fallback) {
    const auto it = map.find(key);
    return it == map.end() ? fallback : it->second;
}

std::vector<double> config_double_list(const KeyValueMap& map, const std::string& key,
                                       const std::vector<double>& fallback) {
    return lookup(map, key, fallback, parse_double_list_field);
}

void reject_unknown_keys(const KeyValueMap& map, const std::vector<std::string>& allowed,
                         const std::string& origin) {
    for (const auto& [key, value] : map) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError(origin, "unknown key '" + key + "'");
        }
    }
}

}  // namespace laneatt
