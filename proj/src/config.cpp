#include "driftbench/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace driftbench {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
    return true;
}

[[noreturn]] void fail(const std::string& origin, int lineno, const std::string& what) {
    throw ConfigError(origin + ": line " + std::to_string(lineno) + ": " + what);
}

ConfigTree::Value parse_scalar(const std::string& raw, const std::string& origin, int lineno) {
    ConfigTree::Value v;
    if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
        v.kind = ConfigTree::Value::Kind::String;
        std::string out;
        for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
            char c = raw[i];
            if (c == '\\' && i + 2 < raw.size()) {
                char n = raw[++i];
                if (n == 'n') out += '\n';
                else if (n == 't') out += '\t';
                else out += n;
            } else {
                out += c;
            }
        }
        v.str = out;
        return v;
    }
    if (raw == "true" || raw == "false") {
        v.kind = ConfigTree::Value::Kind::Bool;
        v.boolean = raw == "true";
        return v;
    }
    // Integer only when the whole token parses as one and carries no
    // float markers.
    if (raw.find('.') == std::string::npos && raw.find('e') == std::string::npos &&
        raw.find('E') == std::string::npos) {
        try {
            std::size_t pos = 0;
            long long value = std::stoll(raw, &pos);
            if (pos == raw.size()) {
                v.kind = ConfigTree::Value::Kind::Int;
                v.integer = value;
                return v;
            }
        } catch (...) {
        }
    }
    try {
        std::size_t pos = 0;
        double value = std::stod(raw, &pos);
        if (pos == raw.size()) {
            v.kind = ConfigTree::Value::Kind::Float;
            v.real = value;
            return v;
        }
    } catch (...) {
    }
    fail(origin, lineno, "cannot parse value '" + raw + "'");
}

ConfigTree::Value parse_value(const std::string& raw, const std::string& origin, int lineno) {
    if (!raw.empty() && raw.front() == '[') {
        if (raw.back() != ']') fail(origin, lineno, "unterminated array");
        ConfigTree::Value v;
        v.kind = ConfigTree::Value::Kind::Array;
        std::string inner = raw.substr(1, raw.size() - 2);
        std::string item;
        bool in_string = false;
        auto flush = [&]() {
            std::string t = trim(item);
            if (!t.empty()) v.array.push_back(parse_scalar(t, origin, lineno));
            item.clear();
        };
        for (char c : inner) {
            if (c == '"') in_string = !in_string;
            if (c == ',' && !in_string) {
                flush();
            } else {
                item += c;
            }
        }
        flush();
        return v;
    }
    return parse_scalar(raw, origin, lineno);
}

std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

std::string serialize(const ConfigTree::Value& v) {
    using Kind = ConfigTree::Value::Kind;
    switch (v.kind) {
        case Kind::String:
            return '"' + v.str + '"';
        case Kind::Int:
            return std::to_string(v.integer);
        case Kind::Float: {
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.17g", v.real);
            return buf;
        }
        case Kind::Bool:
            return v.boolean ? "true" : "false";
        case Kind::Array: {
            std::string out = "[";
            for (std::size_t i = 0; i < v.array.size(); ++i) {
                if (i > 0) out += ", ";
                out += serialize(v.array[i]);
            }
            return out + "]";
        }
    }
    return "";
}

}  // namespace

ConfigTree ConfigTree::parse_string(const std::string& text, const std::string& origin) {
    ConfigTree tree;
    tree.origin_ = origin;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(origin, lineno, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!valid_key(section)) fail(origin, lineno, "invalid section name '" + section + "'");
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) fail(origin, lineno, "expected key = value");
        std::string key = trim(line.substr(0, eq));
        if (!valid_key(key)) fail(origin, lineno, "invalid key '" + key + "'");
        std::string full = section.empty() ? key : section + "." + key;
        if (tree.values_.count(full)) fail(origin, lineno, "duplicate key '" + full + "'");
        tree.values_[full] = parse_value(trim(line.substr(eq + 1)), origin, lineno);
    }
    return tree;
}

ConfigTree ConfigTree::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str(), path);
}

bool ConfigTree::has(const std::string& key) const { return values_.count(key) > 0; }

const ConfigTree::Value& ConfigTree::require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(origin_ + ": missing required key '" + key + "'");
    used_[key] = true;
    return it->second;
}

std::string ConfigTree::get_string(const std::string& key) const {
    const Value& v = require(key);
    if (v.kind != Value::Kind::String) throw ConfigError(origin_ + ": key '" + key + "' is not a string");
    return v.str;
}

std::string ConfigTree::get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
}

std::int64_t ConfigTree::get_int(const std::string& key) const {
    const Value& v = require(key);
    if (v.kind != Value::Kind::Int) throw ConfigError(origin_ + ": key '" + key + "' is not an integer");
    return v.integer;
}

std::int64_t ConfigTree::get_int(const std::string& key, std::int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
}

double ConfigTree::get_double(const std::string& key) const {
    const Value& v = require(key);
    if (v.kind == Value::Kind::Int) return static_cast<double>(v.integer);
    if (v.kind != Value::Kind::Float) throw ConfigError(origin_ + ": key '" + key + "' is not a number");
    return v.real;
}

double ConfigTree::get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

bool ConfigTree::get_bool(const std::string& key) const {
    const Value& v = require(key);
    if (v.kind != Value::Kind::Bool) throw ConfigError(origin_ + ": key '" + key + "' is not a boolean");
    return v.boolean;
}

bool ConfigTree::get_bool(const std::string& key, bool fallback) const {
    return has(key) ? get_bool(key) : fallback;
}

std::vector<std::int64_t> ConfigTree::get_int_array(const std::string& key) const {
    const Value& v = require(key);
    if (v.kind != Value::Kind::Array) throw ConfigError(origin_ + ": key '" + key + "' is not an array");
    std::vector<std::int64_t> out;
    for (const auto& e : v.array) {
        if (e.kind != Value::Kind::Int)
            throw ConfigError(origin_ + ": key '" + key + "' must hold integers");
        out.push_back(e.integer);
    }
    return out;
}

std::vector<std::int64_t> ConfigTree::get_int_array(const std::string& key,
                                                    const std::vector<std::int64_t>& fallback) const {
    return has(key) ? get_int_array(key) : fallback;
}

std::vector<std::string> ConfigTree::get_string_array(const std::string& key,
                                                      const std::vector<std::string>& fallback) const {
    if (!has(key)) return fallback;
    const Value& v = require(key);
    if (v.kind != Value::Kind::Array) throw ConfigError(origin_ + ": key '" + key + "' is not an array");
    std::vector<std::string> out;
    for (const auto& e : v.array) {
        if (e.kind != Value::Kind::String)
            throw ConfigError(origin_ + ": key '" + key + "' must hold strings");
        out.push_back(e.str);
    }
    return out;
}

std::vector<std::string> ConfigTree::unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [key, value] : values_) {
        (void)value;
        auto it = used_.find(key);
        if (it == used_.end() || !it->second) out.push_back(key);
    }
    return out;
}

void ConfigTree::reject_unknown_keys() const {
    auto unused = unused_keys();
    if (unused.empty()) return;
    std::string msg = origin_ + ": unknown keys:";
    for (const auto& k : unused) msg += " " + k;
    throw ConfigError(msg);
}

std::string ConfigTree::canonical() const {
    std::string out;
    for (const auto& [key, value] : values_) out += key + " = " + serialize(value) + "\n";
    return out;
}

void ConfigTree::set_override(const std::string& key, const Value& value) { values_[key] = value; }

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace driftbench
