#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "driftbench/instance.hpp"

namespace driftbench {

// Minimal TOML-style config tree: [section] headers, key = value lines,
// strings, integers, floats, booleans and single-line scalar arrays.
// Every key is tracked so unknown keys can be rejected after parsing.
class ConfigTree {
public:
    struct Value {
        enum class Kind { String, Int, Float, Bool, Array };
        Kind kind = Kind::String;
        std::string str;
        std::int64_t integer = 0;
        double real = 0.0;
        bool boolean = false;
        std::vector<Value> array;
    };

    static ConfigTree parse_file(const std::string& path);
    static ConfigTree parse_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const;

    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::int64_t> get_int_array(const std::string& key) const;
    std::vector<std::int64_t> get_int_array(const std::string& key,
                                            const std::vector<std::int64_t>& fallback) const;
    std::vector<std::string> get_string_array(const std::string& key,
                                              const std::vector<std::string>& fallback) const;

    // Keys never touched by a getter; call after reading a config fully.
    std::vector<std::string> unused_keys() const;
    void reject_unknown_keys() const;

    // Sorted key = value dump; the input for run-directory hashing.
    std::string canonical() const;

    void set_override(const std::string& key, const Value& value);

private:
    const Value& require(const std::string& key) const;
    std::map<std::string, Value> values_;
    mutable std::map<std::string, bool> used_;
    std::string origin_;
};

std::uint64_t fnv1a64(const std::string& text);

}  // namespace driftbench
