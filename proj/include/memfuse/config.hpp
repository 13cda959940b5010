#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "memfuse/common.hpp"

namespace memfuse {

// Flat key = value documents (a deliberate TOML subset: no tables, no arrays).
// '#' starts a comment; string values may be double-quoted.
class FlatConfig {
  public:
    static FlatConfig parse_string(const std::string& text) {
        FlatConfig cfg;
        std::istringstream in(text);
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto trimmed = trim(line);
            if (trimmed.empty()) continue;
            const size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                raise(errc::malformed_line, "line " + std::to_string(line_no) + ": expected key = value");
            std::string key = trim(trimmed.substr(0, eq));
            std::string value = trim(trimmed.substr(eq + 1));
            if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
                value = value.substr(1, value.size() - 2);
            if (key.empty()) raise(errc::malformed_line, "line " + std::to_string(line_no) + ": empty key");
            cfg.kv_[key] = value;
        }
        return cfg;
    }

    static FlatConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) raise(errc::io_error, "cannot open '" + path + "'");
        std::stringstream buf;
        buf << in.rdbuf();
        return parse_string(buf.str());
    }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    int64_t get_int(const std::string& key, int64_t fallback) const {
        const auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        return std::stoll(it->second);
    }

    uint64_t get_u64(const std::string& key, uint64_t fallback) const {
        const auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        return std::stoull(it->second);
    }

    double get_double(const std::string& key, double fallback) const {
        const auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        return std::stod(it->second);
    }

    bool get_bool(const std::string& key, bool fallback) const {
        const auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        if (it->second == "true") return true;
        if (it->second == "false") return false;
        raise(errc::malformed_line, "key '" + key + "' must be true or false");
    }

    const std::map<std::string, std::string>& entries() const { return kv_; }

  private:
    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> kv_;
};

}  // namespace memfuse
