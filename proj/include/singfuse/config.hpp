#pragma once

// Layered run configuration: file values, then flag overrides, then
// SINGFUSE_<SECTION>_<KEY> environment variables. File format is
// line-based "section.key = value" with '#' comments.

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "singfuse/common.hpp"

namespace singfuse {

inline std::string trim(const std::string & s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

class run_config {
  public:
    run_config() = default;

    static run_config from_file(const std::string & path) {
        std::ifstream in(path);
        if (!in) throw config_error("config: cannot open " + path);
        run_config cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw config_error("config: " + path + ":" + std::to_string(lineno) +
                                   ": expected key = value");
            std::string key = trim(t.substr(0, eq));
            std::string val = trim(t.substr(eq + 1));
            if (key.find('.') == std::string::npos)
                throw config_error("config: " + path + ":" + std::to_string(lineno) +
                                   ": key must be section.key");
            cfg.values_[key] = val;
        }
        cfg.apply_env();
        return cfg;
    }

    void set(const std::string & key, const std::string & val) { values_[key] = val; }

    bool has(const std::string & key) const { return values_.count(key) > 0; }

    std::string get_str(const std::string & key, const std::string & dflt) const {
        auto it = values_.find(key);
        return it == values_.end() ? dflt : it->second;
    }

    std::string require_str(const std::string & key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw config_error("config: missing required key " + key);
        return it->second;
    }

    int64_t get_int(const std::string & key, int64_t dflt) const {
        auto it = values_.find(key);
        return it == values_.end() ? dflt : std::stoll(it->second);
    }

    double get_double(const std::string & key, double dflt) const {
        auto it = values_.find(key);
        return it == values_.end() ? dflt : std::stod(it->second);
    }

    bool get_bool(const std::string & key, bool dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        return it->second == "true" || it->second == "1" || it->second == "yes";
    }

    // Deterministic dump of every resolved key, one per line.
    std::string resolved() const {
        std::ostringstream os;
        for (const auto & [k, v] : values_) os << k << " = " << v << "\n";
        return os.str();
    }

    // FNV-1a over the resolved dump; logged with every run.
    uint64_t hash() const {
        uint64_t h = 1469598103934665603ull;
        for (char c : resolved()) {
            h ^= (uint64_t)(unsigned char)c;
            h *= 1099511628211ull;
        }
        return h;
    }

    const std::map<std::string, std::string> & values() const { return values_; }

    // SINGFUSE_TRAIN_MAX_STEPS overrides train.max_steps
    void apply_env() {
        for (auto & [key, val] : values_) {
            std::string env = "SINGFUSE_";
            for (char c : key) env += (c == '.') ? '_' : (char)std::toupper((unsigned char)c);
            if (const char * v = std::getenv(env.c_str())) val = v;
        }
    }

  private:
    std::map<std::string, std::string> values_;
};

} // namespace singfuse
