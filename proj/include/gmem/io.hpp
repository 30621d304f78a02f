#pragma once

// Output plumbing: run headers embedded in every artifact, shortest
// round-trip float formatting, CSV writing, and strict JSON config parsing
// with field-path error messages.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmem/version.hpp"

namespace gmem {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// FNV-1a over the canonical (sorted-key) JSON dump; keys resumable runs.
inline std::uint64_t config_hash(const nlohmann::json& config) {
    const std::string dump = config.dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

struct RunHeader {
    std::string command;
    nlohmann::json config;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"tool", "gmem"},
                {"version", kVersion},
                {"command", command},
                {"config", config},
                {"seed", seed},
                {"config_hash", config_hash(config)}};
    }

    std::vector<std::string> to_comment_lines() const {
        return {"# gmem " + std::string(kVersion) + " :: " + command,
                "# config: " + config.dump(),
                "# seed: " + std::to_string(seed),
                "# config_hash: " + std::to_string(config_hash(config))};
    }
};

inline void write_json_report(const std::string& path, const RunHeader& header,
                              const nlohmann::json& result) {
    nlohmann::json doc;
    doc["header"] = header.to_json();
    doc["result"] = result;
    std::ofstream file(path);
    if (!file) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    file << doc.dump(2) << "\n";
}

inline nlohmann::json load_json_file(const std::string& path) {
    std::ifstream file(path);
    if (!file) {
        throw ConfigError("cannot open config file " + path);
    }
    try {
        return nlohmann::json::parse(file);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed JSON in " + path + ": " + e.what());
    }
}

// Strict field access: every getter names the exact field on error, and
// finish() rejects unknown keys so typos surface instead of being ignored.
class ConfigView {
public:
    ConfigView(const nlohmann::json& node, std::string path)
        : node_(node), path_(std::move(path)) {}

    template <class T>
    T get(const std::string& key, const T& fallback) const {
        mark(key);
        if (!node_.contains(key)) {
            return fallback;
        }
        return read<T>(key);
    }

    template <class T>
    T require(const std::string& key) const {
        mark(key);
        if (!node_.contains(key)) {
            throw ConfigError("missing required field " + path_ + "." + key);
        }
        return read<T>(key);
    }

    bool has(const std::string& key) const {
        mark(key);
        return node_.contains(key);
    }

    ConfigView child(const std::string& key) const {
        mark(key);
        if (!node_.contains(key)) {
            static const nlohmann::json empty = nlohmann::json::object();
            return ConfigView(empty, path_ + "." + key);
        }
        if (!node_.at(key).is_object()) {
            throw ConfigError("field " + path_ + "." + key + " must be an object");
        }
        return ConfigView(node_.at(key), path_ + "." + key);
    }

    void finish() const {
        for (auto it = node_.begin(); it != node_.end(); ++it) {
            bool known = false;
            for (const auto& k : seen_) {
                if (k == it.key()) {
                    known = true;
                    break;
                }
            }
            if (!known) {
                throw ConfigError("unknown field " + path_ + "." + it.key());
            }
        }
    }

private:
    template <class T>
    T read(const std::string& key) const {
        try {
            return node_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("field " + path_ + "." + key + " has the wrong type");
        }
    }
    void mark(const std::string& key) const { seen_.push_back(key); }

    const nlohmann::json& node_;
    std::string path_;
    mutable std::vector<std::string> seen_;
};

class CsvWriter {
public:
    CsvWriter(const std::string& path, const RunHeader& header, const std::string& columns,
              bool append) {
        file_.open(path, append ? std::ios::app : std::ios::trunc);
        if (!file_) {
            throw std::runtime_error("cannot open " + path + " for writing");
        }
        if (!append) {
            for (const auto& line : header.to_comment_lines()) {
                file_ << line << "\n";
            }
            file_ << columns << "\n";
            file_.flush();
        }
    }

    void row(const std::string& line) {
        file_ << line << "\n";
        file_.flush();
    }

private:
    std::ofstream file_;
};

}  // namespace gmem
