#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dcse/training.hpp"

namespace dcse {

// Training configs arrive as JSON or flat TOML; both map one-to-one onto
// TrainConfig fields, and unknown keys are rejected rather than ignored.

namespace detail {

inline void apply_train_key(TrainConfig& c, const std::string& key, const nlohmann::json& v) {
    if (key == "lambda") c.lambda = v.get<double>();
    else if (key == "learning_rate") c.learning_rate = v.get<double>();
    else if (key == "ema_decay") c.ema_decay = v.get<double>();
    else if (key == "epochs") c.epochs = v.get<int>();
    else if (key == "batch_size") c.batch_size = v.get<int>();
    else if (key == "seed") c.seed = v.get<uint64_t>();
    else if (key == "injection") c.injection = injection_mode_from_name(v.get<std::string>());
    else if (key == "cfg_p") c.cfg_p = v.get<double>();
    else if (key == "adaptive_weights") c.adaptive_weights = v.get<bool>();
    else throw ConfigError("unknown training config key: " + key);
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

}  // namespace detail

inline TrainConfig parse_train_config_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    TrainConfig c;
    for (const auto& [key, value] : j.items()) detail::apply_train_key(c, key, value);
    c.validate();
    return c;
}

// Flat key = value TOML: strings, integers, floats, booleans, # comments.
inline TrainConfig parse_train_config_toml(const std::string& text) {
    TrainConfig       c;
    std::istringstream is(text);
    std::string        line;
    int                lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        const size_t quote = line.find('"');
        if (hash != std::string::npos && (quote == std::string::npos || hash < quote))
            line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("toml line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string raw = detail::trim(line.substr(eq + 1));
        if (key.empty() || raw.empty())
            throw ConfigError("toml line " + std::to_string(lineno) + ": empty key or value");

        nlohmann::json v;
        if (raw.front() == '"') {
            if (raw.size() < 2 || raw.back() != '"')
                throw ConfigError("toml line " + std::to_string(lineno) + ": unterminated string");
            v = raw.substr(1, raw.size() - 2);
        } else if (raw == "true" || raw == "false") {
            v = raw == "true";
        } else {
            try {
                if (raw.find_first_of(".eE") != std::string::npos) {
                    v = std::stod(raw);
                } else if (raw.front() == '-') {
                    v = static_cast<int64_t>(std::stoll(raw));
                } else {
                    v = static_cast<uint64_t>(std::stoull(raw));
                }
            } catch (const std::exception&) {
                throw ConfigError("toml line " + std::to_string(lineno) + ": bad value " + raw);
            }
        }
        detail::apply_train_key(c, key, v);
    }
    c.validate();
    return c;
}

inline TrainConfig load_train_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    const std::string text = buf.str();
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".json")
        return parse_train_config_json(text);
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".toml")
        return parse_train_config_toml(text);
    // sniff: JSON objects start with '{'
    const std::string t = detail::trim(text);
    return !t.empty() && t.front() == '{' ? parse_train_config_json(text)
                                          : parse_train_config_toml(text);
}

}  // namespace dcse
