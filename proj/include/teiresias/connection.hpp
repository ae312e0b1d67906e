#pragma once

#include <cstdlib>
#include <optional>
#include <string>

#include <json.hpp>

#include "teiresias/common.hpp"

namespace teiresias {

// A descriptor field is either a resolved value, a reference to a secret kept
// outside the inventory (environment variable or file), or UNRESOLVED.
class Field {
public:
    enum class State { unresolved, value, env_ref, file_ref };

    Field() = default;

    static Field unresolved() { return Field(); }
    static Field of(std::string v) {
        Field f;
        f.state_ = State::value;
        f.value_ = std::move(v);
        return f;
    }
    static Field env_ref(std::string name) {
        Field f;
        f.state_ = State::env_ref;
        f.value_ = std::move(name);
        return f;
    }
    static Field file_ref(std::string path) {
        Field f;
        f.state_ = State::file_ref;
        f.value_ = std::move(path);
        return f;
    }

    State state() const { return state_; }
    bool is_resolved() const { return state_ != State::unresolved; }

    // Materializes the actual value; secret references are read at use time.
    std::optional<std::string> resolve() const {
        switch (state_) {
            case State::unresolved: return std::nullopt;
            case State::value: return value_;
            case State::env_ref: {
                const char* v = std::getenv(value_.c_str());
                if (!v) return std::nullopt;
                return std::string(v);
            }
            case State::file_ref:
                try {
                    return trim(read_file(value_));
                } catch (const std::exception&) {
                    return std::nullopt;
                }
        }
        return std::nullopt;
    }

    // Raw stored token (value or reference target). Never call for logging.
    const std::string& raw() const { return value_; }

    bool operator==(const Field&) const = default;

private:
    State state_ = State::unresolved;
    std::string value_;
};

struct SourceRef {
    std::string path;     // file within the analyzed source tree
    std::string locator;  // position inside the document, e.g. "services.db"

    bool operator==(const SourceRef&) const = default;
};

inline const char* field_state_name(Field::State s) {
    switch (s) {
        case Field::State::unresolved: return "unresolved";
        case Field::State::value: return "resolved";
        case Field::State::env_ref: return "env-ref";
        case Field::State::file_ref: return "file-ref";
    }
    return "unresolved";
}

struct ConnectionDescriptor {
    std::string storage_type;  // "postgresql", "mongodb", "file", ...
    Field host;
    Field port;
    Field database;
    Field username;
    Field password;
    SourceRef source;

    // Completeness is derived, never stored independently.
    bool complete() const {
        return host.is_resolved() && port.is_resolved() && database.is_resolved() &&
               username.is_resolved() && password.is_resolved();
    }

    std::optional<int> port_number() const {
        auto v = port.resolve();
        if (!v) return std::nullopt;
        try {
            return std::stoi(*v);
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }

    // Stable identity across discovery runs: origin file, storage type and the
    // service/host name. The locator disambiguates same-file entries whose
    // host never resolved.
    std::string stable_id() const {
        std::string host_part = host.state() == Field::State::value ? host.raw()
                                                                    : "?" + source.locator;
        return to_hex(fnv1a64(source.path + "\x1f" + storage_type + "\x1f" + host_part));
    }

    // Serialization for reports, logs, goldens and the registry. The password
    // value is never emitted: only presence and, for secret references, the
    // reference target (an environment variable name or a file path, neither
    // of which is the secret itself). The key is password_state, not password,
    // so descriptor payloads pass the inventory's credential deny-list.
    nlohmann::json to_redacted_json() const {
        auto field_json = [](const Field& f) {
            nlohmann::json j;
            j["state"] = field_state_name(f.state());
            if (f.state() != Field::State::unresolved) j["value"] = f.raw();
            return j;
        };
        nlohmann::json j;
        j["storage_type"] = storage_type;
        j["host"] = field_json(host);
        j["port"] = field_json(port);
        j["database"] = field_json(database);
        j["username"] = field_json(username);
        j["password_state"] = password.is_resolved() ? "present" : "absent";
        if (password.state() == Field::State::env_ref)
            j["password_ref"] = {{"kind", "env"}, {"target", password.raw()}};
        else if (password.state() == Field::State::file_ref)
            j["password_ref"] = {{"kind", "file"}, {"target", password.raw()}};
        j["source"] = {{"path", source.path}, {"locator", source.locator}};
        j["complete"] = complete();
        j["id"] = stable_id();
        return j;
    }

    static Field field_from_json(const nlohmann::json& j) {
        std::string state = j.value("state", "unresolved");
        if (state == "resolved") return Field::of(j.value("value", ""));
        if (state == "env-ref") return Field::env_ref(j.value("value", ""));
        if (state == "file-ref") return Field::file_ref(j.value("value", ""));
        return Field::unresolved();
    }

    // Inverse of to_redacted_json as far as the redaction allows: a password
    // recorded as a plain value comes back UNRESOLVED (plain secrets are
    // re-derived from their source on every run), references come back intact.
    static ConnectionDescriptor from_redacted_json(const nlohmann::json& j) {
        ConnectionDescriptor d;
        d.storage_type = j.value("storage_type", "");
        d.host = field_from_json(j.value("host", nlohmann::json::object()));
        d.port = field_from_json(j.value("port", nlohmann::json::object()));
        d.database = field_from_json(j.value("database", nlohmann::json::object()));
        d.username = field_from_json(j.value("username", nlohmann::json::object()));
        if (j.contains("password_ref")) {
            std::string kind = j["password_ref"].value("kind", "");
            std::string target = j["password_ref"].value("target", "");
            d.password = kind == "env" ? Field::env_ref(target) : Field::file_ref(target);
        }
        if (j.contains("source")) {
            d.source.path = j["source"].value("path", "");
            d.source.locator = j["source"].value("locator", "");
        }
        return d;
    }

    std::vector<std::string> unresolved_fields() const {
        std::vector<std::string> out;
        if (!host.is_resolved()) out.push_back("host");
        if (!port.is_resolved()) out.push_back("port");
        if (!database.is_resolved()) out.push_back("database");
        if (!username.is_resolved()) out.push_back("username");
        if (!password.is_resolved()) out.push_back("password");
        return out;
    }
};

}  // namespace teiresias
