#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "teiresias/common.hpp"
#include "teiresias/connection.hpp"

namespace teiresias::inventory {

class NotFoundError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConflictError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DenyListViolation : public std::runtime_error {
public:
    explicit DenyListViolation(const std::vector<std::string>& paths)
        : std::runtime_error("payload carries credential fields: " + join(paths, ", ")),
          paths_(paths) {}
    const std::vector<std::string>& paths() const { return paths_; }

private:
    std::vector<std::string> paths_;
};

enum class Stage { code_analysis, retrieval, analysis, inventory, api };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::code_analysis: return "code-analysis";
        case Stage::retrieval: return "retrieval";
        case Stage::analysis: return "analysis";
        case Stage::inventory: return "inventory";
        case Stage::api: return "api";
    }
    return "inventory";
}

inline Stage stage_from(const std::string& name) {
    if (name == "code-analysis") return Stage::code_analysis;
    if (name == "retrieval") return Stage::retrieval;
    if (name == "analysis") return Stage::analysis;
    if (name == "api") return Stage::api;
    return Stage::inventory;
}

// Field names that may never carry a value inside a report payload. Values
// stay out of the inventory by construction; this is the enforced backstop.
inline const std::set<std::string>& credential_deny_list() {
    static const std::set<std::string> keys{
        "password", "passwd",     "pwd",         "secret",       "token",
        "apikey",   "api_key",    "credential",  "credentials",  "authorization"};
    return keys;
}

namespace detail {

inline void scan_payload(const nlohmann::json& node, const std::string& path,
                         std::vector<std::string>& hits) {
    if (node.is_object()) {
        for (const auto& [key, value] : node.items()) {
            std::string lowered = to_lower(key);
            bool named = credential_deny_list().count(lowered) > 0;
            bool carries = !(value.is_null() || (value.is_string() && value.get_ref<const std::string&>().empty()));
            std::string child = path.empty() ? key : path + "." + key;
            if (named && carries) hits.push_back(child);
            scan_payload(value, child, hits);
        }
    } else if (node.is_array()) {
        for (std::size_t i = 0; i < node.size(); ++i)
            scan_payload(node[i], path + "[" + std::to_string(i) + "]", hits);
    }
}

}  // namespace detail

inline std::vector<std::string> payload_violations(const nlohmann::json& payload) {
    std::vector<std::string> hits;
    detail::scan_payload(payload, "", hits);
    return hits;
}

struct ReportPortion {
    std::string execution_id;
    std::string task_id;
    Stage stage = Stage::inventory;
    std::string status;  // "ok", "failed", "manual-required", "skipped: excluded", ...
    nlohmann::json payload = nlohmann::json::object();
    std::string produced_at;

    nlohmann::json to_json() const {
        return {{"execution_id", execution_id}, {"task_id", task_id},
                {"stage", stage_name(stage)},   {"status", status},
                {"payload", payload},           {"produced_at", produced_at}};
    }

    static ReportPortion from_json(const nlohmann::json& j) {
        ReportPortion p;
        p.execution_id = j.value("execution_id", "");
        p.task_id = j.value("task_id", "");
        p.stage = stage_from(j.value("stage", "inventory"));
        p.status = j.value("status", "");
        p.payload = j.value("payload", nlohmann::json::object());
        p.produced_at = j.value("produced_at", "");
        return p;
    }
};

// Per-storage rollup derived from portions alone; stored nowhere.
inline nlohmann::json compute_summary(const std::vector<ReportPortion>& portions) {
    struct Row {
        std::string storage_type;
        std::vector<nlohmann::json> verdicts;
        std::vector<std::string> failures;
        bool excluded = false;
        bool manual = false;
        bool incomplete = false;
        bool reappeared = false;
    };
    std::map<std::string, Row> rows;
    std::size_t personal_collections = 0;

    for (const auto& p : portions) {
        if (!p.payload.is_object()) continue;
        std::string sid = p.payload.value(
            "storage_id", p.payload.value("storage_ref", p.payload.value("storage", "")));
        if (sid.empty()) continue;
        Row& row = rows[sid];
        if (p.payload.contains("storage_type"))
            row.storage_type = p.payload.value("storage_type", "");
        if (p.status == "failed")
            row.failures.push_back(p.payload.value("error", "failed"));
        if (p.status == "skipped: excluded") row.excluded = true;
        if (p.status == "manual-required" || p.status == "failed") row.manual = true;
        if (p.payload.value("previously_deleted", false)) row.reappeared = true;
        if (p.payload.contains("unresolved") && !p.payload["unresolved"].empty())
            row.incomplete = true;
        if (p.stage == Stage::analysis && p.payload.contains("t")) {
            nlohmann::json verdict{{"collection", p.payload.value("collection", "")},
                                   {"t", p.payload["t"]},
                                   {"personal", p.payload.value("personal", false)}};
            row.verdicts.push_back(verdict);
            if (p.payload.value("personal", false)) ++personal_collections;
        }
    }

    nlohmann::json storages = nlohmann::json::array();
    std::size_t collections = 0;
    for (auto& [sid, row] : rows) {
        std::sort(row.verdicts.begin(), row.verdicts.end(),
                  [](const nlohmann::json& a, const nlohmann::json& b) {
                      return a.value("collection", "") < b.value("collection", "");
                  });
        collections += row.verdicts.size();
        nlohmann::json entry{{"storage_id", sid},
                             {"storage_type", row.storage_type},
                             {"verdicts", row.verdicts},
                             {"failures", row.failures},
                             {"excluded", row.excluded},
                             {"manual_interaction", row.manual},
                             {"incomplete", row.incomplete}};
        if (row.reappeared) entry["previously_deleted"] = true;
        storages.push_back(entry);
    }
    return {{"storages", storages},
            {"totals",
             {{"storages", storages.size()},
              {"collections", collections},
              {"personal_collections", personal_collections}}}};
}

struct DiscoveryReport {
    std::string execution_id;
    std::string trigger;  // manual | schedule | api | source-change
    std::vector<ReportPortion> portions;
    nlohmann::json summary;

    nlohmann::json to_json() const {
        nlohmann::json parts = nlohmann::json::array();
        for (const auto& p : portions) parts.push_back(p.to_json());
        return {{"schema", 1},
                {"execution_id", execution_id},
                {"trigger", trigger},
                {"portions", parts},
                {"summary", summary}};
    }
};

// Append-only report persistence: one JSONL file per execution plus an index
// of executions. Appends are idempotent on (execution-id, task-id).
class ReportStore {
public:
    explicit ReportStore(std::filesystem::path state_dir) : root_(std::move(state_dir)) {
        std::filesystem::create_directories(reports_dir());
    }

    void begin_execution(const std::string& execution_id, const std::string& trigger) {
        std::lock_guard lock(mutex_);
        for (const auto& [id, t] : read_index())
            if (id == execution_id) return;
        nlohmann::json line{
            {"execution_id", execution_id}, {"trigger", trigger}, {"created_at", iso8601_now()}};
        std::ofstream out(index_path(), std::ios::app);
        if (!out) throw std::runtime_error("report index unavailable");
        out << line.dump() << "\n";
    }

    void append(const ReportPortion& portion) {
        auto violations = payload_violations(portion.payload);
        if (!violations.empty()) throw DenyListViolation(violations);
        std::lock_guard lock(mutex_);
        auto& seen = seen_tasks_[portion.execution_id];
        if (seen.empty()) {
            for (const auto& existing : read_portions(portion.execution_id))
                seen.insert(existing.task_id);
        }
        if (seen.count(portion.task_id)) return;
        ReportPortion stored = portion;
        if (stored.produced_at.empty()) stored.produced_at = iso8601_now();
        std::ofstream out(report_path(portion.execution_id), std::ios::app);
        if (!out) throw std::runtime_error("report store unavailable");
        out << stored.to_json().dump() << "\n";
        out.flush();
        if (!out) throw std::runtime_error("report store unavailable");
        seen.insert(portion.task_id);
    }

    bool exists(const std::string& execution_id) const {
        std::lock_guard lock(mutex_);
        if (std::filesystem::exists(report_path(execution_id))) return true;
        for (const auto& [id, t] : read_index())
            if (id == execution_id) return true;
        return false;
    }

    DiscoveryReport get(const std::string& execution_id) const {
        std::lock_guard lock(mutex_);
        std::string trigger;
        bool indexed = false;
        for (const auto& [id, t] : read_index())
            if (id == execution_id) {
                indexed = true;
                trigger = t;
            }
        bool has_file = std::filesystem::exists(report_path(execution_id));
        if (!indexed && !has_file)
            throw NotFoundError("unknown execution: " + execution_id);
        DiscoveryReport report;
        report.execution_id = execution_id;
        report.trigger = trigger.empty() ? "manual" : trigger;
        report.portions = read_portions(execution_id);
        report.summary = compute_summary(report.portions);
        return report;
    }

    // Newest first, by index insertion order.
    std::vector<std::string> list_executions() const {
        std::lock_guard lock(mutex_);
        std::vector<std::string> ids;
        for (const auto& [id, t] : read_index()) ids.push_back(id);
        std::reverse(ids.begin(), ids.end());
        return ids;
    }

    // Newest first; raw index rows {execution_id, trigger, created_at}.
    std::vector<nlohmann::json> execution_index() const {
        std::lock_guard lock(mutex_);
        std::vector<nlohmann::json> rows;
        std::ifstream in(index_path());
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) continue;
            rows.push_back(std::move(j));
        }
        std::reverse(rows.begin(), rows.end());
        return rows;
    }

    std::filesystem::path export_report(const std::string& execution_id,
                                        const std::filesystem::path& out_dir) const {
        auto report = get(execution_id);
        std::filesystem::create_directories(out_dir);
        auto path = out_dir / ("report-" + execution_id + ".json");
        write_file_atomic(path, report.to_json().dump(2) + "\n");
        return path;
    }

    // Removes executions whose index timestamp sorts before the cutoff
    // (ISO-8601 compares lexicographically).
    std::size_t prune_before(const std::string& cutoff_iso) {
        std::lock_guard lock(mutex_);
        std::vector<nlohmann::json> keep;
        std::size_t removed = 0;
        std::ifstream in(index_path());
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) continue;
            if (j.value("created_at", "") < cutoff_iso) {
                std::error_code ec;
                std::filesystem::remove(report_path(j.value("execution_id", "")), ec);
                seen_tasks_.erase(j.value("execution_id", ""));
                ++removed;
            } else {
                keep.push_back(j);
            }
        }
        in.close();
        std::string rewritten;
        for (const auto& j : keep) rewritten += j.dump() + "\n";
        write_file_atomic(index_path(), rewritten);
        return removed;
    }

    std::filesystem::path reports_dir() const { return root_ / "reports"; }

private:
    std::filesystem::path index_path() const { return reports_dir() / "index.jsonl"; }
    std::filesystem::path report_path(const std::string& execution_id) const {
        return reports_dir() / (execution_id + ".jsonl");
    }

    std::vector<std::pair<std::string, std::string>> read_index() const {
        std::vector<std::pair<std::string, std::string>> out;
        std::ifstream in(index_path());
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) continue;
            out.emplace_back(j.value("execution_id", ""), j.value("trigger", ""));
        }
        return out;
    }

    std::vector<ReportPortion> read_portions(const std::string& execution_id) const {
        std::vector<ReportPortion> out;
        std::ifstream in(report_path(execution_id));
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) continue;
            out.push_back(ReportPortion::from_json(j));
        }
        return out;
    }

    std::filesystem::path root_;
    mutable std::mutex mutex_;
    mutable std::map<std::string, std::set<std::string>> seen_tasks_;
};

enum class Origin { discovered, manual, external };
enum class EntryStatus { active, excluded, deleted };

inline const char* origin_name(Origin o) {
    switch (o) {
        case Origin::discovered: return "discovered";
        case Origin::manual: return "manual";
        case Origin::external: return "external";
    }
    return "discovered";
}

inline const char* entry_status_name(EntryStatus s) {
    switch (s) {
        case EntryStatus::active: return "active";
        case EntryStatus::excluded: return "excluded";
        case EntryStatus::deleted: return "deleted";
    }
    return "active";
}

// Manual overrides merged on top of a discovered descriptor. Passwords are
// only overridable as environment or file references.
inline ConnectionDescriptor apply_overrides(const ConnectionDescriptor& base,
                                            const nlohmann::json& overrides) {
    ConnectionDescriptor d = base;
    if (!overrides.is_object()) return d;
    auto set_field = [&](const char* key, Field& field) {
        if (overrides.contains(key) && overrides[key].is_string())
            field = Field::of(overrides[key].get<std::string>());
    };
    set_field("host", d.host);
    set_field("port", d.port);
    set_field("database", d.database);
    set_field("username", d.username);
    if (overrides.contains("storage_type") && overrides["storage_type"].is_string())
        d.storage_type = overrides["storage_type"].get<std::string>();
    if (overrides.contains("password_env") && overrides["password_env"].is_string())
        d.password = Field::env_ref(overrides["password_env"].get<std::string>());
    if (overrides.contains("password_file") && overrides["password_file"].is_string())
        d.password = Field::file_ref(overrides["password_file"].get<std::string>());
    return d;
}

struct RegistryEntry {
    std::string id;
    bool has_descriptor = false;
    ConnectionDescriptor descriptor;  // absent on tombstones
    Origin origin = Origin::discovered;
    EntryStatus status = EntryStatus::active;
    nlohmann::json manual_overrides = nlohmann::json::object();
    std::string notes;

    ConnectionDescriptor effective() const { return apply_overrides(descriptor, manual_overrides); }

    nlohmann::json to_json() const {
        nlohmann::json j{{"id", id},
                         {"origin", origin_name(origin)},
                         {"status", entry_status_name(status)},
                         {"manual_overrides", manual_overrides},
                         {"notes", notes}};
        if (has_descriptor) {
            j["descriptor"] = descriptor.to_redacted_json();
            j["effective"] = effective().to_redacted_json();
        }
        return j;
    }
};

struct RepositoryRef {
    std::string uri;
    std::string branch;
    bool operator==(const RepositoryRef&) const = default;
};

struct DiscoveredOutcome {
    RegistryEntry entry;
    bool previously_deleted = false;
};

// Event-sourced registry: every mutation appends one line to registry.jsonl;
// construction replays the log. Secrets never appear in events (redacted
// descriptors, reference-only password overrides).
class Registry {
public:
    explicit Registry(std::filesystem::path state_dir) : root_(std::move(state_dir)) {
        std::filesystem::create_directories(root_);
        replay();
    }

    // The entry keeps only the redacted form of the descriptor, so in-memory
    // state matches what a replay of the log reconstructs. Plain passwords
    // stay with the code-analysis output for the current run.
    DiscoveredOutcome record_discovered(const ConnectionDescriptor& descriptor) {
        std::lock_guard lock(mutex_);
        nlohmann::json redacted = descriptor.to_redacted_json();
        append_event({{"event", "discovered"}, {"at", iso8601_now()}, {"descriptor", redacted}});
        return apply_discovered(ConnectionDescriptor::from_redacted_json(redacted));
    }

    RegistryEntry add_external(const ConnectionDescriptor& descriptor,
                               const std::string& notes = "") {
        std::lock_guard lock(mutex_);
        std::string id = descriptor.stable_id();
        auto it = entries_.find(id);
        if (it != entries_.end() && it->second.status == EntryStatus::deleted)
            throw ConflictError("storage was deleted: " + id);
        nlohmann::json redacted = descriptor.to_redacted_json();
        append_event({{"event", "external"},
                      {"at", iso8601_now()},
                      {"descriptor", redacted},
                      {"notes", notes}});
        return apply_external(ConnectionDescriptor::from_redacted_json(redacted), notes);
    }

    RegistryEntry complete(const std::string& id, const nlohmann::json& overrides) {
        auto violations = payload_violations(overrides);
        if (!violations.empty()) throw DenyListViolation(violations);
        std::lock_guard lock(mutex_);
        auto it = entries_.find(id);
        if (it == entries_.end()) throw NotFoundError("unknown storage: " + id);
        if (it->second.status == EntryStatus::deleted)
            throw ConflictError("storage was deleted: " + id);
        append_event(
            {{"event", "complete"}, {"at", iso8601_now()}, {"id", id}, {"overrides", overrides}});
        return apply_complete(id, overrides);
    }

    RegistryEntry exclude(const std::string& id) { return set_status(id, "exclude"); }
    RegistryEntry reactivate(const std::string& id) { return set_status(id, "reactivate"); }

    void remove(const std::string& id) {
        std::lock_guard lock(mutex_);
        auto it = entries_.find(id);
        if (it == entries_.end()) throw NotFoundError("unknown storage: " + id);
        append_event({{"event", "delete"}, {"at", iso8601_now()}, {"id", id}});
        apply_delete(id);
    }

    bool register_repository(const std::string& uri, const std::string& branch) {
        if (trim(uri).empty() || uri.find(' ') != std::string::npos)
            throw std::invalid_argument("malformed repository uri");
        if (trim(branch).empty()) throw std::invalid_argument("branch required");
        std::lock_guard lock(mutex_);
        RepositoryRef ref{uri, branch};
        if (std::count(repositories_.begin(), repositories_.end(), ref) > 0) return false;
        append_event(
            {{"event", "repo"}, {"at", iso8601_now()}, {"uri", uri}, {"branch", branch}});
        repositories_.push_back(ref);
        return true;
    }

    const std::vector<RepositoryRef>& repositories() const { return repositories_; }

    std::optional<RegistryEntry> find(const std::string& id) const {
        std::lock_guard lock(mutex_);
        auto it = entries_.find(id);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    std::vector<RegistryEntry> entries() const {
        std::lock_guard lock(mutex_);
        std::vector<RegistryEntry> out;
        for (const auto& [id, e] : entries_) out.push_back(e);
        return out;
    }

private:
    RegistryEntry set_status(const std::string& id, const std::string& action) {
        std::lock_guard lock(mutex_);
        auto it = entries_.find(id);
        if (it == entries_.end()) throw NotFoundError("unknown storage: " + id);
        if (it->second.status == EntryStatus::deleted)
            throw ConflictError("storage was deleted: " + id);
        append_event({{"event", action}, {"at", iso8601_now()}, {"id", id}});
        return apply_status(id, action);
    }

    std::filesystem::path log_path() const { return root_ / "registry.jsonl"; }

    void append_event(const nlohmann::json& event) {
        std::ofstream out(log_path(), std::ios::app);
        if (!out) throw std::runtime_error("registry log unavailable");
        out << event.dump() << "\n";
    }

    void replay() {
        std::ifstream in(log_path());
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) continue;
            std::string event = j.value("event", "");
            if (event == "discovered")
                apply_discovered(ConnectionDescriptor::from_redacted_json(j["descriptor"]));
            else if (event == "external")
                apply_external(ConnectionDescriptor::from_redacted_json(j["descriptor"]),
                               j.value("notes", ""));
            else if (event == "complete")
                apply_complete(j.value("id", ""), j.value("overrides", nlohmann::json::object()));
            else if (event == "exclude" || event == "reactivate")
                apply_status(j.value("id", ""), event);
            else if (event == "delete")
                apply_delete(j.value("id", ""));
            else if (event == "repo")
                repositories_.push_back({j.value("uri", ""), j.value("branch", "")});
        }
    }

    DiscoveredOutcome apply_discovered(const ConnectionDescriptor& descriptor) {
        std::string id = descriptor.stable_id();
        auto it = entries_.find(id);
        if (it != entries_.end()) {
            if (it->second.status == EntryStatus::deleted)
                return {it->second, true};
            it->second.descriptor = descriptor;
            it->second.has_descriptor = true;
            return {it->second, false};
        }
        RegistryEntry entry;
        entry.id = id;
        entry.descriptor = descriptor;
        entry.has_descriptor = true;
        entry.origin = Origin::discovered;
        auto [pos, inserted] = entries_.emplace(id, std::move(entry));
        (void)inserted;
        return {pos->second, false};
    }

    RegistryEntry& apply_external(const ConnectionDescriptor& descriptor,
                                  const std::string& notes) {
        std::string id = descriptor.stable_id();
        auto it = entries_.find(id);
        if (it != entries_.end() && it->second.status != EntryStatus::deleted) {
            it->second.descriptor = descriptor;
            it->second.has_descriptor = true;
            if (!notes.empty()) it->second.notes = notes;
            return it->second;
        }
        RegistryEntry entry;
        entry.id = id;
        entry.descriptor = descriptor;
        entry.has_descriptor = true;
        entry.origin = Origin::external;
        entry.notes = notes;
        return entries_.insert_or_assign(id, std::move(entry)).first->second;
    }

    RegistryEntry& apply_complete(const std::string& id, const nlohmann::json& overrides) {
        auto& entry = entries_.at(id);
        for (const auto& [key, value] : overrides.items()) entry.manual_overrides[key] = value;
        return entry;
    }

    RegistryEntry& apply_status(const std::string& id, const std::string& action) {
        auto& entry = entries_.at(id);
        entry.status = action == "exclude" ? EntryStatus::excluded : EntryStatus::active;
        return entry;
    }

    void apply_delete(const std::string& id) {
        auto& entry = entries_.at(id);
        entry.status = EntryStatus::deleted;
        entry.has_descriptor = false;
        entry.descriptor = ConnectionDescriptor{};
        entry.manual_overrides = nlohmann::json::object();
    }

    std::filesystem::path root_;
    mutable std::mutex mutex_;
    std::map<std::string, RegistryEntry> entries_;
    std::vector<RepositoryRef> repositories_;
};

}  // namespace teiresias::inventory
