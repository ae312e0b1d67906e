#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "teiresias/common.hpp"
#include "teiresias/connection.hpp"
#include "teiresias/sourcetree.hpp"

namespace teiresias::codeanalysis {

enum class Dialect { docker_compose, ansible, unknown };

inline const char* dialect_name(Dialect d) {
    switch (d) {
        case Dialect::docker_compose: return "docker-compose";
        case Dialect::ansible: return "ansible";
        case Dialect::unknown: return "unknown";
    }
    return "unknown";
}

struct IaCDocument {
    std::string path;
    Dialect dialect = Dialect::unknown;
    YAML::Node parsed;
    std::map<std::string, std::string> raw_variables;
    std::vector<std::string> vars_files;
    std::vector<std::string> diagnostics;
};

enum class VariableScope { process_environment_stub, env_file, compose_top_level, ansible_vars };

inline const char* scope_name(VariableScope s) {
    switch (s) {
        case VariableScope::process_environment_stub: return "process-environment-stub";
        case VariableScope::env_file: return "env-file";
        case VariableScope::compose_top_level: return "compose-top-level";
        case VariableScope::ansible_vars: return "ansible-vars";
    }
    return "?";
}

inline int scope_rank(VariableScope s) {
    switch (s) {
        case VariableScope::process_environment_stub: return 0;
        case VariableScope::env_file: return 1;
        case VariableScope::compose_top_level: return 2;
        case VariableScope::ansible_vars: return 3;
    }
    return 9;
}

struct VariableBinding {
    std::string name;
    std::string raw_value;
    std::optional<std::string> resolved;
    std::string origin;
    VariableScope scope = VariableScope::env_file;
    bool shadowed = false;
};

namespace detail {

// Placeholder grammar: ${NAME}, ${NAME:-default}, $NAME, {{ name }}, and the
// compose escape $$ for a literal dollar. Defaults make a reference soft.
struct Placeholder {
    std::string name;
    std::optional<std::string> fallback;
};

struct SubstitutionResult {
    std::string text;
    bool found_placeholder = false;
    bool unresolvable = false;
};

inline bool name_start(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}
inline bool name_char(char c) { return name_start(c) || (c >= '0' && c <= '9'); }

template <typename Resolver>
SubstitutionResult substitute_once(const std::string& value, Resolver resolve) {
    SubstitutionResult out;
    std::size_t i = 0;
    while (i < value.size()) {
        char c = value[i];
        if (c == '$' && i + 1 < value.size() && value[i + 1] == '$') {
            out.text += '$';
            i += 2;
            continue;
        }
        if (c == '$' && i + 1 < value.size() && value[i + 1] == '{') {
            std::size_t depth = 1;
            std::size_t k = i + 2;
            while (k < value.size() && depth > 0) {
                if (value[k] == '{') ++depth;
                if (value[k] == '}') --depth;
                ++k;
            }
            if (depth != 0) {
                out.text += value.substr(i);
                break;
            }
            std::string inner = value.substr(i + 2, k - i - 3);
            Placeholder ph;
            auto dash = inner.find(":-");
            std::size_t plain = inner.find('-');
            if (dash != std::string::npos) {
                ph.name = inner.substr(0, dash);
                ph.fallback = inner.substr(dash + 2);
            } else if (plain != std::string::npos && plain > 0) {
                ph.name = inner.substr(0, plain);
                ph.fallback = inner.substr(plain + 1);
            } else {
                ph.name = inner;
            }
            out.found_placeholder = true;
            auto value_opt = resolve(ph);
            if (value_opt)
                out.text += *value_opt;
            else
                out.unresolvable = true;
            i = k;
            continue;
        }
        if (c == '$' && i + 1 < value.size() && name_start(value[i + 1])) {
            std::size_t k = i + 1;
            while (k < value.size() && name_char(value[k])) ++k;
            Placeholder ph;
            ph.name = value.substr(i + 1, k - i - 1);
            out.found_placeholder = true;
            auto value_opt = resolve(ph);
            if (value_opt)
                out.text += *value_opt;
            else
                out.unresolvable = true;
            i = k;
            continue;
        }
        if (c == '{' && i + 1 < value.size() && value[i + 1] == '{') {
            auto close = value.find("}}", i + 2);
            if (close == std::string::npos) {
                out.text += value.substr(i);
                break;
            }
            Placeholder ph;
            ph.name = trim(value.substr(i + 2, close - i - 2));
            out.found_placeholder = true;
            auto value_opt = resolve(ph);
            if (value_opt)
                out.text += *value_opt;
            else
                out.unresolvable = true;
            i = close + 2;
            continue;
        }
        out.text += c;
        ++i;
    }
    return out;
}

inline std::set<std::string> hard_references(const std::string& value) {
    std::set<std::string> names;
    substitute_once(value, [&](const Placeholder& ph) -> std::optional<std::string> {
        if (!ph.fallback) names.insert(ph.name);
        return std::string();
    });
    return names;
}

inline bool has_placeholder(const std::string& value) {
    bool found = false;
    substitute_once(value, [&](const Placeholder&) -> std::optional<std::string> {
        found = true;
        return std::string();
    });
    return found;
}

// Returns the single placeholder name when the whole value is one reference
// (used to keep secrets as environment references instead of values).
inline std::optional<std::string> sole_placeholder(const std::string& value) {
    int count = 0;
    std::string name;
    auto r = substitute_once(value, [&](const Placeholder& ph) -> std::optional<std::string> {
        ++count;
        name = ph.name;
        return std::string();
    });
    if (count == 1 && trim(r.text).empty()) return name;
    return std::nullopt;
}

inline std::string strip_quotes(std::string s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                          (s.front() == '\'' && s.back() == '\'')))
        return s.substr(1, s.size() - 2);
    return s;
}

inline std::map<std::string, std::string> parse_dotenv(const std::string& content) {
    std::map<std::string, std::string> out;
    for (auto& raw_line : split(content, '\n')) {
        std::string line = trim(raw_line);
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("export ", 0) == 0) line = trim(line.substr(7));
        auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0) continue;
        std::string key = trim(line.substr(0, eq));
        std::string value = strip_quotes(trim(line.substr(eq + 1)));
        if (!out.count(key)) out.emplace(std::move(key), std::move(value));
    }
    return out;
}

inline bool is_dotenv_path(const std::string& path) {
    auto slash = path.rfind('/');
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    if (base == ".env") return true;
    return base.size() > 4 && base.rfind(".env") == base.size() - 4;
}

inline std::string scalar_text(const YAML::Node& node) {
    return node.IsScalar() ? node.Scalar() : std::string();
}

}  // namespace detail

struct VariableSet {
    std::vector<VariableBinding> bindings;
    std::map<std::string, std::string> resolved;
    std::vector<std::string> diagnostics;

    std::optional<std::string> lookup(const std::string& name) const {
        auto it = resolved.find(name);
        if (it == resolved.end()) return std::nullopt;
        return it->second;
    }

    const VariableBinding* winner(const std::string& name) const {
        for (const auto& b : bindings)
            if (b.name == name && !b.shadowed) return &b;
        return nullptr;
    }

    // Use-site substitution; nullopt when any hard reference cannot resolve.
    std::optional<std::string> resolve(const std::string& raw) const {
        std::string current = raw;
        for (int depth = 0; depth < 10; ++depth) {
            auto r = detail::substitute_once(
                current, [&](const detail::Placeholder& ph) -> std::optional<std::string> {
                    auto v = lookup(ph.name);
                    if (v) return v;
                    if (ph.fallback) return ph.fallback;
                    return std::nullopt;
                });
            if (r.unresolvable) return std::nullopt;
            if (!r.found_placeholder) return r.text;
            if (r.text == current) return r.text;
            current = r.text;
        }
        if (detail::has_placeholder(current)) return std::nullopt;
        return current;
    }
};

inline std::vector<IaCDocument> classify_documents(const SourceTree& tree) {
    static const std::set<std::string> task_control_keys{
        "name",   "vars", "when",     "tags",   "register", "loop",
        "notify", "with_items", "become", "delegate_to", "environment", "ignore_errors"};
    std::vector<IaCDocument> docs;
    for (const auto& file : tree.files) {
        bool yaml = file.path.size() > 4 && (file.path.rfind(".yml") == file.path.size() - 4 ||
                                             (file.path.size() > 5 &&
                                              file.path.rfind(".yaml") == file.path.size() - 5));
        if (!yaml) continue;
        IaCDocument doc;
        doc.path = file.path;
        try {
            doc.parsed = YAML::Load(file.content);
        } catch (const std::exception& e) {
            doc.diagnostics.push_back(std::string("yaml parse error: ") + e.what());
            docs.push_back(std::move(doc));
            continue;
        }
        const YAML::Node& root = doc.parsed;
        if (root.IsMap() && root["services"] && root["services"].IsMap()) {
            doc.dialect = Dialect::docker_compose;
            if (root["x-variables"] && root["x-variables"].IsMap())
                for (const auto& kv : root["x-variables"])
                    if (kv.second.IsScalar())
                        doc.raw_variables.emplace(kv.first.Scalar(), kv.second.Scalar());
        } else if (root.IsSequence() && root.size() > 0) {
            bool all_maps = true;
            bool any_play = false;
            bool any_module = false;
            for (const auto& entry : root) {
                if (!entry.IsMap()) {
                    all_maps = false;
                    break;
                }
                if (entry["hosts"] || entry["tasks"] || entry["roles"]) any_play = true;
                for (const auto& kv : entry)
                    if (!task_control_keys.count(kv.first.Scalar())) any_module = true;
            }
            if (all_maps && (any_play || any_module)) {
                doc.dialect = Dialect::ansible;
                for (const auto& entry : root) {
                    if (entry["vars"] && entry["vars"].IsMap())
                        for (const auto& kv : entry["vars"])
                            if (kv.second.IsScalar())
                                doc.raw_variables.emplace(kv.first.Scalar(), kv.second.Scalar());
                    if (entry["vars_files"] && entry["vars_files"].IsSequence())
                        for (const auto& vf : entry["vars_files"])
                            if (vf.IsScalar()) doc.vars_files.push_back(vf.Scalar());
                }
            }
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

namespace detail {

inline std::string directory_of(const std::string& path) {
    auto slash = path.rfind('/');
    return slash == std::string::npos ? std::string() : path.substr(0, slash + 1);
}

}  // namespace detail

inline VariableSet collect_variables(const std::vector<IaCDocument>& docs, const SourceTree& tree,
                                     const std::map<std::string, std::string>& env_stub = {}) {
    VariableSet vars;
    for (const auto& [name, value] : env_stub)
        vars.bindings.push_back(
            {name, value, std::nullopt, "<process-environment>",
             VariableScope::process_environment_stub, false});
    for (const auto& file : tree.files) {
        if (!detail::is_dotenv_path(file.path)) continue;
        for (const auto& [name, value] : detail::parse_dotenv(file.content))
            vars.bindings.push_back(
                {name, value, std::nullopt, file.path, VariableScope::env_file, false});
    }
    for (const auto& doc : docs) {
        if (doc.dialect == Dialect::docker_compose)
            for (const auto& [name, value] : doc.raw_variables)
                vars.bindings.push_back(
                    {name, value, std::nullopt, doc.path, VariableScope::compose_top_level, false});
        if (doc.dialect == Dialect::ansible) {
            for (const auto& [name, value] : doc.raw_variables)
                vars.bindings.push_back(
                    {name, value, std::nullopt, doc.path, VariableScope::ansible_vars, false});
            for (const auto& vf : doc.vars_files) {
                const SourceFile* f = tree.find(detail::directory_of(doc.path) + vf);
                if (!f) f = tree.find(vf);
                if (!f) {
                    vars.diagnostics.push_back("vars_files entry not found: " + vf + " (" +
                                               doc.path + ")");
                    continue;
                }
                try {
                    YAML::Node node = YAML::Load(f->content);
                    if (node.IsMap())
                        for (const auto& kv : node)
                            if (kv.second.IsScalar())
                                vars.bindings.push_back({kv.first.Scalar(), kv.second.Scalar(),
                                                         std::nullopt, f->path,
                                                         VariableScope::ansible_vars, false});
                } catch (const std::exception& e) {
                    vars.diagnostics.push_back("vars_files parse error: " + f->path + ": " +
                                               e.what());
                }
            }
        }
    }

    // Winner per name: scope precedence, then binding order (file path order).
    std::map<std::string, std::size_t> winners;
    for (std::size_t i = 0; i < vars.bindings.size(); ++i) {
        auto& b = vars.bindings[i];
        auto it = winners.find(b.name);
        if (it == winners.end()) {
            winners[b.name] = i;
        } else if (scope_rank(b.scope) < scope_rank(vars.bindings[it->second].scope)) {
            vars.bindings[it->second].shadowed = true;
            it->second = i;
        } else {
            b.shadowed = true;
        }
    }

    // Fixpoint resolution with a depth cap of 10 substitution passes.
    std::map<std::string, std::string> pending;
    for (const auto& [name, idx] : winners) pending[name] = vars.bindings[idx].raw_value;
    std::set<std::string> dead;
    for (int pass = 0; pass < 10 && !pending.empty(); ++pass) {
        bool progress = false;
        for (auto it = pending.begin(); it != pending.end();) {
            bool blocked = false;
            bool impossible = false;
            auto r = detail::substitute_once(
                it->second, [&](const detail::Placeholder& ph) -> std::optional<std::string> {
                    auto done = vars.resolved.find(ph.name);
                    if (done != vars.resolved.end()) return done->second;
                    if (pending.count(ph.name) && ph.name != it->first) {
                        blocked = true;
                        return std::string();
                    }
                    if (ph.fallback && !pending.count(ph.name) && !dead.count(ph.name))
                        return ph.fallback;
                    if (!pending.count(ph.name) && !dead.count(ph.name)) {
                        impossible = true;  // undefined hard reference
                        return std::string();
                    }
                    if (dead.count(ph.name)) {
                        if (ph.fallback) return ph.fallback;
                        impossible = true;
                    }
                    blocked = true;  // self reference stays pending for cycle analysis
                    return std::string();
                });
            if (impossible) {
                vars.diagnostics.push_back("unresolved reference in variable " + it->first);
                dead.insert(it->first);
                it = pending.erase(it);
                progress = true;
            } else if (blocked) {
                ++it;
            } else if (!r.found_placeholder || !detail::has_placeholder(r.text)) {
                vars.resolved[it->first] = r.text;
                it = pending.erase(it);
                progress = true;
            } else {
                it->second = r.text;
                ++it;
                progress = true;
            }
        }
        if (!progress) break;
    }

    if (!pending.empty()) {
        // Remaining names block each other: report each cycle once.
        std::map<std::string, std::set<std::string>> graph;
        for (const auto& [name, value] : pending) {
            for (const auto& ref : detail::hard_references(value))
                if (pending.count(ref)) graph[name].insert(ref);
        }
        std::set<std::string> reported;
        for (const auto& [start, refs] : graph) {
            if (reported.count(start)) continue;
            std::vector<std::string> path{start};
            std::set<std::string> seen{start};
            std::string cur = start;
            while (true) {
                auto it = graph.find(cur);
                if (it == graph.end() || it->second.empty()) break;
                cur = *it->second.begin();
                if (seen.count(cur)) {
                    auto head = std::find(path.begin(), path.end(), cur);
                    std::vector<std::string> cycle(head, path.end());
                    std::sort(cycle.begin(), cycle.end());
                    bool fresh = true;
                    for (const auto& n : cycle)
                        if (reported.count(n)) fresh = false;
                    if (fresh) {
                        vars.diagnostics.push_back("circular reference " + join(cycle, "↔"));
                        for (const auto& n : cycle) reported.insert(n);
                    }
                    break;
                }
                seen.insert(cur);
                path.push_back(cur);
            }
        }
    }
    return vars;
}

struct StorageRule {
    std::string type;
    int default_port = 0;
    std::vector<std::string> image_globs;
    std::map<std::string, std::string> env_keys;       // field → environment key
    std::map<std::string, std::string> field_defaults;  // field → default ("@username" indirect)
    std::map<std::string, std::map<std::string, std::string>> modules;  // module → field → param
    std::map<std::string, std::string> module_defaults;  // field → default for ansible modules
};

namespace detail {

inline bool glob_match(const std::string& pattern, const std::string& text) {
    std::size_t p = 0, t = 0, star = std::string::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

// "registry/ns/postgresql:16@sha..." → "postgresql"
inline std::string image_basename(const std::string& image) {
    std::string s = image;
    auto at = s.find('@');
    if (at != std::string::npos) s = s.substr(0, at);
    auto slash = s.rfind('/');
    if (slash != std::string::npos) s = s.substr(slash + 1);
    auto colon = s.find(':');
    if (colon != std::string::npos) s = s.substr(0, colon);
    return to_lower(s);
}

inline std::string module_basename(const std::string& module) {
    auto dot = module.rfind('.');
    return dot == std::string::npos ? module : module.substr(dot + 1);
}

}  // namespace detail

class StorageLookupTable {
public:
    static StorageLookupTable defaults() {
        StorageLookupTable table;
        StorageRule pg;
        pg.type = "postgresql";
        pg.default_port = 5432;
        pg.image_globs = {"postgres*"};
        pg.env_keys = {{"username", "POSTGRES_USER"},
                       {"password", "POSTGRES_PASSWORD"},
                       {"database", "POSTGRES_DB"}};
        pg.field_defaults = {{"username", "postgres"}, {"database", "@username"}};
        pg.modules = {{"postgresql_db",
                       {{"database", "name"},
                        {"host", "login_host"},
                        {"port", "login_port"},
                        {"username", "login_user"},
                        {"password", "login_password"}}},
                      {"postgresql_user",
                       {{"username", "name"},
                        {"password", "password"},
                        {"database", "db"},
                        {"host", "login_host"},
                        {"port", "login_port"}}}};
        pg.module_defaults = {{"host", "localhost"}, {"username", "postgres"}};
        table.rules_.push_back(std::move(pg));

        StorageRule mongo;
        mongo.type = "mongodb";
        mongo.default_port = 27017;
        mongo.image_globs = {"mongo*"};
        mongo.env_keys = {{"username", "MONGO_INITDB_ROOT_USERNAME"},
                          {"password", "MONGO_INITDB_ROOT_PASSWORD"},
                          {"database", "MONGO_INITDB_DATABASE"}};
        mongo.modules = {{"mongodb_user",
                          {{"username", "name"},
                           {"password", "password"},
                           {"database", "database"},
                           {"host", "login_host"},
                           {"port", "login_port"}}}};
        mongo.module_defaults = {{"host", "localhost"}};
        table.rules_.push_back(std::move(mongo));
        table.docker_modules_ = {"docker_container", "community.docker.docker_container"};
        return table;
    }

    static StorageLookupTable from_yaml(const std::string& text) {
        YAML::Node root = YAML::Load(text);
        StorageLookupTable table;
        if (root["docker_modules"])
            for (const auto& m : root["docker_modules"]) table.docker_modules_.push_back(m.Scalar());
        else
            table.docker_modules_ = {"docker_container", "community.docker.docker_container"};
        if (!root["storages"] || !root["storages"].IsSequence())
            throw std::invalid_argument("storage lookup table needs a storages sequence");
        for (const auto& entry : root["storages"]) {
            StorageRule rule;
            rule.type = entry["type"].as<std::string>();
            rule.default_port = entry["default_port"].as<int>();
            if (entry["images"])
                for (const auto& g : entry["images"]) rule.image_globs.push_back(g.Scalar());
            auto read_map = [](const YAML::Node& node, std::map<std::string, std::string>& out) {
                if (node && node.IsMap())
                    for (const auto& kv : node) out.emplace(kv.first.Scalar(), kv.second.Scalar());
            };
            read_map(entry["env_keys"], rule.env_keys);
            read_map(entry["defaults"], rule.field_defaults);
            read_map(entry["module_defaults"], rule.module_defaults);
            if (entry["modules"] && entry["modules"].IsMap())
                for (const auto& kv : entry["modules"])
                    read_map(kv.second, rule.modules[kv.first.Scalar()]);
            table.rules_.push_back(std::move(rule));
        }
        if (table.rules_.empty()) throw std::invalid_argument("storage lookup table is empty");
        return table;
    }

    const std::vector<StorageRule>& rules() const { return rules_; }
    std::vector<StorageRule>& rules() { return rules_; }

    const StorageRule* match_image(const std::string& image) const {
        std::string base = detail::image_basename(image);
        for (const auto& rule : rules_)
            for (const auto& glob : rule.image_globs)
                if (detail::glob_match(glob, base)) return &rule;
        return nullptr;
    }

    std::pair<const StorageRule*, const std::map<std::string, std::string>*> match_module(
        const std::string& module) const {
        std::string base = detail::module_basename(module);
        for (const auto& rule : rules_) {
            auto it = rule.modules.find(module);
            if (it == rule.modules.end()) it = rule.modules.find(base);
            if (it != rule.modules.end()) return {&rule, &it->second};
        }
        return {nullptr, nullptr};
    }

    bool is_docker_module(const std::string& module) const {
        return std::count(docker_modules_.begin(), docker_modules_.end(), module) > 0 ||
               std::count(docker_modules_.begin(), docker_modules_.end(),
                          detail::module_basename(module)) > 0;
    }

private:
    std::vector<StorageRule> rules_;
    std::vector<std::string> docker_modules_;
};

namespace detail {

// First published mapping's host-side port: "5433:5432" → 5433,
// "127.0.0.1:5433:5432" → 5433, bare container ports are not published.
inline std::optional<std::string> published_host_port(const std::string& entry) {
    std::string s = entry;
    auto proto = s.find('/');
    if (proto != std::string::npos) s = s.substr(0, proto);
    auto parts = split(s, ':');
    std::string host_part;
    if (parts.size() == 2)
        host_part = parts[0];
    else if (parts.size() == 3)
        host_part = parts[1];
    else
        return std::nullopt;
    auto dash = host_part.find('-');
    if (dash != std::string::npos) host_part = host_part.substr(0, dash);
    if (host_part.empty() ||
        host_part.find_first_not_of("0123456789") != std::string::npos)
        return std::nullopt;
    return host_part;
}

inline std::optional<std::string> port_from_mappings(const YAML::Node& ports,
                                                     const VariableSet& vars) {
    if (!ports || !ports.IsSequence()) return std::nullopt;
    for (const auto& entry : ports) {
        if (entry.IsScalar()) {
            auto resolved = vars.resolve(entry.Scalar());
            if (!resolved) continue;
            if (auto port = published_host_port(*resolved)) return port;
        } else if (entry.IsMap() && entry["published"]) {
            auto resolved = vars.resolve(scalar_text(entry["published"]));
            if (resolved && !resolved->empty()) return resolved;
        }
    }
    return std::nullopt;
}

inline std::map<std::string, std::string> env_entries(const YAML::Node& env) {
    std::map<std::string, std::string> out;
    if (!env) return out;
    if (env.IsMap()) {
        for (const auto& kv : env)
            if (kv.second.IsScalar()) out.emplace(kv.first.Scalar(), kv.second.Scalar());
    } else if (env.IsSequence()) {
        for (const auto& item : env) {
            if (!item.IsScalar()) continue;
            auto eq = item.Scalar().find('=');
            if (eq == std::string::npos) continue;
            out.emplace(item.Scalar().substr(0, eq), item.Scalar().substr(eq + 1));
        }
    }
    return out;
}

inline Field resolve_field(const std::string& raw, const VariableSet& vars, bool secret) {
    if (secret) {
        if (auto name = sole_placeholder(raw)) {
            const VariableBinding* win = vars.winner(*name);
            if (win && win->scope == VariableScope::process_environment_stub)
                return Field::env_ref(*name);
        }
    }
    auto value = vars.resolve(raw);
    if (!value) return Field::unresolved();
    return Field::of(*value);
}

struct RawService {
    std::map<std::string, std::string> env;  // raw values, env_file entries merged
    YAML::Node ports;
    std::string host;  // compose service name or container name ("" → unresolved)
};

inline ConnectionDescriptor descriptor_from_service(const StorageRule& rule, const RawService& svc,
                                                    const VariableSet& vars,
                                                    const std::string& path,
                                                    const std::string& locator) {
    ConnectionDescriptor d;
    d.storage_type = rule.type;
    d.source = {path, locator};
    d.host = svc.host.empty() ? Field::unresolved() : Field::of(svc.host);
    if (auto port = port_from_mappings(svc.ports, vars))
        d.port = Field::of(*port);
    else
        d.port = Field::of(std::to_string(rule.default_port));

    auto field_from_env = [&](const std::string& field, bool secret) -> Field {
        auto key_it = rule.env_keys.find(field);
        if (key_it != rule.env_keys.end()) {
            auto env_it = svc.env.find(key_it->second);
            if (env_it != svc.env.end()) return resolve_field(env_it->second, vars, secret);
        }
        auto def_it = rule.field_defaults.find(field);
        if (def_it == rule.field_defaults.end() || secret) return Field::unresolved();
        return Field::of(def_it->second);
    };
    d.username = field_from_env("username", false);
    d.password = field_from_env("password", true);
    d.database = field_from_env("database", false);
    if (d.database.is_resolved() && d.database.raw() == "@username")
        d.database = d.username.is_resolved() ? Field::of(d.username.raw()) : Field::unresolved();
    return d;
}

}  // namespace detail

inline std::vector<ConnectionDescriptor> extract_connections(const std::vector<IaCDocument>& docs,
                                                             const VariableSet& vars,
                                                             const StorageLookupTable& lookup) {
    std::vector<ConnectionDescriptor> out;

    auto harvest_container = [&](const detail::RawService& svc, const std::string& image_raw,
                                 const std::string& path, const std::string& locator) {
        auto image = vars.resolve(image_raw);
        if (!image) return;
        const StorageRule* rule = lookup.match_image(*image);
        if (!rule) return;
        out.push_back(detail::descriptor_from_service(*rule, svc, vars, path, locator));
    };

    std::function<void(const YAML::Node&, const std::string&, const std::string&)> walk_tasks =
        [&](const YAML::Node& tasks, const std::string& path, const std::string& prefix) {
            if (!tasks || !tasks.IsSequence()) return;
            for (std::size_t i = 0; i < tasks.size(); ++i) {
                const YAML::Node& task = tasks[i];
                if (!task.IsMap()) continue;
                std::string locator = prefix + "[" + std::to_string(i) + "]";
                if (task["block"]) {
                    walk_tasks(task["block"], path, locator + ".block");
                    continue;
                }
                for (const auto& kv : task) {
                    std::string key = kv.first.Scalar();
                    const YAML::Node& params = kv.second;
                    if (lookup.is_docker_module(key) && params.IsMap()) {
                        detail::RawService svc;
                        svc.env = detail::env_entries(params["env"]);
                        if (params["published_ports"])
                            svc.ports = params["published_ports"];
                        else if (params["ports"])
                            svc.ports = params["ports"];
                        if (params["name"] && params["name"].IsScalar()) {
                            auto host = vars.resolve(params["name"].Scalar());
                            svc.host = host ? *host : std::string();
                        }
                        if (params["image"] && params["image"].IsScalar())
                            harvest_container(svc, params["image"].Scalar(), path,
                                              locator + "." + key);
                        continue;
                    }
                    auto [rule, param_map] = lookup.match_module(key);
                    if (!rule || !params.IsMap()) continue;
                    ConnectionDescriptor d;
                    d.storage_type = rule->type;
                    d.source = {path, locator + "." + key};
                    auto field = [&](const std::string& name, bool secret) -> Field {
                        auto pit = param_map->find(name);
                        if (pit != param_map->end() && params[pit->second] &&
                            params[pit->second].IsScalar())
                            return detail::resolve_field(params[pit->second].Scalar(), vars,
                                                         secret);
                        auto dit = rule->module_defaults.find(name);
                        if (dit != rule->module_defaults.end() && !secret)
                            return Field::of(dit->second);
                        return Field::unresolved();
                    };
                    d.host = field("host", false);
                    d.username = field("username", false);
                    d.password = field("password", true);
                    d.database = field("database", false);
                    Field port = field("port", false);
                    d.port = port.is_resolved() ? port
                                                : Field::of(std::to_string(rule->default_port));
                    out.push_back(std::move(d));
                }
            }
        };

    for (const auto& doc : docs) {
        if (doc.dialect == Dialect::docker_compose) {
            const YAML::Node& services = doc.parsed["services"];
            for (const auto& kv : services) {
                if (!kv.second.IsMap()) continue;
                const std::string name = kv.first.Scalar();
                const YAML::Node& svc_node = kv.second;
                if (!svc_node["image"] || !svc_node["image"].IsScalar()) continue;
                detail::RawService svc;
                svc.host = name;
                svc.env = detail::env_entries(svc_node["environment"]);
                if (svc_node["ports"]) svc.ports = svc_node["ports"];
                if (svc_node["env_file"]) {
                    std::vector<std::string> files;
                    if (svc_node["env_file"].IsScalar())
                        files.push_back(svc_node["env_file"].Scalar());
                    else if (svc_node["env_file"].IsSequence())
                        for (const auto& f : svc_node["env_file"])
                            if (f.IsScalar()) files.push_back(f.Scalar());
                    for (const auto& b : vars.bindings)
                        for (const auto& f : files)
                            if (!b.shadowed && b.scope == VariableScope::env_file &&
                                (b.origin == f ||
                                 b.origin == detail::directory_of(doc.path) + f) &&
                                !svc.env.count(b.name))
                                svc.env.emplace(b.name, b.raw_value);
                }
                harvest_container(svc, svc_node["image"].Scalar(), doc.path, "services." + name);
            }
        } else if (doc.dialect == Dialect::ansible) {
            const YAML::Node& root = doc.parsed;
            bool is_play_list = false;
            for (const auto& entry : root)
                if (entry.IsMap() && (entry["hosts"] || entry["tasks"] || entry["roles"]))
                    is_play_list = true;
            if (is_play_list) {
                for (std::size_t p = 0; p < root.size(); ++p) {
                    std::string prefix = "plays[" + std::to_string(p) + "]";
                    for (const char* section : {"pre_tasks", "tasks", "post_tasks", "handlers"})
                        walk_tasks(root[p][section], doc.path, prefix + "." + section);
                }
            } else {
                walk_tasks(root, doc.path, "tasks");
            }
        }
    }

    std::sort(out.begin(), out.end(), [](const ConnectionDescriptor& a,
                                         const ConnectionDescriptor& b) {
        if (a.source.path != b.source.path) return a.source.path < b.source.path;
        return a.source.locator < b.source.locator;
    });
    return out;
}

}  // namespace teiresias::codeanalysis
