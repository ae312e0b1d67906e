#pragma once

#include <mutex>
#include <utility>

#include "teiresias/pgwire.hpp"
#include "teiresias/storage.hpp"

namespace teiresias::retrieval {

namespace pgdetail {

inline std::string quote_literal(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        out.push_back(c);
        if (c == '\'') out.push_back('\'');
    }
    out.push_back('\'');
    return out;
}

inline std::string quote_ident(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        out.push_back(c);
        if (c == '"') out.push_back('"');
    }
    out.push_back('"');
    return out;
}

// Collections are addressed as schema.table; a bare name means public.
inline std::pair<std::string, std::string> split_collection(const std::string& collection) {
    auto dot = collection.find('.');
    if (dot == std::string::npos) return {"public", collection};
    return {collection.substr(0, dot), collection.substr(dot + 1)};
}

inline std::string qualified(const std::string& collection) {
    auto [schema, table] = split_collection(collection);
    return quote_ident(schema) + "." + quote_ident(table);
}

}  // namespace pgdetail

// One connection per session; the engine runs one simple query at a time, so
// concurrent collection tasks sharing this session serialize on the mutex.
class PgSession : public StorageSession {
public:
    PgSession(std::string storage_id, pg::PgConnection::Params params)
        : storage_id_(std::move(storage_id)), conn_(std::move(params)) {}

    const std::string& storage_id() const override { return storage_id_; }

    Capabilities capabilities() const override { return {true, true}; }

    std::vector<std::string> list_collections() override {
        std::lock_guard lock(mutex_);
        auto res = conn_.query(
            "SELECT table_schema, table_name FROM information_schema.tables "
            "WHERE table_type = 'BASE TABLE' "
            "AND table_schema NOT IN ('pg_catalog', 'information_schema') "
            "ORDER BY table_schema, table_name");
        std::vector<std::string> out;
        for (const auto& row : res.rows) out.push_back(text(row, 0) + "." + text(row, 1));
        return out;
    }

    CollectionProfile profile(const std::string& collection, const SamplingConfig& cfg) override {
        std::lock_guard lock(mutex_);
        auto [schema, table] = pgdetail::split_collection(collection);

        CollectionProfile p;
        p.storage_ref = storage_id_;
        p.collection = collection;
        p.sampling = cfg;

        auto cols = conn_.query(
            "SELECT column_name, data_type FROM information_schema.columns "
            "WHERE table_schema = " + pgdetail::quote_literal(schema) +
            " AND table_name = " + pgdetail::quote_literal(table) +
            " ORDER BY ordinal_position");
        if (cols.rows.empty())
            throw std::runtime_error("unknown collection " + collection);
        for (const auto& row : cols.rows) {
            std::string declared = text(row, 1);
            p.attributes.push_back({text(row, 0), declared, indicator_for(declared)});
        }

        auto count = conn_.query("SELECT count(*) FROM " + pgdetail::qualified(collection));
        p.n = count.rows.empty() ? 0 : std::stoull(text(count.rows[0], 0));
        p.n_exact = true;

        auto pk = primary_key_columns(schema, table);
        std::string order;
        for (const auto& col : pk)
            order += (order.empty() ? " ORDER BY " : ", ") + pgdetail::quote_ident(col);
        auto sample = conn_.query("SELECT * FROM " + pgdetail::qualified(collection) + order +
                                  " LIMIT " + std::to_string(cfg.limit));

        std::vector<std::size_t> pk_index;
        for (const auto& col : pk)
            for (std::size_t i = 0; i < sample.fields.size(); ++i)
                if (sample.fields[i].name == col) pk_index.push_back(i);

        for (std::size_t r = 0; r < sample.rows.size(); ++r) {
            SampleEntity e;
            if (pk_index.empty()) {
                e.ref = "row:" + std::to_string(r + 1);
            } else {
                for (std::size_t i : pk_index) {
                    if (!e.ref.empty()) e.ref += "|";
                    e.ref += sample.fields[i].name + ":" + sample.rows[r][i].value_or("");
                }
            }
            for (std::size_t c = 0; c < sample.fields.size(); ++c)
                e.values[sample.fields[c].name] = {sample.rows[r][c].value_or("")};
            p.sample.push_back(std::move(e));
        }
        return p;
    }

    InPlaceResult count_matches(const std::string& collection, const std::string& attribute,
                                const analysis::CompiledPattern& pattern,
                                std::size_t ref_cap) override {
        std::lock_guard lock(mutex_);
        auto [schema, table] = pgdetail::split_collection(collection);
        std::string target = pgdetail::qualified(collection);
        std::string col = pgdetail::quote_ident(attribute);
        std::string re = pgdetail::quote_literal(pattern.regex_for(analysis::RegexDialect::postgres));
        InPlaceResult result;
        try {
            auto count = conn_.query("SELECT count(*) FROM " + target + " WHERE " + col +
                                     "::text ~ " + re);
            result.count = count.rows.empty() ? 0 : std::stoull(text(count.rows[0], 0));
            if (result.count > 0 && ref_cap > 0) {
                auto pk = primary_key_columns(schema, table);
                std::string ref_expr;
                for (const auto& pc : pk) {
                    if (!ref_expr.empty()) ref_expr += " || '|' || ";
                    ref_expr += pgdetail::quote_literal(pc + ":") + " || " +
                                pgdetail::quote_ident(pc) + "::text";
                }
                if (ref_expr.empty()) ref_expr = "'row:?'";
                auto refs = conn_.query("SELECT " + ref_expr + " FROM " + target + " WHERE " + col +
                                        "::text ~ " + re + " LIMIT " + std::to_string(ref_cap));
                for (const auto& row : refs.rows) result.refs.push_back(text(row, 0));
            }
        } catch (const pg::PgError& e) {
            // 2201B: invalid regular expression. The portable subset should
            // never trip it, but an engine rejection must degrade to the
            // sample path, not fail the branch.
            if (e.code().rfind("2201", 0) == 0) {
                result = InPlaceResult{};
                result.engine_rejected = true;
                return result;
            }
            throw;
        }
        return result;
    }

    void close() override {
        std::lock_guard lock(mutex_);
        conn_.close();
    }

private:
    static std::string text(const std::vector<std::optional<std::string>>& row, std::size_t i) {
        if (i >= row.size() || !row[i]) return "";
        return *row[i];
    }

    std::vector<std::string> primary_key_columns(const std::string& schema,
                                                 const std::string& table) {
        auto res = conn_.query(
            "SELECT a.attname FROM pg_index i "
            "JOIN pg_class c ON c.oid = i.indrelid "
            "JOIN pg_namespace n ON n.oid = c.relnamespace "
            "JOIN pg_attribute a ON a.attrelid = i.indrelid AND a.attnum = ANY(i.indkey) "
            "WHERE i.indisprimary AND n.nspname = " + pgdetail::quote_literal(schema) +
            " AND c.relname = " + pgdetail::quote_literal(table) +
            " ORDER BY array_position(i.indkey, a.attnum)");
        std::vector<std::string> out;
        for (const auto& row : res.rows) out.push_back(text(row, 0));
        return out;
    }

    std::string storage_id_;
    std::mutex mutex_;
    pg::PgConnection conn_;
};

class PgAdapter : public StorageAdapter {
public:
    std::string type() const override { return "postgresql"; }

    Capabilities capabilities() const override { return {true, true}; }

    std::shared_ptr<StorageSession> connect(const ConnectionDescriptor& d) override {
        pg::PgConnection::Params params;
        params.host = d.host.resolve().value_or("");
        params.port = d.port_number().value_or(5432);
        params.database = d.database.resolve().value_or("");
        params.user = d.username.resolve().value_or("");
        auto password = d.password.resolve();
        if (!password)
            throw std::runtime_error("descriptor " + d.stable_id() +
                                     ": password reference did not resolve");
        params.password = *password;
        return std::make_shared<PgSession>(d.stable_id(), std::move(params));
    }
};

}  // namespace teiresias::retrieval
