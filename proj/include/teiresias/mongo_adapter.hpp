#pragma once

#include <algorithm>
#include <mutex>

#include "teiresias/document.hpp"
#include "teiresias/mongowire.hpp"
#include "teiresias/storage.hpp"

namespace teiresias::retrieval {

namespace mongodetail {

// Collapses the BSON decoder's wrapper objects to scalars so attribute paths
// never contain $-keys. Binary and decimal payloads carry no text value.
inline nlohmann::json normalize(const bson::WireDoc& v) {
    if (v.is_object()) {
        if (v.contains("$oid")) return v["$oid"].get<std::string>();
        if (v.contains("$date")) return v["$date"].get<std::int64_t>();
        if (v.contains("$timestamp")) return v["$timestamp"].get<std::uint64_t>();
        if (v.contains("$regex")) return v["$regex"].get<std::string>();
        if (v.contains("$binary_raw")) return "";
        if (v.contains("$decimal128_bytes")) return "";
        nlohmann::json out = nlohmann::json::object();
        for (const auto& [key, value] : v.items()) out[key] = normalize(value);
        return out;
    }
    if (v.is_array()) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& element : v) out.push_back(normalize(element));
        return out;
    }
    return v;
}

inline std::string id_text(const nlohmann::json& id) {
    if (id.is_string()) return id.get<std::string>();
    return id.dump();
}

}  // namespace mongodetail

// One connection per session, serialized on the mutex: the wire client runs
// one request at a time.
class MongoSession : public StorageSession {
public:
    MongoSession(std::string storage_id, mongo::MongoConnection::Params params, std::string db)
        : storage_id_(std::move(storage_id)), db_(std::move(db)), conn_(std::move(params)) {}

    const std::string& storage_id() const override { return storage_id_; }

    Capabilities capabilities() const override { return {true, true}; }

    std::vector<std::string> list_collections() override {
        std::lock_guard lock(mutex_);
        auto reply = conn_.command(db_, bson::WireDoc{{"listCollections", 1},
                                                      {"nameOnly", true},
                                                      {"filter", bson::WireDoc{{"type", "collection"}}}});
        std::vector<std::string> out;
        for (const auto& entry : reply["cursor"]["firstBatch"])
            out.push_back(entry.value("name", std::string()));
        std::sort(out.begin(), out.end());
        return out;
    }

    CollectionProfile profile(const std::string& collection, const SamplingConfig& cfg) override {
        std::lock_guard lock(mutex_);
        CollectionProfile p;
        p.storage_ref = storage_id_;
        p.collection = collection;
        p.sampling = cfg;
        p.n = exact_count(collection, bson::WireDoc::object());
        p.n_exact = true;

        std::map<std::string, std::string> types;
        for (const auto& doc : sample_documents(collection, cfg.limit)) {
            nlohmann::json plain = mongodetail::normalize(doc);
            SampleEntity e;
            e.ref = plain.contains("_id") ? "_id:" + mongodetail::id_text(plain["_id"])
                                          : "doc:" + std::to_string(p.sample.size() + 1);
            analysis::detail::flatten_into(plain, "", e.values, types);
            p.sample.push_back(std::move(e));
        }
        for (const auto& [name, type] : types)
            p.attributes.push_back({name, type, indicator_for(type)});
        return p;
    }

    InPlaceResult count_matches(const std::string& collection, const std::string& attribute,
                                const analysis::CompiledPattern& pattern,
                                std::size_t ref_cap) override {
        std::lock_guard lock(mutex_);
        std::string re = pattern.regex_for(analysis::RegexDialect::mongo);
        bson::WireDoc filter = bson::WireDoc::object();
        filter[attribute] = bson::WireDoc{{"$regex", re}};
        InPlaceResult result;
        try {
            result.count = exact_count(collection, filter);
            if (result.count > 0 && ref_cap > 0) {
                auto found = conn_.command(
                    db_, bson::WireDoc{{"find", collection},
                                       {"filter", filter},
                                       {"projection", bson::WireDoc{{"_id", 1}}},
                                       {"limit", static_cast<std::int64_t>(ref_cap)}});
                for (const auto& doc : found["cursor"]["firstBatch"]) {
                    nlohmann::json plain = mongodetail::normalize(doc);
                    if (plain.contains("_id"))
                        result.refs.push_back("_id:" + mongodetail::id_text(plain["_id"]));
                }
            }
        } catch (const mongo::MongoError& e) {
            // 51091 / 51108: invalid $regex expression or options. Degrade to
            // the sample path instead of failing the branch.
            if (e.code() == 51091 || e.code() == 51108) {
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
    std::uint64_t exact_count(const std::string& collection, const bson::WireDoc& filter) {
        bson::WireDoc pipeline = bson::WireDoc::array();
        if (!filter.empty()) pipeline.push_back(bson::WireDoc{{"$match", filter}});
        pipeline.push_back(bson::WireDoc{{"$count", "n"}});
        auto reply = conn_.command(db_, bson::WireDoc{{"aggregate", collection},
                                                      {"pipeline", pipeline},
                                                      {"cursor", bson::WireDoc::object()}});
        const auto& batch = reply["cursor"]["firstBatch"];
        if (batch.empty()) return 0;  // $count emits nothing for an empty input set
        return batch[0].value("n", std::uint64_t{0});
    }

    // Natural-order head sample; limit doubles as batch size so the cursor is
    // normally exhausted in one reply.
    std::vector<bson::WireDoc> sample_documents(const std::string& collection, std::size_t limit) {
        std::vector<bson::WireDoc> docs;
        if (limit == 0) return docs;
        auto reply = conn_.command(db_,
                                   bson::WireDoc{{"find", collection},
                                                 {"limit", static_cast<std::int64_t>(limit)},
                                                 {"batchSize", static_cast<std::int64_t>(limit)}});
        std::int64_t cursor_id = reply["cursor"].value("id", std::int64_t{0});
        for (const auto& doc : reply["cursor"]["firstBatch"]) docs.push_back(doc);
        while (cursor_id != 0 && docs.size() < limit) {
            auto more = conn_.command(
                db_, bson::WireDoc{{"getMore", bson::WireDoc{{"$long", cursor_id}}},
                                   {"collection", collection},
                                   {"batchSize", static_cast<std::int64_t>(limit - docs.size())}});
            cursor_id = more["cursor"].value("id", std::int64_t{0});
            for (const auto& doc : more["cursor"]["nextBatch"]) docs.push_back(doc);
        }
        if (cursor_id != 0) {
            bson::WireDoc ids = bson::WireDoc::array();
            ids.push_back(bson::WireDoc{{"$long", cursor_id}});
            conn_.command(db_, bson::WireDoc{{"killCursors", collection}, {"cursors", ids}});
        }
        if (docs.size() > limit) docs.resize(limit);
        return docs;
    }

    std::string storage_id_;
    std::string db_;
    std::mutex mutex_;
    mongo::MongoConnection conn_;
};

// Credentials authenticate against the admin database, matching the stock
// container bootstrap; per-database users are out of scope for v1.
class MongoAdapter : public StorageAdapter {
public:
    std::string type() const override { return "mongodb"; }

    Capabilities capabilities() const override { return {true, true}; }

    std::shared_ptr<StorageSession> connect(const ConnectionDescriptor& d) override {
        mongo::MongoConnection::Params params;
        params.host = d.host.resolve().value_or("");
        params.port = d.port_number().value_or(27017);
        params.user = d.username.resolve().value_or("");
        auto password = d.password.resolve();
        if (!password)
            throw std::runtime_error("descriptor " + d.stable_id() +
                                     ": password reference did not resolve");
        params.password = *password;
        auto db = d.database.resolve();
        if (!db) throw std::runtime_error("descriptor " + d.stable_id() + " lacks a database");
        return std::make_shared<MongoSession>(d.stable_id(), std::move(params), *db);
    }
};

}  // namespace teiresias::retrieval
