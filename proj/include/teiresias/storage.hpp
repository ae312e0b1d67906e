#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "teiresias/connection.hpp"
#include "teiresias/patterns.hpp"

namespace teiresias::retrieval {

struct SamplingConfig {
    std::size_t limit = 10000;
    std::string method = "head";  // deterministic head-of-order; seed reserved
    std::uint64_t seed = 0;
};

struct Capabilities {
    bool supports_in_place_regex = false;
    bool supports_count = false;
};

// Declared storage type → personal-data hint. Fixed table by contract; the
// hint value is the keyword the hint scores against.
inline std::optional<std::string> indicator_for(const std::string& declared_type) {
    std::string t = to_lower(trim(declared_type));
    if (t == "inet" || t == "cidr") return "ip";
    return std::nullopt;
}

struct AttributeMeta {
    std::string name;
    std::string declared_type;
    std::optional<std::string> type_indicator;
};

// One sampled entity: a stable reference plus attribute values. Values are a
// vector because document attributes can hold arrays.
struct SampleEntity {
    std::string ref;
    std::map<std::string, std::vector<std::string>> values;
};

struct CollectionProfile {
    std::string storage_ref;  // descriptor stable id
    std::string collection;
    std::vector<AttributeMeta> attributes;
    std::uint64_t n = 0;
    bool n_exact = true;  // false when the engine offers no cheap exact count
    std::vector<SampleEntity> sample;
    SamplingConfig sampling;

    // Report-safe view: everything except the sampled values.
    nlohmann::json metadata_json() const {
        nlohmann::json attrs = nlohmann::json::array();
        for (const auto& a : attributes) {
            nlohmann::json aj = {{"name", a.name}, {"declared_type", a.declared_type}};
            if (a.type_indicator) aj["type_indicator"] = *a.type_indicator;
            attrs.push_back(aj);
        }
        return nlohmann::json{{"storage", storage_ref},
                              {"collection", collection},
                              {"attributes", attrs},
                              {"n", n},
                              {"n_exact", n_exact},
                              {"sample_size", sample.size()},
                              {"sampling",
                               {{"limit", sampling.limit},
                                {"method", sampling.method},
                                {"seed", sampling.seed}}}};
    }
};

struct InPlaceResult {
    std::uint64_t count = 0;
    std::vector<std::string> refs;
    bool engine_rejected = false;  // caller falls back to sample-side matching
};

class StorageSession {
public:
    virtual ~StorageSession() = default;

    virtual const std::string& storage_id() const = 0;
    virtual Capabilities capabilities() const = 0;
    virtual std::vector<std::string> list_collections() = 0;
    virtual CollectionProfile profile(const std::string& collection, const SamplingConfig& cfg) = 0;

    // Count of entities whose attribute value matches, evaluated storage-side,
    // plus at most ref_cap entity references. Only meaningful when
    // capabilities().supports_in_place_regex.
    virtual InPlaceResult count_matches(const std::string& collection, const std::string& attribute,
                                        const analysis::CompiledPattern& pattern,
                                        std::size_t ref_cap) = 0;

    virtual void close() {}
};

class StorageAdapter {
public:
    virtual ~StorageAdapter() = default;
    virtual std::string type() const = 0;
    virtual Capabilities capabilities() const = 0;

    // Sessions are read-only; adapters must tolerate concurrent sessions
    // against the same storage.
    virtual std::shared_ptr<StorageSession> connect(const ConnectionDescriptor& d) = 0;
};

class AdapterRegistry {
public:
    void add(std::shared_ptr<StorageAdapter> adapter) {
        adapters_[adapter->type()] = std::move(adapter);
    }

    std::shared_ptr<StorageAdapter> find(const std::string& storage_type) const {
        auto it = adapters_.find(storage_type);
        return it == adapters_.end() ? nullptr : it->second;
    }

private:
    std::map<std::string, std::shared_ptr<StorageAdapter>> adapters_;
};

// Connection readiness is adapter-specific: file storages need only a data
// path, network storages the full credential set.
inline bool connection_ready(const ConnectionDescriptor& d) {
    if (d.storage_type == "file") return d.database.is_resolved();
    return d.complete();
}

// Rejects incomplete descriptors before any connection attempt; connection or
// authentication faults surface as exceptions from the adapter and fail the
// calling branch only.
inline std::shared_ptr<StorageSession> open_session(const AdapterRegistry& adapters,
                                                    const ConnectionDescriptor& d) {
    if (!connection_ready(d))
        throw std::runtime_error("descriptor " + d.stable_id() + " incomplete: manual completion required");
    auto adapter = adapters.find(d.storage_type);
    if (!adapter) throw std::runtime_error("no adapter for storage type " + d.storage_type);
    return adapter->connect(d);
}

}  // namespace teiresias::retrieval
