#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "teiresias/storage.hpp"

namespace teiresias::analysis {

// Flattening rules for submitted documents: object keys join with dots into
// attribute paths; arrays contribute value multiplicity, not path segments; a
// root-level array is a list of entities. Scalars at the root (or as array
// elements) flatten under the attribute "value". Nulls carry no value.
namespace detail {

inline void flatten_into(const nlohmann::json& node, const std::string& path,
                         std::map<std::string, std::vector<std::string>>& out,
                         std::map<std::string, std::string>& types) {
    if (node.is_object()) {
        for (const auto& [key, value] : node.items())
            flatten_into(value, path.empty() ? key : path + "." + key, out, types);
        return;
    }
    if (node.is_array()) {
        for (const auto& element : node) flatten_into(element, path, out, types);
        return;
    }
    if (node.is_null()) return;
    std::string key = path.empty() ? "value" : path;
    std::string text = node.is_string() ? node.get<std::string>() : node.dump();
    out[key].push_back(std::move(text));
    types.try_emplace(key, node.is_string()   ? "string"
                           : node.is_boolean() ? "bool"
                                               : "number");
}

}  // namespace detail

struct FlattenedDocument {
    std::vector<retrieval::SampleEntity> entities;
    std::map<std::string, std::string> attribute_types;  // union of keys
};

inline FlattenedDocument flatten_document(const nlohmann::json& doc) {
    FlattenedDocument f;
    std::vector<const nlohmann::json*> roots;
    if (doc.is_array())
        for (const auto& element : doc) roots.push_back(&element);
    else if (doc.is_object() && doc.empty())
        ;  // zero entities
    else
        roots.push_back(&doc);
    for (std::size_t i = 0; i < roots.size(); ++i) {
        retrieval::SampleEntity e;
        e.ref = "doc:" + std::to_string(i + 1);
        detail::flatten_into(*roots[i], "", e.values, f.attribute_types);
        f.entities.push_back(std::move(e));
    }
    return f;
}

inline retrieval::CollectionProfile profile_from_document(const std::string& identifier,
                                                          const nlohmann::json& doc,
                                                          const retrieval::SamplingConfig& cfg) {
    FlattenedDocument f = flatten_document(doc);
    retrieval::CollectionProfile p;
    p.storage_ref = "api";
    p.collection = identifier;
    p.n = f.entities.size();
    p.n_exact = true;
    p.sampling = cfg;
    for (const auto& [name, type] : f.attribute_types)
        p.attributes.push_back({name, type, std::nullopt});
    if (f.entities.size() > cfg.limit) f.entities.resize(cfg.limit);
    p.sample = std::move(f.entities);
    return p;
}

}  // namespace teiresias::analysis
