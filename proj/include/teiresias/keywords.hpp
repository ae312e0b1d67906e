#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "teiresias/common.hpp"

namespace teiresias::analysis {

// Lookup table of attribute-name keywords that hint at personal data.
// Order matters: the earliest keyword wins similarity ties.
class KeywordTable {
public:
    KeywordTable() = default;

    explicit KeywordTable(std::vector<std::string> keywords) {
        std::set<std::string> seen;
        for (auto& k : keywords) {
            std::string norm = to_lower(trim(k));
            if (norm.empty()) continue;
            if (seen.insert(norm).second) keywords_.push_back(std::move(norm));
        }
        if (keywords_.empty()) throw std::invalid_argument("keyword table must not be empty");
    }

    static KeywordTable defaults() {
        return KeywordTable({"name", "firstname", "lastname", "surname", "fullname",
                             "email", "mail", "address", "phone", "mobile", "ip",
                             "user", "username", "birthdate", "ssn", "social",
                             "credit", "card", "passport", "iban", "location"});
    }

    static KeywordTable from_yaml(const std::string& text) {
        YAML::Node root = YAML::Load(text);
        std::vector<std::string> kws;
        YAML::Node list = root.IsSequence() ? root : root["keywords"];
        if (!list || !list.IsSequence())
            throw std::invalid_argument("keyword file must hold a 'keywords' list");
        for (const auto& entry : list) kws.push_back(entry.as<std::string>());
        return KeywordTable(std::move(kws));
    }

    const std::vector<std::string>& keywords() const { return keywords_; }
    bool empty() const { return keywords_.empty(); }

private:
    std::vector<std::string> keywords_;
};

}  // namespace teiresias::analysis
