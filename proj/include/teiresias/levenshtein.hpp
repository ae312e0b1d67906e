#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "teiresias/common.hpp"

namespace teiresias::analysis {

inline size_t levenshtein_distance(std::string_view a, std::string_view b) {
    if (a.empty()) return b.size();
    if (b.empty()) return a.size();
    std::vector<size_t> prev(b.size() + 1);
    std::vector<size_t> cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= b.size(); ++j) {
            size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

// Splits an attribute name into lowercase tokens on separator characters
// and lower-to-upper camel-case boundaries ("userName" -> {"user","name"}).
inline std::vector<std::string> tokenize_attribute(std::string_view name) {
    std::vector<std::string> tokens;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            tokens.push_back(to_lower(cur));
            cur.clear();
        }
    };
    char prev = '\0';
    for (char c : name) {
        if (c == '_' || c == '-' || c == '.' || std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else {
            if (std::isupper(static_cast<unsigned char>(c)) &&
                std::islower(static_cast<unsigned char>(prev))) {
                flush();
            }
            cur.push_back(c);
        }
        prev = c;
    }
    flush();
    return tokens;
}

inline double length_normalized_similarity(std::string_view a, std::string_view b) {
    size_t maxlen = std::max(a.size(), b.size());
    if (maxlen == 0) return 0.0;
    size_t d = levenshtein_distance(a, b);
    return 100.0 * (1.0 - static_cast<double>(d) / static_cast<double>(maxlen));
}

// Proximity of an attribute name to a keyword on a 0..100 scale: the best
// length-normalized Levenshtein similarity over the whole normalized name
// and each of its tokens.
inline double similarity(std::string_view attribute_name, std::string_view keyword) {
    std::string whole = to_lower(trim(attribute_name));
    std::string key = to_lower(trim(keyword));
    if (whole.empty() || key.empty()) return 0.0;
    double best = length_normalized_similarity(whole, key);
    for (const auto& token : tokenize_attribute(whole)) {
        if (token == whole) continue;
        best = std::max(best, length_normalized_similarity(token, key));
    }
    return best;
}

}  // namespace teiresias::analysis
