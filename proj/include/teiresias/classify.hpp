#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "teiresias/keywords.hpp"
#include "teiresias/levenshtein.hpp"
#include "teiresias/patterns.hpp"
#include "teiresias/storage.hpp"

namespace teiresias::analysis {

inline constexpr double kProximityThreshold = 60.0;
inline constexpr std::size_t kEntityRefCap = 100;

struct ProximityScore {
    std::string attribute;
    std::string keyword;
    double similarity = 0.0;  // retained scores satisfy similarity >= 60

    bool operator==(const ProximityScore&) const = default;
};

// Per attribute: the best-scoring keyword, plus a synthetic 100 against the
// indicator keyword when the declared type carries one. Scores below the
// threshold are dropped; (attribute, keyword) duplicates keep the maximum.
// Sorted by similarity descending, then attribute, then keyword.
inline std::vector<ProximityScore> metadata_proximities(
    const std::vector<retrieval::AttributeMeta>& attributes, const KeywordTable& keywords) {
    std::vector<ProximityScore> scores;
    for (const auto& attr : attributes) {
        const std::string* best_keyword = nullptr;
        double best = -1.0;
        for (const auto& kw : keywords.keywords()) {
            double s = similarity(attr.name, kw);
            if (s > best) {  // earlier table entries win ties
                best = s;
                best_keyword = &kw;
            }
        }
        if (best_keyword && best >= kProximityThreshold)
            scores.push_back({attr.name, *best_keyword, best});
        if (attr.type_indicator) {
            ProximityScore synthetic{attr.name, *attr.type_indicator, 100.0};
            auto same = std::find_if(scores.begin(), scores.end(), [&](const ProximityScore& p) {
                return p.attribute == synthetic.attribute && p.keyword == synthetic.keyword;
            });
            if (same == scores.end())
                scores.push_back(std::move(synthetic));
            else
                same->similarity = std::max(same->similarity, synthetic.similarity);
        }
    }
    std::sort(scores.begin(), scores.end(), [](const ProximityScore& a, const ProximityScore& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        if (a.attribute != b.attribute) return a.attribute < b.attribute;
        return a.keyword < b.keyword;
    });
    return scores;
}

struct PatternMatches {
    std::string pattern_id;
    std::uint64_t count = 0;
    std::vector<std::string> refs;  // at most kEntityRefCap per (collection, pattern)
    std::string coverage;           // "full" (engine-side) or "sample"
    bool fallback = false;          // engine rejected the pattern, sample path used
};

struct DataMatchOutcome {
    std::vector<PatternMatches> per_pattern;
    std::uint64_t total = 0;
};

inline std::uint64_t sample_side_count(const std::vector<retrieval::SampleEntity>& sample,
                                       const std::string& attribute, const CompiledPattern& pattern,
                                       std::vector<std::string>& refs, std::size_t ref_cap) {
    std::uint64_t count = 0;
    for (const auto& entity : sample) {
        auto it = entity.values.find(attribute);
        if (it == entity.values.end()) continue;
        bool hit = false;
        for (const auto& v : it->second)
            if (pattern.matches(v)) {
                hit = true;
                break;
            }
        if (!hit) continue;
        ++count;
        if (refs.size() < ref_cap) refs.push_back(entity.ref);
    }
    return count;
}

// Every attribute is tested against every pattern. Engine-side evaluation is
// used when the session supports it and the sample cannot cover the
// collection (n > sample limit); engine rejections fall back to the sample
// with the fallback recorded.
inline DataMatchOutcome data_matches(const retrieval::CollectionProfile& profile,
                                     const PatternTable& patterns,
                                     retrieval::StorageSession* session = nullptr) {
    DataMatchOutcome out;
    bool want_in_place = session && session->capabilities().supports_in_place_regex &&
                         profile.n > profile.sampling.limit;
    for (const auto& pattern : patterns.patterns()) {
        PatternMatches pm;
        pm.pattern_id = pattern.id();
        pm.coverage = want_in_place ? "full" : "sample";
        for (const auto& attr : profile.attributes) {
            if (want_in_place && pattern.engine_evaluable()) {
                std::size_t room = kEntityRefCap - pm.refs.size();
                auto r = session->count_matches(profile.collection, attr.name, pattern, room);
                if (!r.engine_rejected) {
                    pm.count += r.count;
                    for (auto& ref : r.refs)
                        if (pm.refs.size() < kEntityRefCap) pm.refs.push_back(std::move(ref));
                    continue;
                }
            }
            if (want_in_place) {
                pm.fallback = true;
                pm.coverage = "sample";
            }
            pm.count += sample_side_count(profile.sample, attr.name, pattern, pm.refs, kEntityRefCap);
        }
        out.total += pm.count;
        out.per_pattern.push_back(std::move(pm));
    }
    return out;
}

// β: mean of retained proximities, clamped against floating-point dust so a
// non-empty set always lands inside [60, 100] exactly.
inline double compute_beta(const std::vector<ProximityScore>& retained) {
    if (retained.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& p : retained) sum += p.similarity;
    return std::clamp(sum / static_cast<double>(retained.size()), 60.0, 100.0);
}

inline int compute_alpha(std::uint64_t total_matches) { return total_matches > 0 ? 1 : 0; }

// T = min(1, n) · max(α, β/100)
inline double compute_t(std::uint64_t n, int alpha, double beta) {
    return std::min(1.0, static_cast<double>(n)) *
           std::max(static_cast<double>(alpha), beta / 100.0);
}

struct ClassificationResult {
    std::string storage_ref;
    std::string collection;
    std::uint64_t n = 0;
    std::uint64_t data_match_count = 0;
    int alpha = 0;
    double beta = 0.0;
    double t = 0.0;
    bool personal = false;

    std::vector<ProximityScore> proximities;
    std::vector<PatternMatches> pattern_matches;
    std::vector<std::string> type_indicators;

    // Evidence carries counts, scores and references only, never data values.
    nlohmann::json to_json() const {
        nlohmann::json prox = nlohmann::json::array();
        for (const auto& p : proximities)
            prox.push_back({{"attribute", p.attribute},
                            {"keyword", p.keyword},
                            {"similarity", p.similarity}});
        nlohmann::json pats = nlohmann::json::array();
        for (const auto& m : pattern_matches) {
            nlohmann::json mj = {{"pattern", m.pattern_id},
                                 {"count", m.count},
                                 {"coverage", m.coverage},
                                 {"refs", m.refs}};
            if (m.fallback) mj["fallback"] = true;
            pats.push_back(mj);
        }
        return nlohmann::json{{"storage", storage_ref},
                              {"collection", collection},
                              {"n", n},
                              {"data_matches", data_match_count},
                              {"alpha", alpha},
                              {"beta", beta},
                              {"t", t},
                              {"personal", personal},
                              {"proximities", prox},
                              {"pattern_matches", pats},
                              {"type_indicators", type_indicators}};
    }

    static ClassificationResult from_json(const nlohmann::json& j) {
        ClassificationResult r;
        r.storage_ref = j.value("storage", "");
        r.collection = j.value("collection", "");
        r.n = j.value("n", std::uint64_t{0});
        r.data_match_count = j.value("data_matches", std::uint64_t{0});
        r.alpha = j.value("alpha", 0);
        r.beta = j.value("beta", 0.0);
        r.t = j.value("t", 0.0);
        r.personal = j.value("personal", false);
        for (const auto& p : j.value("proximities", nlohmann::json::array()))
            r.proximities.push_back({p.value("attribute", ""), p.value("keyword", ""),
                                     p.value("similarity", 0.0)});
        for (const auto& m : j.value("pattern_matches", nlohmann::json::array())) {
            PatternMatches pm;
            pm.pattern_id = m.value("pattern", "");
            pm.count = m.value("count", std::uint64_t{0});
            pm.coverage = m.value("coverage", "");
            pm.fallback = m.value("fallback", false);
            for (const auto& ref : m.value("refs", nlohmann::json::array()))
                pm.refs.push_back(ref.get<std::string>());
            r.pattern_matches.push_back(std::move(pm));
        }
        for (const auto& ti : j.value("type_indicators", nlohmann::json::array()))
            r.type_indicators.push_back(ti.get<std::string>());
        return r;
    }
};

inline ClassificationResult classify(const retrieval::CollectionProfile& profile,
                                     std::vector<ProximityScore> proximities,
                                     DataMatchOutcome matches) {
    ClassificationResult r;
    r.storage_ref = profile.storage_ref;
    r.collection = profile.collection;
    r.n = profile.n;
    r.data_match_count = matches.total;
    r.alpha = compute_alpha(matches.total);
    r.beta = compute_beta(proximities);
    r.t = compute_t(r.n, r.alpha, r.beta);
    r.personal = r.t > 0.0;
    r.proximities = std::move(proximities);
    r.pattern_matches = std::move(matches.per_pattern);
    for (const auto& attr : profile.attributes)
        if (attr.type_indicator)
            r.type_indicators.push_back(attr.name + ":" + *attr.type_indicator);
    return r;
}

}  // namespace teiresias::analysis
