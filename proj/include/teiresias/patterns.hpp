#pragma once

#include <cstdint>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "teiresias/common.hpp"

namespace teiresias::analysis {

// Per-cell feature bits, cheap to precompute at load time and cheap to test
// before running a full regex over a value.
using FeatureMask = uint16_t;

namespace feature {
constexpr FeatureMask has_dot = 1u << 0;
constexpr FeatureMask has_at = 1u << 1;
constexpr FeatureMask has_dash = 1u << 2;
constexpr FeatureMask has_colon = 1u << 3;
constexpr FeatureMask has_slash = 1u << 4;
constexpr FeatureMask has_space = 1u << 5;
constexpr FeatureMask has_digit = 1u << 6;
constexpr FeatureMask has_upper = 1u << 7;
constexpr FeatureMask has_alpha = 1u << 8;
constexpr FeatureMask digits_ge_13 = 1u << 9;
}  // namespace feature

inline FeatureMask cell_features(std::string_view v) {
    FeatureMask m = 0;
    int digits = 0;
    for (unsigned char c : v) {
        switch (c) {
            case '.': m |= feature::has_dot; break;
            case '@': m |= feature::has_at; break;
            case '-': m |= feature::has_dash; break;
            case ':': m |= feature::has_colon; break;
            case '/': m |= feature::has_slash; break;
            case ' ': m |= feature::has_space; break;
            default:
                if (c >= '0' && c <= '9') {
                    m |= feature::has_digit;
                    ++digits;
                } else if (c >= 'A' && c <= 'Z') {
                    m |= feature::has_upper | feature::has_alpha;
                } else if (c >= 'a' && c <= 'z') {
                    m |= feature::has_alpha;
                }
        }
    }
    if ((m & feature::has_digit) && digits >= 13) m |= feature::digits_ge_13;
    return m;
}

enum class Validator { none, luhn };

enum class RegexDialect { ecma, postgres, mongo };

struct Prefilter {
    std::string required_chars;  // every listed char must occur in the value
    int min_digits = 0;
    bool requires_digit = false;
    bool requires_upper = false;
};

struct PatternSpec {
    std::string id;
    std::string category;
    std::string regex;  // portable subset: no backreferences, no lookaround
    Validator validator = Validator::none;
    Prefilter prefilter;
};

inline bool luhn_check(std::string_view digits) {
    int sum = 0;
    bool alternate = false;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
        int n = *it - '0';
        if (alternate) {
            n *= 2;
            if (n > 9) n -= 9;
        }
        sum += n;
        alternate = !alternate;
    }
    return sum % 10 == 0;
}

// Rejects constructs outside the portable dialect so shipped patterns stay
// translatable to both storage-engine regex flavors.
inline void check_portable_regex(const std::string& re, const std::string& id) {
    for (size_t i = 0; i + 1 < re.size(); ++i) {
        if (re[i] == '\\' && re[i + 1] >= '1' && re[i + 1] <= '9')
            throw std::invalid_argument("pattern " + id + ": backreferences are not portable");
        if (re[i] == '(' && re[i + 1] == '?') {
            char c = i + 2 < re.size() ? re[i + 2] : '\0';
            if (c == '=' || c == '!' || c == '<')
                throw std::invalid_argument("pattern " + id + ": lookaround is not portable");
        }
    }
}

class CompiledPattern {
public:
    explicit CompiledPattern(PatternSpec spec) : spec_(std::move(spec)) {
        check_portable_regex(spec_.regex, spec_.id);
        try {
            re_ = std::regex(spec_.regex, std::regex::ECMAScript | std::regex::optimize);
        } catch (const std::regex_error& e) {
            throw std::invalid_argument("pattern " + spec_.id + ": " + e.what());
        }
        mask_usable_ = true;
        for (char c : spec_.prefilter.required_chars) {
            switch (c) {
                case '.': required_mask_ |= feature::has_dot; break;
                case '@': required_mask_ |= feature::has_at; break;
                case '-': required_mask_ |= feature::has_dash; break;
                case ':': required_mask_ |= feature::has_colon; break;
                case '/': required_mask_ |= feature::has_slash; break;
                case ' ': required_mask_ |= feature::has_space; break;
                default: mask_usable_ = false;
            }
        }
        if (spec_.prefilter.requires_digit) required_mask_ |= feature::has_digit;
        if (spec_.prefilter.requires_upper) required_mask_ |= feature::has_upper;
        if (spec_.prefilter.min_digits > 0) {
            if (spec_.prefilter.min_digits <= 13)
                required_mask_ |= feature::digits_ge_13;
            else
                mask_usable_ = false;
        }
    }

    const PatternSpec& spec() const { return spec_; }
    const std::string& id() const { return spec_.id; }

    // Patterns with a client-side validator cannot be fully evaluated by a
    // remote storage engine.
    bool engine_evaluable() const { return spec_.validator == Validator::none; }

    bool mask_usable() const { return mask_usable_; }
    FeatureMask required_mask() const { return required_mask_; }

    bool passes_mask(FeatureMask cell) const {
        return (cell & required_mask_) == required_mask_;
    }

    // Direct prescreen when no precomputed mask is at hand.
    bool passes_prefilter(std::string_view v) const {
        for (char c : spec_.prefilter.required_chars)
            if (v.find(c) == std::string_view::npos) return false;
        if (spec_.prefilter.requires_digit || spec_.prefilter.min_digits > 0 ||
            spec_.prefilter.requires_upper) {
            int digits = 0;
            bool upper = false;
            for (unsigned char c : v) {
                if (c >= '0' && c <= '9') ++digits;
                else if (c >= 'A' && c <= 'Z') upper = true;
            }
            if (spec_.prefilter.requires_digit && digits == 0) return false;
            if (digits < spec_.prefilter.min_digits) return false;
            if (spec_.prefilter.requires_upper && !upper) return false;
        }
        return true;
    }

    // Full client-side decision for one value.
    bool matches(const std::string& value) const {
        if (!passes_prefilter(value)) return false;
        if (spec_.validator == Validator::none)
            return std::regex_search(value, re_);
        auto begin = std::sregex_iterator(value.begin(), value.end(), re_);
        for (auto it = begin; it != std::sregex_iterator(); ++it) {
            if (validate(it->str())) return true;
        }
        return false;
    }

    // Same decision given a precomputed feature mask for the value.
    bool matches(const std::string& value, FeatureMask cell) const {
        if (mask_usable_ && !passes_mask(cell)) return false;
        return matches(value);
    }

    std::string regex_for(RegexDialect dialect) const {
        if (dialect != RegexDialect::postgres) return spec_.regex;
        // PostgreSQL AREs spell the word-boundary constraint \y.
        std::string out;
        out.reserve(spec_.regex.size());
        for (size_t i = 0; i < spec_.regex.size(); ++i) {
            if (spec_.regex[i] == '\\' && i + 1 < spec_.regex.size() &&
                spec_.regex[i + 1] == 'b') {
                out += "\\y";
                ++i;
            } else {
                out += spec_.regex[i];
            }
        }
        return out;
    }

private:
    bool validate(const std::string& matched) const {
        if (spec_.validator == Validator::none) return true;
        std::string digits;
        for (char c : matched)
            if (c >= '0' && c <= '9') digits.push_back(c);
        if (digits.size() < 13 || digits.size() > 19) return false;
        return luhn_check(digits);
    }

    PatternSpec spec_;
    std::regex re_;
    FeatureMask required_mask_ = 0;
    bool mask_usable_ = false;
};

class PatternTable {
public:
    PatternTable() = default;

    explicit PatternTable(std::vector<PatternSpec> specs) {
        for (auto& s : specs) patterns_.emplace_back(std::move(s));
    }

    static PatternTable defaults() {
        const std::string octet = "(25[0-5]|2[0-4][0-9]|1[0-9][0-9]|[1-9]?[0-9])";
        std::vector<PatternSpec> specs;
        specs.push_back({"ipv4", "network-address",
                         "\\b" + octet + "(\\." + octet + "){3}\\b",
                         Validator::none,
                         {".", 0, true, false}});
        specs.push_back({"email", "contact",
                         "\\b[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\\.[A-Za-z]{2,}\\b",
                         Validator::none,
                         {"@", 0, false, false}});
        specs.push_back({"credit-card", "financial",
                         "\\b(?:[0-9][ -]?){12,18}[0-9]\\b",
                         Validator::luhn,
                         {"", 13, true, false}});
        specs.push_back({"us-ssn", "national-id",
                         "\\b[0-9]{3}-[0-9]{2}-[0-9]{4}\\b",
                         Validator::none,
                         {"-", 0, true, false}});
        specs.push_back({"national-id", "national-id",
                         "\\b[A-Z]{2}[0-9]{6,9}\\b",
                         Validator::none,
                         {"", 0, true, true}});
        return PatternTable(std::move(specs));
    }

    static PatternTable from_yaml(const std::string& text) {
        YAML::Node root = YAML::Load(text);
        YAML::Node list = root.IsSequence() ? root : root["patterns"];
        if (!list || !list.IsSequence())
            throw std::invalid_argument("pattern file must hold a 'patterns' list");
        std::vector<PatternSpec> specs;
        for (const auto& entry : list) {
            PatternSpec s;
            s.id = entry["id"].as<std::string>();
            s.category = entry["category"] ? entry["category"].as<std::string>() : "custom";
            s.regex = entry["regex"].as<std::string>();
            if (entry["validator"]) {
                std::string v = entry["validator"].as<std::string>();
                if (v == "luhn") s.validator = Validator::luhn;
                else if (v != "none")
                    throw std::invalid_argument("pattern " + s.id + ": unknown validator " + v);
            }
            if (YAML::Node pf = entry["prefilter"]) {
                if (pf["chars"]) s.prefilter.required_chars = pf["chars"].as<std::string>();
                if (pf["min_digits"]) s.prefilter.min_digits = pf["min_digits"].as<int>();
                if (pf["requires_digit"]) s.prefilter.requires_digit = pf["requires_digit"].as<bool>();
                if (pf["requires_upper"]) s.prefilter.requires_upper = pf["requires_upper"].as<bool>();
            }
            specs.push_back(std::move(s));
        }
        return PatternTable(std::move(specs));
    }

    const std::vector<CompiledPattern>& patterns() const { return patterns_; }
    bool empty() const { return patterns_.empty(); }

    const CompiledPattern* find(std::string_view id) const {
        for (const auto& p : patterns_)
            if (p.id() == id) return &p;
        return nullptr;
    }

private:
    std::vector<CompiledPattern> patterns_;
};

}  // namespace teiresias::analysis
