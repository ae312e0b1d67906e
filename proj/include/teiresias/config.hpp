#pragma once

#include <cstdlib>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "teiresias/common.hpp"
#include "teiresias/iac.hpp"
#include "teiresias/keywords.hpp"
#include "teiresias/patterns.hpp"
#include "teiresias/storage.hpp"

namespace teiresias::config {

inline std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

struct Paths {
    std::filesystem::path config_dir;  // empty: shipped defaults only
    std::filesystem::path state_dir;
};

inline Paths resolve_paths() {
    Paths p;
    std::string cfg = env_or("TEIRESIAS_CONFIG_DIR", "");
    if (!cfg.empty())
        p.config_dir = cfg;
    else if (std::filesystem::is_directory("config"))
        p.config_dir = "config";
    p.state_dir = env_or("TEIRESIAS_STATE_DIR", "teiresias-state");
    return p;
}

struct Settings {
    std::size_t sample_limit = 10000;
    std::size_t parallelism = 4;
    std::size_t queue_capacity = 64;
};

// The scores published for the proprietary comparison services; rendered as
// constants in evaluation output, never re-measured.
inline constexpr double kReferenceServiceScore = 0.57;

struct RuntimeConfig {
    analysis::KeywordTable keywords = analysis::KeywordTable::defaults();
    analysis::PatternTable patterns = analysis::PatternTable::defaults();
    codeanalysis::StorageLookupTable lookup = codeanalysis::StorageLookupTable::defaults();
    Settings settings;
    std::vector<std::string> loaded_files;

    retrieval::SamplingConfig sampling() const {
        return {settings.sample_limit, "head", 0};
    }
};

// Reads the directory fresh on every call; each workflow execution loads once
// at start, so edits take effect on the next run without a restart. Absent
// files keep the shipped defaults; malformed files abort the load with the
// file name in the error.
inline RuntimeConfig load_config(const std::filesystem::path& config_dir) {
    RuntimeConfig cfg;
    if (config_dir.empty()) return cfg;
    auto try_load = [&](const char* file, auto&& apply) {
        auto path = config_dir / file;
        if (!std::filesystem::exists(path)) return;
        try {
            apply(read_file(path.string()));
            cfg.loaded_files.push_back(path.string());
        } catch (const std::exception& e) {
            throw std::invalid_argument(std::string(file) + ": " + e.what());
        }
    };
    try_load("keywords.yaml", [&](const std::string& text) {
        cfg.keywords = analysis::KeywordTable::from_yaml(text);
    });
    try_load("patterns.yaml", [&](const std::string& text) {
        cfg.patterns = analysis::PatternTable::from_yaml(text);
    });
    try_load("storage-lookup.yaml", [&](const std::string& text) {
        cfg.lookup = codeanalysis::StorageLookupTable::from_yaml(text);
    });
    try_load("settings.yaml", [&](const std::string& text) {
        YAML::Node root = YAML::Load(text);
        if (root["sample_limit"]) cfg.settings.sample_limit = root["sample_limit"].as<std::size_t>();
        if (root["parallelism"]) cfg.settings.parallelism = root["parallelism"].as<std::size_t>();
        if (root["queue_capacity"])
            cfg.settings.queue_capacity = root["queue_capacity"].as<std::size_t>();
    });
    return cfg;
}

}  // namespace teiresias::config
