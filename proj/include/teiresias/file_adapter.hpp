#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>

#include "teiresias/storage.hpp"

namespace teiresias::retrieval {

// Column-major table with precomputed per-cell feature masks so repeated
// pattern scans can skip the regex engine for cells that cannot match.
struct LoadedTable {
    struct Column {
        std::string name;
        std::string declared_type;
        std::vector<std::string> values;
        std::vector<std::uint16_t> masks;
    };
    std::vector<Column> columns;
    std::vector<std::string> refs;
    std::uint64_t rows = 0;
};

namespace detail {

// RFC 4180 style: quoted fields may contain commas, newlines and doubled
// quotes. The reader works on whole-file text to keep embedded newlines.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    std::size_t i = 0;
    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
    };
    auto end_record = [&] {
        end_field();
        records.push_back(std::move(record));
        record.clear();
    };
    while (i < text.size()) {
        char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"' && field.empty()) {
            quoted = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            end_record();
        } else {
            field.push_back(c);
        }
        ++i;
    }
    if (!field.empty() || !record.empty()) {
        if (!field.empty() && field.back() == '\r') field.pop_back();
        end_record();
    }
    return records;
}

inline std::string json_scalar_to_text(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_null()) return "";
    return v.dump();
}

}  // namespace detail

inline LoadedTable load_csv_table(const std::filesystem::path& file) {
    auto records = detail::parse_csv(read_file(file.string()));
    if (records.empty()) throw std::runtime_error("csv without header row: " + file.string());
    LoadedTable t;
    const auto& header = records.front();
    if (header.empty() || (header.size() == 1 && header[0].empty()))
        throw std::runtime_error("csv without header row: " + file.string());
    for (const auto& h : header) t.columns.push_back({trim(h), "text", {}, {}});
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& row = records[r];
        if (row.size() == 1 && row[0].empty()) continue;
        for (std::size_t c = 0; c < t.columns.size(); ++c) {
            const std::string& v = c < row.size() ? row[c] : std::string();
            t.columns[c].values.push_back(v);
            t.columns[c].masks.push_back(analysis::cell_features(v));
        }
        t.refs.push_back("row:" + std::to_string(t.refs.size() + 1));
    }
    t.rows = t.refs.size();
    return t;
}

inline LoadedTable load_jsonl_table(const std::filesystem::path& file) {
    LoadedTable t;
    std::map<std::string, std::size_t> column_index;
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open " + file.string());
    std::string line;
    std::uint64_t line_no = 0;
    auto type_name = [](const nlohmann::json& v) -> std::string {
        if (v.is_string()) return "string";
        if (v.is_number()) return "number";
        if (v.is_boolean()) return "bool";
        if (v.is_array()) return "array";
        if (v.is_object()) return "object";
        return "null";
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json doc = nlohmann::json::parse(line);
        if (!doc.is_object())
            throw std::runtime_error(file.string() + ": line " + std::to_string(line_no) +
                                     " is not a JSON object");
        std::string ref = doc.contains("_id") ? "_id:" + detail::json_scalar_to_text(doc["_id"])
                                              : "row:" + std::to_string(t.rows + 1);
        for (auto& [key, value] : doc.items()) {
            auto [it, fresh] = column_index.try_emplace(key, t.columns.size());
            if (fresh) {
                LoadedTable::Column col{key, type_name(value), {}, {}};
                col.values.assign(t.rows, std::string());
                col.masks.assign(t.rows, 0);
                t.columns.push_back(std::move(col));
            }
            auto& col = t.columns[it->second];
            std::string text = detail::json_scalar_to_text(value);
            col.values.push_back(std::move(text));
            col.masks.push_back(analysis::cell_features(col.values.back()));
        }
        for (auto& col : t.columns)
            if (col.values.size() < t.rows + 1) {
                col.values.emplace_back();
                col.masks.push_back(0);
            }
        t.refs.push_back(std::move(ref));
        ++t.rows;
    }
    return t;
}

class FileSession : public StorageSession {
public:
    FileSession(std::string storage_id, std::filesystem::path root,
                std::shared_ptr<std::map<std::string, std::shared_ptr<const LoadedTable>>> cache,
                std::shared_ptr<std::mutex> cache_mutex)
        : storage_id_(std::move(storage_id)),
          root_(std::move(root)),
          cache_(std::move(cache)),
          cache_mutex_(std::move(cache_mutex)) {
        if (!std::filesystem::exists(root_))
            throw std::runtime_error("file storage path does not exist: " + root_.string());
        if (std::filesystem::is_directory(root_)) {
            for (const auto& e : std::filesystem::directory_iterator(root_)) {
                if (!e.is_regular_file()) continue;
                auto ext = e.path().extension().string();
                if (ext == ".csv" || ext == ".jsonl")
                    files_[e.path().stem().string()] = e.path();
            }
        } else {
            files_[root_.stem().string()] = root_;
        }
        // Loading at session open mirrors deployment: the data is in place
        // before any discovery step runs against it. A file that fails to
        // load stays listed; profiling it reports the fault for that
        // collection alone.
        for (const auto& [name, path] : files_) {
            try {
                table(name);
            } catch (const std::exception&) {
            }
        }
    }

    const std::string& storage_id() const override { return storage_id_; }

    Capabilities capabilities() const override { return {true, true}; }

    std::vector<std::string> list_collections() override {
        std::vector<std::string> out;
        for (const auto& [name, path] : files_) out.push_back(name);
        std::sort(out.begin(), out.end());
        return out;
    }

    CollectionProfile profile(const std::string& collection, const SamplingConfig& cfg) override {
        auto t = table(collection);
        CollectionProfile p;
        p.storage_ref = storage_id_;
        p.collection = collection;
        p.n = t->rows;
        p.n_exact = true;
        p.sampling = cfg;
        for (const auto& col : t->columns)
            p.attributes.push_back({col.name, col.declared_type, indicator_for(col.declared_type)});
        std::size_t take = std::min<std::size_t>(cfg.limit, t->rows);
        p.sample.reserve(take);
        for (std::size_t r = 0; r < take; ++r) {
            SampleEntity e;
            e.ref = t->refs[r];
            for (const auto& col : t->columns) e.values[col.name] = {col.values[r]};
            p.sample.push_back(std::move(e));
        }
        return p;
    }

    InPlaceResult count_matches(const std::string& collection, const std::string& attribute,
                                const analysis::CompiledPattern& pattern,
                                std::size_t ref_cap) override {
        auto t = table(collection);
        InPlaceResult r;
        for (const auto& col : t->columns) {
            if (col.name != attribute) continue;
            for (std::size_t i = 0; i < col.values.size(); ++i) {
                if (!pattern.passes_mask(col.masks[i])) continue;
                if (!pattern.matches(col.values[i])) continue;
                ++r.count;
                if (r.refs.size() < ref_cap) r.refs.push_back(t->refs[i]);
            }
            return r;
        }
        throw std::runtime_error("unknown attribute " + attribute + " in " + collection);
    }

private:
    std::shared_ptr<const LoadedTable> table(const std::string& collection) {
        auto fit = files_.find(collection);
        if (fit == files_.end()) throw std::runtime_error("unknown collection " + collection);
        // mtime and size in the key so edited files are reloaded, not served stale
        std::error_code ec;
        auto mtime = std::filesystem::last_write_time(fit->second, ec).time_since_epoch().count();
        auto size = std::filesystem::file_size(fit->second, ec);
        std::string key = fit->second.string() + "|" + std::to_string(mtime) + "|" + std::to_string(size);
        {
            std::lock_guard lock(*cache_mutex_);
            auto cit = cache_->find(key);
            if (cit != cache_->end()) return cit->second;
        }
        auto loaded = std::make_shared<const LoadedTable>(
            fit->second.extension() == ".csv" ? load_csv_table(fit->second)
                                              : load_jsonl_table(fit->second));
        std::lock_guard lock(*cache_mutex_);
        return (*cache_)[key] = loaded;
    }

    std::string storage_id_;
    std::filesystem::path root_;
    std::map<std::string, std::filesystem::path> files_;
    std::shared_ptr<std::map<std::string, std::shared_ptr<const LoadedTable>>> cache_;
    std::shared_ptr<std::mutex> cache_mutex_;
};

// Reads *.csv (header row required) and *.jsonl under the descriptor's
// database path. Tables are cached per file and shared across sessions.
class FileAdapter : public StorageAdapter {
public:
    std::string type() const override { return "file"; }

    Capabilities capabilities() const override { return {true, true}; }

    std::shared_ptr<StorageSession> connect(const ConnectionDescriptor& d) override {
        auto path = d.database.resolve();
        if (!path) throw std::runtime_error("file storage descriptor lacks a path");
        return std::make_shared<FileSession>(d.stable_id(), std::filesystem::path(*path), cache_,
                                             cache_mutex_);
    }

private:
    std::shared_ptr<std::map<std::string, std::shared_ptr<const LoadedTable>>> cache_ =
        std::make_shared<std::map<std::string, std::shared_ptr<const LoadedTable>>>();
    std::shared_ptr<std::mutex> cache_mutex_ = std::make_shared<std::mutex>();
};

}  // namespace teiresias::retrieval
