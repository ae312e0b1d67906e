#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "teiresias/common.hpp"

namespace teiresias::codeanalysis {

struct SourceOrigin {
    enum class Kind { git_remote, local_directory };
    Kind kind = Kind::local_directory;
    std::string location;  // uri or directory path
    std::string branch;    // git remotes only

    std::string describe() const {
        if (kind == Kind::git_remote) return "git:" + location + "@" + branch;
        return "dir:" + location;
    }
};

struct SourceFile {
    std::string path;  // relative, '/'-separated
    std::string content;
};

struct SourceTree {
    SourceOrigin origin;
    std::vector<SourceFile> files;  // sorted by path

    const SourceFile* find(const std::string& path) const {
        for (const auto& f : files)
            if (f.path == path) return &f;
        return nullptr;
    }
};

class IngestError : public std::runtime_error {
public:
    IngestError(SourceOrigin origin, const std::string& message)
        : std::runtime_error(origin.describe() + ": " + message), origin_(std::move(origin)) {}
    const SourceOrigin& origin() const { return origin_; }

private:
    SourceOrigin origin_;
};

struct IngestOptions {
    std::vector<std::string> ignore_names{".git"};
    std::uintmax_t max_file_bytes = 10 * 1024 * 1024;
};

inline SourceTree ingest_local(const std::filesystem::path& root, IngestOptions options = {}) {
    SourceOrigin origin{SourceOrigin::Kind::local_directory, root.string(), ""};
    std::error_code ec;
    if (!std::filesystem::is_directory(root, ec))
        throw IngestError(origin, "unreadable directory");

    SourceTree tree;
    tree.origin = origin;
    for (auto it = std::filesystem::recursive_directory_iterator(
             root, std::filesystem::directory_options::skip_permission_denied, ec);
         it != std::filesystem::recursive_directory_iterator(); ++it) {
        const auto& entry = *it;
        std::string name = entry.path().filename().string();
        bool ignored = std::count(options.ignore_names.begin(), options.ignore_names.end(), name) > 0;
        if (entry.is_directory(ec)) {
            if (ignored) it.disable_recursion_pending();
            continue;
        }
        if (ignored || !entry.is_regular_file(ec)) continue;
        if (entry.file_size(ec) > options.max_file_bytes) continue;
        auto rel = std::filesystem::relative(entry.path(), root, ec).lexically_normal();
        std::string rel_str = rel.generic_string();
        if (rel_str.empty() || rel_str.rfind("..", 0) == 0) continue;
        tree.files.push_back({rel_str, read_file(entry.path())});
    }
    std::sort(tree.files.begin(), tree.files.end(),
              [](const SourceFile& a, const SourceFile& b) { return a.path < b.path; });
    return tree;
}

namespace detail {

inline std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'')
            out += "'\\''";
        else
            out += c;
    }
    out += "'";
    return out;
}

inline std::pair<int, std::string> run_command(const std::string& command) {
    std::string output;
    FILE* pipe = popen((command + " 2>&1").c_str(), "r");
    if (!pipe) return {-1, "popen failed"};
    char buf[4096];
    while (std::size_t got = std::fread(buf, 1, sizeof buf, pipe)) output.append(buf, got);
    int status = pclose(pipe);
    return {status, output};
}

}  // namespace detail

// Shallow single-branch clone into work_dir, then a local ingest of the
// checkout. The caller owns work_dir cleanup.
inline SourceTree ingest_git(const std::string& uri, const std::string& branch,
                             const std::filesystem::path& work_dir, IngestOptions options = {}) {
    SourceOrigin origin{SourceOrigin::Kind::git_remote, uri, branch};
    std::filesystem::create_directories(work_dir.parent_path().empty() ? "." : work_dir.parent_path());
    std::string cmd = "git clone --quiet --depth 1 --single-branch --branch " +
                      detail::shell_quote(branch) + " -- " + detail::shell_quote(uri) + " " +
                      detail::shell_quote(work_dir.string());
    auto [status, output] = detail::run_command(cmd);
    if (status != 0) {
        if (output.find("not found") != std::string::npos)
            throw IngestError(origin, "branch not found");
        throw IngestError(origin, "clone failed: " + trim(output));
    }
    auto tree = ingest_local(work_dir, std::move(options));
    tree.origin = origin;
    return tree;
}

inline SourceTree ingest_source(const SourceOrigin& origin,
                                const std::filesystem::path& work_dir, IngestOptions options = {}) {
    if (origin.kind == SourceOrigin::Kind::git_remote)
        return ingest_git(origin.location, origin.branch, work_dir, std::move(options));
    return ingest_local(origin.location, std::move(options));
}

// Polling watcher: any change to the (path, mtime, size) snapshot arms a
// debounce window; the callback fires once per quiet period.
class DirectoryWatcher {
public:
    using Clock = std::chrono::steady_clock;

    DirectoryWatcher(std::filesystem::path root, std::function<void()> on_change,
                     std::chrono::milliseconds poll_interval = std::chrono::milliseconds(500),
                     std::chrono::milliseconds debounce = std::chrono::milliseconds(2000))
        : root_(std::move(root)),
          on_change_(std::move(on_change)),
          poll_interval_(poll_interval),
          debounce_(debounce) {}

    ~DirectoryWatcher() { stop(); }

    void start() {
        if (running_.exchange(true)) return;
        snapshot_ = scan();
        thread_ = std::thread([this] { loop(); });
    }

    void stop() {
        if (!running_.exchange(false)) return;
        if (thread_.joinable()) thread_.join();
    }

private:
    using Snapshot = std::map<std::string, std::pair<std::int64_t, std::uintmax_t>>;

    Snapshot scan() const {
        Snapshot snap;
        std::error_code ec;
        for (auto it = std::filesystem::recursive_directory_iterator(
                 root_, std::filesystem::directory_options::skip_permission_denied, ec);
             it != std::filesystem::recursive_directory_iterator(); ++it) {
            if (!it->is_regular_file(ec)) continue;
            auto mtime = std::filesystem::last_write_time(it->path(), ec);
            auto size = it->file_size(ec);
            snap[it->path().string()] = {mtime.time_since_epoch().count(), size};
        }
        return snap;
    }

    void loop() {
        bool armed = false;
        Clock::time_point last_change{};
        while (running_.load()) {
            std::this_thread::sleep_for(poll_interval_);
            auto current = scan();
            if (current != snapshot_) {
                snapshot_ = std::move(current);
                last_change = Clock::now();
                armed = true;
            }
            if (armed && Clock::now() - last_change >= debounce_) {
                armed = false;
                on_change_();
            }
        }
    }

    std::filesystem::path root_;
    std::function<void()> on_change_;
    std::chrono::milliseconds poll_interval_;
    std::chrono::milliseconds debounce_;
    std::atomic<bool> running_{false};
    std::thread thread_;
    Snapshot snapshot_;
};

}  // namespace teiresias::codeanalysis
