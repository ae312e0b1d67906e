#include <chrono>
#include <cstdint>
#include <ctime>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "teiresias/api.hpp"
#include "teiresias/datasets.hpp"

namespace {

using namespace teiresias;

constexpr int kExitOk = 0;
constexpr int kExitFindings = 1;
constexpr int kExitError = 2;

discovery::AppServices open_services() {
    return discovery::make_services(config::resolve_paths());
}

void print_table(const std::vector<std::vector<std::string>>& rows) {
    if (rows.empty()) return;
    std::vector<std::size_t> widths(rows[0].size(), 0);
    for (const auto& row : rows)
        for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            std::cout << row[i];
            if (i + 1 < row.size()) std::cout << std::string(widths[i] - row[i].size() + 2, ' ');
        }
        std::cout << "\n";
    }
}

std::string completeness_of(const nlohmann::json& storage) {
    if (storage.value("excluded", false)) return "excluded";
    if (storage.value("previously_deleted", false)) return "deleted";
    if (storage.value("incomplete", false)) return "incomplete";
    if (!storage.value("failures", nlohmann::json::array()).empty()) return "failed";
    return "complete";
}

void print_summary(const nlohmann::json& summary) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"STORAGE", "COLLECTION", "VERDICT", "T", "COMPLETENESS"});
    for (const auto& storage : summary["storages"]) {
        std::string id = storage.value("storage_id", "");
        std::string completeness = completeness_of(storage);
        const auto& verdicts = storage["verdicts"];
        if (verdicts.empty()) {
            rows.push_back({id, "-", "-", "-", completeness});
            continue;
        }
        for (const auto& v : verdicts)
            rows.push_back({id, v.value("collection", ""),
                            v.value("personal", false) ? "personal" : "none",
                            discovery::format_score(v.value("t", 0.0)), completeness});
    }
    print_table(rows);
    const auto& totals = summary["totals"];
    std::cout << "storages: " << totals.value("storages", 0)
              << "  collections: " << totals.value("collections", 0)
              << "  personal: " << totals.value("personal_collections", 0) << "\n";
    for (const auto& storage : summary["storages"])
        for (const auto& f : storage.value("failures", nlohmann::json::array()))
            std::cout << "failure " << storage.value("storage_id", "") << ": "
                      << f.get<std::string>() << "\n";
}

int run_scan(const std::string& repo, const std::string& branch, const std::string& dir,
             bool fail_on_findings) {
    if (dir.empty() == repo.empty()) {
        std::cerr << "exactly one of --dir or --repo is required\n";
        return kExitError;
    }
    codeanalysis::SourceOrigin origin;
    if (!dir.empty()) {
        origin.kind = codeanalysis::SourceOrigin::Kind::local_directory;
        origin.location = dir;
    } else {
        origin.kind = codeanalysis::SourceOrigin::Kind::git_remote;
        origin.location = repo;
        origin.branch = branch;
    }

    auto services = open_services();
    auto out = discovery::run_main(services, origin, "manual");
    if (out.result.scheduler_fault) {
        std::cerr << "error: " << out.result.fault_error << "\n";
        return kExitError;
    }
    auto ca = out.result.runs.find("ca");
    if (ca != out.result.runs.end() && ca->second.status == workflow::TaskStatus::failed) {
        std::cerr << "error: " << ca->second.error << "\n";
        return kExitError;
    }

    auto report = services.reports->get(out.execution_id);
    std::cout << "execution: " << out.execution_id << "\n";
    print_summary(report.summary);
    std::cout << "report: "
              << (services.paths.state_dir / "exports" / ("report-" + out.execution_id + ".json"))
                     .string()
              << "\n";
    if (fail_on_findings && report.summary["totals"].value("personal_collections", 0) > 0)
        return kExitFindings;
    return kExitOk;
}

int run_serve(std::string listen, const std::string& watch) {
    if (listen.empty()) listen = config::env_or("TEIRESIAS_LISTEN", "127.0.0.1:8080");
    auto services = open_services();
    auto options = api::options_from_env();
    if (options.token.empty())
        std::cerr << "warning: TEIRESIAS_TOKEN is unset; mutating endpoints stay locked\n";
    api::ApiServer server(services, options);

    std::unique_ptr<codeanalysis::DirectoryWatcher> watcher;
    if (!watch.empty()) {
        codeanalysis::SourceOrigin origin;
        origin.kind = codeanalysis::SourceOrigin::Kind::local_directory;
        origin.location = watch;
        watcher = std::make_unique<codeanalysis::DirectoryWatcher>(watch, [services, origin] {
            auto out = discovery::run_main(services, origin, "watch");
            std::cout << "change detected, execution " << out.execution_id << "\n";
        });
        watcher->start();
        std::cout << "watching " << watch << "\n";
    }

    std::cout << "listening on " << listen << "\n";
    if (!server.serve(listen)) {
        std::cerr << "error: cannot bind " << listen << "\n";
        return kExitError;
    }
    return kExitOk;
}

nlohmann::json overrides_from(const std::vector<std::string>& sets) {
    nlohmann::json overrides = nlohmann::json::object();
    for (const auto& kv : sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got: " + kv);
        overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return overrides;
}

int run_registry_list() {
    auto services = open_services();
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"ID", "TYPE", "ORIGIN", "STATUS"});
    for (const auto& e : services.registry->entries())
        rows.push_back({e.id, e.has_descriptor ? e.descriptor.storage_type : "-",
                        inventory::origin_name(e.origin), inventory::entry_status_name(e.status)});
    print_table(rows);
    for (const auto& r : services.registry->repositories())
        std::cout << "repository " << r.uri << " (" << r.branch << ")\n";
    return kExitOk;
}

int run_report_show(const std::string& execution_id, const std::string& format) {
    auto services = open_services();
    auto report = services.reports->get(execution_id);
    if (format == "json") {
        std::cout << report.to_json().dump(2) << "\n";
        return kExitOk;
    }
    std::cout << "execution: " << report.execution_id << "  trigger: " << report.trigger << "\n";
    print_summary(report.summary);
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"TASK", "STAGE", "STATUS", "AT"});
    for (const auto& p : report.portions)
        rows.push_back({p.task_id, inventory::stage_name(p.stage), p.status, p.produced_at});
    print_table(rows);
    return kExitOk;
}

int run_report_list() {
    auto services = open_services();
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"EXECUTION", "TRIGGER", "CREATED"});
    for (const auto& row : services.reports->execution_index())
        rows.push_back({row.value("execution_id", ""), row.value("trigger", ""),
                        row.value("created_at", "")});
    print_table(rows);
    return kExitOk;
}

int run_report_prune(unsigned keep_days) {
    auto cutoff = std::chrono::system_clock::now() - std::chrono::hours(24) * keep_days;
    std::time_t t = std::chrono::system_clock::to_time_t(cutoff);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    auto services = open_services();
    std::cout << "pruned " << services.reports->prune_before(buf) << " reports\n";
    return kExitOk;
}

int run_gen_dataset(const std::string& kind, std::uint64_t rows, const std::string& out,
                    std::uint64_t seed) {
    auto k = teiresias::datasets::parse_kind(kind);
    if (!k) {
        std::cerr << "unknown dataset kind: " << kind << "\n";
        return kExitError;
    }
    teiresias::datasets::write_dataset(*k, rows, out, seed);
    std::cout << "wrote " << rows << " rows to " << out << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"teiresias: personal-data discovery and inventory"};
    app.require_subcommand(1);

    auto* scan = app.add_subcommand("scan", "run the discovery workflow over a source");
    std::string scan_repo, scan_branch = "main", scan_dir;
    bool fail_on_findings = false;
    scan->add_option("--repo", scan_repo, "git repository uri");
    scan->add_option("--branch", scan_branch, "branch for --repo");
    scan->add_option("--dir", scan_dir, "local source directory");
    scan->add_flag("--fail-on-findings", fail_on_findings,
                   "exit 1 when personal data is found (CI gate)");

    auto* serve = app.add_subcommand("serve", "run the HTTP API");
    std::string listen, watch;
    serve->add_option("--listen", listen, "host:port (default TEIRESIAS_LISTEN or 127.0.0.1:8080)");
    serve->add_option("--watch", watch, "directory to watch; changes trigger scans");

    auto* registry = app.add_subcommand("registry", "manage known storages");
    registry->require_subcommand(1);
    auto* complete = registry->add_subcommand("complete", "set manual overrides on a storage");
    std::string storage_id;
    std::vector<std::string> sets;
    complete->add_option("id", storage_id, "storage id")->required();
    complete->add_option("--set", sets, "key=value override (password only via password_env/password_file)")
        ->required();
    auto* exclude = registry->add_subcommand("exclude", "exclude a storage from scans");
    exclude->add_option("id", storage_id, "storage id")->required();
    auto* removec = registry->add_subcommand("delete", "delete a storage (tombstone)");
    removec->add_option("id", storage_id, "storage id")->required();
    auto* add_external = registry->add_subcommand("add-external", "register an external storage");
    std::string ext_type, ext_host, ext_port, ext_db, ext_user, ext_pw_env, ext_pw_file, ext_notes;
    add_external->add_option("--type", ext_type, "storage type")->required();
    add_external->add_option("--host", ext_host, "host or data root label")->required();
    add_external->add_option("--port", ext_port, "port");
    add_external->add_option("--database", ext_db, "database or data path");
    add_external->add_option("--username", ext_user, "username");
    add_external->add_option("--password-env", ext_pw_env, "environment variable with the password");
    add_external->add_option("--password-file", ext_pw_file, "file with the password");
    add_external->add_option("--notes", ext_notes, "free-form notes");
    auto* add_repo = registry->add_subcommand("add-repo", "register a repository for scheduled scans");
    std::string repo_uri, repo_branch = "main";
    add_repo->add_option("--uri", repo_uri, "repository uri")->required();
    add_repo->add_option("--branch", repo_branch, "branch");
    auto* reg_list = registry->add_subcommand("list", "list storages and repositories");

    auto* report = app.add_subcommand("report", "inspect discovery reports");
    report->require_subcommand(1);
    auto* show = report->add_subcommand("show", "render one report");
    std::string show_id, show_format = "table";
    show->add_option("id", show_id, "execution id")->required();
    show->add_option("--format", show_format, "json | table")
        ->check(CLI::IsMember({"json", "table"}));
    auto* report_list = report->add_subcommand("list", "list executions, newest first");
    auto* prune = report->add_subcommand("prune", "drop reports older than --keep-days");
    unsigned keep_days = 90;
    prune->add_option("--keep-days", keep_days, "retention window in days");

    auto* gen = app.add_subcommand("gen-dataset", "generate an evaluation dataset as CSV");
    std::string kind;
    std::uint64_t rows = 5000;
    std::string out;
    std::uint64_t seed = 1;
    gen->add_option("--kind", kind, "ipv4 | fullnames | handles | noise")->required();
    gen->add_option("--rows", rows, "number of data rows");
    gen->add_option("--out", out, "output file path")->required();
    gen->add_option("--seed", seed, "generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (scan->parsed()) return run_scan(scan_repo, scan_branch, scan_dir, fail_on_findings);
        if (serve->parsed()) return run_serve(listen, watch);
        if (complete->parsed()) {
            auto services = open_services();
            services.registry->complete(storage_id, overrides_from(sets));
            std::cout << "completed " << storage_id << "\n";
            return kExitOk;
        }
        if (exclude->parsed()) {
            open_services().registry->exclude(storage_id);
            std::cout << "excluded " << storage_id << "\n";
            return kExitOk;
        }
        if (removec->parsed()) {
            open_services().registry->remove(storage_id);
            std::cout << "deleted " << storage_id << "\n";
            return kExitOk;
        }
        if (add_external->parsed()) {
            ConnectionDescriptor d;
            d.storage_type = ext_type;
            d.host = Field::of(ext_host);
            if (!ext_port.empty()) d.port = Field::of(ext_port);
            if (!ext_db.empty()) d.database = Field::of(ext_db);
            if (!ext_user.empty()) d.username = Field::of(ext_user);
            if (!ext_pw_env.empty()) d.password = Field::env_ref(ext_pw_env);
            if (!ext_pw_file.empty()) d.password = Field::file_ref(ext_pw_file);
            d.source = {"<external>", ext_host};
            auto entry = open_services().registry->add_external(d, ext_notes);
            std::cout << "registered " << entry.id << "\n";
            return kExitOk;
        }
        if (add_repo->parsed()) {
            bool added = open_services().registry->register_repository(repo_uri, repo_branch);
            std::cout << (added ? "registered " : "already registered ") << repo_uri << "\n";
            return kExitOk;
        }
        if (reg_list->parsed()) return run_registry_list();
        if (show->parsed()) return run_report_show(show_id, show_format);
        if (report_list->parsed()) return run_report_list();
        if (prune->parsed()) return run_report_prune(keep_days);
        if (gen->parsed()) return run_gen_dataset(kind, rows, out, seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitOk;
}
