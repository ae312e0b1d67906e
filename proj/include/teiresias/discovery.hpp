#pragma once

#include <atomic>
#include <cstdio>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "teiresias/classify.hpp"
#include "teiresias/config.hpp"
#include "teiresias/document.hpp"
#include "teiresias/file_adapter.hpp"
#include "teiresias/iac.hpp"
#include "teiresias/inventory.hpp"
#include "teiresias/mongo_adapter.hpp"
#include "teiresias/pg_adapter.hpp"
#include "teiresias/sourcetree.hpp"
#include "teiresias/storage.hpp"
#include "teiresias/workflow.hpp"

namespace teiresias::discovery {

// Report rendering carries T with four decimals.
inline std::string format_score(double t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", t);
    return buf;
}

inline std::map<std::string, std::string> process_environment() {
    std::map<std::string, std::string> env;
    for (char** e = ::environ; e && *e; ++e) {
        std::string entry(*e);
        auto eq = entry.find('=');
        if (eq != std::string::npos) env.emplace(entry.substr(0, eq), entry.substr(eq + 1));
    }
    return env;
}

inline std::string new_execution_id() {
    static std::atomic<std::uint64_t> counter{0};
    static const std::uint64_t salt = [] {
        std::random_device rd;
        return (std::uint64_t(rd()) << 32) ^ rd();
    }();
    return "e" + to_hex(fnv1a64(std::to_string(monotonic_ns()) + ":" + std::to_string(salt) +
                                ":" + std::to_string(counter.fetch_add(1))));
}

struct AppServices {
    config::Paths paths;
    std::shared_ptr<inventory::ReportStore> reports;
    std::shared_ptr<inventory::Registry> registry;
    std::shared_ptr<retrieval::AdapterRegistry> adapters;
    std::shared_ptr<workflow::Engine> engine;
};

inline AppServices make_services(const config::Paths& paths) {
    AppServices s;
    s.paths = paths;
    std::filesystem::create_directories(paths.state_dir);
    s.reports = std::make_shared<inventory::ReportStore>(paths.state_dir);
    s.registry = std::make_shared<inventory::Registry>(paths.state_dir);
    s.adapters = std::make_shared<retrieval::AdapterRegistry>();
    s.adapters->add(std::make_shared<retrieval::FileAdapter>());
    s.adapters->add(std::make_shared<retrieval::PgAdapter>());
    s.adapters->add(std::make_shared<retrieval::MongoAdapter>());
    s.engine = std::make_shared<workflow::Engine>(workflow::EngineOptions{paths.state_dir});
    return s;
}

namespace detail {

inline std::shared_ptr<config::RuntimeConfig> config_of(workflow::TaskContext& ctx) {
    auto cfg = ctx.blackboard().get<config::RuntimeConfig>("config");
    if (!cfg) throw std::runtime_error("execution context lacks a loaded configuration");
    return cfg;
}

inline std::string storage_of(workflow::TaskContext& ctx) {
    return ctx.item().value("storage_id", "");
}

// "plan[3].route" → "plan[3]."
inline std::string branch_prefix(const std::string& task_id, const std::string& leaf) {
    return task_id.substr(0, task_id.size() - leaf.size());
}

}  // namespace detail

// Main workflow: code analysis over the source tree, registry reconciliation,
// one fan-out branch per storage (route → excluded-skip / manual-required /
// retrieve with a nested per-collection fan-out), and a final join that seals
// and exports the report. The submitted source origin is bound at build time;
// everything else flows through the blackboard.
inline workflow::DagSpec build_main_dag(const AppServices& services,
                                        const codeanalysis::SourceOrigin& origin) {
    using workflow::TaskContext;
    using workflow::TaskKind;
    using workflow::TaskSpec;

    workflow::DagSpec dag;
    dag.id = "main";

    TaskSpec ca;
    ca.id = "ca";
    ca.retry_limit = 0;
    ca.fn = [services, origin](TaskContext& ctx) {
        auto cfg = detail::config_of(ctx);
        auto checkout = services.paths.state_dir / "checkouts" / ctx.execution_id();
        codeanalysis::SourceTree tree;
        try {
            tree = codeanalysis::ingest_source(origin, checkout);
        } catch (const codeanalysis::IngestError& e) {
            throw std::runtime_error(std::string("source error: ") + e.what());
        }
        std::error_code cleanup_ec;
        std::filesystem::remove_all(checkout, cleanup_ec);
        auto docs = codeanalysis::classify_documents(tree);
        auto vars = codeanalysis::collect_variables(docs, tree, process_environment());
        auto descriptors = codeanalysis::extract_connections(docs, vars, cfg->lookup);

        std::vector<std::string> diagnostics = vars.diagnostics;
        for (const auto& doc : docs)
            for (const auto& d : doc.diagnostics) diagnostics.push_back(doc.path + ": " + d);

        auto items = std::make_shared<std::vector<nlohmann::json>>();
        nlohmann::json descriptor_list = nlohmann::json::array();
        std::set<std::string> seen;
        auto plan_storage = [&](const ConnectionDescriptor& run_descriptor, bool excluded,
                                bool deleted, bool previously_deleted) {
            std::string id = run_descriptor.stable_id();
            if (!seen.insert(id).second) return;
            ctx.blackboard().put("storage:" + id,
                                 std::make_shared<ConnectionDescriptor>(run_descriptor));
            items->push_back({{"storage_id", id},
                              {"storage_type", run_descriptor.storage_type},
                              {"excluded", excluded},
                              {"deleted", deleted},
                              {"previously_deleted", previously_deleted},
                              {"unresolved", run_descriptor.unresolved_fields()}});
            descriptor_list.push_back(run_descriptor.to_redacted_json());
        };

        for (const auto& d : descriptors) {
            auto outcome = services.registry->record_discovered(d);
            auto run_descriptor = inventory::apply_overrides(d, outcome.entry.manual_overrides);
            plan_storage(run_descriptor,
                         outcome.entry.status == inventory::EntryStatus::excluded,
                         outcome.entry.status == inventory::EntryStatus::deleted,
                         outcome.previously_deleted);
        }
        for (const auto& entry : services.registry->entries()) {
            if (entry.origin == inventory::Origin::discovered) continue;
            if (!entry.has_descriptor || entry.status == inventory::EntryStatus::deleted)
                continue;
            plan_storage(entry.effective(),
                         entry.status == inventory::EntryStatus::excluded, false, false);
        }
        std::sort(items->begin(), items->end(),
                  [](const nlohmann::json& a, const nlohmann::json& b) {
                      return a.value("storage_id", "") < b.value("storage_id", "");
                  });
        ctx.blackboard().put("plan-items", items);

        inventory::ReportPortion portion;
        portion.execution_id = ctx.execution_id();
        portion.task_id = ctx.task_id();
        portion.stage = inventory::Stage::code_analysis;
        portion.status = "ok";
        portion.payload = {{"origin", origin.describe()},
                           {"documents", docs.size()},
                           {"storages", items->size()},
                           {"descriptors", descriptor_list},
                           {"diagnostics", diagnostics}};
        services.reports->append(portion);
        ctx.log("storages planned: " + std::to_string(items->size()));
    };
    dag.add(std::move(ca));

    TaskSpec route;
    route.id = "route";
    route.kind = TaskKind::branch_selector;
    route.retry_limit = 0;
    route.selector = [](TaskContext& ctx) {
        std::string prefix = detail::branch_prefix(ctx.task_id(), "route");
        if (ctx.item().value("deleted", false) || ctx.item().value("excluded", false))
            return prefix + "skip";
        auto d = ctx.blackboard().get<ConnectionDescriptor>("storage:" +
                                                            detail::storage_of(ctx));
        if (!d || !retrieval::connection_ready(*d)) return prefix + "manual";
        return prefix + "retrieve";
    };

    TaskSpec skip;
    skip.id = "skip";
    skip.retry_limit = 0;
    skip.fn = [services](TaskContext& ctx) {
        inventory::ReportPortion portion;
        portion.execution_id = ctx.execution_id();
        portion.task_id = ctx.task_id();
        std::string sid = detail::storage_of(ctx);
        if (ctx.item().value("deleted", false)) {
            portion.stage = inventory::Stage::inventory;
            portion.status = "skipped: deleted";
            portion.payload = {{"storage_id", sid},
                               {"previously_deleted", true},
                               {"note", "previously deleted storage re-appeared"}};
            ctx.log("deleted storage re-appeared: " + sid);
        } else {
            portion.stage = inventory::Stage::retrieval;
            portion.status = "skipped: excluded";
            portion.payload = {{"storage_id", sid}};
            ctx.log("excluded: " + sid);
        }
        services.reports->append(portion);
    };

    TaskSpec manual;
    manual.id = "manual";
    manual.retry_limit = 0;
    manual.fn = [services](TaskContext& ctx) {
        inventory::ReportPortion portion;
        portion.execution_id = ctx.execution_id();
        portion.task_id = ctx.task_id();
        portion.stage = inventory::Stage::retrieval;
        portion.status = "manual-required";
        portion.payload = {{"storage_id", detail::storage_of(ctx)},
                           {"unresolved", ctx.item().value("unresolved", nlohmann::json::array())},
                           {"note", "manual completion required"}};
        services.reports->append(portion);
        ctx.log("manual completion required: " + detail::storage_of(ctx));
    };

    TaskSpec analyze;
    analyze.id = "analyze";
    analyze.retry_limit = 0;
    analyze.fn = [services](TaskContext& ctx) {
        std::string sid = detail::storage_of(ctx);
        std::string collection = ctx.item().value("collection", "");
        try {
            auto cfg = detail::config_of(ctx);
            auto session = ctx.blackboard().get<retrieval::StorageSession>("session:" + sid);
            if (!session) throw std::runtime_error("no open session for storage " + sid);
            auto profile = session->profile(collection, cfg->sampling());
            auto proximities = analysis::metadata_proximities(profile.attributes, cfg->keywords);
            auto matches = analysis::data_matches(profile, cfg->patterns, session.get());
            auto result = analysis::classify(profile, std::move(proximities), std::move(matches));

            inventory::ReportPortion portion;
            portion.execution_id = ctx.execution_id();
            portion.task_id = ctx.task_id();
            portion.stage = inventory::Stage::analysis;
            portion.status = "ok";
            portion.payload = result.to_json();
            services.reports->append(portion);
            ctx.log(collection + ": T=" + format_score(result.t) +
                    (result.personal ? " personal" : " non-personal"));
        } catch (const std::exception& e) {
            if (ctx.final_attempt()) {
                inventory::ReportPortion portion;
                portion.execution_id = ctx.execution_id();
                portion.task_id = ctx.task_id();
                portion.stage = inventory::Stage::analysis;
                portion.status = "failed";
                portion.payload = {{"storage_id", sid}, {"collection", collection},
                                   {"error", e.what()}};
                services.reports->append(portion);
            }
            throw;
        }
    };

    TaskSpec retrieve;
    retrieve.id = "retrieve";
    retrieve.kind = TaskKind::fan_out_template;
    retrieve.retry_limit = 1;
    retrieve.backoff = std::chrono::milliseconds(100);
    retrieve.sub_tasks = {analyze};
    retrieve.items = [services](TaskContext& ctx) {
        std::string sid = detail::storage_of(ctx);
        try {
            auto d = ctx.blackboard().get<ConnectionDescriptor>("storage:" + sid);
            if (!d) throw std::runtime_error("no descriptor for storage " + sid);
            auto session = retrieval::open_session(*services.adapters, *d);
            ctx.blackboard().put("session:" + sid, session);
            auto collections = session->list_collections();

            inventory::ReportPortion portion;
            portion.execution_id = ctx.execution_id();
            portion.task_id = ctx.task_id();
            portion.stage = inventory::Stage::retrieval;
            portion.status = "ok";
            portion.payload = {{"storage_id", sid},
                               {"storage_type", d->storage_type},
                               {"collections", collections}};
            services.reports->append(portion);
            ctx.log("collections: " + std::to_string(collections.size()));

            std::vector<nlohmann::json> items;
            for (const auto& c : collections)
                items.push_back({{"storage_id", sid}, {"collection", c}});
            return items;
        } catch (const std::exception& e) {
            if (ctx.final_attempt()) {
                inventory::ReportPortion portion;
                portion.execution_id = ctx.execution_id();
                portion.task_id = ctx.task_id();
                portion.stage = inventory::Stage::retrieval;
                portion.status = "failed";
                portion.payload = {{"storage_id", sid}, {"error", e.what()}};
                services.reports->append(portion);
            }
            throw;
        }
    };

    TaskSpec done;
    done.id = "done";
    done.kind = TaskKind::join;
    done.retry_limit = 0;

    TaskSpec plan;
    plan.id = "plan";
    plan.kind = TaskKind::fan_out_template;
    plan.retry_limit = 0;
    plan.sub_tasks = {route, skip, manual, retrieve, done};
    plan.sub_edges = {{"route", "skip"},     {"route", "manual"}, {"route", "retrieve"},
                      {"skip", "done"},      {"manual", "done"},  {"retrieve", "done"}};
    plan.items = [](TaskContext& ctx) {
        auto items = ctx.blackboard().get<std::vector<nlohmann::json>>("plan-items");
        return items ? *items : std::vector<nlohmann::json>{};
    };
    dag.add(std::move(plan));

    TaskSpec di;
    di.id = "di";
    di.kind = TaskKind::join;
    di.retry_limit = 0;
    di.fn = [services](TaskContext& ctx) {
        inventory::ReportPortion portion;
        portion.execution_id = ctx.execution_id();
        portion.task_id = ctx.task_id();
        portion.stage = inventory::Stage::inventory;
        portion.status = ctx.join_missing().empty() ? "ok" : "partial";
        auto summary = services.reports->get(ctx.execution_id()).summary;
        portion.payload = {{"totals", summary["totals"]}, {"missing", ctx.join_missing()}};
        services.reports->append(portion);
        auto path =
            services.reports->export_report(ctx.execution_id(), services.paths.state_dir / "exports");
        ctx.log("report exported: " + path.filename().string());
    };
    dag.add(std::move(di));

    dag.edge("ca", "plan");
    dag.edge("plan", "di");
    return dag;
}

// Discovery-API workflow over one submitted document: flatten, analyze the
// flattened profile, seal the report. The document itself lives only on the
// blackboard for the duration of the run.
inline workflow::DagSpec build_api_dag(const AppServices& services, const std::string& identifier) {
    using workflow::TaskContext;
    using workflow::TaskKind;
    using workflow::TaskSpec;

    workflow::DagSpec dag;
    dag.id = "api";

    TaskSpec flatten;
    flatten.id = "flatten";
    flatten.retry_limit = 0;
    flatten.fn = [services, identifier](TaskContext& ctx) {
        auto cfg = detail::config_of(ctx);
        auto doc = ctx.blackboard().get<nlohmann::json>("api-document");
        if (!doc) throw std::runtime_error("no submitted document on the blackboard");
        auto profile = std::make_shared<retrieval::CollectionProfile>(
            analysis::profile_from_document(identifier, *doc, cfg->sampling()));
        ctx.blackboard().put("api-profile", profile);

        nlohmann::json attribute_names = nlohmann::json::array();
        for (const auto& a : profile->attributes) attribute_names.push_back(a.name);
        inventory::ReportPortion portion;
        portion.execution_id = ctx.execution_id();
        portion.task_id = ctx.task_id();
        portion.stage = inventory::Stage::api;
        portion.status = "ok";
        portion.payload = {{"identifier", identifier},
                           {"entities", profile->n},
                           {"attributes", attribute_names}};
        services.reports->append(portion);
    };
    dag.add(std::move(flatten));

    TaskSpec analyze;
    analyze.id = "analyze";
    analyze.retry_limit = 0;
    analyze.fn = [services](TaskContext& ctx) {
        auto cfg = detail::config_of(ctx);
        auto profile = ctx.blackboard().get<retrieval::CollectionProfile>("api-profile");
        if (!profile) throw std::runtime_error("no flattened profile on the blackboard");
        auto proximities = analysis::metadata_proximities(profile->attributes, cfg->keywords);
        auto matches = analysis::data_matches(*profile, cfg->patterns);
        auto result = std::make_shared<analysis::ClassificationResult>(
            analysis::classify(*profile, std::move(proximities), std::move(matches)));
        ctx.blackboard().put("api-result", result);

        inventory::ReportPortion portion;
        portion.execution_id = ctx.execution_id();
        portion.task_id = ctx.task_id();
        portion.stage = inventory::Stage::analysis;
        portion.status = "ok";
        portion.payload = result->to_json();
        services.reports->append(portion);
        ctx.log("T=" + format_score(result->t));
    };
    dag.add(std::move(analyze));

    TaskSpec report;
    report.id = "report";
    report.kind = TaskKind::join;
    report.retry_limit = 0;
    report.fn = [services](TaskContext& ctx) {
        auto result = ctx.blackboard().get<analysis::ClassificationResult>("api-result");
        inventory::ReportPortion portion;
        portion.execution_id = ctx.execution_id();
        portion.task_id = ctx.task_id();
        portion.stage = inventory::Stage::inventory;
        portion.status = ctx.join_missing().empty() ? "ok" : "partial";
        portion.payload = {{"storages", 1},
                           {"personal", result && result->personal},
                           {"missing", ctx.join_missing()}};
        services.reports->append(portion);
        services.reports->export_report(ctx.execution_id(), services.paths.state_dir / "exports");
    };
    dag.add(std::move(report));

    dag.edge("flatten", "analyze");
    dag.edge("analyze", "report");
    return dag;
}

struct RunOutcome {
    std::string execution_id;
    workflow::ExecutionResult result;
};

inline RunOutcome execute_dag(const AppServices& services, const workflow::DagSpec& dag,
                              std::shared_ptr<config::RuntimeConfig> cfg,
                              const std::string& execution_id) {
    workflow::ExecutionContext ctx;
    ctx.execution_id = execution_id;
    ctx.parallelism_limit = static_cast<int>(cfg->settings.parallelism);
    ctx.blackboard->put("config", std::move(cfg));
    RunOutcome out;
    out.execution_id = execution_id;
    out.result = services.engine->execute(dag, ctx);
    return out;
}

// Configuration is loaded fresh here, once per execution.
inline RunOutcome run_main(const AppServices& services, const codeanalysis::SourceOrigin& origin,
                           const std::string& trigger, std::string execution_id = "") {
    if (execution_id.empty()) execution_id = new_execution_id();
    auto cfg =
        std::make_shared<config::RuntimeConfig>(config::load_config(services.paths.config_dir));
    services.reports->begin_execution(execution_id, trigger);
    return execute_dag(services, build_main_dag(services, origin), std::move(cfg), execution_id);
}

inline RunOutcome run_api_analysis(const AppServices& services, const std::string& identifier,
                                   nlohmann::json document, const std::string& trigger = "api",
                                   std::string execution_id = "") {
    if (execution_id.empty()) execution_id = new_execution_id();
    auto cfg =
        std::make_shared<config::RuntimeConfig>(config::load_config(services.paths.config_dir));
    services.reports->begin_execution(execution_id, trigger);
    workflow::ExecutionContext ctx;
    ctx.execution_id = execution_id;
    ctx.parallelism_limit = static_cast<int>(cfg->settings.parallelism);
    ctx.blackboard->put("config", std::move(cfg));
    ctx.blackboard->put("api-document", std::make_shared<nlohmann::json>(std::move(document)));
    RunOutcome out;
    out.execution_id = execution_id;
    out.result = services.engine->execute(build_api_dag(services, identifier), ctx);
    return out;
}

}  // namespace teiresias::discovery
