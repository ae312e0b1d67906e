#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <unistd.h>
#include <vector>

#include "teiresias/workflow.hpp"

using namespace teiresias;
using namespace teiresias::workflow;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("teiresias_wf_" + std::to_string(getpid()) + "_" +
                std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

struct Recorder {
    std::mutex mutex;
    std::vector<std::string> order;
    void note(const std::string& id) {
        std::lock_guard lock(mutex);
        order.push_back(id);
    }
};

TaskSpec fn_task(std::string id, TaskFn fn = {}) {
    TaskSpec t;
    t.id = std::move(id);
    t.fn = std::move(fn);
    t.retry_limit = 0;
    t.backoff = std::chrono::milliseconds(0);
    return t;
}

ExecutionContext make_ctx(std::string id, int parallelism = 1) {
    ExecutionContext ctx;
    ctx.execution_id = std::move(id);
    ctx.parallelism_limit = parallelism;
    return ctx;
}

// Single-threaded reference executor for function-only DAGs whose edges all
// point from lower to higher task id, so ascending id order is topological.
std::map<std::string, TaskStatus> oracle_statuses(const DagSpec& spec,
                                                  const std::set<std::string>& failing) {
    std::map<std::string, TaskStatus> status;
    for (const auto& [id, t] : spec.tasks) {
        bool upstream_ok = true;
        for (const auto& [from, to] : spec.edges)
            if (to == id && status.at(from) != TaskStatus::succeeded) upstream_ok = false;
        if (!upstream_ok)
            status[id] = TaskStatus::skipped;
        else
            status[id] = failing.count(id) ? TaskStatus::failed : TaskStatus::succeeded;
    }
    return status;
}

}  // namespace

TEST_CASE("empty dag validates and executes") {
    DagSpec spec;
    spec.id = "empty";
    REQUIRE(validate_dag(spec).ok);
    Engine engine;
    auto ctx = make_ctx("x-empty");
    auto result = engine.execute(spec, ctx);
    REQUIRE_FALSE(result.scheduler_fault);
    REQUIRE(result.runs.empty());
    REQUIRE(result.ok());
}

TEST_CASE("two-task cycle is reported as data") {
    DagSpec spec;
    spec.id = "cyclic";
    spec.add(fn_task("a"));
    spec.add(fn_task("b"));
    spec.edge("a", "b");
    spec.edge("b", "a");
    auto report = validate_dag(spec);
    REQUIRE_FALSE(report.ok);
    REQUIRE(std::count(report.violations.begin(), report.violations.end(), "cycle: a→b→a") == 1);
}

TEST_CASE("edge endpoints must exist") {
    DagSpec spec;
    spec.id = "dangling";
    spec.add(fn_task("a"));
    spec.edge("a", "ghost");
    auto report = validate_dag(spec);
    REQUIRE_FALSE(report.ok);
    REQUIRE(report.violations.front() == "edge references unknown task: a→ghost");
}

TEST_CASE("selector needs at least two downstream branches") {
    DagSpec spec;
    spec.id = "narrow";
    TaskSpec s;
    s.id = "s";
    s.kind = TaskKind::branch_selector;
    s.selector = [](TaskContext&) { return "only"; };
    spec.add(s);
    spec.add(fn_task("only"));
    spec.edge("s", "only");
    auto report = validate_dag(spec);
    REQUIRE_FALSE(report.ok);
    REQUIRE(report.violations.front() == "selector s has fewer than 2 downstream branches");
}

TEST_CASE("selector fallback must be a downstream branch") {
    DagSpec spec;
    spec.id = "badfallback";
    TaskSpec s;
    s.id = "s";
    s.kind = TaskKind::branch_selector;
    s.selector = [](TaskContext&) { return "x"; };
    s.fallback_branch = "elsewhere";
    spec.add(s);
    spec.add(fn_task("x"));
    spec.add(fn_task("y"));
    spec.add(fn_task("elsewhere"));
    spec.edge("s", "x");
    spec.edge("s", "y");
    auto report = validate_dag(spec);
    REQUIRE_FALSE(report.ok);
    REQUIRE(report.violations.front() == "selector s fallback elsewhere is not a downstream branch");
}

TEST_CASE("linear pipeline runs in order with sound timestamps") {
    DagSpec spec;
    spec.id = "pipeline";
    Recorder rec;
    for (const char* id : {"ca", "dr", "da", "di"})
        spec.add(fn_task(id, [&rec, id](TaskContext&) { rec.note(id); }));
    spec.edge("ca", "dr");
    spec.edge("dr", "da");
    spec.edge("da", "di");
    REQUIRE(validate_dag(spec).ok);

    Engine engine;
    auto ctx = make_ctx("x-linear");
    auto result = engine.execute(spec, ctx);
    REQUIRE(result.ok());
    REQUIRE(rec.order == std::vector<std::string>{"ca", "dr", "da", "di"});
    for (auto [from, to] : spec.edges)
        REQUIRE(result.runs.at(from).ended_ns <= result.runs.at(to).started_ns);
}

TEST_CASE("single-worker wave order is fifo with lexicographic ties") {
    DagSpec spec;
    spec.id = "diamond";
    Recorder rec;
    for (const char* id : {"a", "d", "c", "b", "e"})
        spec.add(fn_task(id, [&rec, id](TaskContext&) { rec.note(id); }));
    for (const char* mid : {"b", "c", "d"}) {
        spec.edge("a", mid);
        spec.edge(mid, "e");
    }
    Engine engine;
    auto ctx = make_ctx("x-diamond", 1);
    auto result = engine.execute(spec, ctx);
    REQUIRE(result.ok());
    REQUIRE(rec.order == std::vector<std::string>{"a", "b", "c", "d", "e"});
}

TEST_CASE("failure skips the downstream closure while siblings continue") {
    DagSpec spec;
    spec.id = "fork";
    spec.add(fn_task("a"));
    spec.add(fn_task("b", [](TaskContext&) { throw std::runtime_error("boom"); }));
    spec.add(fn_task("c"));
    spec.add(fn_task("d"));
    spec.add(fn_task("e"));
    spec.edge("a", "b");
    spec.edge("a", "c");
    spec.edge("b", "d");
    spec.edge("d", "e");

    Engine engine;
    auto ctx = make_ctx("x-fork");
    auto result = engine.execute(spec, ctx);
    REQUIRE_FALSE(result.scheduler_fault);
    REQUIRE(result.runs.at("a").status == TaskStatus::succeeded);
    REQUIRE(result.runs.at("b").status == TaskStatus::failed);
    REQUIRE(result.runs.at("b").error == "boom");
    REQUIRE(result.runs.at("c").status == TaskStatus::succeeded);
    REQUIRE(result.runs.at("d").status == TaskStatus::skipped);
    REQUIRE(result.runs.at("d").skip_reason == "upstream-failed");
    REQUIRE(result.runs.at("e").status == TaskStatus::skipped);
    REQUIRE(result.runs.at("e").skip_reason == "upstream-failed");
    REQUIRE(result.runs.at("b").log.size() == 1);
}

TEST_CASE("join runs on partial inputs and records the missing branch") {
    DagSpec spec;
    spec.id = "joiny";
    std::vector<std::string> inputs;
    std::vector<std::string> missing;
    spec.add(fn_task("a"));
    spec.add(fn_task("b", [](TaskContext&) { throw std::runtime_error("nope"); }));
    spec.add(fn_task("c"));
    TaskSpec j;
    j.id = "merge";
    j.kind = TaskKind::join;
    j.retry_limit = 0;
    j.fn = [&](TaskContext& ctx) {
        inputs = ctx.join_inputs();
        missing = ctx.join_missing();
    };
    spec.add(j);
    spec.edge("a", "b");
    spec.edge("a", "c");
    spec.edge("b", "merge");
    spec.edge("c", "merge");

    Engine engine;
    auto ctx = make_ctx("x-join");
    auto result = engine.execute(spec, ctx);
    REQUIRE(result.runs.at("merge").status == TaskStatus::succeeded);
    REQUIRE(inputs == std::vector<std::string>{"c"});
    REQUIRE(missing == std::vector<std::string>{"b"});
}

TEST_CASE("selector runs one branch and skips the rest") {
    DagSpec spec;
    spec.id = "branchy";
    Recorder rec;
    TaskSpec s;
    s.id = "route";
    s.kind = TaskKind::branch_selector;
    s.retry_limit = 0;
    s.selector = [](TaskContext& ctx) { return ctx.variables().at("pick"); };
    spec.add(s);
    spec.add(fn_task("left", [&](TaskContext&) { rec.note("left"); }));
    spec.add(fn_task("right", [&](TaskContext&) { rec.note("right"); }));
    spec.add(fn_task("after_left", [&](TaskContext&) { rec.note("after_left"); }));
    spec.edge("route", "left");
    spec.edge("route", "right");
    spec.edge("left", "after_left");

    Engine engine;
    auto ctx = make_ctx("x-branch");
    ctx.variables["pick"] = "right";
    auto result = engine.execute(spec, ctx);
    REQUIRE(result.runs.at("right").status == TaskStatus::succeeded);
    REQUIRE(result.runs.at("left").status == TaskStatus::skipped);
    REQUIRE(result.runs.at("left").skip_reason == "branch-not-selected");
    REQUIRE(result.runs.at("after_left").status == TaskStatus::skipped);
    REQUIRE(result.runs.at("after_left").skip_reason == "branch-not-selected");
    REQUIRE(rec.order == std::vector<std::string>{"right"});
}

TEST_CASE("invalid selector choice fails without a fallback") {
    DagSpec spec;
    spec.id = "lost";
    TaskSpec s;
    s.id = "route";
    s.kind = TaskKind::branch_selector;
    s.retry_limit = 0;
    s.selector = [](TaskContext&) { return "nowhere"; };
    spec.add(s);
    spec.add(fn_task("left"));
    spec.add(fn_task("right"));
    spec.edge("route", "left");
    spec.edge("route", "right");

    Engine engine;
    auto ctx = make_ctx("x-lost");
    auto result = engine.execute(spec, ctx);
    REQUIRE(result.runs.at("route").status == TaskStatus::failed);
    REQUIRE(result.runs.at("route").error == "selector chose non-existent branch 'nowhere'");
    REQUIRE(result.runs.at("left").status == TaskStatus::skipped);
    REQUIRE(result.runs.at("left").skip_reason == "upstream-failed");
    REQUIRE(result.runs.at("right").skip_reason == "upstream-failed");
}

TEST_CASE("invalid selector choice uses the configured fallback") {
    DagSpec spec;
    spec.id = "recovered";
    Recorder rec;
    TaskSpec s;
    s.id = "route";
    s.kind = TaskKind::branch_selector;
    s.retry_limit = 0;
    s.selector = [](TaskContext&) { return "nowhere"; };
    s.fallback_branch = "right";
    spec.add(s);
    spec.add(fn_task("left", [&](TaskContext&) { rec.note("left"); }));
    spec.add(fn_task("right", [&](TaskContext&) { rec.note("right"); }));
    spec.edge("route", "left");
    spec.edge("route", "right");

    Engine engine;
    auto ctx = make_ctx("x-recovered");
    auto result = engine.execute(spec, ctx);
    REQUIRE(result.runs.at("route").status == TaskStatus::succeeded);
    REQUIRE(result.runs.at("right").status == TaskStatus::succeeded);
    REQUIRE(result.runs.at("left").status == TaskStatus::skipped);
    REQUIRE(rec.order == std::vector<std::string>{"right"});
    bool logged = false;
    for (const auto& line : result.runs.at("route").log)
        if (line.find("fallback") != std::string::npos) logged = true;
    REQUIRE(logged);
}

TEST_CASE("fan-out instantiates one sub-graph per item with deterministic ids") {
    DagSpec spec;
    spec.id = "fan";
    std::mutex mutex;
    std::map<std::string, std::string> seen;  // instance id → item value

    TaskSpec tmpl;
    tmpl.id = "plan";
    tmpl.kind = TaskKind::fan_out_template;
    tmpl.retry_limit = 0;
    tmpl.items = [](TaskContext&) {
        return std::vector<nlohmann::json>{"alpha", "beta", "gamma"};
    };
    TaskSpec work = fn_task("work");
    work.fn = [&](TaskContext& ctx) {
        std::lock_guard lock(mutex);
        seen[ctx.task_id()] = ctx.item().get<std::string>();
    };
    tmpl.sub_tasks.push_back(work);
    spec.add(tmpl);

    std::vector<std::string> inputs;
    TaskSpec j;
    j.id = "merge";
    j.kind = TaskKind::join;
    j.retry_limit = 0;
    j.fn = [&](TaskContext& ctx) { inputs = ctx.join_inputs(); };
    spec.add(j);
    spec.edge("plan", "merge");

    Engine engine;
    auto ctx = make_ctx("x-fan", 3);
    auto result = engine.execute(spec, ctx);
    REQUIRE(result.ok());
    REQUIRE(result.runs.size() == 5);
    REQUIRE(seen == std::map<std::string, std::string>{{"plan[0].work", "alpha"},
                                                       {"plan[1].work", "beta"},
                                                       {"plan[2].work", "gamma"}});
    REQUIRE(inputs == std::vector<std::string>{"plan", "plan[0].work", "plan[1].work",
                                               "plan[2].work"});
    for (auto inst : {"plan[0].work", "plan[1].work", "plan[2].work"}) {
        REQUIRE(result.runs.at(inst).started_ns >= result.runs.at("plan").ended_ns);
        REQUIRE(result.runs.at("merge").started_ns >= result.runs.at(inst).ended_ns);
    }
}

TEST_CASE("empty fan-out still runs the join with zero expanded inputs") {
    DagSpec spec;
    spec.id = "fanless";
    TaskSpec tmpl;
    tmpl.id = "plan";
    tmpl.kind = TaskKind::fan_out_template;
    tmpl.retry_limit = 0;
    tmpl.items = [](TaskContext&) { return std::vector<nlohmann::json>{}; };
    tmpl.sub_tasks.push_back(fn_task("work"));
    spec.add(tmpl);
    std::vector<std::string> inputs;
    TaskSpec j;
    j.id = "merge";
    j.kind = TaskKind::join;
    j.retry_limit = 0;
    j.fn = [&](TaskContext& ctx) { inputs = ctx.join_inputs(); };
    spec.add(j);
    spec.edge("plan", "merge");

    Engine engine;
    auto ctx = make_ctx("x-fanless");
    auto result = engine.execute(spec, ctx);
    REQUIRE(result.ok());
    REQUIRE(result.runs.size() == 2);
    REQUIRE(inputs == std::vector<std::string>{"plan"});
}

TEST_CASE("fan-out sub-graphs honour internal edges and failures stay isolated") {
    DagSpec spec;
    spec.id = "fanfail";
    TaskSpec tmpl;
    tmpl.id = "plan";
    tmpl.kind = TaskKind::fan_out_template;
    tmpl.retry_limit = 0;
    tmpl.items = [](TaskContext&) { return std::vector<nlohmann::json>{0, 1, 2}; };
    TaskSpec fetch = fn_task("fetch");
    fetch.fn = [](TaskContext& ctx) {
        if (ctx.item().get<int>() == 1) throw std::runtime_error("unreachable storage");
    };
    TaskSpec analyze = fn_task("analyze");
    tmpl.sub_tasks.push_back(fetch);
    tmpl.sub_tasks.push_back(analyze);
    tmpl.sub_edges.emplace_back("fetch", "analyze");
    spec.add(tmpl);
    std::vector<std::string> missing;
    TaskSpec j;
    j.id = "merge";
    j.kind = TaskKind::join;
    j.retry_limit = 0;
    j.fn = [&](TaskContext& ctx) { missing = ctx.join_missing(); };
    spec.add(j);
    spec.edge("plan", "merge");

    Engine engine;
    auto ctx = make_ctx("x-fanfail", 2);
    auto result = engine.execute(spec, ctx);
    REQUIRE_FALSE(result.scheduler_fault);
    REQUIRE(result.runs.at("plan[0].analyze").status == TaskStatus::succeeded);
    REQUIRE(result.runs.at("plan[1].fetch").status == TaskStatus::failed);
    REQUIRE(result.runs.at("plan[1].analyze").status == TaskStatus::skipped);
    REQUIRE(result.runs.at("plan[2].analyze").status == TaskStatus::succeeded);
    REQUIRE(result.runs.at("merge").status == TaskStatus::succeeded);
    REQUIRE(missing == std::vector<std::string>{"plan[1].analyze"});
}

TEST_CASE("nested fan-out expands uniformly at every depth") {
    DagSpec spec;
    spec.id = "nested";
    std::mutex mutex;
    std::set<std::string> leaves;

    TaskSpec inner;
    inner.id = "inner";
    inner.kind = TaskKind::fan_out_template;
    inner.retry_limit = 0;
    inner.items = [](TaskContext&) { return std::vector<nlohmann::json>{"x", "y"}; };
    TaskSpec leaf = fn_task("leaf");
    leaf.fn = [&](TaskContext& ctx) {
        std::lock_guard lock(mutex);
        leaves.insert(ctx.task_id());
    };
    inner.sub_tasks.push_back(leaf);

    TaskSpec outer;
    outer.id = "outer";
    outer.kind = TaskKind::fan_out_template;
    outer.retry_limit = 0;
    outer.items = [](TaskContext&) { return std::vector<nlohmann::json>{1, 2}; };
    outer.sub_tasks.push_back(inner);
    spec.add(outer);

    TaskSpec j;
    j.id = "merge";
    j.kind = TaskKind::join;
    j.retry_limit = 0;
    spec.add(j);
    spec.edge("outer", "merge");

    Engine engine;
    auto ctx = make_ctx("x-nested", 4);
    auto result = engine.execute(spec, ctx);
    REQUIRE(result.ok());
    REQUIRE(leaves == std::set<std::string>{"outer[0].inner[0].leaf", "outer[0].inner[1].leaf",
                                            "outer[1].inner[0].leaf", "outer[1].inner[1].leaf"});
}

TEST_CASE("retries honour the limit and log every failed attempt") {
    DagSpec spec;
    spec.id = "flaky";
    std::atomic<int> calls{0};
    TaskSpec t = fn_task("t");
    t.retry_limit = 2;
    t.backoff = std::chrono::milliseconds(1);
    t.fn = [&](TaskContext&) {
        if (calls.fetch_add(1) < 2) throw std::runtime_error("transient");
    };
    spec.add(t);

    Engine engine;
    auto ctx = make_ctx("x-flaky");
    auto result = engine.execute(spec, ctx);
    REQUIRE(result.ok());
    REQUIRE(calls.load() == 3);
    REQUIRE(result.runs.at("t").attempt == 3);
    REQUIRE(result.runs.at("t").log.size() == 2);

    SECTION("exhausted retries fail the task") {
        DagSpec spec2;
        spec2.id = "doomed";
        TaskSpec d = fn_task("d", [](TaskContext&) { throw std::runtime_error("permanent"); });
        d.retry_limit = 1;
        d.backoff = std::chrono::milliseconds(0);
        spec2.add(d);
        auto ctx2 = make_ctx("x-doomed");
        auto r2 = engine.execute(spec2, ctx2);
        REQUIRE(r2.runs.at("d").status == TaskStatus::failed);
        REQUIRE(r2.runs.at("d").attempt == 2);
        REQUIRE(r2.runs.at("d").log.size() == 2);
    }
}

TEST_CASE("journal records one line per attempt without task outputs") {
    TempDir dir;
    DagSpec spec;
    spec.id = "journaled";
    std::atomic<int> calls{0};
    TaskSpec t = fn_task("t");
    t.retry_limit = 1;
    t.backoff = std::chrono::milliseconds(0);
    t.fn = [&](TaskContext& ctx) {
        ctx.blackboard().put("t.out", std::make_shared<std::string>("sensitive-value"));
        if (calls.fetch_add(1) < 1) throw std::runtime_error("transient");
    };
    spec.add(t);
    spec.add(fn_task("broken", [](TaskContext&) { throw std::runtime_error("bad"); }));
    spec.add(fn_task("downstream"));
    spec.edge("broken", "downstream");

    Engine engine(EngineOptions{dir.path});
    auto ctx = make_ctx("exec-77");
    auto result = engine.execute(spec, ctx);
    REQUIRE_FALSE(result.scheduler_fault);

    std::ifstream in(dir.path / "executions" / "exec-77.jsonl");
    REQUIRE(in.good());
    std::map<std::string, std::vector<nlohmann::json>> lines;
    std::string raw;
    while (std::getline(in, raw)) {
        auto j = nlohmann::json::parse(raw);
        REQUIRE(j["execution"] == "exec-77");
        REQUIRE_FALSE(j.contains("output"));
        REQUIRE(raw.find("sensitive-value") == std::string::npos);
        lines[j["task"]].push_back(j);
    }
    REQUIRE(lines.at("t").size() == 2);
    REQUIRE(lines.at("t")[0]["status"] == "failed");
    REQUIRE(lines.at("t")[0]["attempt"] == 1);
    REQUIRE(lines.at("t")[1]["status"] == "succeeded");
    REQUIRE(lines.at("t")[1]["attempt"] == 2);
    REQUIRE(lines.at("broken").size() == 1);
    REQUIRE(lines.at("downstream").size() == 1);
    REQUIRE(lines.at("downstream")[0]["status"] == "skipped");
    REQUIRE(lines.at("downstream")[0]["skip_reason"] == "upstream-failed");
    REQUIRE(lines.at("downstream")[0]["attempt"] == 0);
}

TEST_CASE("blackboard stores typed shared values") {
    Blackboard board;
    board.put("profiles/db1", std::make_shared<int>(42));
    board.put("profiles/db2", std::make_shared<int>(7));
    board.put("other", std::make_shared<std::string>("x"));
    REQUIRE(*board.get<int>("profiles/db1") == 42);
    REQUIRE(board.get<int>("absent") == nullptr);
    REQUIRE(board.contains("other"));
    auto keys = board.keys_with_prefix("profiles/");
    REQUIRE(keys == std::vector<std::string>{"profiles/db1", "profiles/db2"});
}

TEST_CASE("invalid dag and invalid parallelism fail the whole run") {
    DagSpec spec;
    spec.id = "cyclic";
    spec.add(fn_task("a"));
    spec.add(fn_task("b"));
    spec.edge("a", "b");
    spec.edge("b", "a");
    Engine engine;
    auto ctx = make_ctx("x-fault");
    auto result = engine.execute(spec, ctx);
    REQUIRE(result.scheduler_fault);
    REQUIRE(result.fault_error.find("invalid dag") == 0);
    REQUIRE_FALSE(result.ok());

    DagSpec fine;
    fine.id = "fine";
    fine.add(fn_task("a"));
    auto ctx2 = make_ctx("x-zero", 0);
    auto r2 = engine.execute(fine, ctx2);
    REQUIRE(r2.scheduler_fault);
}

TEST_CASE("faulting items callback fails the run with partial task runs") {
    DagSpec spec;
    spec.id = "fanfault";
    spec.add(fn_task("before"));
    TaskSpec tmpl;
    tmpl.id = "plan";
    tmpl.kind = TaskKind::fan_out_template;
    tmpl.retry_limit = 0;
    tmpl.items = [](TaskContext&) -> std::vector<nlohmann::json> {
        throw std::runtime_error("planner exploded");
    };
    tmpl.sub_tasks.push_back(fn_task("work"));
    spec.add(tmpl);
    TaskSpec j;
    j.id = "merge";
    j.kind = TaskKind::join;
    j.retry_limit = 0;
    spec.add(j);
    spec.edge("before", "plan");
    spec.edge("plan", "merge");

    Engine engine;
    auto ctx = make_ctx("x-fanfault");
    auto result = engine.execute(spec, ctx);
    REQUIRE_FALSE(result.scheduler_fault);
    REQUIRE(result.runs.at("before").status == TaskStatus::succeeded);
    REQUIRE(result.runs.at("plan").status == TaskStatus::failed);
    REQUIRE(result.runs.at("merge").status == TaskStatus::succeeded);
}

TEST_CASE("schedule independence and failure isolation over random dags") {
    for (int iter = 0; iter < 500; ++iter) {
        std::mt19937_64 rng(9000 + iter);
        int n = 1 + int(rng() % 18);
        double edge_prob = (iter % 2 == 0) ? 0.15 : 0.3;
        std::set<std::string> failing;

        DagSpec spec;
        spec.id = "random-" + std::to_string(iter);
        std::vector<std::string> ids;
        for (int i = 0; i < n; ++i) {
            char buf[8];
            std::snprintf(buf, sizeof buf, "t%02d", i);
            ids.emplace_back(buf);
        }
        for (const auto& id : ids) {
            bool fails = (rng() % 100) < 15;
            if (fails) failing.insert(id);
            spec.add(fn_task(id, [fails](TaskContext&) {
                if (fails) throw std::runtime_error("injected");
            }));
        }
        for (int i = 0; i < n; ++i)
            for (int k = i + 1; k < n; ++k)
                if (double(rng() % 1000) < edge_prob * 1000) spec.edge(ids[i], ids[k]);

        REQUIRE(validate_dag(spec).ok);
        auto expected = oracle_statuses(spec, failing);

        Engine engine;
        for (int par : {1, 4}) {
            auto ctx = make_ctx("x-rand-" + std::to_string(iter) + "-" + std::to_string(par), par);
            auto result = engine.execute(spec, ctx);
            REQUIRE_FALSE(result.scheduler_fault);
            REQUIRE(result.runs.size() == std::size_t(n));
            for (const auto& [id, run] : result.runs) {
                if (run.status != expected.at(id)) {
                    CAPTURE(iter, par, id);
                    REQUIRE(status_name(run.status) == status_name(expected.at(id)));
                }
                if (run.status == TaskStatus::skipped)
                    REQUIRE(run.skip_reason == "upstream-failed");
            }
            for (const auto& [from, to] : spec.edges) {
                const auto& up = result.runs.at(from);
                const auto& down = result.runs.at(to);
                if (down.attempt > 0) REQUIRE(up.ended_ns <= down.started_ns);
            }
        }
    }
}

TEST_CASE("parallel execution matches the sequential result on a fan-out") {
    auto build = [] {
        DagSpec spec;
        spec.id = "wide";
        TaskSpec tmpl;
        tmpl.id = "plan";
        tmpl.kind = TaskKind::fan_out_template;
        tmpl.retry_limit = 0;
        tmpl.items = [](TaskContext&) {
            std::vector<nlohmann::json> items;
            for (int i = 0; i < 12; ++i) items.push_back(i);
            return items;
        };
        TaskSpec work = fn_task("work");
        work.fn = [](TaskContext& ctx) {
            if (ctx.item().get<int>() % 5 == 4) throw std::runtime_error("unlucky");
        };
        tmpl.sub_tasks.push_back(work);
        TaskSpec j;
        j.id = "merge";
        j.kind = TaskKind::join;
        j.retry_limit = 0;
        spec.add(tmpl);
        spec.add(j);
        spec.edge("plan", "merge");
        return spec;
    };

    std::map<std::string, std::string> first;
    for (int par : {1, 2, 8}) {
        auto spec = build();
        Engine engine;
        auto ctx = make_ctx("x-wide-" + std::to_string(par), par);
        auto result = engine.execute(spec, ctx);
        REQUIRE_FALSE(result.scheduler_fault);
        std::map<std::string, std::string> statuses;
        for (const auto& [id, run] : result.runs) statuses[id] = status_name(run.status);
        if (par == 1)
            first = statuses;
        else
            REQUIRE(statuses == first);
    }
    REQUIRE(first.at("plan[4].work") == "failed");
    REQUIRE(first.at("plan[9].work") == "failed");
    REQUIRE(first.at("plan[0].work") == "succeeded");
    REQUIRE(first.at("merge") == "succeeded");
}
