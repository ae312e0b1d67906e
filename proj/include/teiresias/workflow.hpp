#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "teiresias/common.hpp"

namespace teiresias::workflow {

enum class TaskKind { function, branch_selector, fan_out_template, join };
enum class TaskStatus { pending, running, succeeded, failed, skipped };

inline const char* status_name(TaskStatus s) {
    switch (s) {
        case TaskStatus::pending: return "pending";
        case TaskStatus::running: return "running";
        case TaskStatus::succeeded: return "succeeded";
        case TaskStatus::failed: return "failed";
        case TaskStatus::skipped: return "skipped";
    }
    return "pending";
}

// Shared in-memory handoff between tasks of one execution. Values never touch
// the journal; anything that must survive the run goes through the inventory.
class Blackboard {
public:
    template <typename T>
    void put(const std::string& key, std::shared_ptr<T> value) {
        std::lock_guard lock(mutex_);
        values_[key] = std::move(value);
    }

    template <typename T>
    std::shared_ptr<T> get(const std::string& key) const {
        std::lock_guard lock(mutex_);
        auto it = values_.find(key);
        if (it == values_.end()) return nullptr;
        return std::static_pointer_cast<T>(it->second);
    }

    bool contains(const std::string& key) const {
        std::lock_guard lock(mutex_);
        return values_.count(key) > 0;
    }

    std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
        std::lock_guard lock(mutex_);
        std::vector<std::string> out;
        for (const auto& [k, v] : values_)
            if (k.rfind(prefix, 0) == 0) out.push_back(k);
        return out;
    }

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<void>> values_;
};

struct ExecutionContext {
    std::string execution_id;
    std::map<std::string, std::string> variables;
    int parallelism_limit = 1;
    std::shared_ptr<Blackboard> blackboard = std::make_shared<Blackboard>();
};

class TaskContext;

using TaskFn = std::function<void(TaskContext&)>;
using SelectorFn = std::function<std::string(TaskContext&)>;
using ItemsFn = std::function<std::vector<nlohmann::json>(TaskContext&)>;

struct TaskSpec {
    std::string id;
    TaskKind kind = TaskKind::function;
    TaskFn fn;             // function and join bodies; empty fn is a no-op
    SelectorFn selector;   // branch-selector only: returns a downstream id
    std::string fallback_branch;  // selector fallback when the choice is invalid
    ItemsFn items;         // fan-out template only
    std::vector<TaskSpec> sub_tasks;  // fan-out template sub-graph
    std::vector<std::pair<std::string, std::string>> sub_edges;
    int retry_limit = 1;
    std::chrono::milliseconds backoff{1000};
    std::string idempotency_key;  // defaults to the task id
    nlohmann::json item;          // bound fan-out item on instantiated tasks
};

struct DagSpec {
    std::string id;
    std::map<std::string, TaskSpec> tasks;
    std::set<std::pair<std::string, std::string>> edges;

    TaskSpec& add(TaskSpec t) {
        if (t.idempotency_key.empty()) t.idempotency_key = t.id;
        auto [it, fresh] = tasks.emplace(t.id, std::move(t));
        if (!fresh) throw std::invalid_argument("duplicate task id " + it->first);
        return it->second;
    }

    void edge(const std::string& from, const std::string& to) { edges.emplace(from, to); }
};

struct ValidationReport {
    bool ok = true;
    std::vector<std::string> violations;
};

namespace detail {

inline void find_cycle(const std::map<std::string, std::vector<std::string>>& adj,
                       ValidationReport& report) {
    std::map<std::string, int> state;  // 0 unvisited, 1 on stack, 2 done
    std::vector<std::string> stack;
    std::function<bool(const std::string&)> dfs = [&](const std::string& u) {
        state[u] = 1;
        stack.push_back(u);
        auto it = adj.find(u);
        if (it != adj.end())
            for (const auto& v : it->second) {
                if (state[v] == 1) {
                    std::string msg = "cycle: ";
                    auto from = std::find(stack.begin(), stack.end(), v);
                    for (auto s = from; s != stack.end(); ++s) msg += *s + "→";
                    msg += v;
                    report.violations.push_back(msg);
                    return true;
                }
                if (state[v] == 0 && dfs(v)) return true;
            }
        stack.pop_back();
        state[u] = 2;
        return false;
    };
    for (const auto& [u, vs] : adj)
        if (state[u] == 0 && dfs(u)) return;
}

}  // namespace detail

inline ValidationReport validate_dag(const DagSpec& spec) {
    ValidationReport report;
    std::map<std::string, std::vector<std::string>> adj;
    std::map<std::string, int> downstream_count;
    for (const auto& [id, t] : spec.tasks) adj[id];
    for (const auto& [from, to] : spec.edges) {
        if (!spec.tasks.count(from) || !spec.tasks.count(to)) {
            report.violations.push_back("edge references unknown task: " + from + "→" + to);
            continue;
        }
        adj[from].push_back(to);
        ++downstream_count[from];
    }
    detail::find_cycle(adj, report);
    for (const auto& [id, t] : spec.tasks) {
        if (t.kind == TaskKind::branch_selector && downstream_count[id] < 2)
            report.violations.push_back("selector " + id + " has fewer than 2 downstream branches");
        if (t.kind == TaskKind::branch_selector && !t.fallback_branch.empty() &&
            !spec.edges.count({id, t.fallback_branch}))
            report.violations.push_back("selector " + id + " fallback " + t.fallback_branch +
                                        " is not a downstream branch");
        if (t.kind == TaskKind::fan_out_template) {
            if (t.sub_tasks.empty())
                report.violations.push_back("fan-out template " + id + " declares no sub-graph");
            DagSpec sub;
            sub.id = id;
            for (const auto& st : t.sub_tasks) {
                if (sub.tasks.count(st.id)) {
                    report.violations.push_back("fan-out template " + id + " repeats sub-task " +
                                                st.id);
                    continue;
                }
                sub.tasks.emplace(st.id, st);
            }
            for (const auto& e : t.sub_edges) sub.edges.insert(e);
            auto inner = validate_dag(sub);
            for (const auto& v : inner.violations)
                report.violations.push_back("template " + id + ": " + v);
        }
    }
    report.ok = report.violations.empty();
    return report;
}

// One record per task; the journal additionally receives one line per attempt.
// attempt 0 means the task never started (skipped). Outputs live only on the
// blackboard, never in this record or the journal.
struct TaskRun {
    std::string task_id;
    std::string execution_id;
    int attempt = 0;
    TaskStatus status = TaskStatus::pending;
    std::string skip_reason;  // "branch-not-selected" or "upstream-failed"
    std::int64_t started_ns = 0;
    std::int64_t ended_ns = 0;
    std::vector<std::string> log;
    std::string error;

    nlohmann::json to_json() const {
        nlohmann::json j{{"task", task_id},
                         {"execution", execution_id},
                         {"attempt", attempt},
                         {"status", status_name(status)},
                         {"started_ns", started_ns},
                         {"ended_ns", ended_ns},
                         {"log", log}};
        if (!skip_reason.empty()) j["skip_reason"] = skip_reason;
        if (!error.empty()) j["error"] = error;
        return j;
    }
};

struct ExecutionResult {
    bool scheduler_fault = false;
    std::string fault_error;
    std::map<std::string, TaskRun> runs;

    bool ok() const {
        if (scheduler_fault) return false;
        for (const auto& [id, run] : runs)
            if (run.status != TaskStatus::succeeded && run.status != TaskStatus::skipped)
                return false;
        return true;
    }

    std::size_t count(TaskStatus s) const {
        std::size_t n = 0;
        for (const auto& [id, run] : runs) n += run.status == s ? 1 : 0;
        return n;
    }
};

class Engine;

class TaskContext {
public:
    TaskContext(ExecutionContext& exec, std::string task_id, nlohmann::json item,
                std::vector<std::string> join_inputs, std::vector<std::string> join_missing,
                int attempt = 1, int retry_limit = 0)
        : exec_(exec),
          task_id_(std::move(task_id)),
          item_(std::move(item)),
          join_inputs_(std::move(join_inputs)),
          join_missing_(std::move(join_missing)),
          attempt_(attempt),
          retry_limit_(retry_limit) {}

    const std::string& execution_id() const { return exec_.execution_id; }
    const std::string& task_id() const { return task_id_; }
    const nlohmann::json& item() const { return item_; }
    Blackboard& blackboard() { return *exec_.blackboard; }
    const std::map<std::string, std::string>& variables() const { return exec_.variables; }

    // join tasks: upstream ids that succeeded / that did not
    const std::vector<std::string>& join_inputs() const { return join_inputs_; }
    const std::vector<std::string>& join_missing() const { return join_missing_; }

    int attempt() const { return attempt_; }
    // True when a failure of this attempt would be terminal (no retry left).
    bool final_attempt() const { return attempt_ > retry_limit_; }

    void log(std::string line) { log_.push_back(std::move(line)); }
    std::vector<std::string>& raw_log() { return log_; }

private:
    ExecutionContext& exec_;
    std::string task_id_;
    nlohmann::json item_;
    std::vector<std::string> join_inputs_;
    std::vector<std::string> join_missing_;
    int attempt_ = 1;
    int retry_limit_ = 0;
    std::vector<std::string> log_;
};

struct EngineOptions {
    std::filesystem::path state_dir;  // empty disables the execution journal
};

// In-process DAG engine: worker pool over a time-ordered ready queue, FIFO
// within a readiness wave, lexicographic task-id order inside one wave.
class Engine {
public:
    explicit Engine(EngineOptions options = {}) : options_(std::move(options)) {}

    ExecutionResult execute(const DagSpec& spec, ExecutionContext& ctx) {
        auto validation = validate_dag(spec);
        ExecutionResult result;
        if (!validation.ok) {
            result.scheduler_fault = true;
            result.fault_error = "invalid dag: " + join(validation.violations, "; ");
            return result;
        }
        if (ctx.parallelism_limit < 1) {
            result.scheduler_fault = true;
            result.fault_error = "parallelism-limit must be positive";
            return result;
        }

        State st;
        st.exec = &ctx;
        if (!options_.state_dir.empty()) {
            auto dir = options_.state_dir / "executions";
            std::filesystem::create_directories(dir);
            st.journal.open(dir / (ctx.execution_id + ".jsonl"), std::ios::app);
            if (!st.journal) {
                result.scheduler_fault = true;
                result.fault_error = "cannot open execution journal";
                return result;
            }
        }

        {
            std::lock_guard lock(st.mutex);
            for (const auto& [id, t] : spec.tasks) insert_node(st, t);
            for (const auto& [from, to] : spec.edges) insert_edge(st, from, to);
            std::vector<std::string> roots;
            for (auto& [id, node] : st.nodes)
                if (node.upstreams.empty()) roots.push_back(id);
            std::sort(roots.begin(), roots.end());
            for (const auto& id : roots) enqueue(st, id, 0);
            st.remaining = st.nodes.size();
        }

        std::vector<std::thread> workers;
        int worker_count = ctx.parallelism_limit;
        for (int w = 0; w < worker_count; ++w)
            workers.emplace_back([this, &st] { worker_loop(st); });
        for (auto& w : workers) w.join();

        std::lock_guard lock(st.mutex);
        result.scheduler_fault = st.fault;
        result.fault_error = st.fault_error;
        for (auto& [id, node] : st.nodes) result.runs.emplace(id, std::move(node.run));
        return result;
    }

private:
    struct Node {
        TaskSpec spec;
        std::vector<std::string> upstreams;
        std::vector<std::string> downstreams;
        bool non_selected = false;  // some selector upstream chose another branch
        TaskRun run;
    };

    struct State {
        std::mutex mutex;
        std::condition_variable cv;
        std::map<std::string, Node> nodes;
        std::multimap<std::int64_t, std::string> queue;  // ready-time → task id
        std::size_t remaining = 0;
        std::size_t running = 0;
        bool fault = false;
        std::string fault_error;
        std::ofstream journal;
        ExecutionContext* exec = nullptr;
    };

    static std::int64_t now_ns() { return monotonic_ns(); }

    void insert_node(State& st, TaskSpec t) {
        if (t.idempotency_key.empty()) t.idempotency_key = t.id;
        Node node;
        node.run.task_id = t.id;
        node.run.execution_id = st.exec->execution_id;
        node.spec = std::move(t);
        st.nodes.emplace(node.spec.id, std::move(node));
    }

    void insert_edge(State& st, const std::string& from, const std::string& to) {
        st.nodes.at(from).downstreams.push_back(to);
        st.nodes.at(to).upstreams.push_back(from);
    }

    void enqueue(State& st, const std::string& id, std::int64_t ready_ns) {
        st.queue.emplace(ready_ns, id);
        st.cv.notify_all();
    }

    void journal_attempt(State& st, const Node& node, int attempt, TaskStatus status,
                         std::int64_t started, std::int64_t ended,
                         const std::vector<std::string>& log, const std::string& error,
                         const std::string& skip_reason) {
        if (!st.journal.is_open()) return;
        TaskRun line;
        line.task_id = node.spec.id;
        line.execution_id = st.exec->execution_id;
        line.attempt = attempt;
        line.status = status;
        line.started_ns = started;
        line.ended_ns = ended;
        line.log = log;
        line.error = error;
        line.skip_reason = skip_reason;
        st.journal << line.to_json().dump() << "\n";
        st.journal.flush();
    }

    // Called with st.mutex held, after `id` reached a terminal status, to
    // settle downstream readiness. Skips cascade without occupying workers.
    void on_terminal(State& st, const std::string& id) {
        std::vector<std::string> pending{id};
        while (!pending.empty()) {
            std::string cur = pending.back();
            pending.pop_back();
            --st.remaining;
            std::vector<std::string> wave;
            for (const auto& down : st.nodes.at(cur).downstreams) {
                Node& d = st.nodes.at(down);
                if (d.run.status != TaskStatus::pending) continue;
                bool all_terminal = true;
                bool all_succeeded = true;
                bool blocked_by_selection_only = true;
                for (const auto& up : d.upstreams) {
                    const Node& u = st.nodes.at(up);
                    TaskStatus s = u.run.status;
                    if (s != TaskStatus::succeeded && s != TaskStatus::failed &&
                        s != TaskStatus::skipped) {
                        all_terminal = false;
                        break;
                    }
                    if (s != TaskStatus::succeeded) {
                        all_succeeded = false;
                        if (!(s == TaskStatus::skipped &&
                              u.run.skip_reason == "branch-not-selected"))
                            blocked_by_selection_only = false;
                    }
                }
                if (!all_terminal) continue;
                if (d.spec.kind == TaskKind::join) {
                    wave.push_back(down);
                } else if (d.non_selected) {
                    finalize_skip(st, d, "branch-not-selected");
                    pending.push_back(down);
                } else if (!all_succeeded) {
                    finalize_skip(st, d,
                                  blocked_by_selection_only ? "branch-not-selected"
                                                            : "upstream-failed");
                    pending.push_back(down);
                } else {
                    wave.push_back(down);
                }
            }
            std::sort(wave.begin(), wave.end());
            for (const auto& w : wave) enqueue(st, w, 0);
        }
        if (st.remaining == 0) st.cv.notify_all();
    }

    void finalize_skip(State& st, Node& node, const std::string& reason) {
        node.run.status = TaskStatus::skipped;
        node.run.skip_reason = reason;
        node.run.attempt = 0;
        journal_attempt(st, node, 0, TaskStatus::skipped, 0, 0, {}, "", reason);
    }

    void worker_loop(State& st) {
        std::unique_lock lock(st.mutex);
        while (true) {
            if (st.fault && st.running == 0) return;
            if (st.remaining == 0) return;
            auto it = st.queue.begin();
            if (it == st.queue.end() || st.fault) {
                if (st.running == 0 && (st.fault || st.queue.empty())) {
                    // nothing running and nothing runnable: either done or wedged
                    if (!st.fault && st.remaining > 0 && st.queue.empty()) {
                        st.fault = true;
                        st.fault_error = "scheduler wedged with unreachable pending tasks";
                        st.cv.notify_all();
                        return;
                    }
                    if (st.fault) return;
                }
                st.cv.wait(lock);
                continue;
            }
            std::int64_t ready = it->first;
            std::int64_t current = now_ns();
            if (ready > current) {
                st.cv.wait_for(lock, std::chrono::nanoseconds(ready - current));
                continue;
            }
            std::string id = it->second;
            st.queue.erase(it);
            ++st.running;
            run_attempt(st, lock, id);
            --st.running;
            st.cv.notify_all();
        }
    }

    // Entered and exited with the lock held; the task body runs unlocked.
    void run_attempt(State& st, std::unique_lock<std::mutex>& lock, const std::string& id) {
        Node& node = st.nodes.at(id);
        node.run.status = TaskStatus::running;
        node.run.attempt += 1;
        int attempt = node.run.attempt;
        std::int64_t attempt_start = now_ns();
        if (attempt == 1) node.run.started_ns = attempt_start;

        std::vector<std::string> join_inputs;
        std::vector<std::string> join_missing;
        if (node.spec.kind == TaskKind::join) {
            for (const auto& up : node.upstreams) {
                if (st.nodes.at(up).run.status == TaskStatus::succeeded)
                    join_inputs.push_back(up);
                else
                    join_missing.push_back(up);
            }
            std::sort(join_inputs.begin(), join_inputs.end());
            std::sort(join_missing.begin(), join_missing.end());
        }
        TaskContext ctx(*st.exec, id, node.spec.item, std::move(join_inputs),
                        std::move(join_missing), attempt, node.spec.retry_limit);

        const TaskSpec spec = node.spec;  // stable copy for the unlocked body
        lock.unlock();

        std::string error;
        std::string chosen;
        std::vector<nlohmann::json> items;
        bool body_ok = true;
        try {
            switch (spec.kind) {
                case TaskKind::function:
                case TaskKind::join:
                    if (spec.fn) spec.fn(ctx);
                    break;
                case TaskKind::branch_selector: {
                    if (!spec.selector) throw std::runtime_error("selector without selector fn");
                    chosen = spec.selector(ctx);
                    break;
                }
                case TaskKind::fan_out_template: {
                    if (spec.items) items = spec.items(ctx);
                    break;
                }
            }
        } catch (const std::exception& e) {
            body_ok = false;
            error = e.what();
        } catch (...) {
            body_ok = false;
            error = "unknown task error";
        }

        lock.lock();

        if (body_ok && spec.kind == TaskKind::branch_selector) {
            bool valid = std::count(node.downstreams.begin(), node.downstreams.end(), chosen) > 0;
            if (!valid && !spec.fallback_branch.empty()) {
                ctx.log("selector choice '" + chosen + "' unknown, using fallback '" +
                        spec.fallback_branch + "'");
                chosen = spec.fallback_branch;
                valid = true;
            }
            if (!valid) {
                body_ok = false;
                error = "selector chose non-existent branch '" + chosen + "'";
            } else {
                for (const auto& down : node.downstreams)
                    if (down != chosen) st.nodes.at(down).non_selected = true;
            }
        }

        if (body_ok && spec.kind == TaskKind::fan_out_template) {
            try {
                expand_fan_out(st, node, items);
            } catch (const std::exception& e) {
                st.fault = true;
                st.fault_error = std::string("fan-out expansion failed: ") + e.what();
            }
        }

        for (auto& line : ctx.raw_log()) node.run.log.push_back(std::move(line));

        if (st.fault) {
            node.run.status = TaskStatus::failed;
            node.run.error = st.fault_error;
            node.run.ended_ns = now_ns();
            st.cv.notify_all();
            return;
        }

        if (body_ok) {
            node.run.status = TaskStatus::succeeded;
            node.run.ended_ns = now_ns();
            journal_attempt(st, node, attempt, TaskStatus::succeeded, attempt_start,
                            node.run.ended_ns, node.run.log, "", "");
            on_terminal(st, id);
            return;
        }

        node.run.log.push_back("attempt " + std::to_string(attempt) + " failed: " + error);
        std::int64_t attempt_end = now_ns();
        journal_attempt(st, node, attempt, TaskStatus::failed, attempt_start, attempt_end,
                        node.run.log, error, "");
        if (attempt <= spec.retry_limit) {
            node.run.status = TaskStatus::pending;
            enqueue(st, id, attempt_end + spec.backoff.count() * 1000000);
            return;
        }
        node.run.status = TaskStatus::failed;
        node.run.error = error;
        node.run.ended_ns = attempt_end;
        on_terminal(st, id);
    }

    // Instantiates one sub-graph per item under the engine lock, before the
    // template itself turns terminal, so joins never observe a half-inserted
    // fragment. Instance ids are deterministic: <template>[<index>].<sub-id>.
    void expand_fan_out(State& st, Node& template_node, const std::vector<nlohmann::json>& items) {
        const std::string& tid = template_node.spec.id;
        std::vector<std::string> downstreams = template_node.downstreams;
        for (std::size_t i = 0; i < items.size(); ++i) {
            std::string prefix = tid + "[" + std::to_string(i) + "].";
            std::set<std::string> with_downstream;
            std::set<std::string> with_upstream;
            for (const auto& e : template_node.spec.sub_edges) {
                with_downstream.insert(e.first);
                with_upstream.insert(e.second);
            }
            for (const auto& sub : template_node.spec.sub_tasks) {
                TaskSpec inst = sub;
                inst.id = prefix + sub.id;
                inst.idempotency_key = inst.id;
                inst.item = items[i];
                insert_node(st, std::move(inst));
                ++st.remaining;
            }
            for (const auto& e : template_node.spec.sub_edges)
                insert_edge(st, prefix + e.first, prefix + e.second);
            for (const auto& sub : template_node.spec.sub_tasks) {
                if (!with_upstream.count(sub.id)) insert_edge(st, tid, prefix + sub.id);
                if (!with_downstream.count(sub.id))
                    for (const auto& down : downstreams) insert_edge(st, prefix + sub.id, down);
            }
        }
    }

    EngineOptions options_;
};

}  // namespace teiresias::workflow
