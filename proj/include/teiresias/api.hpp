#pragma once

#include <condition_variable>
#include <deque>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "teiresias/discovery.hpp"

namespace teiresias::api {

struct ApiOptions {
    std::string token;            // empty: mutating endpoints stay locked (401)
    bool protect_reads = false;
    std::size_t queue_capacity = 0;  // 0: take settings.queue_capacity
    int workers = 2;
};

inline ApiOptions options_from_env() {
    ApiOptions o;
    o.token = config::env_or("TEIRESIAS_TOKEN", "");
    o.protect_reads = config::env_or("TEIRESIAS_PROTECT_READS", "") == "1";
    return o;
}

// "host:port" → pair; port defaults to 8080.
inline std::pair<std::string, int> split_listen(const std::string& listen) {
    auto colon = listen.rfind(':');
    if (colon == std::string::npos) return {listen, 8080};
    int port = 8080;
    try {
        port = std::stoi(listen.substr(colon + 1));
    } catch (const std::exception&) {
    }
    return {listen.substr(0, colon), port};
}

// HTTP front over the discovery workflows and the registry. Submissions are
// asynchronous: accepted requests get an execution id immediately, a worker
// pool drains a bounded queue, and clients poll the report endpoints. TLS is
// left to a fronting reverse proxy.
class ApiServer {
public:
    ApiServer(discovery::AppServices services, ApiOptions options)
        : services_(std::move(services)), options_(std::move(options)) {
        if (options_.queue_capacity == 0)
            options_.queue_capacity =
                config::load_config(services_.paths.config_dir).settings.queue_capacity;
        // No SO_REUSEPORT (httplib's default sets it): a second instance on the
        // same port must fail its bind, not silently share the socket.
        server_.set_socket_options([](socket_t sock) {
            int opt = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&opt),
                       sizeof(opt));
        });
        wire_routes();
        for (int i = 0; i < options_.workers; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    ~ApiServer() { stop(); }

    // Blocks; false when the address cannot be bound.
    bool serve(const std::string& listen) {
        auto [host, port] = split_listen(listen);
        return server_.listen(host, port);
    }

    // Loopback on an ephemeral port; returns the port, -1 on failure.
    int start_async() {
        int port = server_.bind_to_any_port("127.0.0.1");
        if (port < 0) return -1;
        listener_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port;
    }

    void stop() {
        {
            std::lock_guard lock(mutex_);
            if (stopping_) return;
            stopping_ = true;
        }
        cv_.notify_all();
        server_.stop();
        if (listener_.joinable()) listener_.join();
        for (auto& w : workers_)
            if (w.joinable()) w.join();
    }

private:
    struct Job {
        bool api_workflow = false;
        std::string identifier;
        nlohmann::json document;
        codeanalysis::SourceOrigin origin;
        std::string execution_id;
        std::string trigger;
    };

    static void send(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void fail(httplib::Response& res, int status, const std::string& message) {
        send(res, status, {{"error", message}});
    }

    static void busy(httplib::Response& res) {
        res.set_header("Retry-After", "1");
        send(res, 429, {{"error", "queue full"}, {"retry_after_seconds", 1}});
    }

    bool authorized(const httplib::Request& req) const {
        if (options_.token.empty()) return false;
        return req.get_header_value("Authorization") == "Bearer " + options_.token;
    }

    bool require_auth(const httplib::Request& req, httplib::Response& res) const {
        if (authorized(req)) return true;
        fail(res, 401, "missing or invalid bearer token");
        return false;
    }

    bool guard_read(const httplib::Request& req, httplib::Response& res) const {
        if (!options_.protect_reads) return true;
        return require_auth(req, res);
    }

    // Registers the execution before the job is visible to workers, so a 202
    // always points at an existing (possibly still empty) report.
    bool enqueue(Job job) {
        std::lock_guard lock(mutex_);
        if (queue_.size() >= options_.queue_capacity) return false;
        services_.reports->begin_execution(job.execution_id, job.trigger);
        queue_.push_back(std::move(job));
        cv_.notify_one();
        return true;
    }

    void worker_loop() {
        for (;;) {
            Job job;
            {
                std::unique_lock lock(mutex_);
                cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
                if (stopping_) return;
                job = std::move(queue_.front());
                queue_.pop_front();
            }
            try {
                if (job.api_workflow)
                    discovery::run_api_analysis(services_, job.identifier, std::move(job.document),
                                                job.trigger, job.execution_id);
                else
                    discovery::run_main(services_, job.origin, job.trigger, job.execution_id);
            } catch (const std::exception& e) {
                std::fprintf(stderr, "execution %s aborted: %s\n", job.execution_id.c_str(),
                             e.what());
            }
        }
    }

    void wire_routes() {
        server_.Post("/v1/discovery", [this](const httplib::Request& req, httplib::Response& res) {
            if (!require_auth(req, res)) return;
            auto body = nlohmann::json::parse(req.body, nullptr, false);
            if (body.is_discarded() || !body.is_object())
                return fail(res, 400, "body must be a JSON object");
            if (!body.contains("identifier") || !body["identifier"].is_string() ||
                body["identifier"].get<std::string>().empty())
                return fail(res, 400, "identifier must be a non-empty string");
            if (!body.contains("document")) return fail(res, 400, "document is required");
            Job job;
            job.api_workflow = true;
            job.identifier = body["identifier"].get<std::string>();
            job.document = body["document"];
            job.execution_id = discovery::new_execution_id();
            job.trigger = "api";
            std::string id = job.execution_id;
            if (!enqueue(std::move(job))) return busy(res);
            send(res, 202, {{"execution_id", id}});
        });

        server_.Get("/v1/reports", [this](const httplib::Request& req, httplib::Response& res) {
            if (!guard_read(req, res)) return;
            nlohmann::json rows = nlohmann::json::array();
            for (auto& row : services_.reports->execution_index()) {
                try {
                    row["totals"] =
                        services_.reports->get(row.value("execution_id", "")).summary["totals"];
                } catch (const std::exception&) {
                }
                rows.push_back(std::move(row));
            }
            send(res, 200, {{"reports", rows}});
        });

        server_.Get(R"(/v1/reports/([^/]+))",
                    [this](const httplib::Request& req, httplib::Response& res) {
                        if (!guard_read(req, res)) return;
                        try {
                            send(res, 200, services_.reports->get(req.matches[1]).to_json());
                        } catch (const inventory::NotFoundError& e) {
                            fail(res, 404, e.what());
                        }
                    });

        server_.Post("/v1/registry/repositories",
                     [this](const httplib::Request& req, httplib::Response& res) {
                         if (!require_auth(req, res)) return;
                         auto body = nlohmann::json::parse(req.body, nullptr, false);
                         if (body.is_discarded() || !body.is_object())
                             return fail(res, 400, "body must be a JSON object");
                         if (!body.contains("uri") || !body["uri"].is_string())
                             return fail(res, 400, "uri must be a string");
                         std::string uri = body["uri"].get<std::string>();
                         std::string branch = body.value("branch", "main");
                         bool registered = false;
                         try {
                             registered = services_.registry->register_repository(uri, branch);
                         } catch (const std::invalid_argument& e) {
                             return fail(res, 400, e.what());
                         }
                         Job job;
                         job.origin = {codeanalysis::SourceOrigin::Kind::git_remote, uri, branch};
                         job.execution_id = discovery::new_execution_id();
                         job.trigger = "api";
                         std::string id = job.execution_id;
                         if (!enqueue(std::move(job))) return busy(res);
                         send(res, 202, {{"execution_id", id}, {"registered", registered}});
                     });

        server_.Patch(R"(/v1/registry/storages/([^/]+))",
                      [this](const httplib::Request& req, httplib::Response& res) {
                          if (!require_auth(req, res)) return;
                          auto body = nlohmann::json::parse(req.body, nullptr, false);
                          if (body.is_discarded() || !body.is_object())
                              return fail(res, 400, "body must be a JSON object");
                          try {
                              auto entry = services_.registry->complete(req.matches[1], body);
                              send(res, 200, {{"storage", entry.to_json()}});
                          } catch (const inventory::DenyListViolation&) {
                              fail(res, 400,
                                   "raw password values are not accepted; supply password_env or "
                                   "password_file references");
                          } catch (const inventory::NotFoundError& e) {
                              fail(res, 404, e.what());
                          } catch (const inventory::ConflictError& e) {
                              fail(res, 409, e.what());
                          }
                      });

        server_.Post(R"(/v1/registry/storages/([^/]+)/exclude)",
                     [this](const httplib::Request& req, httplib::Response& res) {
                         if (!require_auth(req, res)) return;
                         try {
                             auto entry = services_.registry->exclude(req.matches[1]);
                             send(res, 200, {{"storage", entry.to_json()}});
                         } catch (const inventory::NotFoundError& e) {
                             fail(res, 404, e.what());
                         } catch (const inventory::ConflictError& e) {
                             fail(res, 409, e.what());
                         }
                     });

        server_.Delete(R"(/v1/registry/storages/([^/]+))",
                       [this](const httplib::Request& req, httplib::Response& res) {
                           if (!require_auth(req, res)) return;
                           try {
                               services_.registry->remove(req.matches[1]);
                               send(res, 200, {{"deleted", std::string(req.matches[1])}});
                           } catch (const inventory::NotFoundError& e) {
                               fail(res, 404, e.what());
                           }
                       });

        server_.Post("/v1/executions",
                     [this](const httplib::Request& req, httplib::Response& res) {
                         if (!require_auth(req, res)) return;
                         nlohmann::json started = nlohmann::json::array();
                         for (const auto& repo : services_.registry->repositories()) {
                             Job job;
                             job.origin = {codeanalysis::SourceOrigin::Kind::git_remote, repo.uri,
                                           repo.branch};
                             job.execution_id = discovery::new_execution_id();
                             job.trigger = "schedule";
                             std::string id = job.execution_id;
                             if (!enqueue(std::move(job))) {
                                 res.set_header("Retry-After", "1");
                                 return send(res, 429, {{"error", "queue full"},
                                                        {"retry_after_seconds", 1},
                                                        {"executions", started}});
                             }
                             started.push_back({{"repository", repo.uri},
                                                {"branch", repo.branch},
                                                {"execution_id", id}});
                         }
                         send(res, 202, {{"executions", started}});
                     });
    }

    discovery::AppServices services_;
    ApiOptions options_;
    httplib::Server server_;
    std::thread listener_;
    std::vector<std::thread> workers_;
    std::deque<Job> queue_;
    std::mutex mutex_;
    std::condition_variable cv_;
    bool stopping_ = false;
};

}  // namespace teiresias::api
