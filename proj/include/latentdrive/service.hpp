#pragma once

// JSON-over-HTTP facade for the debugging console. Requests are routed by
// Service::handle, which is independent of the transport; serve() binds it
// to an HTTP listener.

#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include "latentdrive/config.hpp"
#include "latentdrive/experiments.hpp"

namespace boost::asio {
class thread_pool;
}

namespace ld::service {

/// Immutable artifacts shared by every request.
struct Session {
    cfg::ExperimentConfig config;
    std::shared_ptr<const concepts::ConceptBank> bank;
    std::shared_ptr<const policy::PolicyParams> policy;
};

/// Builds a session from a config: loads the bank and policy from their paths,
/// or falls back to the built-in bank and a freshly trained policy.
Session make_session(const cfg::ExperimentConfig& config);

struct Response {
    int status = 200;
    nlohmann::json body;
};

enum class JobStatus { pending, running, done, failed };
std::string to_string(JobStatus status);

class Service {
public:
    explicit Service(Session session);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    Response handle(const std::string& method, const std::string& path, const std::string& body);

    /// Blocks until the job leaves pending/running. Returns false for unknown ids.
    bool wait(const std::string& id);

    const Session& session() const { return session_; }
    const std::string& config_hash() const { return hash_; }

private:
    struct Job {
        JobStatus status = JobStatus::pending;
        nlohmann::json result;
        std::string error;
    };

    Response state() const;
    Response concepts() const;
    Response rollout(const nlohmann::json& request);
    Response job(const std::string& id) const;
    Response preview(const nlohmann::json& request) const;
    Response coeffmap(const std::string& cls, const std::string& cluster) const;
    Response classify(const nlohmann::json& request);
    Response schema() const;

    std::string submit(std::function<nlohmann::json()> work);
    Response reply(int status, nlohmann::json body) const;

    Session session_;
    std::string hash_;
    mutable std::mutex mutex_;
    std::condition_variable done_;
    std::map<std::string, Job> jobs_;
    long next_id_ = 1;
    std::shared_ptr<const exp::ClassifyResult> classifier_;
    std::unique_ptr<boost::asio::thread_pool> pool_;
};

/// HTTP front end: every /api route forwards to Service::handle, with CORS headers.
class HttpServer {
public:
    HttpServer(Service& service, std::string cors_origin);
    ~HttpServer();

    /// Binds without accepting yet; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Accept loop; returns after stop().
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Binds and serves until the process is stopped.
void serve(Service& service, const std::string& host, int port, const std::string& cors_origin);

} // namespace ld::service
