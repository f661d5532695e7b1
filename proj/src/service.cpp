#include "latentdrive/service.hpp"

#include <cmath>
#include <limits>

#include <boost/asio/post.hpp>
#include <boost/asio/thread_pool.hpp>
#include <httplib.h>

#include "latentdrive/common.hpp"
#include "latentdrive/rng.hpp"

namespace ld::service {

using Json = nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct BadRequest : Error {
    Json detail;
    BadRequest(const std::string& what, Json d = Json::object()) : Error(what), detail(std::move(d)) {}
};

Json parse_body(const std::string& body) {
    if (body.empty()) return Json::object();
    try {
        auto j = Json::parse(body);
        if (!j.is_object()) throw BadRequest("request body must be a JSON object");
        return j;
    } catch (const Json::exception& e) {
        throw BadRequest(std::string("malformed JSON body: ") + e.what());
    }
}

// null means text-only (−∞); "inf"/"-inf" spell out the limits.
double parse_threshold(const Json& j) {
    if (j.is_null()) return -kInf;
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf" || s == "+inf" || s == "Infinity") return kInf;
        if (s == "-inf" || s == "-Infinity") return -kInf;
    }
    throw BadRequest("threshold must be a number, null, \"inf\" or \"-inf\"");
}

Json threshold_json(double t) {
    if (std::isinf(t)) return t > 0 ? "inf" : "-inf";
    return t;
}

template <class T>
T field(const Json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception&) {
        throw BadRequest(std::string("field '") + key + "' has the wrong type");
    }
}

std::set<std::string> parse_names(const Json& j, const concepts::ConceptBank& bank, const char* key) {
    std::set<std::string> names;
    if (!j.contains(key)) return names;
    if (!j.at(key).is_array()) throw BadRequest(std::string("field '") + key + "' must be an array of names");
    Json unknown = Json::array();
    for (const auto& n : j.at(key)) {
        if (!n.is_string()) throw BadRequest(std::string("field '") + key + "' must be an array of names");
        const auto name = n.get<std::string>();
        if (!bank.contains(name)) unknown.push_back(name);
        names.insert(name);
    }
    if (!unknown.empty()) throw BadRequest("unknown concept names", {{"unknown", unknown}});
    return names;
}

sim::ScenarioFamily family_by_name(const exp::Recipe& recipe, const std::string& name) {
    if (name == "train") return recipe.train_family;
    if (name == "heldout") return exp::heldout_obstacle_family(recipe.train_family);
    if (name == "ood") return exp::ood_offroad_family(recipe.train_family);
    throw BadRequest("unknown family '" + name + "' (expected train, heldout or ood)");
}

Json summary_json(const sim::EvalSummary& s) {
    Json breakdown;
    for (auto m : kManeuvers) breakdown[to_string(m)] = s.breakdown[static_cast<int>(m)];
    return {{"soft_success", s.mean},
            {"std", s.stddev},
            {"trials", s.trials},
            {"per_trial", s.soft_success},
            {"breakdown", breakdown},
            {"replaced_cells", s.replaced_cells}};
}

Json match_json(const concepts::MatchResult& m) { return {{"cell", m.cell}, {"name", m.name}, {"score", m.score}}; }

} // namespace

std::string to_string(JobStatus status) {
    switch (status) {
    case JobStatus::pending: return "pending";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
    }
    return "unknown";
}

Session make_session(const cfg::ExperimentConfig& config) {
    Session s;
    s.config = config;
    s.bank = std::make_shared<const concepts::ConceptBank>(
        config.paths.bank.empty() ? exp::embedding_bank(config.bank) : concepts::load_concept_bank(config.paths.bank));
    if (!config.paths.policy.empty()) {
        s.policy = std::make_shared<const policy::PolicyParams>(policy::load_policy(config.paths.policy));
    } else {
        const auto data = exp::collect_teacher_data(config.recipe, config.recipe.train_family, *s.bank, config.seed);
        s.policy = std::make_shared<const policy::PolicyParams>(exp::train_policy(config.recipe, data, *s.bank).params);
    }
    return s;
}

Service::Service(Session session)
    : session_(std::move(session)),
      hash_(session_.config.hash()),
      pool_(std::make_unique<boost::asio::thread_pool>(static_cast<std::size_t>(session_.config.service.workers))) {
    if (!session_.bank || !session_.policy) throw ConfigError("session needs a concept bank and a policy");
}

Service::~Service() { pool_->join(); }

Response Service::reply(int status, Json body) const {
    body["config_hash"] = hash_;
    return {status, std::move(body)};
}

std::string Service::submit(std::function<Json()> work) {
    std::string id;
    {
        std::lock_guard lock(mutex_);
        id = "job-" + std::to_string(next_id_++);
        jobs_[id] = Job{};
    }
    boost::asio::post(*pool_, [this, id, work = std::move(work)] {
        {
            std::lock_guard lock(mutex_);
            jobs_[id].status = JobStatus::running;
        }
        Job finished;
        try {
            finished.result = work();
            finished.status = JobStatus::done;
        } catch (const std::exception& e) {
            finished.status = JobStatus::failed;
            finished.error = e.what();
        }
        {
            std::lock_guard lock(mutex_);
            jobs_[id] = std::move(finished);
        }
        done_.notify_all();
    });
    return id;
}

bool Service::wait(const std::string& id) {
    std::unique_lock lock(mutex_);
    if (!jobs_.count(id)) return false;
    done_.wait(lock, [&] {
        const auto s = jobs_.at(id).status;
        return s == JobStatus::done || s == JobStatus::failed;
    });
    return true;
}

Response Service::handle(const std::string& method, const std::string& path, const std::string& body) {
    try {
        if (method == "GET" && path == "/api/state") return state();
        if (method == "GET" && path == "/api/concepts") return concepts();
        if (method == "GET" && path == "/api/schema") return schema();
        if (method == "POST" && path == "/api/rollout") return rollout(parse_body(body));
        if (method == "POST" && path == "/api/substitute-preview") return preview(parse_body(body));
        if (method == "POST" && path == "/api/classify") return classify(parse_body(body));
        const std::string job_prefix = "/api/job/";
        if (method == "GET" && path.rfind(job_prefix, 0) == 0) return job(path.substr(job_prefix.size()));
        const std::string coeff_prefix = "/api/coeffmap/";
        if (method == "GET" && path.rfind(coeff_prefix, 0) == 0) {
            const auto rest = path.substr(coeff_prefix.size());
            const auto slash = rest.find('/');
            if (slash == std::string::npos || rest.find('/', slash + 1) != std::string::npos)
                return reply(404, {{"error", "expected /api/coeffmap/{class}/{cluster}"}});
            return coeffmap(rest.substr(0, slash), rest.substr(slash + 1));
        }
        return reply(404, {{"error", "no route for " + method + " " + path}});
    } catch (const BadRequest& e) {
        Json b = e.detail;
        b["error"] = e.what();
        return reply(400, b);
    } catch (const Error& e) {
        return reply(400, {{"error", e.what()}});
    }
}

Response Service::state() const {
    const auto& p = session_.policy->shape;
    std::size_t pending = 0;
    {
        std::lock_guard lock(mutex_);
        for (const auto& [id, j] : jobs_) pending += j.status == JobStatus::pending || j.status == JobStatus::running;
    }
    return reply(200, {{"version", cfg::kVersion},
                       {"seed", session_.config.seed},
                       {"policy", {{"grid", {p.rows, p.cols}}, {"feature_dim", p.dim}, {"hidden_dim", p.hidden}}},
                       {"bank_size", session_.bank->size()},
                       {"families", {"train", "heldout", "ood"}},
                       {"workers", session_.config.service.workers},
                       {"active_jobs", pending},
                       {"classifier_ready", static_cast<bool>(classifier_)},
                       {"config", session_.config.to_json()}});
}

Response Service::concepts() const {
    Json list = Json::array();
    for (const auto& c : session_.bank->entries()) {
        Json roles = Json::array();
        if (session_.bank->sources().count(c.name)) roles.push_back("src");
        if (session_.bank->targets().count(c.name)) roles.push_back("tgt");
        list.push_back({{"name", c.name}, {"roles", roles}});
    }
    return reply(200, {{"dim", session_.bank->dim()}, {"concepts", list}});
}

Response Service::rollout(const Json& request) {
    const auto subset = parse_names(request, *session_.bank, "subset");
    const double threshold = request.contains("threshold") ? parse_threshold(request.at("threshold")) : kInf;
    const int trials = field(request, "trials", session_.config.recipe.trials);
    const auto seed = field<std::uint64_t>(request, "seed", session_.config.eval_seed);
    const auto family = family_by_name(session_.config.recipe, field<std::string>(request, "family", "train"));
    if (trials <= 0) throw BadRequest("trials must be positive");
    if (subset.empty() && threshold != kInf) throw BadRequest("an empty subset needs threshold inf");

    auto recipe = session_.config.recipe;
    recipe.trials = trials;
    const auto bank = session_.bank;
    const auto params = session_.policy;
    const auto id = submit([=] {
        const auto rows = exp::debug_concepts(recipe, *params, family, bank, {subset}, threshold, seed);
        Json out = summary_json(rows.front().summary);
        out["subset"] = subset;
        out["threshold"] = threshold_json(threshold);
        out["seed"] = seed;

        // Per-step matches of trial 0, replayed with the same streams.
        auto pipeline = exp::pipeline_for(recipe, bank);
        if (threshold != kInf) {
            pipeline.substitution_bank = std::make_shared<const concepts::ConceptBank>(bank->with_sources(subset));
            pipeline.rule = exp::text_swap_rule(threshold);
        }
        const auto record = sim::run_trial(sim::policy_driver(params), family, 0, seed, recipe.sim, pipeline, true);
        Json steps = Json::array();
        for (const auto& s : record.steps) {
            Json cells = Json::array();
            for (const auto& m : s.matches) cells.push_back({{"name", m.name}, {"score", m.score}});
            steps.push_back({{"label", to_string(s.label)}, {"replaced", s.replaced}, {"matches", cells}});
        }
        out["steps"] = steps;
        return out;
    });
    return reply(202, {{"job", id}});
}

Response Service::job(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return reply(404, {{"error", "unknown job '" + id + "'"}});
    Json body{{"job", id}, {"status", to_string(it->second.status)}};
    if (it->second.status == JobStatus::done) body["result"] = it->second.result;
    if (it->second.status == JobStatus::failed) body["error"] = it->second.error;
    return reply(200, body);
}

Response Service::preview(const Json& request) const {
    const int scene = field(request, "scene", 0);
    if (scene < 0) throw BadRequest("scene must be non-negative");
    const auto seed = field<std::uint64_t>(request, "seed", session_.config.eval_seed);
    const auto family = family_by_name(session_.config.recipe, field<std::string>(request, "family", "train"));
    const Json rule_json = request.value("rule", Json::object());
    if (!rule_json.is_object()) throw BadRequest("rule must be an object");

    auto subset = parse_names(rule_json, *session_.bank, "subset");
    if (subset.empty()) subset = session_.bank->sources();
    concepts::SubstitutionRule rule;
    rule.threshold = rule_json.contains("threshold") ? parse_threshold(rule_json.at("threshold")) : kInf;
    rule.similarity = concepts::parse_similarity(field<std::string>(rule_json, "similarity", "cosine"));
    rule.swap_probability = field(rule_json, "swap_probability", 1.0);
    rule.replacement = concepts::ReplacementMap::identity();
    if (rule_json.contains("replacement")) {
        const auto& r = rule_json.at("replacement");
        if (r == "identity") rule.replacement = concepts::ReplacementMap::identity();
        else if (r == "uniform") rule.replacement = concepts::ReplacementMap::uniform();
        else if (r.is_object()) rule.replacement = concepts::parse_replacement_map(r.dump());
        else throw BadRequest("replacement must be \"identity\", \"uniform\" or a table object");
    }
    const auto bank = session_.bank->with_sources(subset);
    rule.validate(bank);

    const auto& recipe = session_.config.recipe;
    const auto scenario = family.generate(seed, scene);
    const auto state = family.initial_state(seed, scene, recipe.sim.speed);
    const auto grid = sim::render_concept_grid(state, scenario, recipe.sim);
    const auto features = sim::embed_scene(grid, *session_.bank, recipe.feature_noise, derive_seed(seed, {0x707276, static_cast<std::uint64_t>(scene)}));
    const auto result = concepts::substitute(features, bank, rule, derive_seed(seed, {0x737562, static_cast<std::uint64_t>(scene)}));

    Json cells = Json::array();
    std::map<int, std::string> inserted;
    for (const auto& a : result.applied) inserted[a.cell] = a.name;
    for (const auto& m : result.matches) {
        Json c = match_json(m);
        c["rendered"] = grid.names[m.cell];
        c["replaced_by"] = inserted.count(m.cell) ? Json(inserted.at(m.cell)) : Json(nullptr);
        cells.push_back(c);
    }
    return reply(200, {{"scene", scene},
                       {"rows", grid.rows},
                       {"cols", grid.cols},
                       {"threshold", threshold_json(rule.threshold)},
                       {"replaced", result.replaced()},
                       {"cells", cells}});
}

Response Service::classify(const Json& request) {
    auto config = session_.config.classify;
    config.rollouts = field(request, "rollouts", config.rollouts);
    config.train_rollouts = field(request, "train_rollouts", config.train_rollouts);
    config.k = field(request, "k", config.k);
    config.seed = field<std::uint64_t>(request, "seed", config.seed);
    if (config.train_rollouts <= 0 || config.train_rollouts >= config.rollouts || config.k < 2)
        throw BadRequest("need 0 < train_rollouts < rollouts and k >= 2");
    const auto recipe = session_.config.recipe;
    const auto bank = session_.bank;
    const auto params = session_.policy;
    const auto id = submit([=, this] {
        auto result = std::make_shared<const exp::ClassifyResult>(exp::classify_maneuvers(
            recipe, sim::policy_driver(params), recipe.train_family, exp::pipeline_for(recipe, bank), config));
        Json anchors = Json::array();
        for (const auto& a : result->anchors) anchors.push_back(match_json(a));
        Json per_class;
        for (auto m : kManeuvers) per_class[to_string(m)] = result->class_accuracy[static_cast<int>(m)];
        Json out{{"train_accuracy", result->train_accuracy},
                 {"test_accuracy", result->test_accuracy},
                 {"class_accuracy", per_class},
                 {"train_samples", result->train_samples},
                 {"test_samples", result->test_samples},
                 {"k", result->clusters.k},
                 {"anchors", anchors}};
        std::lock_guard lock(mutex_);
        classifier_ = std::move(result);
        return out;
    });
    return reply(202, {{"job", id}});
}

Response Service::coeffmap(const std::string& cls, const std::string& cluster) const {
    std::shared_ptr<const exp::ClassifyResult> fitted;
    {
        std::lock_guard lock(mutex_);
        fitted = classifier_;
    }
    if (!fitted) return reply(404, {{"error", "no classifier fitted yet; POST /api/classify first"}});
    int label = -1;
    for (auto m : kManeuvers)
        if (to_string(m) == cls) label = static_cast<int>(m);
    const auto& classes = fitted->classifier.classes;
    const auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end()) return reply(404, {{"error", "unknown class '" + cls + "'"}});
    int c = -1;
    try {
        std::size_t used = 0;
        c = std::stoi(cluster, &used);
        if (used != cluster.size()) c = -1;
    } catch (const std::exception&) {
    }
    if (c < 0 || c >= fitted->clusters.k) return reply(404, {{"error", "unknown cluster '" + cluster + "'"}});
    const auto& shape = session_.policy->shape;
    const auto map = analysis::coefficient_map(fitted->classifier, shape.rows, shape.cols,
                                               static_cast<int>(it - classes.begin()), c, fitted->clusters.k);
    Json grid = Json::array();
    for (int r = 0; r < shape.rows; ++r)
        grid.push_back(std::vector<double>(map.begin() + r * shape.cols, map.begin() + (r + 1) * shape.cols));
    return reply(200, {{"class", cls},
                       {"cluster", c},
                       {"anchor", fitted->anchors[c].name},
                       {"rows", shape.rows},
                       {"cols", shape.cols},
                       {"values", grid}});
}

Response Service::schema() const {
    const Json threshold{{"oneOf", {{{"type", "number"}}, {{"type", "null"}}, {{"enum", {"inf", "-inf"}}}}}};
    const Json names{{"type", "array"}, {"items", {{"type", "string"}}}};
    const Json family{{"enum", {"train", "heldout", "ood"}}};
    Json paths;
    paths["/api/state"]["get"] = {{"summary", "Session configuration and artifact shapes"}};
    paths["/api/concepts"]["get"] = {{"summary", "Concept bank names and roles"}};
    paths["/api/rollout"]["post"] = {
        {"summary", "Start an evaluation with image features swapped for text features of a subset"},
        {"requestBody",
         {{"type", "object"},
          {"properties",
           {{"subset", names}, {"threshold", threshold}, {"trials", {{"type", "integer"}}},
            {"seed", {{"type", "integer"}}}, {"family", family}}}}},
        {"responses", {{"202", {{"job", "string"}}}, {"400", "unknown concept names or malformed body"}}}};
    paths["/api/job/{id}"]["get"] = {
        {"summary", "Job status; result holds soft_success, breakdown and per-step matches when done"},
        {"responses", {{"200", {{"status", {{"enum", {"pending", "running", "done", "failed"}}}}}}, {"404", "unknown job"}}}};
    paths["/api/substitute-preview"]["post"] = {
        {"summary", "Per-cell best matches and replacements for one rendered scene"},
        {"requestBody",
         {{"type", "object"},
          {"properties",
           {{"scene", {{"type", "integer"}}},
            {"seed", {{"type", "integer"}}},
            {"family", family},
            {"rule",
             {{"type", "object"},
              {"properties",
               {{"subset", names}, {"threshold", threshold}, {"similarity", {{"enum", {"cosine", "dot"}}}},
                {"swap_probability", {{"type", "number"}}}, {"replacement", {{"type", {"string", "object"}}}}}}}}}}}}};
    paths["/api/coeffmap/{class}/{cluster}"]["get"] = {
        {"summary", "Classifier coefficients of one class and cluster on the patch grid"},
        {"responses", {{"200", {{"values", "rows x cols array of numbers"}}}, {"404", "unknown class, cluster or no classifier"}}}};
    paths["/api/classify"]["post"] = {
        {"summary", "Fit k-means and the maneuver classifier on policy rollouts"},
        {"requestBody",
         {{"type", "object"},
          {"properties",
           {{"rollouts", {{"type", "integer"}}}, {"train_rollouts", {{"type", "integer"}}}, {"k", {{"type", "integer"}}},
            {"seed", {{"type", "integer"}}}}}}},
        {"responses", {{"202", {{"job", "string"}}}}}};
    return reply(200, {{"openapi", "3.0.0"}, {"info", {{"title", "latentdrive debug service"}, {"version", cfg::kVersion}}},
                       {"paths", paths}});
}

struct HttpServer::Impl {
    httplib::Server server;
};

HttpServer::HttpServer(Service& service, std::string cors_origin) : impl_(std::make_unique<Impl>()) {
    auto forward = [&service, cors_origin](const httplib::Request& req, httplib::Response& res) {
        const auto r = service.handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_header("Access-Control-Allow-Origin", cors_origin);
        res.set_content(r.body.dump(), "application/json");
    };
    impl_->server.Get(R"(/api/.*)", forward);
    impl_->server.Post(R"(/api/.*)", forward);
    impl_->server.Options(R"(/api/.*)", [cors_origin](const httplib::Request&, httplib::Response& res) {
        res.status = 204;
        res.set_header("Access-Control-Allow-Origin", cors_origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
    const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

void serve(Service& service, const std::string& host, int port, const std::string& cors_origin) {
    HttpServer server(service, cors_origin);
    server.bind(host, port);
    server.listen();
}

} // namespace ld::service
