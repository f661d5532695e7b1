#include <doctest.h>

#include <thread>

#include <httplib.h>

#include "latentdrive/service.hpp"

using namespace ld;
using namespace ld::service;
using Json = nlohmann::json;

namespace {

// Untrained policy and few trials keep the jobs fast; the routes do not care
// how well the policy drives.
Session small_session() {
    auto config = cfg::load_config(std::nullopt, {cfg::parse_override("run.seed=1"),
                                                  cfg::parse_override("eval.trials=3"),
                                                  cfg::parse_override("sim.horizon=40")});
    Session s;
    s.config = config;
    s.bank = std::make_shared<const concepts::ConceptBank>(exp::embedding_bank(config.bank));
    policy::PolicyShape shape;
    shape.dim = s.bank->dim();
    s.policy = std::make_shared<const policy::PolicyParams>(policy::PolicyParams::random(shape, 3));
    return s;
}

Json finished(Service& svc, const Response& submitted) {
    REQUIRE(submitted.status == 202);
    const auto id = submitted.body.at("job").get<std::string>();
    REQUIRE(svc.wait(id));
    const auto r = svc.handle("GET", "/api/job/" + id, "");
    REQUIRE(r.status == 200);
    return r.body;
}

} // namespace

TEST_CASE("service read-only routes") {
    Service svc(small_session());
    const auto state = svc.handle("GET", "/api/state", "");
    CHECK(state.status == 200);
    CHECK(state.body["seed"] == 1);
    CHECK(state.body["policy"]["grid"] == Json::array({8, 6}));
    CHECK(state.body["classifier_ready"] == false);
    CHECK(state.body["config"]["eval"]["trials"] == 3);
    CHECK(svc.config_hash() == svc.session().config.hash());

    const auto concepts = svc.handle("GET", "/api/concepts", "");
    CHECK(concepts.status == 200);
    CHECK(concepts.body["concepts"].size() == svc.session().bank->size());
    CHECK(concepts.body["concepts"][0]["roles"] == Json::array({"src", "tgt"}));

    const auto schema = svc.handle("GET", "/api/schema", "");
    CHECK(schema.status == 200);
    for (const char* p : {"/api/state", "/api/concepts", "/api/rollout", "/api/job/{id}", "/api/substitute-preview",
                          "/api/coeffmap/{class}/{cluster}", "/api/classify"})
        CHECK(schema.body["paths"].contains(p));

    CHECK(svc.handle("GET", "/api/nope", "").status == 404);
    CHECK(svc.handle("POST", "/api/state", "").status == 404);
}

TEST_CASE("service rollout jobs") {
    Service svc(small_session());
    const auto body = finished(svc, svc.handle("POST", "/api/rollout", R"({"subset":["tree"],"threshold":0.7,"seed":4})"));
    CHECK(body["status"] == "done");
    const auto& result = body["result"];
    CHECK(result["trials"] == 3);
    CHECK(result["per_trial"].size() == 3);
    CHECK(result["subset"] == Json::array({"tree"}));
    CHECK(result["threshold"] == 0.7);
    CHECK(result["steps"].size() >= 1);
    CHECK(result["steps"][0]["matches"].size() == 48);
    double mass = 0;
    for (const auto& [k, v] : result["breakdown"].items()) mass += v.get<double>();
    CHECK(mass + result["soft_success"].get<double>() == doctest::Approx(1.0));

    // same request, same numbers
    const auto again = finished(svc, svc.handle("POST", "/api/rollout", R"({"subset":["tree"],"threshold":0.7,"seed":4})"));
    CHECK(again["result"]["per_trial"] == result["per_trial"]);

    const auto baseline = finished(svc, svc.handle("POST", "/api/rollout", R"({"threshold":"inf","seed":4})"));
    CHECK(baseline["result"]["threshold"] == "inf");
    CHECK(baseline["result"]["replaced_cells"] == 0);

    CHECK(svc.handle("GET", "/api/job/999", "").status == 404);
    CHECK_FALSE(svc.wait("999"));
}

TEST_CASE("service request validation") {
    Service svc(small_session());
    const auto unknown = svc.handle("POST", "/api/rollout", R"({"subset":["tree","unicorn","dragon"]})");
    CHECK(unknown.status == 400);
    CHECK(unknown.body["unknown"] == Json::array({"unicorn", "dragon"}));

    CHECK(svc.handle("POST", "/api/rollout", "{not json").status == 400);
    CHECK(svc.handle("POST", "/api/rollout", "[1,2]").status == 400);
    CHECK(svc.handle("POST", "/api/rollout", R"({"trials":0})").status == 400);
    CHECK(svc.handle("POST", "/api/rollout", R"({"trials":"many"})").status == 400);
    CHECK(svc.handle("POST", "/api/rollout", R"({"threshold":0.5})").status == 400);  // empty subset
    CHECK(svc.handle("POST", "/api/rollout", R"({"family":"moon"})").status == 400);
    CHECK(svc.handle("POST", "/api/classify", R"({"rollouts":5,"train_rollouts":5})").status == 400);
    const auto r = svc.handle("POST", "/api/substitute-preview", R"({"rule":{"replacement":"shuffle"}})");
    CHECK(r.status == 400);
    CHECK(r.body.contains("error"));
}

TEST_CASE("service substitute preview") {
    Service svc(small_session());
    const auto none = svc.handle("POST", "/api/substitute-preview", R"({"scene":2})");
    CHECK(none.status == 200);
    CHECK(none.body["cells"].size() == 48);
    CHECK(none.body["replaced"] == 0);  // default threshold is inf

    const auto all = svc.handle("POST", "/api/substitute-preview",
                                R"({"scene":2,"rule":{"subset":["tree"],"threshold":null,"replacement":{"tree":{"house":1.0}}}})");
    CHECK(all.status == 200);
    CHECK(all.body["threshold"] == "-inf");
    int trees = 0;
    for (const auto& c : all.body["cells"]) {
        if (c["name"] == "tree") {
            ++trees;
            CHECK(c["replaced_by"] == "house");
        } else {
            CHECK(c["replaced_by"].is_null());
        }
    }
    CHECK(all.body["replaced"] == trees);
}

TEST_CASE("service classify and coefficient maps") {
    Service svc(small_session());
    CHECK(svc.handle("GET", "/api/coeffmap/avoidance/0", "").status == 404);
    const auto body = finished(svc, svc.handle("POST", "/api/classify", R"({"rollouts":6,"train_rollouts":3,"k":3})"));
    CHECK(body["status"] == "done");
    CHECK(body["result"]["k"] == 3);
    CHECK(body["result"]["anchors"].size() == 3);
    CHECK(svc.handle("GET", "/api/state", "").body["classifier_ready"] == true);

    const auto map = svc.handle("GET", "/api/coeffmap/lane_stable/1", "");
    CHECK(map.status == 200);
    CHECK(map.body["values"].size() == 8);
    CHECK(map.body["values"][0].size() == 6);
    CHECK(svc.handle("GET", "/api/coeffmap/lane_stable/3", "").status == 404);
    CHECK(svc.handle("GET", "/api/coeffmap/lane_stable/x", "").status == 404);
    CHECK(svc.handle("GET", "/api/coeffmap/flying/0", "").status == 404);
}

TEST_CASE("service over HTTP") {
    Service svc(small_session());
    HttpServer server(svc, "http://localhost:5173");
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread t([&] { server.listen(); });

    httplib::Client client("127.0.0.1", port);
    const auto state = client.Get("/api/state");
    REQUIRE(state);
    CHECK(state->status == 200);
    CHECK(state->get_header_value("Access-Control-Allow-Origin") == "http://localhost:5173");
    CHECK(Json::parse(state->body)["seed"] == 1);

    const auto bad = client.Post("/api/rollout", R"({"subset":["unicorn"]})", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);

    const auto pre = client.Options("/api/rollout");
    REQUIRE(pre);
    CHECK(pre->status == 204);

    server.stop();
    t.join();
}
