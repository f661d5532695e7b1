#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "latentdrive/common.hpp"
#include "latentdrive/config.hpp"

using namespace ld;
using namespace ld::cfg;

namespace {

std::filesystem::path write_file(const std::string& name, const std::string& text) {
    const auto dir = std::filesystem::temp_directory_path() / "ld_config_test";
    std::filesystem::create_directories(dir);
    const auto p = dir / name;
    std::ofstream(p) << text;
    return p;
}

} // namespace

TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("override parsing") {
    const auto o = parse_override("train.epochs=12");
    CHECK(o.section == "train");
    CHECK(o.key == "epochs");
    CHECK(o.value == "12");
    CHECK(parse_override("rule.targets=house,shop").value == "house,shop");
    CHECK(parse_override("a.b=").value.empty());
    for (const char* bad : {"epochs=3", ".x=1", "a.=1", "a.b", "a=b.c"}) CHECK_THROWS_AS(parse_override(bad), ConfigError);
}

TEST_CASE("loading a file with overrides") {
    const auto p = write_file("ok.ini",
                              "; comment\n[run]\nseed = 5\n[train]\nepochs = 7\nlinear = yes\n"
                              "[rule]\nthreshold = -inf\ntargets = house , shop,  car\n");
    const auto c = load_config(p, {parse_override("train.epochs=9")});
    CHECK(c.seed == 5);
    CHECK(c.recipe.train.epochs == 9);  // override wins over the file
    CHECK(c.recipe.train.shape.linear);
    CHECK(std::isinf(c.rule.threshold));
    CHECK(c.rule.threshold < 0);
    CHECK(c.rule.targets == std::vector<std::string>{"house", "shop", "car"});
    CHECK(c.recipe.train.batch_size == 32);  // default kept
    CHECK(c.to_json()["rule"]["threshold"] == "-inf");
}

TEST_CASE("config errors") {
    CHECK_THROWS_AS(load_config(std::nullopt, {}), ConfigError);  // no seed
    CHECK_NOTHROW(load_config(std::nullopt, {parse_override("run.seed=1")}));
    CHECK_THROWS_AS(load_config(std::filesystem::path("/nonexistent/x.ini"), {}), ConfigError);

    const std::vector<std::pair<std::string, std::string>> bad{
        {"unknown_key.ini", "[run]\nseed=1\n[train]\nepoch=3\n"},
        {"unknown_section.ini", "[run]\nseed=1\n[trian]\nepochs=3\n"},
        {"bad_int.ini", "[run]\nseed=1\n[train]\nepochs=3.5\n"},
        {"bad_bool.ini", "[run]\nseed=1\n[train]\nlinear=maybe\n"},
        {"negative_seed.ini", "[run]\nseed=-1\n"},
        {"top_level.ini", "seed=1\n"},
        {"zero_trials.ini", "[run]\nseed=1\n[eval]\ntrials=0\n"},
        {"swap_prob.ini", "[run]\nseed=1\n[rule]\nswap_probability=1.5\n"},
        {"port.ini", "[run]\nseed=1\n[service]\nport=70000\n"},
        {"bad_mask.ini", "[run]\nseed=1\n[extract]\nmask=fuzzy\n"},
    };
    for (const auto& [name, text] : bad) {
        CAPTURE(name);
        CHECK_THROWS_AS(load_config(write_file(name, text), {}), ConfigError);
    }
    try {
        load_config(std::nullopt, {parse_override("run.seed=1"), parse_override("train.epochs=abc")});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("train.epochs") != std::string::npos);
    }
}

TEST_CASE("shipped example config") {
    const auto c = load_config(std::filesystem::path(LATENTDRIVE_DATA_DIR) / "config.ini", {});
    CHECK(c.seed == 2024);
    CHECK(c.rule.sources == std::vector<std::string>{"tree"});
    CHECK(c.rule.targets == std::vector<std::string>{"house", "shop"});
    CHECK(c.classify.k == 4);
}

TEST_CASE("config hash") {
    const auto a = load_config(std::nullopt, {parse_override("run.seed=1")});
    const auto b = load_config(std::nullopt, {parse_override("run.seed=1")});
    const auto c = load_config(std::nullopt, {parse_override("run.seed=2")});
    CHECK(a.hash() == b.hash());
    CHECK(a.hash() != c.hash());
    CHECK(a.hash().size() == 64);
    CHECK(a.hash() == sha256_hex(a.to_json().dump()));

    // the same values spelled differently resolve to the same hash
    const auto d = load_config(write_file("h.ini", "[run]\nseed = 1\n[train]\nepochs=30\nlinear=no\n"), {});
    CHECK(d.hash() == a.hash());
}

TEST_CASE("manifest") {
    const auto dir = std::filesystem::temp_directory_path() / "ld_config_test" / "manifest";
    std::filesystem::remove_all(dir);
    const auto c = load_config(std::nullopt, {parse_override("run.seed=3")});
    write_manifest(dir, "evaluate", c, {"summary.json"});
    std::ifstream in(dir / "manifest.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j["command"] == "evaluate");
    CHECK(j["config_hash"] == c.hash());
    CHECK(j["seed"] == 3);
    CHECK(j["outputs"][0] == "summary.json");
    CHECK(j["version"] == kVersion);
}
