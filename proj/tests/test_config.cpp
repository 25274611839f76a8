#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "jumpdiff/config.hpp"

using namespace jumpdiff;

namespace {
const char* kGood = R"(
version = 1

[schedule]
T = 1.0
beta_min = 0.1
beta_max = 20.0
rate_const = 8.0          # lambda0
rate_zero_until_frac = 0.1
max_components = 2
component_dim = 1

[arch]
mode = "set"
hidden = 32
depth = 2

[trainer]
steps = 100
batch_size = 16
lr = 0.001
seed = 7

[sampler]
dt = 0.001
corrector_steps = 5
seed = 9
)";
}

TEST_CASE("good config parses with defaults filled") {
    const auto rc = parse_run_config(kGood);
    CHECK(rc.version == 1);
    CHECK(rc.schedule.rate_const == 8.0);
    CHECK(rc.arch.hidden == 32);
    CHECK(rc.arch.d == 1);                // mirrored from schedule
    CHECK(rc.arch.max_components == 2);   //
    CHECK(rc.trainer.steps == 100);
    CHECK(rc.trainer.ema_decay == 0.999);  // default
    CHECK(rc.sampler.corrector_steps == 5);
    CHECK(rc.sampler.rate_mode == "prop3");
}

TEST_CASE("unknown keys and sections rejected") {
    CHECK_THROWS_AS(parse_run_config("version = 1\nwhat = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("version = 1\n[nope]\nx = 1\n"), ConfigError);
    std::string bad = kGood;
    bad += "\n[schedule]\nbeta_mid = 3\n";
    CHECK_THROWS_AS(parse_run_config(bad), ConfigError);
}

TEST_CASE("version required and checked") {
    CHECK_THROWS_AS(parse_run_config("[schedule]\nT = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("version = 2\n"), ConfigError);
}

TEST_CASE("schedule invariants enforced at load") {
    std::string bad = kGood;
    // rate too slow for N=2 terminal condition
    size_t pos = bad.find("rate_const = 8.0");
    bad.replace(pos, std::string("rate_const = 8.0").size(), "rate_const = 0.5");
    CHECK_THROWS_AS(parse_run_config(bad), ConfigError);
}

TEST_CASE("direct-head rate mode needs the head") {
    std::string cfg = kGood;
    cfg += "\n[sampler]\nrate_mode = \"direct-head\"\n";
    CHECK_THROWS_AS(parse_run_config(cfg), ConfigError);
    cfg += "\n[arch]\ndirect_rate_head = true\n";
    const auto rc = parse_run_config(cfg);
    CHECK(rc.trainer.rate_mode == "direct-head");
}

TEST_CASE("bad values produce config errors with line context") {
    try {
        parse_run_config("version = 1\n[trainer]\nlr = fast\n");
        FAIL("expected throw");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("dump/parse round trip") {
    const auto rc = parse_run_config(kGood);
    const auto text = dump_run_config(rc);
    const auto rc2 = parse_run_config(text);
    CHECK(rc2.schedule.T == rc.schedule.T);
    CHECK(rc2.trainer.lr == rc.trainer.lr);
    CHECK(rc2.sampler.corrector_steps == rc.sampler.corrector_steps);
    CHECK(dump_run_config(rc2) == text);
}
