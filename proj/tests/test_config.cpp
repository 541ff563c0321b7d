#include <doctest.h>

#include <string>

#include "unicalli/config.hpp"
#include "unicalli/error.hpp"

using namespace unicalli;

namespace {

std::string error_of(std::string_view text) {
    try {
        parse_config(text);
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

} // namespace

TEST_SUITE("config") {

TEST_CASE("keys map onto the train config") {
    auto p = parse_config("# comment\nseed = 7\nsteps=250\nbatch_size = 4 # trailing\np_drop = 0.1\n\nlambda = 0.5\n"
                          "d_model = 32\nheads = 2\nrope_base = 100\n");
    CHECK(p.config.seed == 7);
    CHECK(p.config.total_steps == 250);
    CHECK(p.config.batch_size == 4);
    CHECK(p.config.p_drop == 0.1);
    CHECK(p.config.lambda == 0.5);
    CHECK(p.config.model.d_model == 32);
    CHECK(p.config.model.heads == 2);
    CHECK(p.config.model.rope_base == 100.0);
    CHECK(p.notes.empty());
}

TEST_CASE("missing lambda falls back with a note") {
    auto p = parse_config("seed = 1\n");
    CHECK(p.config.lambda == 0.02);
    REQUIRE(p.notes.size() == 1);
    CHECK(p.notes[0].find("0.02") != std::string::npos);
    CHECK(parse_config("\xce\xbb = 0.3\n").config.lambda == 0.3);
}

TEST_CASE("malformed lines name the line number") {
    std::string msg = error_of("seed = 1\n\xce\xbb 0.02\n");
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("key = value") != std::string::npos);
    CHECK(error_of("colour = red\n").find("unknown key") != std::string::npos);
    CHECK(error_of("seed = 1\nseed = 2\n").find("duplicate key") != std::string::npos);
    CHECK(error_of("steps = many\n").find("line 1") != std::string::npos);
    CHECK(error_of("p_drop = 2\n") != "");
}

TEST_CASE("formatted configs parse back") {
    TrainConfig cfg;
    cfg.seed = 99;
    cfg.p_gen = 0.25;
    cfg.lr = 3e-4;
    cfg.model.blocks = 3;
    auto p = parse_config(format_config(cfg));
    CHECK(p.config.seed == 99);
    CHECK(p.config.p_gen == 0.25);
    CHECK(p.config.lr == 3e-4);
    CHECK(p.config.model == cfg.model);
    CHECK(format_config(p.config) == format_config(cfg));
}

}
