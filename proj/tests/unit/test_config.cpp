#include <doctest.h>

#include <sstream>

#include "bruno/config.hpp"
#include "bruno/errors.hpp"

using namespace bruno;

TEST_CASE("configuration files") {
    SUBCASE("keys, comments and blank lines") {
        std::istringstream in("# run\n\nhidden.alpha = 0.5   # decay\ntrain.epochs=7\nnet.architecture = RLIF\n");
        config::RunConfig c;
        config::apply(c, config::parse(in));
        CHECK(c.net.hidden_lif.alpha == 0.5);
        CHECK(c.train.epochs == 7);
        CHECK(c.architecture == net::Architecture::Rlif);
        CHECK(c.net.hidden_kind == net::HiddenKind::Rlif);
    }
    SUBCASE("missing '=' names the line") {
        std::istringstream in("train.epochs = 3\ntrain.seed 4\n");
        try {
            config::parse(in);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 2);
        }
    }
    SUBCASE("unknown keys and bad values name the line") {
        std::istringstream in("train.epochs = 3\n\nfelif.c1 = 2\n");
        config::RunConfig c;
        try {
            config::apply(c, config::parse(in));
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 3);
        }
        std::istringstream bad("train.epochs = three\n");
        CHECK_THROWS_AS(config::apply(c, config::parse(bad)), ParseError);
        CHECK_THROWS_AS(config::apply(c, "quant.bits", "x"), ConfigError);
    }
}

TEST_CASE("format and parse round trip") {
    config::RunConfig c;
    config::set_architecture(c, net::Architecture::FfFeLif);
    c.net.output_felif.c0 = 0.6e-12;
    c.net.quant.n_bits = 4;
    c.train.learning_rate = 1.0 / 3.0;
    c.data.jitter_ms = 0.25;
    std::istringstream in(config::format(c));
    config::RunConfig back;
    config::apply(back, config::parse(in));
    CHECK(config::format(back) == config::format(c));
    CHECK(back.train.learning_rate == c.train.learning_rate);
    CHECK(back.net.quant.n_bits == 4);
}

TEST_CASE("FeLIF parameter files") {
    neurons::FeLifParams p;
    p.tau0 = 0.2e-12;
    std::istringstream in(config::format(p));
    auto back = config::parse_felif(in);
    CHECK(back.tau0 == p.tau0);
    CHECK(back.c0 == p.c0);
    std::istringstream bad("c0 = -1\n");
    CHECK_THROWS_AS(config::parse_felif(bad), ConfigError);
}
