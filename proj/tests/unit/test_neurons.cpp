#include <doctest.h>

#include <cmath>
#include <limits>

#include "bruno/errors.hpp"
#include "bruno/neurons.hpp"

using namespace bruno;
using namespace bruno::neurons;

TEST_CASE("FeLIF defaults") {
    const FeLifParams p;
    CHECK(p.area == 25e-12);
    CHECK(p.c0 == 0.558e-12);
    CHECK(p.c_par == 15e-15);
    CHECK(p.p_s == 0.22);
    CHECK(p.e_a == 1.27e9);
    CHECK(p.tau0 == 0.1e-12);
    CHECK(p.alpha_merz == 1.3);
    CHECK_NOTHROW(p.validate());
}

TEST_CASE("FeLIF parameter validation") {
    FeLifParams p;
    p.c0 = 0.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = {};
    p.alpha_merz = 0.5;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = {};
    p.tau0 = -1.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("switching time constant") {
    const FeLifParams p;
    // At the activation field the exponent is 1.
    CHECK(tau_fe(p.e_a, p) == doctest::Approx(2.718281828459045e-13).epsilon(1e-12));
    CHECK(tau_fe(-p.e_a, p) == doctest::Approx(2.718281828459045e-13).epsilon(1e-12));
    // 0.3 V/nm, reference value from a 40-digit evaluation: 68.3074 ps.
    CHECK(tau_fe(0.3e9, p) == doctest::Approx(6.83073965109561526e-11).epsilon(1e-12));
    CHECK(tau_fe(0.0, p) == std::numeric_limits<double>::infinity());
    CHECK(switching_rate(0.0, p) == 0.0);
}

TEST_CASE("switching rate derivative matches finite differences") {
    const FeLifParams p;
    for (double v : {0.9, 1.05, 1.3, 2.0, -1.1}) {
        const double h = 1e-6 * std::fabs(v);
        const double fd = (switching_rate(v + h, p) - switching_rate(v - h, p)) / (2 * h);
        CHECK(switching_rate_grad(v, p) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("FeLIF right-hand side") {
    const FeLifParams p;
    SUBCASE("at rest the membrane charges at I/C") {
        auto d = felif_derivatives({0.0, 0.0, 0.0}, 308e-12, p);
        CHECK(d.dp_dt == 0.0);
        CHECK(d.dv_dt == doctest::Approx(537.5218150087260).epsilon(1e-12));
    }
    SUBCASE("saturated polarization is a fixed point") {
        auto d = felif_derivatives({1.5, p.p_s, 0.0}, 308e-12, p);
        CHECK(d.dp_dt == 0.0);
    }
    SUBCASE("negative field drives P negative") {
        auto d = felif_derivatives({-1.5, 0.0, 0.0}, 0.0, p);
        CHECK(d.dp_dt < 0.0);
    }
}

TEST_CASE("FeLIF step") {
    const FeLifParams p;
    SUBCASE("zero input at rest stays at rest") {
        auto r = felif_step({}, 0.0, 1e-6, p);
        CHECK(r.state.v == 0.0);
        CHECK(r.state.p == 0.0);
        CHECK_FALSE(r.spike);
    }
    SUBCASE("polarization never leaves [-P_s, P_s]") {
        NeuronState s;
        for (int k = 0; k < 60000; ++k) {
            auto r = felif_step(s, 2e-9, 1e-6, p);
            s = r.state;
            CHECK(std::fabs(s.p) <= p.p_s);
        }
    }
    SUBCASE("spike resets both V and P and starts the refractory period") {
        NeuronState s{p.v_thr - 1e-6, p.p_s, 0.0};
        auto r = felif_step(s, 1e-9, 1e-6, p);
        CHECK(r.spike);
        CHECK(r.state.v == 0.0);
        CHECK(r.state.p == 0.0);
        CHECK(r.state.refr_remaining > 0.0);
        auto held = felif_step(r.state, 1e-9, 1e-6, p);
        CHECK(held.state.v == 0.0);
        CHECK_FALSE(held.spike);
    }
    SUBCASE("a diverging state is reported with its step size") {
        FeLifParams bad = p;
        NeuronState s{1.0, 0.0, 0.0};
        try {
            felif_step(s, std::numeric_limits<double>::infinity(), 1e-6, bad);
            FAIL("expected NumericInstability");
        } catch (const NumericInstability& e) {
            CHECK(e.dt() == 1e-6);
        }
    }
}

TEST_CASE("tape and plain integrators agree bitwise") {
    const FeLifParams p;
    ad::Tape tape;
    ad::Value v = tape.variable({0.3, 1.05, 1.2, 3.0});
    ad::Value pol = tape.variable({0.0, 0.05, 0.2, 0.22});
    ad::Value cur = ad::Value::constant({308e-12, 1e-9, 5e-10, 2e-9});
    auto r = felif_euler<ad::Value>(v, pol, cur, 1e-6, p);
    for (std::size_t j = 0; j < 4; ++j) {
        auto d = felif_euler<double>(v[j], pol[j], cur[j], 1e-6, p);
        CHECK(r.v[j] == d.v);
        CHECK(r.p[j] == d.p);
    }
}

TEST_CASE("LIF update") {
    LifParams p;
    p.alpha = 0.9;
    p.beta = 0.8;
    p.v_thr = 1.0;
    SUBCASE("hand-evaluated step") {
        auto r = lif_step({0.5, 0.25}, 0.0, p);
        CHECK(r.state.i == doctest::Approx(0.2).epsilon(1e-15));
        CHECK(r.state.v == doctest::Approx(0.65).epsilon(1e-15));
        CHECK_FALSE(r.spike);
    }
    SUBCASE("zero decay is memoryless") {
        p.alpha = 0.0;
        p.beta = 0.0;
        auto r = lif_step({0.7, 0.4}, 0.3, p);
        CHECK(r.state.v == 0.3);
    }
    SUBCASE("soft reset keeps the residual") {
        auto r = lif_step({1.0, 0.3}, 0.0, p);  // v' = 0.9 + 0.24 = 1.14
        CHECK(r.spike);
        CHECK(r.state.v == doctest::Approx(0.14).epsilon(1e-12));
    }
    SUBCASE("hard reset zeroes") {
        p.reset = ResetKind::Hard;
        auto r = lif_step({1.0, 0.3}, 0.0, p);
        CHECK(r.spike);
        CHECK(r.state.v == 0.0);
    }
    SUBCASE("decay outside [0, 1) is rejected") {
        p.alpha = 1.2;
        CHECK_THROWS_AS(p.validate(), ConfigError);
    }
}

TEST_CASE("tape LIF reset") {
    LifParams p;
    ad::Tape tape;
    ad::Value v = tape.variable({1.14, 0.5});
    ad::Value s = ad::Value::constant({1.0, 0.0});
    auto out = lif_reset(v, s, p);
    CHECK(out[0] == doctest::Approx(0.14).epsilon(1e-12));
    CHECK(out[1] == 0.5);
}
