#include <doctest.h>

#include <cmath>
#include <random>

#include "bruno/errors.hpp"
#include "bruno/tape.hpp"

using namespace bruno;
using namespace bruno::ad;

TEST_CASE("square: forward 9, gradient 6") {
    Tape tape;
    Value w = tape.variable(3.0);
    Value f = w * w;
    CHECK(f.item() == 9.0);
    CHECK(tape.backward(f).scalar(w) == 6.0);
}

TEST_CASE("detach removes one factor of a product") {
    Tape tape;
    Value w = tape.variable(3.0);
    Value f = detach(w) * w;
    CHECK(f.item() == 9.0);
    CHECK(tape.backward(f).scalar(w) == 3.0);
}

TEST_CASE("exp at zero") {
    Tape tape;
    Value w = tape.variable(0.0);
    Value f = exp(w);
    CHECK(f.item() == 1.0);
    CHECK(tape.backward(f).scalar(w) == 1.0);
}

TEST_CASE("detach: identity forward, zero backward, idempotent") {
    Tape tape;
    Value x = tape.variable(1.2);
    CHECK(detach(x).item() == 1.2);
    CHECK(tape.backward(detach(x) * 1.0 + 0.0 * x).scalar(x) == 0.0);
    CHECK(tape.backward(detach(detach(x)) * 1.0 + 0.0 * x).scalar(x) == 0.0);
}

TEST_CASE("combine step: value of b, gradient of a") {
    Tape tape;
    Value a = tape.variable(1.0);
    Value b = tape.variable(1.2);
    Value y = a + detach(b - a);
    CHECK(y.item() == doctest::Approx(1.2).epsilon(1e-15));
    auto g = tape.backward(y);
    CHECK(g.scalar(a) == 1.0);
    CHECK(g.scalar(b) == 0.0);
}

TEST_CASE("substitute pins the exact value and keeps the base gradient") {
    Tape tape;
    Value a = tape.variable(0.1);
    Value base = a * 3.0;
    const double target = 0.7000000000000001;
    Value y = substitute(base, {target});
    CHECK(y.item() == target);
    CHECK(tape.backward(y).scalar(a) == 3.0);

    // Substituting a value the base already holds records nothing.
    const auto before = tape.node_count();
    Value same = substitute(base, {base.item()});
    CHECK(tape.node_count() == before);
    CHECK(same.id() == base.id());
}

TEST_CASE("spike surrogate") {
    Tape tape;
    SUBCASE("at threshold the surrogate peaks at 1") {
        Value v = tape.variable(1.0);
        Value s = spike_sg(v, 1.0, 10.0);
        CHECK(s.item() == 1.0);
        CHECK(tape.backward(s).scalar(v) == 1.0);
    }
    SUBCASE("0.1 above threshold, slope 10") {
        Value v = tape.variable(1.1);
        Value s = spike_sg(v, 1.0, 10.0);
        CHECK(s.item() == 1.0);
        CHECK(tape.backward(s).scalar(v) == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("5 below threshold, slope 10") {
        Value v = tape.variable(-4.0);
        Value s = spike_sg(v, 1.0, 10.0);
        CHECK(s.item() == 0.0);
        CHECK(tape.backward(s).scalar(v) == doctest::Approx(1.0 / (51.0 * 51.0)).epsilon(1e-12));
    }
}

TEST_CASE("linear map gradients") {
    Tape tape;
    Value a = tape.variable(0.7);
    Value b = tape.variable(-1.3);
    auto g = tape.backward(2.0 * a + 3.0 * b);
    CHECK(g.scalar(a) == 2.0);
    CHECK(g.scalar(b) == 3.0);
}

TEST_CASE("1000-step linear recurrence") {
    Tape tape;
    Value v0 = tape.variable(1.0);
    Value v = v0;
    for (int k = 0; k < 1000; ++k) v = v * 0.9;
    const double g = tape.backward(v).scalar(v0);
    // 0.9^1000 from a 40-digit evaluation.
    CHECK(g == doctest::Approx(1.74787125172265160966e-46).epsilon(1e-12));
    CHECK(g > 0.0);
}

TEST_CASE("node counting") {
    Tape tape;
    CHECK(tape.node_count() == 0);
    Value a = tape.variable(1.0);
    Value b = a * 2.0;
    Value c = exp(b);
    (void)c;
    CHECK(tape.node_count() == 3);
    CHECK(tape.bytes() == 3 * Tape::node_record_bytes() + 3 * sizeof(double));
    tape.reset();
    CHECK(tape.node_count() == 0);
}

TEST_CASE("constants are not recorded and receive no gradient") {
    Tape tape;
    Value c = Value::constant({2.0});
    Value w = tape.variable(1.5);
    Value y = c * w;
    CHECK(tape.node_count() == 2);
    auto g = tape.backward(y);
    CHECK(g.wrt(c) == std::vector<double>{0.0});
    CHECK(g.scalar(w) == 2.0);
}

TEST_CASE("matvec is a single node and matches finite differences") {
    Tape tape;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> w0(6), x0(3);
    for (auto& x : w0) x = u(rng);
    for (auto& x : x0) x = u(rng);
    auto f = [&](const std::vector<double>& w, const std::vector<double>& x) {
        double s = 0.0;
        for (int r = 0; r < 2; ++r) {
            double y = 0.0;
            for (int c = 0; c < 3; ++c) y += w[r * 3 + c] * x[c];
            s += std::tanh(y) * (r + 1);
        }
        return s;
    };
    Value w = tape.variable(w0);
    Value x = tape.variable(x0);
    const auto n0 = tape.node_count();
    Value y = matvec(w, x);
    CHECK(tape.node_count() == n0 + 1);
    // tanh(y) = 1 - 2 / (exp(2y) + 1)
    Value t = 1.0 - 2.0 / (exp(2.0 * y) + 1.0);
    Value loss = sum(t * Value::constant({1.0, 2.0}));
    auto g = tape.backward(loss);
    const auto gw = g.wrt(w);
    const auto gx = g.wrt(x);
    const double eps = 1e-5;
    for (std::size_t i = 0; i < w0.size(); ++i) {
        auto wp = w0, wm = w0;
        wp[i] += eps;
        wm[i] -= eps;
        const double fd = (f(wp, x0) - f(wm, x0)) / (2 * eps);
        CHECK(std::fabs(gw[i] - fd) <= 1e-4 * std::max(std::fabs(fd), 1e-8));
    }
    for (std::size_t i = 0; i < x0.size(); ++i) {
        auto xp = x0, xm = x0;
        xp[i] += eps;
        xm[i] -= eps;
        const double fd = (f(w0, xp) - f(w0, xm)) / (2 * eps);
        CHECK(std::fabs(gx[i] - fd) <= 1e-4 * std::max(std::fabs(fd), 1e-8));
    }
}

TEST_CASE("node ids are topologically ordered") {
    Tape tape;
    Value a = tape.variable(1.0);
    Value b = a + 1.0;
    Value c = b * a;
    CHECK(a.id() < b.id());
    CHECK(b.id() < c.id());
}

TEST_CASE("clamp derivative vanishes at and beyond the bounds") {
    Tape tape;
    Value x = tape.variable({-2.0, -1.0, 0.5, 1.0, 3.0});
    auto g = tape.backward(sum(clamp(x, -1.0, 1.0))).wrt(x);
    CHECK(g == std::vector<double>{0.0, 0.0, 1.0, 0.0, 0.0});
}

TEST_CASE("forward non-finite values raise immediately") {
    Tape tape;
    Value x = tape.variable(-1.0);
    CHECK_THROWS_AS(log(x), DomainError);
    Value big = tape.variable(1e200);
    CHECK_THROWS_AS(big * big, NumericInstability);
}

TEST_CASE("an overflowing adjoint raises gradient explosion") {
    Tape tape;
    Value p = tape.variable(1e-300);
    Value q = p;
    for (int k = 0; k < 4; ++k) q = q * 1e100;  // value 1e100, d q / d p = 1e400
    CHECK(std::isfinite(q.item()));
    CHECK_THROWS_AS(tape.backward(q), GradientExplosion);
}
