#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "bruno/errors.hpp"
#include "bruno/trainer.hpp"

using namespace bruno;
using namespace bruno::train;

namespace {

FeLifLayerState constant_state(std::vector<double> v, std::vector<double> p) {
    return {ad::Value::constant(std::move(v)), ad::Value::constant(std::move(p))};
}

TrainConfig substeps(std::size_t s, double dt_fine = 1e-6) {
    TrainConfig c;
    c.substeps = s;
    c.dt_fine = dt_fine;
    c.dt_coarse = static_cast<double>(s) * dt_fine;
    return c;
}

data::DatasetSpec small_data(int per_class = 10) {
    data::DatasetSpec d;
    d.samples_per_class = per_class;
    d.duration_ms = 50.0;
    d.seed = 3;
    return d;
}

net::Network lif_network(std::size_t hidden, std::uint64_t seed = 0) {
    return net::build_network(net::make_spec(net::Architecture::FfLif, 12, hidden, 4), seed);
}

TrainConfig lif_train(std::size_t epochs) {
    TrainConfig c;
    c.steps = 50;
    c.epochs = epochs;
    c.learning_rate = 1e-2;
    c.batch_size = 8;
    return c;
}

}  // namespace

TEST_CASE("linear regime: BRUNO keeps the fine value and the coarse Jacobian") {
    const neurons::FeLifParams p;
    TrainConfig cfg = substeps(1000);
    cfg.detach_reset = true;
    ad::Tape tape;
    ad::Value v0 = tape.variable(0.1);
    auto step = bruno_step({v0, ad::Value::constant({0.0})}, ad::Value::constant({0.0}), p, cfg);

    // Below 0.2 V the switching rate is < 1e-100 /s, so the membrane is a pure leak.
    double v = 0.1, pol = 0.0;
    for (int k = 0; k < 1000; ++k) {
        auto r = neurons::felif_euler<double>(v, pol, 0.0, 1e-6, p);
        v = r.v;
        pol = r.p;
    }
    CHECK(step.state.v.item() == v);

    const double rc = p.r_leak * p.capacitance();
    const double a_coarse = 1.0 - 1e-3 / rc;
    const double a_fine_pow = std::pow(1.0 - 1e-6 / rc, 1000);
    const double g = tape.backward(step.state.v).scalar(v0);
    CHECK(g == doctest::Approx(a_coarse).epsilon(1e-12));
    CHECK(std::fabs(g - a_fine_pow) > 1e-6);
}

TEST_CASE("BRUNO tape size does not depend on the number of substeps") {
    const neurons::FeLifParams p;
    auto count = [&](std::size_t s, Mode m) {
        TrainConfig cfg = substeps(s, 1e-3 / static_cast<double>(s));
        ad::Tape tape;
        ad::Value w = tape.variable({1.0, 1.0});
        const auto before = tape.node_count();
        auto prev = constant_state({0.5, 1.1}, {0.0, 0.02});
        ad::Value cur = w * 4e-10;
        auto step = m == Mode::Bruno ? bruno_step(prev, cur, p, cfg) : vanilla_step(prev, cur, p, cfg);
        (void)step;
        return tape.node_count() - before;
    };
    const auto euler_nodes = [&] {
        ad::Tape tape;
        ad::Value w = tape.variable({1.0, 1.0});
        // A step taken from a state already on the tape.
        ad::Value v = tape.variable({0.5, 1.1}), pol = tape.variable({0.0, 0.02}), cur = w * 4e-10;
        const auto before = tape.node_count();
        auto r = neurons::felif_euler<ad::Value>(v, pol, cur, 1e-6, p);
        (void)r;
        return tape.node_count() - before;
    }();

    CHECK(count(10, Mode::Bruno) == count(1000, Mode::Bruno));
    CHECK(count(100, Mode::Bruno) == count(1000, Mode::Bruno));
    // With one substep the fine and coarse paths coincide and nothing is combined.
    CHECK(count(1, Mode::Bruno) == count(1, Mode::Vanilla));
    // The vanilla tape grows with S, one Euler step at a time. (The first
    // step starts from a constant state and records fewer nodes.)
    CHECK(count(100, Mode::Vanilla) - count(10, Mode::Vanilla) == 90 * euler_nodes);
    CHECK(count(1000, Mode::Vanilla) - count(10, Mode::Vanilla) == 990 * euler_nodes);
}

TEST_CASE("vanilla and BRUNO share the forward trajectory") {
    const neurons::FeLifParams p;
    const TrainConfig cfg = substeps(1000);
    ad::Tape ta, tb;
    auto prev = constant_state({0.0, 1.0, 3.3}, {0.0, 0.01, 0.22});
    ad::Value cur = ad::Value::constant({3e-10, 6e-10, 1e-9});
    auto a = bruno_step(prev, cur, p, cfg);
    auto b = vanilla_step(prev, cur, p, cfg);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(a.state.v[j] == b.state.v[j]);
        CHECK(a.state.p[j] == b.state.p[j]);
        CHECK(a.spike[j] == b.spike[j]);
    }
    CHECK(a.spike[2] == 1.0);
    CHECK(a.state.v[2] == 0.0);
    CHECK(a.state.p[2] == 0.0);
}

TEST_CASE("a diverging fine trajectory raises numeric instability") {
    const neurons::FeLifParams p;
    const TrainConfig cfg = substeps(10);
    auto prev = constant_state({0.5}, {0.0});
    CHECK_THROWS_AS(bruno_step(prev, ad::Value::constant({1e305}), p, cfg), NumericInstability);
}

TEST_CASE("training configuration validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.dt_coarse = 2e-3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(parse_mode("vanilla") == Mode::Vanilla);
    CHECK_THROWS_AS(parse_mode("fast"), ConfigError);
}

TEST_CASE("binning and truncation") {
    TrainConfig cfg;
    cfg.steps = 5;
    data::SpikeEventStream s;
    s.channels = 2;
    s.duration_us = 7000;
    s.events = {{0, 0}, {999, 0}, {1000, 1}, {4999, 1}, {5000, 0}, {6500, 1}};
    std::size_t truncated = 0;
    auto bins = bin_events(s, 2, cfg, &truncated);
    REQUIRE(bins.size() == 5);
    CHECK(bins[0] == std::vector<double>{2.0, 0.0});
    CHECK(bins[1] == std::vector<double>{0.0, 1.0});
    CHECK(bins[4] == std::vector<double>{0.0, 1.0});
    CHECK(truncated == 2);
}

TEST_CASE("dead network gives the uniform cross-entropy") {
    auto spec = net::make_spec(net::Architecture::FfLif, 12, 8, 27);
    auto net = net::build_network(spec, 0);
    std::fill(net.w_in.begin(), net.w_in.end(), 0.0);
    std::fill(net.w_out.begin(), net.w_out.end(), 0.0);
    data::SpikeEventStream s;
    s.channels = 12;
    s.duration_us = 200000;
    TrainConfig cfg;
    auto out = run_sample(net, s, cfg, 0, true);
    for (double c : out.counts) CHECK(c == 0.0);
    CHECK(out.loss == doctest::Approx(std::log(27.0)).epsilon(1e-12));
}

TEST_CASE("cross-entropy of a dominant correct output is below uniform") {
    ad::Tape tape;
    ad::Value logits = tape.variable(std::vector<double>(27, 0.0));
    std::vector<double> good(27, 0.0);
    good[4] = 5.0;
    CHECK(softmax_cross_entropy(ad::Value::constant(good), 4).item() < std::log(27.0));
    CHECK(softmax_cross_entropy(logits, 0).item() == doctest::Approx(std::log(27.0)).epsilon(1e-12));
    CHECK(argmax({1.0, 3.0, 3.0}) == 1);
}

TEST_CASE("a strong input spike fires the hidden neuron in the same step") {
    auto spec = net::make_spec(net::Architecture::FfLif, 2, 2, 2);
    auto net = net::build_network(spec, 0);
    net.w_in = {2.0, 0.0, 0.0, 2.0};  // input current 2 > threshold 1 in one step
    data::SpikeEventStream s;
    s.channels = 2;
    s.duration_us = 1000;
    s.events = {{10, 0}};
    TrainConfig cfg;
    cfg.steps = 1;
    ad::Tape tape;
    TapeWeights w{tape.variable(net.w_in), {}, tape.variable(net.w_out)};
    auto r = forward_sequence(net, w, s, cfg);
    CHECK(r.hidden_spikes[0] == 1.0);
    CHECK(r.hidden_spikes[1] == 0.0);
}

TEST_CASE("Adam follows a hand-stepped reference") {
    // One weight, loss (w x - y)^2.
    const double x = 0.7, y = 1.3, lr = 0.05;
    const AdamParams hp;
    std::vector<double> w = {0.2};
    Adam opt(lr, hp);
    double ref = 0.2, m = 0.0, v = 0.0;
    for (int t = 1; t <= 5; ++t) {
        ad::Tape tape;
        ad::Value wv = tape.variable(w);
        ad::Value e = wv * x - y;
        const double g = tape.backward(e * e).scalar(wv);
        opt.step({&w}, {{g}});

        const double g_ref = 2.0 * (ref * x - y) * x;
        m = hp.beta1 * m + (1.0 - hp.beta1) * g_ref;
        v = hp.beta2 * v + (1.0 - hp.beta2) * g_ref * g_ref;
        const double m_hat = m / (1.0 - std::pow(hp.beta1, t));
        const double v_hat = v / (1.0 - std::pow(hp.beta2, t));
        ref -= lr * m_hat / (std::sqrt(v_hat) + hp.eps);
        CHECK(w[0] == doctest::Approx(ref).epsilon(1e-12));
    }
}

TEST_CASE("Adam with zero gradients leaves the weights unchanged") {
    std::vector<double> w = {0.3, -0.2};
    Adam opt(0.1, {});
    opt.step({&w}, {{0.0, 0.0}});
    opt.step({&w}, {{0.0, 0.0}});
    CHECK(w == std::vector<double>{0.3, -0.2});
}

TEST_CASE("training is deterministic and a zero learning rate keeps the loss flat") {
    const auto ds = data::generate_dataset(small_data());
    SUBCASE("same seed twice") {
        auto n1 = lif_network(16), n2 = lif_network(16);
        auto r1 = train::train(n1, ds, lif_train(2));
        auto r2 = train::train(n2, ds, lif_train(2));
        CHECK(r1.to_jsonl(false) == r2.to_jsonl(false));
        CHECK(n1.w_in == n2.w_in);
    }
    SUBCASE("zero learning rate") {
        auto net = lif_network(16);
        const auto w0 = net.w_in;
        auto cfg = lif_train(3);
        cfg.learning_rate = 0.0;
        auto r = train::train(net, ds, cfg);
        REQUIRE(r.epochs.size() == 3);
        CHECK(r.epochs[1].loss == doctest::Approx(r.epochs[0].loss).epsilon(1e-12));
        CHECK(r.epochs[2].loss == doctest::Approx(r.epochs[0].loss).epsilon(1e-12));
        CHECK(net.w_in == w0);
    }
}

TEST_CASE("failures end the run with a status") {
    const auto ds = data::generate_dataset(small_data(4));
    SUBCASE("tape budget") {
        auto net = lif_network(8);
        auto cfg = lif_train(1);
        cfg.tape_byte_limit = 4096;
        auto r = train::train(net, ds, cfg);
        CHECK(r.status == RunStatus::OutOfMemory);
        CHECK(r.failed_epoch == std::optional<std::size_t>(0));
    }
    SUBCASE("diverging FeLIF integration") {
        auto spec = net::make_spec(net::Architecture::FfFeLif, 12, 8, 4);
        spec.felif_current_scale = 1e300;
        auto net = net::build_network(spec, 0);
        const auto w0 = net.w_out;
        auto cfg = lif_train(1);
        cfg.substeps = 10;
        cfg.dt_fine = 1e-4;
        auto r = train::train(net, ds, cfg);
        CHECK(r.status == RunStatus::Unstable);
        CHECK(net.w_out == w0);
        CHECK(to_string(r.status) == "unstable");
    }
}

TEST_CASE("checkpoint round trip") {
    const auto ds = data::generate_dataset(small_data(4));
    auto net = lif_network(8);
    Adam opt(1e-2, {});
    auto cfg = lif_train(1);
    train::train(net, ds, cfg, &opt);
    const auto path = std::filesystem::temp_directory_path() / "bruno_checkpoint_test.json";
    save_checkpoint(path.string(), net, opt, cfg);
    auto other = lif_network(8, 99);
    Adam opt2(1.0, {});
    load_checkpoint(path.string(), other, opt2);
    CHECK(other.w_in == net.w_in);
    CHECK(other.w_out == net.w_out);
    CHECK(opt2.steps() == opt.steps());
    CHECK(opt2.first_moment() == opt.first_moment());
    std::filesystem::remove(path);
}
