#include "bruno/experiments.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "bruno/errors.hpp"
#include "bruno/parallel.hpp"

namespace bruno::experiments {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

}  // namespace

double median(std::vector<double> v) {
    if (v.empty()) throw UsageError("median of an empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Hyperparameters

std::optional<Hyperparameters> published_hyperparameters(net::Architecture arch, const quant::QuantSpec& q) {
    // {alpha_hid, beta_hid, alpha_out, beta_out, learning_rate, felif_v_thr}
    static const std::map<std::pair<net::Architecture, std::string>, Hyperparameters> table = {
        {{net::Architecture::FfLif, "3"}, {0.662, 0.703, 0.565, 0.696, 3.429e-2, 3.388}},
        {{net::Architecture::Rlif, "3"}, {0.603, 0.310, 0.354, 0.295, 1.478e-3, 3.388}},
        {{net::Architecture::FfFeLif, "3"}, {0.468, 0.735, 0.9, 0.8, 7.840e-4, 3.039}},
        {{net::Architecture::FfLif, "4"}, {0.226, 0.245, 0.865, 0.834, 3.276e-3, 3.388}},
        {{net::Architecture::Rlif, "4"}, {0.599, 0.710, 0.390, 0.349, 6.055e-3, 3.388}},
        {{net::Architecture::FfFeLif, "4"}, {0.456, 0.322, 0.9, 0.8, 3.716e-3, 2.544}},
        {{net::Architecture::FfLif, "8"}, {0.230, 0.302, 0.901, 0.591, 1.283e-2, 3.388}},
        {{net::Architecture::Rlif, "8"}, {0.186, 0.537, 0.347, 0.846, 6.766e-3, 3.388}},
        {{net::Architecture::FfFeLif, "8"}, {0.682, 0.662, 0.9, 0.8, 4.387e-3, 2.928}},
        {{net::Architecture::FfLif, "FP"}, {0.959, 0.202, 0.716, 0.600, 3.006e-3, 3.388}},
        {{net::Architecture::Rlif, "FP"}, {0.343, 0.406, 0.764, 0.874, 6.174e-3, 3.388}},
        {{net::Architecture::FfFeLif, "FP"}, {0.299, 0.147, 0.9, 0.8, 2.628e-3, 3.388}},
    };
    auto it = table.find({arch, quant::label(q)});
    if (it == table.end()) return std::nullopt;
    return it->second;
}

void apply_hyperparameters(config::RunConfig& cfg, const Hyperparameters& h) {
    cfg.net.hidden_lif.alpha = h.alpha_hid;
    cfg.net.hidden_lif.beta = h.beta_hid;
    if (cfg.net.output_kind == net::OutputKind::Lif) {
        cfg.net.output_lif.alpha = h.alpha_out;
        cfg.net.output_lif.beta = h.beta_out;
    } else {
        cfg.net.output_felif.v_thr = h.felif_v_thr;
    }
    cfg.train.learning_rate = h.learning_rate;
}

Hyperparameters current_hyperparameters(const config::RunConfig& cfg) {
    return {cfg.net.hidden_lif.alpha, cfg.net.hidden_lif.beta, cfg.net.output_lif.alpha, cfg.net.output_lif.beta,
            cfg.train.learning_rate,  cfg.net.output_felif.v_thr};
}

void apply_felif_training_options(train::TrainConfig& t) {
    t.detach_reset = true;
    t.felif_rate_gradient = false;
}

// ---------------------------------------------------------------------------
// FeLIF fidelity

namespace {

struct Trace {
    std::vector<double> v;  // sampled state after each sample interval
    std::vector<double> p;
    std::vector<double> spikes;
};

/// Integrate with step `dt`, sampling every `every` steps.
Trace simulate(const neurons::FeLifParams& prm, double current, double dt, double duration, std::size_t every) {
    const auto steps = static_cast<std::size_t>(std::llround(duration / dt));
    Trace tr;
    tr.v.reserve(steps / every);
    tr.p.reserve(steps / every);
    neurons::NeuronState s;
    for (std::size_t k = 0; k < steps; ++k) {
        auto r = neurons::felif_step(s, current, dt, prm);
        s = r.state;
        if (r.spike) tr.spikes.push_back(static_cast<double>(k + 1) * dt);
        if ((k + 1) % every == 0) {
            tr.v.push_back(s.v);
            tr.p.push_back(s.p);
        }
    }
    return tr;
}

}  // namespace

std::string FidelityReport::summary() const {
    std::ostringstream out;
    out << "max|dV|=" << fmt("%.3e", max_abs_dv) << " V (limit " << fmt("%.3e", dv_limit) << "), spikes "
        << spikes_model.size() << "/" << spikes_reference.size();
    if (!spikes_model.empty() && !spikes_reference.empty()) {
        out << ", first spike " << fmt("%.6f", spikes_model.front() * 1e3) << " ms vs "
            << fmt("%.6f", spikes_reference.front() * 1e3) << " ms";
    }
    out << ", shape " << (shape_ok ? "ok" : "FAILED: " + shape_failure);
    return out.str();
}

FidelityReport felif_fidelity(const neurons::FeLifParams& model, const neurons::FeLifParams& reference,
                              const FidelityOptions& o) {
    model.validate();
    reference.validate();
    FidelityReport rep;
    const auto ratio = static_cast<std::size_t>(std::llround(o.dt / o.dt_reference));
    if (ratio < 1 || std::fabs(static_cast<double>(ratio) * o.dt_reference - o.dt) > 1e-9 * o.dt) {
        throw ConfigError("fidelity: model step must be an integer multiple of the reference step");
    }
    const Trace m = simulate(model, o.current, o.dt, o.duration, 1);
    const Trace r = simulate(reference, o.current, o.dt_reference, o.duration, ratio);
    rep.spikes_model = m.spikes;
    rep.spikes_reference = r.spikes;
    rep.dv_limit = o.dv_fraction * reference.v_thr;

    // Pointwise comparison on the common grid, skipping the interval between
    // corresponding spikes (one trajectory has reset while the other has not).
    const std::size_t pairs = std::min(m.spikes.size(), r.spikes.size());
    auto excluded = [&](double t) {
        for (std::size_t i = 0; i < pairs; ++i) {
            const double lo = std::min(m.spikes[i], r.spikes[i]) - o.dt;
            const double hi = std::max(m.spikes[i], r.spikes[i]) + o.dt;
            if (t >= lo && t <= hi) return true;
        }
        return false;
    };
    const std::size_t n = std::min(m.v.size(), r.v.size());
    for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k + 1) * o.dt;
        if (excluded(t)) continue;
        rep.max_abs_dv = std::max(rep.max_abs_dv, std::fabs(m.v[k] - r.v[k]));
    }

    // Shape of the model trajectory up to its first spike.
    rep.expected_slope = o.current / model.capacitance();
    const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(o.slope_window / o.dt)));
    auto fail = [&](const std::string& why) {
        if (rep.shape_failure.empty()) rep.shape_failure = why;
    };
    if (m.spikes.empty()) {
        fail("no spike");
    } else {
        const auto ks = static_cast<std::size_t>(std::llround(m.spikes.front() / o.dt)) - 1;  // sample holding the reset
        if (ks < 2 * w + 2) {
            fail("spike too early to resolve the trajectory");
        } else {
            const double expected = rep.expected_slope;
            rep.initial_slope = m.v[w - 1] / (static_cast<double>(w) * o.dt);
            if (std::fabs(rep.initial_slope - expected) > 0.05 * expected) fail("initial slope differs from I/C");

            const double ps = model.p_s;
            std::size_t k10 = ks, k90 = ks;
            for (std::size_t k = 0; k < ks; ++k) {
                if (k10 == ks && m.p[k] >= 0.1 * ps) k10 = k;
                if (k90 == ks && m.p[k] >= 0.9 * ps) {
                    k90 = k;
                    break;
                }
            }
            if (k10 == ks || k90 == ks || k90 < k10 + w) {
                fail("no polarization-gated stall before the spike");
            } else {
                for (std::size_t k = k10; k + w <= k90; ++k) {
                    const double slope = (m.v[k + w] - m.v[k]) / (static_cast<double>(w) * o.dt);
                    rep.stall_max_slope = std::max(rep.stall_max_slope, std::fabs(slope));
                }
                if (rep.stall_max_slope >= 0.1 * expected) fail("membrane does not stall while P switches");
            }
            rep.pre_spike_slope = (m.v[ks - 1] - m.v[ks - 1 - w]) / (static_cast<double>(w) * o.dt);
            if (rep.pre_spike_slope <= 0.5 * expected) fail("membrane does not rise again before the spike");
            rep.p_before_spike = m.p[ks - 1] / ps;
            if (rep.p_before_spike < 0.99) fail("polarization below 0.99 P_s at the spike");
        }
    }
    rep.shape_ok = rep.shape_failure.empty();

    const bool same_count = m.spikes.size() == r.spikes.size();
    const bool first_ok = !m.spikes.empty() && !r.spikes.empty() &&
                          std::fabs(m.spikes.front() - r.spikes.front()) <= o.spike_tolerance;
    rep.passed = rep.max_abs_dv <= rep.dv_limit && same_count && first_ok && rep.shape_ok;
    return rep;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

namespace {

struct FdProblem {
    std::size_t inputs = 5, neurons = 2, steps = 20;
    std::vector<std::vector<double>> x;  // steps x inputs
    std::vector<double> w0;              // neurons x inputs
    std::vector<double> r_v, r_p;        // loss weights
    double scale = 1e-9;                 // A per unit of w . x
    neurons::FeLifParams prm;
    train::TrainConfig cfg;
};

FdProblem make_fd_problem(std::uint64_t seed) {
    FdProblem pb;
    pb.cfg.dt_fine = 1e-6;
    pb.cfg.substeps = 100;
    pb.cfg.dt_coarse = 1e-4;
    pb.cfg.detach_reset = true;
    pb.cfg.felif_rate_gradient = true;
    pb.cfg.mode = train::Mode::Vanilla;
    auto rng = quant::make_rng(seed, 0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    pb.x.assign(pb.steps, std::vector<double>(pb.inputs));
    for (auto& row : pb.x)
        for (auto& v : row) v = u01(rng);
    for (std::size_t i = 0; i < pb.inputs * pb.neurons; ++i) pb.w0.push_back(0.1 + 0.4 * u01(rng));
    for (std::size_t j = 0; j < pb.neurons; ++j) {
        pb.r_v.push_back(0.5 + u01(rng));
        pb.r_p.push_back(5.0 + 10.0 * u01(rng));
    }
    return pb;
}

/// Untaped forward of the FD problem; also reports the peak membrane potential.
double fd_loss(const FdProblem& pb, const std::vector<double>& w, double* max_v) {
    std::vector<double> v(pb.neurons, 0.0), p(pb.neurons, 0.0);
    double loss = 0.0;
    for (std::size_t t = 0; t < pb.steps; ++t) {
        for (std::size_t j = 0; j < pb.neurons; ++j) {
            double drive = 0.0;
            for (std::size_t i = 0; i < pb.inputs; ++i) drive += w[j * pb.inputs + i] * pb.x[t][i];
            const double cur = drive * pb.scale;
            for (std::size_t k = 0; k < pb.cfg.substeps; ++k) {
                auto r = neurons::felif_euler<double>(v[j], p[j], cur, pb.cfg.dt_fine, pb.prm);
                v[j] = r.v;
                p[j] = r.p;
            }
            if (max_v) *max_v = std::max(*max_v, v[j]);
            loss += pb.r_v[j] * v[j] + pb.r_p[j] * p[j];
        }
    }
    return loss;
}

}  // namespace

GradientCheckReport gradient_check(std::uint64_t seed, double eps) {
    const FdProblem pb = make_fd_problem(seed);
    GradientCheckReport rep;
    rep.parameters = pb.w0.size();

    ad::Tape tape;
    ad::Value w = tape.variable(pb.w0);
    train::FeLifLayerState st{ad::Value::constant(std::vector<double>(pb.neurons, 0.0)),
                              ad::Value::constant(std::vector<double>(pb.neurons, 0.0))};
    ad::Value loss = 0.0;
    bool spiked = false;
    for (std::size_t t = 0; t < pb.steps; ++t) {
        ad::Value cur = ad::matvec(w, ad::Value::constant(pb.x[t])) * pb.scale;
        auto step = train::vanilla_step(st, cur, pb.prm, pb.cfg);
        for (double s : step.spike.data()) spiked = spiked || s != 0.0;
        st = step.state;
        loss = loss + ad::sum(st.v * ad::Value::constant(pb.r_v)) + ad::sum(st.p * ad::Value::constant(pb.r_p));
    }
    const std::vector<double> g = tape.backward(loss).wrt(w);

    fd_loss(pb, pb.w0, &rep.max_v);
    rep.spike_free = !spiked && rep.max_v < pb.prm.v_thr;
    for (std::size_t i = 0; i < pb.w0.size(); ++i) {
        auto wp = pb.w0, wm = pb.w0;
        wp[i] += eps;
        wm[i] -= eps;
        const double fd = (fd_loss(pb, wp, nullptr) - fd_loss(pb, wm, nullptr)) / (2.0 * eps);
        const double denom = std::max({std::fabs(fd), std::fabs(g[i]), 1e-12});
        rep.max_rel_error = std::max(rep.max_rel_error, std::fabs(g[i] - fd) / denom);
    }
    rep.passed = rep.spike_free && rep.max_rel_error <= rep.tolerance;
    return rep;
}

// ---------------------------------------------------------------------------
// Stochastic rounding

std::vector<SroundRow> sround_check(const std::vector<double>& xs, std::size_t draws, std::uint64_t seed) {
    std::vector<SroundRow> rows;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        auto rng = quant::make_rng(seed, i);
        SroundRow row;
        row.x = xs[i];
        double total = 0.0;
        for (std::size_t k = 0; k < draws; ++k) total += static_cast<double>(quant::sround(xs[i], rng));
        row.mean = total / static_cast<double>(draws);
        const double frac = xs[i] - std::floor(xs[i]);
        row.sigma_mc = std::sqrt(frac * (1.0 - frac) / static_cast<double>(draws));
        // Integers round deterministically: sigma_mc = 0 and the mean must be exact.
        row.passed = row.sigma_mc == 0.0 ? row.mean == xs[i] : std::fabs(row.mean - xs[i]) < 4.0 * row.sigma_mc;
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// S = 1 equivalence

namespace {

struct BitCompare {
    EquivalenceReport rep;
    void operator()(const std::string& what, std::span<const double> a, std::span<const double> b) {
        if (a.size() != b.size()) {
            ++rep.mismatches;
            if (rep.first_mismatch.empty()) rep.first_mismatch = what + ": size differs";
            return;
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            ++rep.compared;
            if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) {
                ++rep.mismatches;
                if (rep.first_mismatch.empty()) {
                    rep.first_mismatch = what + "[" + std::to_string(i) + "]: " + fmt("%.17g", a[i]) + " vs " +
                                         fmt("%.17g", b[i]);
                }
            }
        }
    }
};

}  // namespace

EquivalenceReport s1_equivalence(std::uint64_t seed, std::size_t neurons, std::size_t steps) {
    BitCompare cmp;
    train::TrainConfig cfg;
    cfg.dt_fine = 1e-3;
    cfg.dt_coarse = 1e-3;
    cfg.substeps = 1;
    cfg.steps = steps;
    cfg.seed = seed;

    // Layer level: per-step states and spikes, and their gradient.
    {
        const neurons::FeLifParams prm;
        auto rng = quant::make_rng(seed, 100);
        std::uniform_real_distribution<double> u(-0.2, 1.0);
        std::vector<double> w0(neurons * 4);
        for (auto& x : w0) x = u(rng);
        std::vector<std::vector<double>> xs(steps, std::vector<double>(4));
        for (auto& row : xs)
            for (auto& x : row) x = u(rng) + 0.2;

        std::vector<std::vector<double>> grads;
        std::vector<std::vector<std::vector<double>>> states(2);
        for (int m = 0; m < 2; ++m) {
            train::TrainConfig c = cfg;
            c.mode = m == 0 ? train::Mode::Bruno : train::Mode::Vanilla;
            ad::Tape tape;
            ad::Value w = tape.variable(w0);
            train::FeLifLayerState st{ad::Value::constant(std::vector<double>(neurons, 0.0)),
                                      ad::Value::constant(std::vector<double>(neurons, 0.0))};
            ad::Value loss = 0.0;
            for (std::size_t t = 0; t < steps; ++t) {
                ad::Value cur = ad::matvec(w, ad::Value::constant(xs[t])) * 1e-9;
                auto step = m == 0 ? train::bruno_step(st, cur, prm, c) : train::vanilla_step(st, cur, prm, c);
                st = step.state;
                for (const auto* val : {&st.v, &st.p, &step.spike}) {
                    states[m].emplace_back(val->data().begin(), val->data().end());
                }
                loss = loss + ad::sum(st.v) + ad::sum(step.spike);
            }
            grads.push_back(tape.backward(loss).wrt(w));
        }
        for (std::size_t i = 0; i < states[0].size(); ++i) cmp("layer state " + std::to_string(i), states[0][i], states[1][i]);
        cmp("layer gradient", grads[0], grads[1]);
    }

    // Network level: loss, counts, gradients and one Adam update.
    {
        auto spec = net::make_spec(net::Architecture::FfFeLif, 12, neurons, neurons);
        const net::Network net0 = net::build_network(spec, seed);
        data::DatasetSpec ds;
        ds.classes = 1;
        ds.samples_per_class = 1;
        ds.duration_ms = static_cast<double>(steps);
        ds.active_rate_hz = 400.0;
        ds.seed = seed;
        const auto sample = data::generate_dataset(ds).samples.front();

        std::vector<train::SampleOutcome> outs;
        std::vector<net::Network> updated;
        for (int m = 0; m < 2; ++m) {
            train::TrainConfig c = cfg;
            c.mode = m == 0 ? train::Mode::Bruno : train::Mode::Vanilla;
            outs.push_back(train::run_sample(net0, sample, c, 0, true));
            net::Network n = net0;
            train::Adam opt(1e-2, c.adam);
            opt.step({&n.w_in, &n.w_rec, &n.w_out}, outs.back().grads);
            updated.push_back(std::move(n));
        }
        cmp("loss", std::span<const double>(&outs[0].loss, 1), std::span<const double>(&outs[1].loss, 1));
        cmp("counts", outs[0].counts, outs[1].counts);
        for (std::size_t l = 0; l < outs[0].grads.size(); ++l) {
            cmp("gradient " + std::to_string(l), outs[0].grads[l], outs[1].grads[l]);
        }
        cmp("w_in", updated[0].w_in, updated[1].w_in);
        cmp("w_out", updated[0].w_out, updated[1].w_out);
    }
    return cmp.rep;
}

// ---------------------------------------------------------------------------
// Suite

std::vector<Check> verify_suite() {
    std::vector<Check> checks;
    auto timed = [&](const std::string& name, auto&& body) {
        const auto t0 = Clock::now();
        Check c;
        c.name = name;
        try {
            body(c);
        } catch (const std::exception& e) {
            c.passed = false;
            c.detail = std::string("error: ") + e.what();
        }
        c.runtime_s = seconds_since(t0);
        checks.push_back(std::move(c));
    };
    timed("felif_fidelity", [](Check& c) {
        const neurons::FeLifParams p;
        const auto rep = felif_fidelity(p, p);
        c.passed = rep.passed;
        c.detail = rep.summary();
    });
    timed("gradient_finite_difference", [](Check& c) {
        const auto rep = gradient_check();
        c.passed = rep.passed;
        c.detail = std::to_string(rep.parameters) + " parameters, max rel error " + fmt("%.3e", rep.max_rel_error) +
                   " (limit " + fmt("%.0e", rep.tolerance) + "), " + (rep.spike_free ? "spike-free" : "SPIKED");
    });
    timed("sround_unbiased", [](Check& c) {
        const auto rows = sround_check({2.3, -0.5, 0.0});
        c.passed = std::all_of(rows.begin(), rows.end(), [](const SroundRow& r) { return r.passed; });
        for (const auto& r : rows) {
            c.detail += (c.detail.empty() ? "" : ", ") + fmt("x=%g", r.x) + fmt(" mean=%.5f", r.mean) +
                        fmt(" (4 sigma=%.5f)", 4.0 * r.sigma_mc);
        }
    });
    timed("s1_equivalence", [](Check& c) {
        const auto rep = s1_equivalence();
        c.passed = rep.passed();
        c.detail = std::to_string(rep.compared) + " values compared, " + std::to_string(rep.mismatches) +
                   " mismatches" + (rep.first_mismatch.empty() ? "" : " (first: " + rep.first_mismatch + ")");
    });
    return checks;
}

std::string to_json(const std::vector<Check>& checks) {
    nlohmann::json j;
    j["passed"] = std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
    j["checks"] = nlohmann::json::array();
    for (const auto& c : checks) {
        j["checks"].push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}, {"runtime_s", c.runtime_s}});
    }
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Benchmarks

std::vector<BenchRow> run_bench(const BenchSpec& spec) {
    if (spec.repeats < 1) throw UsageError("bench needs at least one timed repeat");
    std::vector<BenchRow> rows;
    for (std::size_t size : spec.sizes) {
        for (std::size_t steps : spec.steps) {
            config::RunConfig c = spec.base;
            config::set_architecture(c, net::Architecture::FfFeLif);
            c.net.hidden = size;
            c.net.outputs = size;
            c.train.steps = steps;
            c.train.validate();
            const net::Network net = net::build_network(c.net, c.train.seed);

            data::DatasetSpec ds = c.data;
            ds.classes = 1;
            ds.samples_per_class = 1;
            ds.channels = static_cast<std::uint32_t>(c.net.inputs);
            ds.duration_ms = static_cast<double>(steps) * c.train.dt_coarse * 1e3;
            const auto sample = data::generate_dataset(ds).samples.front();

            for (train::Mode mode : spec.modes) {
                train::TrainConfig t = c.train;
                t.mode = mode;
                BenchRow row;
                row.size = size;
                row.steps = steps;
                row.substeps = t.substeps;
                row.mode = mode;
                std::vector<double> fwd, bwd;
                try {
                    for (std::size_t r = 0; r < spec.warmup + spec.repeats; ++r) {
                        auto out = train::run_sample(net, sample, t, 0, true);
                        row.peak_nodes = std::max(row.peak_nodes, out.tape_nodes);
                        row.peak_bytes = std::max(row.peak_bytes, out.tape_bytes);
                        row.output_spikes = std::accumulate(out.counts.begin(), out.counts.end(), 0.0);
                        if (r >= spec.warmup) {
                            fwd.push_back(out.forward_s);
                            bwd.push_back(out.backward_s);
                        }
                    }
                    row.forward_s = median(fwd);
                    row.backward_s = median(bwd);
                } catch (const TapeBudgetExceeded& e) {
                    row.status = "oom";
                    row.message = e.what();
                } catch (const GradientExplosion& e) {
                    row.status = "exploded";
                    row.message = e.what();
                } catch (const NumericInstability& e) {
                    row.status = "unstable";
                    row.message = e.what();
                }
                rows.push_back(row);
            }
        }
    }
    return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows, bool include_wall_clock) {
    std::ostringstream out;
    out << "size,steps,substeps,mode," << (include_wall_clock ? "fwd_s,bwd_s," : "")
        << "peak_nodes,peak_bytes,status,output_spikes\n";
    for (const auto& r : rows) {
        out << r.size << ',' << r.steps << ',' << r.substeps << ',' << train::to_string(r.mode) << ',';
        if (include_wall_clock) out << fmt("%.6f", r.forward_s) << ',' << fmt("%.6f", r.backward_s) << ',';
        out << r.peak_nodes << ',' << r.peak_bytes << ',' << r.status << ',' << fmt("%g", r.output_spikes) << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Training grids

train::TrainRun train_cell(const config::RunConfig& cfg, const data::Dataset* ds) {
    data::Dataset local;
    if (!ds) {
        local = data::generate_dataset(cfg.data);
        ds = &local;
    }
    if (cfg.net.outputs < static_cast<std::size_t>(std::max(ds->spec.classes, 1))) {
        throw UsageError("network has " + std::to_string(cfg.net.outputs) + " outputs for " +
                         std::to_string(ds->spec.classes) + " classes");
    }
    net::Network net = net::build_network(cfg.net, cfg.train.seed);
    train::TrainRun run = train::train(net, *ds, cfg.train);
    run.architecture = net::to_string(cfg.architecture);
    return run;
}

config::RunConfig cell_config(const GridSpec& spec, net::Architecture arch, const std::string& quant,
                              std::uint64_t seed) {
    config::RunConfig c = spec.base;
    config::set_architecture(c, arch);
    c.net.quant.n_bits = quant::parse_label(quant).n_bits;
    c.train.seed = seed;
    c.train.workers = 1;
    if (spec.published_hyperparameters) {
        if (auto h = published_hyperparameters(arch, c.net.quant)) apply_hyperparameters(c, *h);
    }
    if (arch == net::Architecture::FfFeLif) apply_felif_training_options(c.train);
    return c;
}

std::vector<GridRun> run_grid(const GridSpec& spec, const data::Dataset* ds) {
    data::Dataset local;
    if (!ds) {
        local = data::generate_dataset(spec.base.data);
        ds = &local;
    }
    std::vector<GridRun> runs;
    for (auto arch : spec.architectures)
        for (const auto& q : spec.quant_levels)
            for (auto seed : spec.seeds) runs.push_back({arch, quant::label(quant::parse_label(q)), seed, {}});
    parallel_for(runs.size(), spec.workers, [&](std::size_t k) {
        auto& r = runs[k];
        r.run = train_cell(cell_config(spec, r.architecture, r.quant, r.seed), ds);
    });
    return runs;
}

std::vector<GridCell> summarize(const GridSpec& spec, const std::vector<GridRun>& runs) {
    std::vector<GridCell> cells;
    for (auto arch : spec.architectures) {
        for (const auto& q : spec.quant_levels) {
            GridCell cell;
            cell.architecture = arch;
            cell.quant = quant::label(quant::parse_label(q));
            std::vector<double> acc;
            for (const auto& r : runs) {
                if (r.architecture != arch || r.quant != cell.quant) continue;
                if (r.run.status == train::RunStatus::Ok) acc.push_back(r.run.test_accuracy);
                else ++cell.missing;
            }
            cell.runs = acc.size();
            if (!acc.empty()) {
                cell.mean = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
                if (acc.size() > 1) {
                    double ss = 0.0;
                    for (double a : acc) ss += (a - cell.mean) * (a - cell.mean);
                    cell.stddev = std::sqrt(ss / static_cast<double>(acc.size() - 1));
                }
            }
            cells.push_back(cell);
        }
    }
    return cells;
}

std::string grid_runs_csv(const std::vector<GridRun>& runs) {
    std::ostringstream out;
    out << "architecture,quant,seed,status,failed_epoch,epochs,test_accuracy,final_train_accuracy,final_val_accuracy\n";
    for (const auto& r : runs) {
        out << net::to_string(r.architecture) << ',' << r.quant << ',' << r.seed << ','
            << train::to_string(r.run.status) << ','
            << (r.run.failed_epoch ? std::to_string(*r.run.failed_epoch) : std::string()) << ','
            << r.run.epochs.size() << ',' << fmt("%.6f", r.run.test_accuracy) << ','
            << fmt("%.6f", r.run.final_train_accuracy) << ',' << fmt("%.6f", r.run.final_val_accuracy) << '\n';
    }
    return out.str();
}

std::string grid_summary_csv(const std::vector<GridCell>& cells) {
    std::ostringstream out;
    out << "architecture,quant,runs,missing,mean,std\n";
    for (const auto& c : cells) {
        out << net::to_string(c.architecture) << ',' << c.quant << ',' << c.runs << ',' << c.missing << ',';
        if (c.runs > 0) out << fmt("%.6f", c.mean) << ',' << fmt("%.6f", c.stddev);
        else out << ',';
        out << '\n';
    }
    return out.str();
}

std::string grid_table_csv(const GridSpec& spec, const std::vector<GridCell>& cells) {
    std::ostringstream out;
    out << "architecture";
    for (const auto& q : spec.quant_levels) {
        const std::string l = quant::label(quant::parse_label(q));
        out << ',' << l << "_mean," << l << "_std";
    }
    out << '\n';
    for (auto arch : spec.architectures) {
        out << net::to_string(arch);
        for (const auto& q : spec.quant_levels) {
            const std::string l = quant::label(quant::parse_label(q));
            auto it = std::find_if(cells.begin(), cells.end(),
                                   [&](const GridCell& c) { return c.architecture == arch && c.quant == l; });
            if (it != cells.end() && it->runs > 0) out << ',' << fmt("%.2f", 100.0 * it->mean) << ',' << fmt("%.2f", 100.0 * it->stddev);
            else out << ",,";
        }
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Hyperparameter search

void HpoSpec::validate() const {
    if (trials == 0) throw UsageError("hyperparameter search needs at least one trial");
    if (epochs == 0) throw UsageError("hyperparameter search needs at least one epoch per trial");
    auto check = [](const char* name, const Range& r, double lo, double hi) {
        if (!(r.lo <= r.hi) || r.lo < lo || r.hi > hi) {
            throw ConfigError(std::string("search range for ") + name + " must satisfy " + std::to_string(lo) +
                              " <= lo <= hi <= " + std::to_string(hi));
        }
    };
    check("alpha_hid", alpha_hid, 0.0, 0.999999);
    check("beta_hid", beta_hid, 0.0, 0.999999);
    check("alpha_out", alpha_out, 0.0, 0.999999);
    check("beta_out", beta_out, 0.0, 0.999999);
    check("learning_rate", learning_rate, 1e-12, 10.0);
    check("felif_v_thr", felif_v_thr, 1e-3, 100.0);
}

Hyperparameters sample_trial(const HpoSpec& spec, std::size_t index) {
    auto rng = quant::make_rng(spec.seed, index);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto uniform = [&](const Range& r) {
        const double x = u(rng);
        return r.lo == r.hi ? r.lo : r.lo + (r.hi - r.lo) * x;
    };
    auto log_uniform = [&](const Range& r) {
        const double x = u(rng);
        return r.lo == r.hi ? r.lo : std::exp(std::log(r.lo) + (std::log(r.hi) - std::log(r.lo)) * x);
    };
    Hyperparameters h;
    h.alpha_hid = uniform(spec.alpha_hid);
    h.beta_hid = uniform(spec.beta_hid);
    h.alpha_out = uniform(spec.alpha_out);
    h.beta_out = uniform(spec.beta_out);
    h.learning_rate = log_uniform(spec.learning_rate);
    h.felif_v_thr = uniform(spec.felif_v_thr);
    return h;
}

HpoResult run_hpo(const config::RunConfig& base, const HpoSpec& spec, const data::Dataset* ds) {
    spec.validate();
    data::Dataset local;
    if (!ds) {
        local = data::generate_dataset(base.data);
        ds = &local;
    }
    HpoResult res;
    res.trials.resize(spec.trials);
    parallel_for(spec.trials, spec.workers, [&](std::size_t k) {
        HpoTrial& t = res.trials[k];
        t.index = k;
        t.params = sample_trial(spec, k);
        config::RunConfig c = base;
        apply_hyperparameters(c, t.params);
        c.train.epochs = spec.epochs;
        c.train.workers = 1;
        const auto run = train_cell(c, ds);
        t.status = train::to_string(run.status);
        t.val_accuracy = run.status == train::RunStatus::Ok ? run.final_val_accuracy : 0.0;
    });
    for (std::size_t k = 1; k < res.trials.size(); ++k) {
        if (res.trials[k].val_accuracy > res.trials[res.best].val_accuracy) res.best = k;
    }
    res.best_config = base;
    apply_hyperparameters(res.best_config, res.trials[res.best].params);
    return res;
}

std::string trials_jsonl(const HpoResult& r) {
    std::string out;
    for (const auto& t : r.trials) {
        nlohmann::json j = {{"trial", t.index},
                            {"alpha_hid", t.params.alpha_hid},
                            {"beta_hid", t.params.beta_hid},
                            {"alpha_out", t.params.alpha_out},
                            {"beta_out", t.params.beta_out},
                            {"learning_rate", t.params.learning_rate},
                            {"felif_v_thr", t.params.felif_v_thr},
                            {"val_accuracy", t.val_accuracy},
                            {"status", t.status},
                            {"best", t.index == r.best}};
        out += j.dump() + '\n';
    }
    return out;
}

}  // namespace bruno::experiments
