#include "bruno/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "bruno/errors.hpp"
#include "bruno/parallel.hpp"

namespace bruno::train {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kEvalStream = std::uint64_t{1} << 40;

LayerStep spike_and_reset(const ad::Value& v, const ad::Value& p, const neurons::FeLifParams& prm,
                          const TrainConfig& cfg) {
    ad::Value spike = ad::spike_sg(v, prm.v_thr, cfg.surrogate_slope);
    ad::Value gate = 1.0 - (cfg.detach_reset ? ad::detach(spike) : spike);
    return {{gate * v, gate * p}, spike};
}

}  // namespace

std::string to_string(Mode m) { return m == Mode::Bruno ? "bruno" : "vanilla"; }

Mode parse_mode(const std::string& text) {
    if (text == "bruno") return Mode::Bruno;
    if (text == "vanilla") return Mode::Vanilla;
    throw ConfigError("unknown mode '" + text + "' (expected bruno or vanilla)");
}

std::string to_string(RunStatus s) {
    switch (s) {
        case RunStatus::Ok: return "ok";
        case RunStatus::Exploded: return "exploded";
        case RunStatus::Unstable: return "unstable";
        case RunStatus::OutOfMemory: return "oom";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (substeps < 1) throw ConfigError("substeps must be >= 1");
    if (!(dt_fine > 0.0) || !(dt_coarse > 0.0)) throw ConfigError("time steps must be positive");
    const double expect = static_cast<double>(substeps) * dt_fine;
    if (std::fabs(expect - dt_coarse) > 1e-9 * dt_coarse) {
        throw ConfigError("dt_coarse must equal substeps * dt_fine");
    }
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(surrogate_slope > 0.0)) throw ConfigError("surrogate slope must be positive");
    if (workers < 1) throw ConfigError("workers must be >= 1");
}

// ---------------------------------------------------------------------------
// Layer steps

LayerStep bruno_step(const FeLifLayerState& prev, const ad::Value& i_syn, const neurons::FeLifParams& p,
                     const TrainConfig& cfg) {
    const auto vd = prev.v.data();
    const auto pd = prev.p.data();
    const auto id = i_syn.data();
    const std::size_t n = vd.size();
    if (pd.size() != n || (id.size() != n && id.size() != 1)) throw UsageError("bruno_step: state/current size mismatch");

    // Fine trajectory, off the tape. Neurons are advanced in lockstep so the
    // independent update chains overlap. A neuron at rest with no input
    // reaches the +0 fixed point after one step (signed zeros included) and
    // is not advanced further.
    std::vector<double> v_fine(vd.begin(), vd.end()), p_fine(pd.begin(), pd.end()), cur(n);
    std::vector<std::size_t> active;
    for (std::size_t j = 0; j < n; ++j) {
        cur[j] = id[id.size() == 1 ? 0 : j];
        if (v_fine[j] != 0.0 || p_fine[j] != 0.0 || cur[j] != 0.0) {
            active.push_back(j);
        } else {
            auto r = neurons::felif_euler<double>(v_fine[j], p_fine[j], cur[j], cfg.dt_fine, p);
            v_fine[j] = r.v;
            p_fine[j] = r.p;
        }
    }
    for (std::size_t k = 0; k < cfg.substeps; ++k) {
        for (std::size_t j : active) {
            auto r = neurons::felif_euler<double>(v_fine[j], p_fine[j], cur[j], cfg.dt_fine, p);
            v_fine[j] = r.v;
            p_fine[j] = r.p;
        }
    }
    for (std::size_t j : active) {
        if (!std::isfinite(v_fine[j]) || !std::isfinite(p_fine[j])) {
            throw NumericInstability("FeLIF fine step diverged", cfg.dt_fine);
        }
    }

    // One coarse step on the tape carries the gradient.
    auto coarse = neurons::felif_euler<ad::Value>(prev.v, prev.p, i_syn, cfg.dt_coarse, p, cfg.felif_rate_gradient);
    ad::Value v = ad::substitute(coarse.v, std::move(v_fine));
    ad::Value pol = ad::substitute(coarse.p, std::move(p_fine));
    return spike_and_reset(v, pol, p, cfg);
}

LayerStep vanilla_step(const FeLifLayerState& prev, const ad::Value& i_syn, const neurons::FeLifParams& p,
                       const TrainConfig& cfg) {
    ad::Value v = prev.v, pol = prev.p;
    for (std::size_t k = 0; k < cfg.substeps; ++k) {
        auto r = neurons::felif_euler<ad::Value>(v, pol, i_syn, cfg.dt_fine, p, cfg.felif_rate_gradient);
        v = std::move(r.v);
        pol = std::move(r.p);
    }
    return spike_and_reset(v, pol, p, cfg);
}

// ---------------------------------------------------------------------------
// Forward pass

std::vector<std::vector<double>> bin_events(const data::SpikeEventStream& s, std::size_t channels,
                                            const TrainConfig& cfg, std::size_t* truncated) {
    if (s.channels > channels) {
        throw UsageError("sample has " + std::to_string(s.channels) + " channels, network expects " +
                         std::to_string(channels));
    }
    std::vector<std::vector<double>> bins(cfg.steps, std::vector<double>(channels, 0.0));
    const double step_us = cfg.dt_coarse * 1e6;
    std::size_t dropped = 0;
    for (const auto& e : s.events) {
        const auto bin = static_cast<std::size_t>(std::floor(static_cast<double>(e.t_us) / step_us));
        if (bin >= cfg.steps) {
            ++dropped;
            continue;
        }
        bins[bin][e.channel] += 1.0;
    }
    if (truncated) *truncated = dropped;
    return bins;
}

ForwardResult forward_sequence(const net::Network& net, const TapeWeights& w, const data::SpikeEventStream& sample,
                               const TrainConfig& cfg) {
    const auto& spec = net.spec;
    ForwardResult out;
    const auto bins = bin_events(sample, spec.inputs, cfg, &out.truncated_events);

    auto zeros = [](std::size_t n) { return ad::Value::constant(std::vector<double>(n, 0.0)); };
    const bool recurrent = spec.hidden_kind == net::HiddenKind::Rlif;
    const bool felif = spec.output_kind == net::OutputKind::FeLif;
    auto reset_input = [&](const ad::Value& s) { return cfg.detach_reset ? ad::detach(s) : s; };

    ad::Value h_v = zeros(spec.hidden), h_i = zeros(spec.hidden), h_s = zeros(spec.hidden);
    ad::Value o_v = zeros(spec.outputs), o_i = zeros(spec.outputs);
    FeLifLayerState fe{zeros(spec.outputs), zeros(spec.outputs)};
    ad::Value counts = zeros(spec.outputs);
    out.hidden_spikes.assign(spec.hidden, 0.0);

    std::size_t refr_steps = 0;
    if (felif && spec.output_felif.t_refr > 0.0) {
        refr_steps = static_cast<std::size_t>(std::ceil(spec.output_felif.t_refr / cfg.dt_coarse - 1e-9));
    }
    std::vector<std::size_t> refr(spec.outputs, 0);

    for (std::size_t t = 0; t < cfg.steps; ++t) {
        ad::Value drive = ad::matvec(w.w_in, ad::Value::constant(bins[t]));
        if (recurrent) drive = drive + ad::matvec(w.w_rec, h_s);
        auto h = neurons::lif_integrate<ad::Value>(h_v, h_i, drive, spec.hidden_lif);
        h_s = ad::spike_sg(h.v, spec.hidden_lif.v_thr, cfg.surrogate_slope);
        h_v = neurons::lif_reset(h.v, reset_input(h_s), spec.hidden_lif);
        h_i = std::move(h.i);
        const auto hs = h_s.data();
        for (std::size_t j = 0; j < hs.size(); ++j) out.hidden_spikes[j] += hs[j];

        ad::Value o_drive = ad::matvec(w.w_out, h_s);
        ad::Value o_s;
        if (!felif) {
            auto o = neurons::lif_integrate<ad::Value>(o_v, o_i, o_drive, spec.output_lif);
            o_s = ad::spike_sg(o.v, spec.output_lif.v_thr, cfg.surrogate_slope);
            o_v = neurons::lif_reset(o.v, reset_input(o_s), spec.output_lif);
            o_i = std::move(o.i);
        } else {
            ad::Value i_syn = o_drive * spec.felif_current_scale;
            if (refr_steps > 0) {
                std::vector<double> mask(spec.outputs);
                for (std::size_t j = 0; j < mask.size(); ++j) mask[j] = refr[j] > 0 ? 0.0 : 1.0;
                i_syn = i_syn * ad::Value::constant(std::move(mask));
            }
            LayerStep step = cfg.mode == Mode::Bruno ? bruno_step(fe, i_syn, spec.output_felif, cfg)
                                                     : vanilla_step(fe, i_syn, spec.output_felif, cfg);
            fe = std::move(step.state);
            o_s = std::move(step.spike);
            const auto os = o_s.data();
            for (std::size_t j = 0; j < refr.size(); ++j) {
                if (os[j] > 0.5) refr[j] = refr_steps;
                else if (refr[j] > 0) --refr[j];
            }
        }
        counts = counts + o_s;
    }
    out.counts = counts;
    return out;
}

ad::Value softmax_cross_entropy(const ad::Value& logits, int label) {
    const auto d = logits.data();
    if (label < 0 || static_cast<std::size_t>(label) >= d.size()) throw UsageError("label out of range");
    const double m = *std::max_element(d.begin(), d.end());
    ad::Value lse = ad::log(ad::sum(ad::exp(logits - m))) + m;
    std::vector<double> onehot(d.size(), 0.0);
    onehot[static_cast<std::size_t>(label)] = 1.0;
    return lse - ad::sum(logits * ad::Value::constant(std::move(onehot)));
}

int argmax(const std::vector<double>& v) {
    if (v.empty()) return -1;
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// Optimizer

void Adam::step(std::vector<std::vector<double>*> params, const std::vector<std::vector<double>>& grads) {
    if (params.size() != grads.size()) throw UsageError("Adam: parameter/gradient count mismatch");
    if (m_.empty()) {
        for (auto* p : params) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(p_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(p_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& w = *params[k];
        const auto& g = grads[k];
        if (g.size() != w.size()) throw UsageError("Adam: gradient size mismatch");
        for (std::size_t i = 0; i < w.size(); ++i) {
            m_[k][i] = p_.beta1 * m_[k][i] + (1.0 - p_.beta1) * g[i];
            v_[k][i] = p_.beta2 * v_[k][i] + (1.0 - p_.beta2) * g[i] * g[i];
            const double mhat = m_[k][i] / bc1;
            const double vhat = v_[k][i] / bc2;
            w[i] -= lr_ * mhat / (std::sqrt(vhat) + p_.eps);
        }
    }
}

void Adam::restore(std::size_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

// ---------------------------------------------------------------------------
// Sample / epoch loop

SampleOutcome run_sample(const net::Network& net, const data::SpikeEventStream& sample, const TrainConfig& cfg,
                         std::uint64_t rounding_stream, bool with_grad) {
    ad::Tape tape;
    tape.set_byte_limit(cfg.tape_byte_limit);
    auto rng = quant::make_rng(net.spec.quant.seed ^ (cfg.seed * 0x9e3779b97f4a7c15ULL), rounding_stream);

    ad::Value w_in = tape.variable(net.w_in);
    ad::Value w_out = tape.variable(net.w_out);
    ad::Value w_rec;
    TapeWeights tw;
    tw.w_in = quant::quantize_ste(w_in, net.spec.quant, rng);
    if (!net.w_rec.empty()) {
        w_rec = tape.variable(net.w_rec);
        tw.w_rec = quant::quantize_ste(w_rec, net.spec.quant, rng);
    }
    tw.w_out = quant::quantize_ste(w_out, net.spec.quant, rng);

    SampleOutcome out;
    const auto t0 = Clock::now();
    ForwardResult fr = forward_sequence(net, tw, sample, cfg);
    ad::Value loss = softmax_cross_entropy(fr.counts, sample.label);
    out.forward_s = seconds_since(t0);
    out.loss = loss.item();
    out.counts.assign(fr.counts.data().begin(), fr.counts.data().end());
    out.predicted = argmax(out.counts);
    out.tape_nodes = tape.node_count();
    out.tape_bytes = tape.bytes();

    if (with_grad) {
        const auto t1 = Clock::now();
        ad::Gradients g = tape.backward(loss);
        out.backward_s = seconds_since(t1);
        out.grads.push_back(g.wrt(w_in));
        out.grads.push_back(net.w_rec.empty() ? std::vector<double>{} : g.wrt(w_rec));
        out.grads.push_back(g.wrt(w_out));
    }
    return out;
}

namespace {

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

double evaluate(const net::Network& net, const data::Dataset& ds, const std::vector<std::size_t>& idx,
                const TrainConfig& cfg) {
    if (idx.empty()) return 0.0;
    std::vector<int> correct(idx.size(), 0);
    parallel_for(idx.size(), cfg.workers, [&](std::size_t k) {
        const auto& s = ds.samples[idx[k]];
        auto r = run_sample(net, s, cfg, kEvalStream + idx[k], false);
        correct[k] = r.predicted == s.label ? 1 : 0;
    });
    return static_cast<double>(std::accumulate(correct.begin(), correct.end(), 0)) / static_cast<double>(idx.size());
}

TrainRun train(net::Network& net, const data::Dataset& ds, const TrainConfig& cfg, Adam* optimizer) {
    cfg.validate();
    net.spec.validate();
    TrainRun run;
    run.quant = quant::label(net.spec.quant);
    run.mode = cfg.mode;
    run.seed = cfg.seed;
    if (net.spec.output_kind == net::OutputKind::FeLif) run.architecture = "FF-FeLIF";
    else run.architecture = net.spec.hidden_kind == net::HiddenKind::Rlif ? "RLIF" : "FF-LIF";

    Adam local(cfg.learning_rate, cfg.adam);
    Adam& opt = optimizer ? *optimizer : local;
    const std::size_t n_train = ds.train.size();
    if (n_train == 0) throw UsageError("training split is empty");

    std::size_t epoch = 0;
    try {
        for (epoch = 0; epoch < cfg.epochs; ++epoch) {
            const auto te = Clock::now();
            EpochRecord rec;
            rec.epoch = epoch;

            std::vector<std::size_t> order(n_train);
            std::iota(order.begin(), order.end(), 0);
            if (cfg.shuffle) {
                auto rng = quant::make_rng(cfg.seed, kShuffleStream + epoch);
                std::shuffle(order.begin(), order.end(), rng);
            }

            std::vector<double> losses(n_train, 0.0);
            std::vector<int> correct(n_train, 0);
            for (std::size_t b0 = 0; b0 < n_train; b0 += cfg.batch_size) {
                const std::size_t bn = std::min(cfg.batch_size, n_train - b0);
                std::vector<SampleOutcome> outs(bn);
                parallel_for(bn, cfg.workers, [&](std::size_t k) {
                    const std::size_t pos = order[b0 + k];
                    const std::size_t sample = ds.train[pos];
                    const std::uint64_t stream =
                        cfg.freeze_rounding ? sample : static_cast<std::uint64_t>(epoch + 1) * (ds.samples.size() + 1) + sample;
                    outs[k] = run_sample(net, ds.samples[sample], cfg, stream, true);
                });

                std::vector<std::vector<double>> grads = {std::vector<double>(net.w_in.size(), 0.0),
                                                          std::vector<double>(net.w_rec.size(), 0.0),
                                                          std::vector<double>(net.w_out.size(), 0.0)};
                for (std::size_t k = 0; k < bn; ++k) {
                    const std::size_t pos = order[b0 + k];
                    losses[pos] = outs[k].loss;
                    correct[pos] = outs[k].predicted == ds.samples[ds.train[pos]].label ? 1 : 0;
                    rec.peak_tape_nodes = std::max(rec.peak_tape_nodes, outs[k].tape_nodes);
                    rec.forward_s += outs[k].forward_s;
                    rec.backward_s += outs[k].backward_s;
                    for (std::size_t l = 0; l < grads.size(); ++l) {
                        for (std::size_t i = 0; i < grads[l].size(); ++i) grads[l][i] += outs[k].grads[l][i];
                    }
                }
                for (auto& g : grads) {
                    for (auto& x : g) x /= static_cast<double>(bn);
                    if (!all_finite(g)) throw GradientExplosion("non-finite batch gradient");
                }

                std::vector<std::vector<double>> backup = {net.w_in, net.w_rec, net.w_out};
                std::vector<std::vector<double>*> params = {&net.w_in, &net.w_rec, &net.w_out};
                opt.step(params, grads);
                if (!all_finite(net.w_in) || !all_finite(net.w_rec) || !all_finite(net.w_out)) {
                    net.w_in = std::move(backup[0]);
                    net.w_rec = std::move(backup[1]);
                    net.w_out = std::move(backup[2]);
                    throw GradientExplosion("optimizer step produced non-finite weights");
                }
            }

            rec.loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n_train);
            rec.train_accuracy =
                static_cast<double>(std::accumulate(correct.begin(), correct.end(), 0)) / static_cast<double>(n_train);
            rec.val_accuracy = evaluate(net, ds, ds.val, cfg);
            rec.wall_s = seconds_since(te);
            run.peak_tape_nodes = std::max(run.peak_tape_nodes, rec.peak_tape_nodes);
            run.epochs.push_back(rec);
        }
        run.test_accuracy = evaluate(net, ds, ds.test, cfg);
    } catch (const GradientExplosion& e) {
        run.status = RunStatus::Exploded;
        run.failed_epoch = epoch;
        run.message = e.what();
    } catch (const NumericInstability& e) {
        run.status = RunStatus::Unstable;
        run.failed_epoch = epoch;
        run.message = e.what();
    } catch (const TapeBudgetExceeded& e) {
        run.status = RunStatus::OutOfMemory;
        run.failed_epoch = epoch;
        run.message = e.what();
    }
    if (!run.epochs.empty()) {
        run.final_train_accuracy = run.epochs.back().train_accuracy;
        run.final_val_accuracy = run.epochs.back().val_accuracy;
    }
    return run;
}

std::string TrainRun::to_jsonl(bool include_wall_clock) const {
    std::string out;
    for (const auto& e : epochs) {
        nlohmann::json j = {{"type", "epoch"},
                            {"epoch", e.epoch},
                            {"loss", e.loss},
                            {"train_accuracy", e.train_accuracy},
                            {"val_accuracy", e.val_accuracy},
                            {"peak_tape_nodes", e.peak_tape_nodes}};
        if (include_wall_clock) {
            j["forward_s"] = e.forward_s;
            j["backward_s"] = e.backward_s;
            j["wall_s"] = e.wall_s;
        }
        out += j.dump() + '\n';
    }
    nlohmann::json s = {{"type", "summary"},
                        {"architecture", architecture},
                        {"quant", quant},
                        {"mode", to_string(mode)},
                        {"seed", seed},
                        {"status", to_string(status)},
                        {"epochs_completed", epochs.size()},
                        {"test_accuracy", test_accuracy},
                        {"final_train_accuracy", final_train_accuracy},
                        {"final_val_accuracy", final_val_accuracy},
                        {"peak_tape_nodes", peak_tape_nodes}};
    s["failed_epoch"] = failed_epoch ? nlohmann::json(*failed_epoch) : nlohmann::json(nullptr);
    if (!message.empty()) s["message"] = message;
    out += s.dump() + '\n';
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
nlohmann::json weight_record(const std::vector<double>& w, std::size_t rows, std::size_t cols,
                             const quant::QuantSpec& spec) {
    nlohmann::json j = {{"rows", rows}, {"cols", cols}, {"values", w}};
    if (!spec.full_precision() && !w.empty()) {
        quant::QuantSpec nearest = spec;
        nearest.rounding = quant::Rounding::Nearest;
        auto rng = quant::make_rng(0);
        auto q = quant::quantize_levels(w, nearest, rng);
        q.shape = {rows, cols};
        j["quantized"] = nlohmann::json::parse(quant::to_json(q));
    }
    return j;
}
}  // namespace

void save_checkpoint(const std::string& path, const net::Network& net, const Adam& opt, const TrainConfig& cfg) {
    const auto& s = net.spec;
    nlohmann::json j;
    j["format"] = "checkpoint/v1";
    j["quant"] = quant::label(s.quant);
    j["mode"] = to_string(cfg.mode);
    j["layers"]["w_in"] = weight_record(net.w_in, s.hidden, s.inputs, s.quant);
    if (!net.w_rec.empty()) j["layers"]["w_rec"] = weight_record(net.w_rec, s.hidden, s.hidden, s.quant);
    j["layers"]["w_out"] = weight_record(net.w_out, s.outputs, s.hidden, s.quant);
    j["adam"] = {{"t", opt.steps()},
                 {"learning_rate", opt.learning_rate()},
                 {"m", opt.first_moment()},
                 {"v", opt.second_moment()}};
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << j.dump() << '\n';
}

void load_checkpoint(const std::string& path, net::Network& net, Adam& opt) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
        auto load = [&](const char* name, std::vector<double>& w) {
            if (!j["layers"].contains(name)) {
                if (!w.empty()) throw ParseError(std::string("checkpoint lacks ") + name, 0);
                return;
            }
            auto v = j["layers"][name]["values"].get<std::vector<double>>();
            if (v.size() != w.size()) throw ParseError(std::string("checkpoint shape mismatch for ") + name, 0);
            w = std::move(v);
        };
        load("w_in", net.w_in);
        load("w_rec", net.w_rec);
        load("w_out", net.w_out);
        opt.restore(j["adam"]["t"].get<std::size_t>(), j["adam"]["m"].get<std::vector<std::vector<double>>>(),
                    j["adam"]["v"].get<std::vector<std::vector<double>>>());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what(), 0);
    }
}

}  // namespace bruno::train
