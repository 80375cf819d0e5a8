#include "bruno/neurons.hpp"

#include <limits>

#include "bruno/errors.hpp"

namespace bruno::neurons {

void FeLifParams::validate() const {
    const std::pair<const char*, double> positive[] = {
        {"area", area}, {"c0", c0}, {"c_par", c_par}, {"p_s", p_s}, {"e_a", e_a},
        {"tau0", tau0}, {"d_fe", d_fe}, {"r_leak", r_leak}, {"v_thr", v_thr},
    };
    for (const auto& [name, value] : positive) {
        if (!(value > 0.0) || !std::isfinite(value)) {
            throw ConfigError(std::string("FeLIF parameter ") + name + " must be positive and finite");
        }
    }
    if (!(alpha_merz >= 1.0)) throw ConfigError("FeLIF parameter alpha_merz must be >= 1");
    if (!(t_refr >= 0.0)) throw ConfigError("FeLIF parameter t_refr must be >= 0");
}

double tau_fe(double e, const FeLifParams& p) {
    if (e == 0.0) return std::numeric_limits<double>::infinity();
    const double y = std::pow(p.e_a / std::fabs(e), p.alpha_merz);
    return p.tau0 * std::exp(y);  // saturates to +inf
}

double switching_rate(double v, const FeLifParams& p) {
    if (v == 0.0) return 0.0;
    const double e = v / p.d_fe;
    const double y = std::pow(p.e_a / std::fabs(e), p.alpha_merz);
    return std::exp(-y) / p.tau0;
}

double switching_rate_grad(double v, const FeLifParams& p) {
    if (v == 0.0) return 0.0;
    const double e = v / p.d_fe;
    const double y = std::pow(p.e_a / std::fabs(e), p.alpha_merz);
    const double r = std::exp(-y) / p.tau0;
    if (r == 0.0) return 0.0;
    // d/dv exp(-(c/|v|)^a) = exp(-y) * a * y / v
    return r * p.alpha_merz * y / v;
}

ad::Value switching_rate(const ad::Value& v, const FeLifParams& p) {
    const auto d = v.data();
    std::vector<double> rate(d.size()), grad(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        rate[i] = switching_rate(d[i], p);
        grad[i] = switching_rate_grad(d[i], p);
    }
    if (v.is_constant()) return ad::Value::constant(std::move(rate));
    return v.tape()->record_diagonal(v, rate, grad);
}

Derivatives felif_derivatives(const NeuronState& s, double i_syn, const FeLifParams& p) {
    const double e = s.v / p.d_fe;
    const double tau = tau_fe(e, p);
    const double dp_dt = std::isinf(tau) ? 0.0 : (sign(e) * p.p_s - s.p) / tau;
    const double i_p = p.area * dp_dt;
    const double i_leak = s.v / p.r_leak;
    return {(i_syn - i_leak - i_p) / p.capacitance(), dp_dt};
}

StepResult felif_step(const NeuronState& s, double i_syn, double dt, const FeLifParams& p) {
    StepResult out;
    if (s.refr_remaining > 0.5 * dt) {
        out.state = {0.0, 0.0, s.refr_remaining - dt};
        return out;
    }
    auto next = felif_euler<double>(s.v, s.p, i_syn, dt, p);
    if (!std::isfinite(next.v) || !std::isfinite(next.p)) {
        throw NumericInstability("FeLIF state became non-finite with dt = " + std::to_string(dt) + " s", dt);
    }
    if (next.v >= p.v_thr) {
        out.spike = true;
        out.state = {0.0, 0.0, p.t_refr};
    } else {
        out.state = {next.v, next.p, 0.0};
    }
    return out;
}

void LifParams::validate() const {
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("LIF alpha must lie in [0, 1)");
    if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("LIF beta must lie in [0, 1)");
    if (!(v_thr > 0.0)) throw ConfigError("LIF v_thr must be positive");
}

LifStepResult lif_step(const LifState& s, double input, const LifParams& p, double rec_drive) {
    const double drive = p.recurrent ? input + rec_drive : input;
    auto next = lif_integrate<double>(s.v, s.i, drive, p);
    LifStepResult out;
    out.spike = next.v >= p.v_thr;
    double v = next.v;
    if (out.spike) {
        v = p.reset == ResetKind::Soft ? add_scaled(v, -p.v_thr, 1.0) : v * (1.0 - 1.0);
    }
    out.state = {v, next.i};
    return out;
}

ad::Value lif_reset(const ad::Value& v, const ad::Value& spike, const LifParams& p) {
    if (p.reset == ResetKind::Soft) return ad::add_scaled(v, -p.v_thr, spike);
    return v * (1.0 - spike);
}

std::string to_string(ResetKind k) { return k == ResetKind::Soft ? "soft" : "hard"; }

}  // namespace bruno::neurons
