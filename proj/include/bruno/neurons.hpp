#pragma once

// Ferroelectric LIF (FeLIF) and discrete LIF neuron dynamics.
//
// The update rules are written once as templates over the scalar type so the
// raw fine-step integrator (double) and the tape-recorded coarse step
// (ad::Value, one node per elementwise op over a whole layer) execute the same
// floating-point operations in the same order.

#include <cmath>
#include <string>
#include <vector>

#include "bruno/tape.hpp"

namespace bruno::neurons {

/// Physical FeLIF parameters, SI units.
struct FeLifParams {
    double area = 25e-12;       // m^2
    double c0 = 0.558e-12;      // F
    double c_par = 15e-15;      // F
    double p_s = 0.22;          // C/m^2
    double e_a = 1.27e9;        // V/m
    double tau0 = 0.1e-12;      // s
    double alpha_merz = 1.3;
    double d_fe = 10e-9;        // m; field = V / d_fe
    double r_leak = 1.75e11;    // Ohm
    double v_thr = 3.388;       // V
    double t_refr = 1e-3;       // s

    double capacitance() const noexcept { return c0 + c_par; }
    /// Throws ConfigError when a parameter is out of range.
    void validate() const;
};

struct NeuronState {
    double v = 0.0;               // V
    double p = 0.0;               // C/m^2
    double refr_remaining = 0.0;  // s
};

struct Derivatives {
    double dv_dt;  // V/s
    double dp_dt;  // C/m^2/s
};

/// Polarization time constant for field `e` (V/m). +inf at e == 0 or on overflow.
double tau_fe(double e, const FeLifParams& p);

/// 1/tau at membrane potential `v`, evaluated as exp(-(E_a/|E|)^alpha)/tau0 so
/// that zero field maps to an exact zero rate.
double switching_rate(double v, const FeLifParams& p);
double switching_rate_grad(double v, const FeLifParams& p);
/// Tape version: one custom elementwise node.
ad::Value switching_rate(const ad::Value& v, const FeLifParams& p);

/// Continuous right-hand side of the FeLIF equations.
Derivatives felif_derivatives(const NeuronState& s, double i_syn, const FeLifParams& p);

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
inline double clamp(double x, double lo, double hi) { return x < lo ? lo : (x > hi ? hi : x); }
inline double add_scaled(double a, double c, double b) { return a + c * b; }

template <class T>
struct FeLifPair {
    T v;
    T p;
};

inline double no_grad(double x) { return x; }
inline ad::Value no_grad(const ad::Value& x) { return ad::detach(x); }

/// One forward-Euler step of (V, P) without threshold logic. The
/// polarization update is clamped to |P| <= P_s and the displacement current
/// is taken from the realized polarization change, so a clamped step stays
/// charge-conserving. With `rate_gradient` false the switching rate is
/// evaluated on a detached V: forward values are unchanged, but the
/// derivative of the (very steep) switching law is dropped from the tape.
template <class T>
FeLifPair<T> felif_euler(const T& v, const T& p, const T& i_syn, double dt, const FeLifParams& prm,
                         bool rate_gradient = true) {
    const T rate = rate_gradient ? switching_rate(v, prm) : switching_rate(no_grad(v), prm);
    const T target = sign(v) * prm.p_s;
    const T dp_dt = (target - p) * rate;
    T p_next = clamp(add_scaled(p, dt, dp_dt), -prm.p_s, prm.p_s);
    const T dp = p_next - p;
    T net = add_scaled(i_syn, -1.0 / prm.r_leak, v);
    net = add_scaled(net, -prm.area / dt, dp);
    T v_next = add_scaled(v, dt / prm.capacitance(), net);
    return {std::move(v_next), std::move(p_next)};
}

struct StepResult {
    NeuronState state;
    bool spike = false;
};

/// Full single-neuron step: refractory hold, Euler update, threshold and reset
/// of both V and P. Throws NumericInstability carrying `dt` on a non-finite state.
StepResult felif_step(const NeuronState& s, double i_syn, double dt, const FeLifParams& p);

enum class ResetKind { Soft, Hard };

struct LifParams {
    double alpha = 0.9;  // membrane decay per step
    double beta = 0.8;   // synaptic-current decay per step
    double v_thr = 1.0;
    bool recurrent = false;
    ResetKind reset = ResetKind::Soft;

    void validate() const;
};

struct LifState {
    double v = 0.0;
    double i = 0.0;
};

template <class T>
struct LifPair {
    T v;
    T i;
};

/// Leaky integration without threshold: i' = beta*i + input, v' = alpha*v + i'.
template <class T>
LifPair<T> lif_integrate(const T& v, const T& i, const T& input, const LifParams& prm) {
    T i_next = add_scaled(input, prm.beta, i);
    T v_next = add_scaled(i_next, prm.alpha, v);
    return {std::move(v_next), std::move(i_next)};
}

struct LifStepResult {
    LifState state;
    bool spike = false;
};

/// `rec_drive` is the recurrent contribution w_rec . s_prev, added to the input.
LifStepResult lif_step(const LifState& s, double input, const LifParams& p, double rec_drive = 0.0);

/// Subtract (soft) or zero (hard) the membrane where `spike` is 1.
ad::Value lif_reset(const ad::Value& v, const ad::Value& spike, const LifParams& p);

std::string to_string(ResetKind k);

}  // namespace bruno::neurons
