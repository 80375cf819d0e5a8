#pragma once

// Dual-timescale training of spiking networks.
//
// For a FeLIF layer each coarse step (default 1 ms) is simulated twice from
// the previous state: S fine Euler steps (default 1 us) off the tape give the
// accurate value s_fine, and one coarse Euler step on the tape gives s_coarse.
// The layer continues from
//
//     s = s_coarse + detach(s_fine - s_coarse)
//
// whose value is s_fine while its gradient is that of s_coarse. The tape
// therefore grows with the number of coarse steps only. The vanilla baseline
// records all S fine steps instead.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bruno/dataset.hpp"
#include "bruno/network.hpp"
#include "bruno/tape.hpp"

namespace bruno::train {

enum class Mode { Bruno, Vanilla };
std::string to_string(Mode m);
Mode parse_mode(const std::string& text);

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    double dt_fine = 1e-6;      // s
    double dt_coarse = 1e-3;    // s
    std::size_t substeps = 1000;
    std::size_t steps = 200;    // T, coarse steps per sample
    double learning_rate = 2.628e-3;
    AdamParams adam;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    Mode mode = Mode::Bruno;
    double surrogate_slope = 10.0;
    /// Reset gate uses detach(spike): the reset then carries no surrogate gradient.
    bool detach_reset = false;
    /// Differentiate the FeLIF switching law on the tape. When false the
    /// polarization kinetics are treated as a gate (see felif_euler) and the
    /// gradient reaches the synaptic current through the membrane only.
    bool felif_rate_gradient = true;
    /// Reuse the same stochastic-rounding draws every epoch.
    bool freeze_rounding = false;
    bool shuffle = true;
    std::size_t workers = 1;
    /// Per-sample tape budget in bytes, 0 = unlimited.
    std::size_t tape_byte_limit = 0;

    /// Throws ConfigError unless dt_coarse == substeps * dt_fine and all fields are in range.
    void validate() const;
};

struct FeLifLayerState {
    ad::Value v;
    ad::Value p;
};

struct LayerStep {
    FeLifLayerState state;
    ad::Value spike;
};

/// One coarse step of a FeLIF layer under the dual-timescale rule. `i_syn`
/// is the synaptic current in amperes, held constant across the coarse step.
LayerStep bruno_step(const FeLifLayerState& prev, const ad::Value& i_syn, const neurons::FeLifParams& p,
                     const TrainConfig& cfg);

/// Same contract with every fine step recorded on the tape.
LayerStep vanilla_step(const FeLifLayerState& prev, const ad::Value& i_syn, const neurons::FeLifParams& p,
                       const TrainConfig& cfg);

/// Weights as seen by one forward pass (already quantized when QAT is on).
struct TapeWeights {
    ad::Value w_in;
    ad::Value w_rec;
    ad::Value w_out;
};

struct ForwardResult {
    ad::Value counts;                  // per-class output spikes summed over time
    std::vector<double> hidden_spikes; // total spikes per hidden neuron
    std::size_t truncated_events = 0;  // events at or beyond steps * dt_coarse
};

/// Inputs binned per coarse step: steps x channels spike counts.
std::vector<std::vector<double>> bin_events(const data::SpikeEventStream& s, std::size_t channels,
                                            const TrainConfig& cfg, std::size_t* truncated = nullptr);

ForwardResult forward_sequence(const net::Network& net, const TapeWeights& w, const data::SpikeEventStream& sample,
                               const TrainConfig& cfg);

/// log-sum-exp(logits) - logits[label].
ad::Value softmax_cross_entropy(const ad::Value& logits, int label);

/// Adam over a flat list of parameter vectors.
class Adam {
public:
    Adam(double lr, AdamParams p) : lr_(lr), p_(p) {}

    void step(std::vector<std::vector<double>*> params, const std::vector<std::vector<double>>& grads);
    std::size_t steps() const noexcept { return t_; }
    double learning_rate() const noexcept { return lr_; }
    const std::vector<std::vector<double>>& first_moment() const noexcept { return m_; }
    const std::vector<std::vector<double>>& second_moment() const noexcept { return v_; }
    void restore(std::size_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

private:
    double lr_;
    AdamParams p_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Per-sample outcome of a forward (and optionally backward) pass.
struct SampleOutcome {
    double loss = 0.0;
    int predicted = -1;
    std::vector<double> counts;
    std::size_t tape_nodes = 0;
    std::size_t tape_bytes = 0;
    double forward_s = 0.0;
    double backward_s = 0.0;
    /// d loss / d (w_in, w_rec, w_out), empty when not requested.
    std::vector<std::vector<double>> grads;
};

/// Forward the sample on a fresh tape, quantizing with the rounding stream
/// `rounding_stream`; run backward when `with_grad`.
SampleOutcome run_sample(const net::Network& net, const data::SpikeEventStream& sample, const TrainConfig& cfg,
                         std::uint64_t rounding_stream, bool with_grad);

/// Argmax with ties resolved to the lowest index.
int argmax(const std::vector<double>& v);

enum class RunStatus { Ok, Exploded, Unstable, OutOfMemory };
std::string to_string(RunStatus s);

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    std::size_t peak_tape_nodes = 0;
    double forward_s = 0.0;
    double backward_s = 0.0;
    double wall_s = 0.0;
};

struct TrainRun {
    std::string architecture;
    std::string quant;
    Mode mode = Mode::Bruno;
    std::uint64_t seed = 0;
    std::vector<EpochRecord> epochs;
    RunStatus status = RunStatus::Ok;
    std::optional<std::size_t> failed_epoch;
    std::string message;
    double test_accuracy = 0.0;
    double final_train_accuracy = 0.0;
    double final_val_accuracy = 0.0;
    std::size_t peak_tape_nodes = 0;

    /// One JSON object per epoch followed by a summary record.
    std::string to_jsonl(bool include_wall_clock = true) const;
};

/// Accuracy of `net` on the given sample indices.
double evaluate(const net::Network& net, const data::Dataset& ds, const std::vector<std::size_t>& idx,
                const TrainConfig& cfg);

/// Train in place. Gradient explosion, numeric instability and tape budget
/// overruns end the run with the matching status and leave `net` holding the
/// last finite weights.
TrainRun train(net::Network& net, const data::Dataset& ds, const TrainConfig& cfg, Adam* optimizer = nullptr);

/// Quantized export of the weights plus optimizer state.
void save_checkpoint(const std::string& path, const net::Network& net, const Adam& opt, const TrainConfig& cfg);
void load_checkpoint(const std::string& path, net::Network& net, Adam& opt);

}  // namespace bruno::train
