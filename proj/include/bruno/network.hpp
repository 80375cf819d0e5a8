#pragma once

// The three benchmark topologies: input -> hidden LIF (optionally recurrent)
// -> output layer of LIF or FeLIF neurons.

#include <cstdint>
#include <string>
#include <vector>

#include "bruno/neurons.hpp"
#include "bruno/quant.hpp"

namespace bruno::net {

enum class HiddenKind { Lif, Rlif };
enum class OutputKind { Lif, FeLif };
enum class Architecture { FfLif, Rlif, FfFeLif };

std::string to_string(Architecture a);
/// Accepts "FF-LIF", "RLIF", "FF-FeLIF" (case-insensitive, '-' optional).
Architecture parse_architecture(const std::string& text);

struct NetworkSpec {
    std::size_t inputs = 12;
    std::size_t hidden = 256;
    HiddenKind hidden_kind = HiddenKind::Lif;
    std::size_t outputs = 27;
    OutputKind output_kind = OutputKind::Lif;
    quant::QuantSpec quant;
    neurons::LifParams hidden_lif;
    neurons::LifParams output_lif;
    neurons::FeLifParams output_felif;
    /// Synaptic current (A) delivered to a FeLIF neuron per unit of w . s.
    double felif_current_scale = 1e-8;

    void validate() const;
    /// True when the spec is one of FF-LIF, RLIF, FF-FeLIF.
    bool paper_topology() const;
};

NetworkSpec make_spec(Architecture arch, std::size_t inputs, std::size_t hidden, std::size_t outputs);

struct Network {
    NetworkSpec spec;
    std::vector<double> w_in;   // hidden x inputs, row-major
    std::vector<double> w_rec;  // hidden x hidden; empty unless RLIF
    std::vector<double> w_out;  // outputs x hidden

    std::size_t parameter_count() const noexcept { return w_in.size() + w_rec.size() + w_out.size(); }
};

/// Weights uniform in +-1/sqrt(fan_in). Each matrix draws from its own stream
/// of `seed`, so topologies sharing a layer shape share its initial weights.
Network build_network(const NetworkSpec& spec, std::uint64_t seed);

}  // namespace bruno::net
