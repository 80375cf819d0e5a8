#include "bruno/network.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "bruno/errors.hpp"

namespace bruno::net {

std::string to_string(Architecture a) {
    switch (a) {
        case Architecture::FfLif: return "FF-LIF";
        case Architecture::Rlif: return "RLIF";
        case Architecture::FfFeLif: return "FF-FeLIF";
    }
    return "?";
}

Architecture parse_architecture(const std::string& text) {
    std::string key;
    for (char c : text) {
        if (c != '-' && c != '_') key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (key == "fflif" || key == "lif") return Architecture::FfLif;
    if (key == "rlif") return Architecture::Rlif;
    if (key == "fffelif" || key == "felif") return Architecture::FfFeLif;
    throw ConfigError("unknown architecture '" + text + "'");
}

void NetworkSpec::validate() const {
    if (inputs == 0 || hidden == 0 || outputs == 0) {
        throw UsageError("network dimensions must be positive (inputs=" + std::to_string(inputs) +
                         ", hidden=" + std::to_string(hidden) + ", outputs=" + std::to_string(outputs) + ")");
    }
    hidden_lif.validate();
    if (output_kind == OutputKind::Lif) output_lif.validate();
    else output_felif.validate();
    quant.validate();
    if (!(felif_current_scale > 0.0)) throw ConfigError("felif_current_scale must be positive");
}

bool NetworkSpec::paper_topology() const {
    return (hidden_kind == HiddenKind::Lif && output_kind == OutputKind::Lif) ||
           (hidden_kind == HiddenKind::Rlif && output_kind == OutputKind::Lif) ||
           (hidden_kind == HiddenKind::Lif && output_kind == OutputKind::FeLif);
}

NetworkSpec make_spec(Architecture arch, std::size_t inputs, std::size_t hidden, std::size_t outputs) {
    NetworkSpec s;
    s.inputs = inputs;
    s.hidden = hidden;
    s.outputs = outputs;
    s.hidden_kind = arch == Architecture::Rlif ? HiddenKind::Rlif : HiddenKind::Lif;
    s.hidden_lif.recurrent = arch == Architecture::Rlif;
    s.output_kind = arch == Architecture::FfFeLif ? OutputKind::FeLif : OutputKind::Lif;
    return s;
}

namespace {
std::vector<double> uniform_init(std::size_t rows, std::size_t cols, std::uint64_t seed, std::uint64_t stream) {
    auto rng = quant::make_rng(seed, stream);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> w(rows * cols);
    for (auto& x : w) x = u(rng);
    return w;
}
}  // namespace

Network build_network(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    Network n;
    n.spec = spec;
    n.w_in = uniform_init(spec.hidden, spec.inputs, seed, 1);
    if (spec.hidden_kind == HiddenKind::Rlif) n.w_rec = uniform_init(spec.hidden, spec.hidden, seed, 2);
    n.w_out = uniform_init(spec.outputs, spec.hidden, seed, 3);
    return n;
}

}  // namespace bruno::net
